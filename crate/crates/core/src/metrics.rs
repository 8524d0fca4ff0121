//! Open-set evaluation: O-AUROC, O-AUPR and closed-set accuracy.
//!
//! Samples from seen classes are positives (label 1) and samples from unseen
//! classes negatives (label 0). Scores are open-set probabilities, so a
//! higher score means "more likely seen".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub is_seen: bool,
    pub predicted_class: Option<usize>,
    pub true_class: Option<usize>,
}

impl LabeledScore {
    pub fn new(score: f64, is_seen: bool) -> Self {
        Self {
            score,
            is_seen,
            predicted_class: None,
            true_class: None,
        }
    }

    pub fn with_classes(mut self, predicted: usize, truth: usize) -> Self {
        self.predicted_class = Some(predicted);
        self.true_class = Some(truth);
        self
    }
}

/// Builds labeled scores from parallel slices; `labels[i] == 1` is seen.
pub fn labeled(scores: &[f64], labels: &[u8]) -> Vec<LabeledScore> {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| LabeledScore::new(s, l == 1))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub o_auroc: f64,
    pub o_aupr: f64,
    pub c_acc: f64,
    pub roc_points: Vec<RocPoint>,
    pub pr_points: Vec<PrPoint>,
}

fn check_scores(scores: &[LabeledScore]) -> Result<(usize, usize)> {
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {}", s.score)));
    }
    let pos = scores.iter().filter(|s| s.is_seen).count();
    Ok((pos, scores.len() - pos))
}

fn check_both_classes(scores: &[LabeledScore]) -> Result<(usize, usize)> {
    let (pos, neg) = check_scores(scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "need both seen and unseen samples, got {pos} seen and {neg} unseen"
        )));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, ties kept in input order.
fn ranked(scores: &[LabeledScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].score.total_cmp(&scores[a].score));
    order
}

/// ROC curve from a descending sweep over the distinct scores.
///
/// A sample is predicted seen when its score is at least the threshold.
pub fn roc_curve(scores: &[LabeledScore]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_both_classes(scores)?;
    let order = ranked(scores);
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]].score;
        while i < order.len() && scores[order[i]].score == threshold {
            if scores[order[i]].is_seen {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve.
pub fn o_auroc(scores: &[LabeledScore]) -> Result<f64> {
    let curve = roc_curve(scores)?;
    Ok(curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

/// `P(seen > unseen) + P(tie) / 2` over every seen/unseen pair.
pub fn auroc_pairwise(scores: &[LabeledScore]) -> Result<f64> {
    let (pos, neg) = check_both_classes(scores)?;
    let mut wins = 0.0;
    for p in scores.iter().filter(|s| s.is_seen) {
        for n in scores.iter().filter(|s| !s.is_seen) {
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Precision/recall after each ranked sample.
pub fn pr_curve(scores: &[LabeledScore]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check_scores(scores)?;
    if pos == 0 {
        return Err(Error::invalid("precision-recall needs at least one seen sample"));
    }
    let mut tp = 0usize;
    Ok(ranked(scores)
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            if scores[i].is_seen {
                tp += 1;
            }
            PrPoint {
                recall: tp as f64 / pos as f64,
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect())
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over the ranking.
pub fn o_aupr(scores: &[LabeledScore]) -> Result<f64> {
    let curve = pr_curve(scores)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

/// Accuracy over seen samples; unseen samples are ignored.
pub fn c_acc(scores: &[LabeledScore]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for s in scores.iter().filter(|s| s.is_seen) {
        if let (Some(p), Some(t)) = (s.predicted_class, s.true_class) {
            total += 1;
            if p == t {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("no annotated seen samples for closed-set accuracy"));
    }
    Ok(correct as f64 / total as f64)
}

/// All metrics and both curves.
///
/// The open-set metrics need seen and unseen samples. When a split has no
/// unseen test samples, the ROC/PR metrics are undefined and the call fails.
pub fn evaluate(scores: &[LabeledScore]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        o_auroc: o_auroc(scores)?,
        o_aupr: o_aupr(scores)?,
        c_acc: c_acc(scores)?,
        roc_points: roc_curve(scores)?,
        pr_points: pr_curve(scores)?,
    })
}

/// Entrywise mean of the scalar metrics; curves are not averaged.
pub fn mean_metrics(reports: &[MetricsReport]) -> Result<(f64, f64, f64)> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to average"));
    }
    let n = reports.len() as f64;
    Ok((
        reports.iter().map(|r| r.o_auroc).sum::<f64>() / n,
        reports.iter().map(|r| r.o_aupr).sum::<f64>() / n,
        reports.iter().map(|r| r.c_acc).sum::<f64>() / n,
    ))
}
