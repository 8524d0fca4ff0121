//! Test-time scoring: channel-normalized Euclidean (CNE) distances to a
//! gallery of training embeddings, and distance-based refinement of the
//! modality-averaged logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Modality;

pub const DEFAULT_NORM_EPS: f64 = 1e-12;
pub const DEFAULT_DISTANCE_EPS: f64 = 1e-6;

/// L2-normalizes a vector along its channels.
pub fn channel_normalize(e: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    channel_normalize_eps(e, DEFAULT_NORM_EPS)
}

pub fn channel_normalize_eps(e: ArrayView1<'_, f64>, eps: f64) -> Result<Array1<f64>> {
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    if norm < eps {
        return Err(Error::Numeric(format!("cannot normalize embedding with norm {norm:e}")));
    }
    Ok(e.mapv(|x| x / norm))
}

/// Distance from `e` to its nearest gallery row and that row's index.
///
/// Ties go to the smallest row index.
pub fn nearest(e: ArrayView1<'_, f64>, gallery: ArrayView2<'_, f64>) -> Result<(f64, usize)> {
    if gallery.nrows() == 0 {
        return Err(Error::invalid("empty gallery"));
    }
    if gallery.ncols() != e.len() {
        return Err(Error::shape(format!(
            "query has {} channels, gallery has {}",
            e.len(),
            gallery.ncols()
        )));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, row) in gallery.rows().into_iter().enumerate() {
        let d2: f64 = row.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.0 {
            best = (d2, i);
        }
    }
    Ok((best.0.sqrt(), best.1))
}

pub fn nearest_distance(e: ArrayView1<'_, f64>, gallery: ArrayView2<'_, f64>) -> Result<f64> {
    nearest(e, gallery).map(|(d, _)| d)
}

pub fn mean_distance(dj: f64, db: f64, dv: f64) -> f64 {
    (dj + db + dv) / 3.0
}

/// Channel-normalized training embeddings for all three modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    rows: [Array2<f64>; 3],
}

impl Gallery {
    /// Normalizes every row of the three embedding matrices.
    pub fn build(joints: &Array2<f64>, bones: &Array2<f64>, velocities: &Array2<f64>) -> Result<Self> {
        let n = joints.nrows();
        if n == 0 {
            return Err(Error::invalid("empty gallery"));
        }
        if bones.nrows() != n || velocities.nrows() != n {
            return Err(Error::shape("gallery modalities must share the same row count"));
        }
        let norm = |m: &Array2<f64>| -> Result<Array2<f64>> {
            let mut out = m.clone();
            for mut row in out.rows_mut() {
                let unit = channel_normalize(row.view())?;
                row.assign(&unit);
            }
            Ok(out)
        };
        Ok(Self {
            rows: [norm(joints)?, norm(bones)?, norm(velocities)?],
        })
    }

    pub fn len(&self) -> usize {
        self.rows[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn modality(&self, m: Modality) -> &Array2<f64> {
        &self.rows[m.index()]
    }

    /// Keeps `count` rows chosen uniformly without replacement, in their
    /// original order. The same rows are kept for every modality.
    pub fn subsample(&self, count: usize, seed: u64) -> Self {
        if count >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = index::sample(&mut rng, self.len(), count).into_vec();
        keep.sort_unstable();
        Self {
            rows: std::array::from_fn(|m| self.rows[m].select(ndarray::Axis(0), &keep)),
        }
    }

    /// CNE distance of one raw (unnormalized) embedding.
    pub fn distance(&self, m: Modality, embedding: ArrayView1<'_, f64>) -> Result<f64> {
        let unit = channel_normalize(embedding)?;
        nearest_distance(unit.view(), self.modality(m).view())
    }

    /// CNE distances for every row of a raw embedding matrix.
    pub fn distances(&self, m: Modality, embeddings: &Array2<f64>) -> Result<Vec<f64>> {
        let rows: Vec<_> = embeddings.rows().into_iter().collect();
        rows.par_iter().map(|r| self.distance(m, r.view())).collect()
    }
}

/// Per-sample logits from the three branches and their CNE distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub id: String,
    /// Class label in the dataset's own indexing, when known.
    pub label: Option<usize>,
    pub joints: Vec<f64>,
    pub bones: Vec<f64>,
    pub velocities: Vec<f64>,
    pub distances: [f64; 3],
}

impl LogitsRecord {
    pub fn classes(&self) -> usize {
        self.joints.len()
    }

    pub fn mean_distance(&self) -> f64 {
        mean_distance(self.distances[0], self.distances[1], self.distances[2])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.joints.len();
        if k < 2 || self.bones.len() != k || self.velocities.len() != k {
            return Err(Error::shape(format!(
                "logit vectors must share a length >= 2, got {}/{}/{}",
                k,
                self.bones.len(),
                self.velocities.len()
            )));
        }
        if self
            .joints
            .iter()
            .chain(&self.bones)
            .chain(&self.velocities)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Numeric(format!("non-finite logits for sample {}", self.id)));
        }
        if self.distances.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid(format!(
                "distances must be finite and nonnegative for sample {}",
                self.id
            )));
        }
        Ok(())
    }
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Averaged logits and the position of their maximum.
pub fn salient_mask(lj: &[f64], lb: &[f64], lv: &[f64]) -> Result<(Vec<f64>, usize)> {
    if lj.is_empty() || lj.len() != lb.len() || lj.len() != lv.len() {
        return Err(Error::shape(format!(
            "logit lengths differ: {}/{}/{}",
            lj.len(),
            lb.len(),
            lv.len()
        )));
    }
    let mean: Vec<f64> = lj.iter().zip(lb).zip(lv).map(|((a, b), c)| (a + b + c) / 3.0).collect();
    let mp = argmax(&mean);
    Ok((mean, mp))
}

/// Distance-based refinement of averaged logits.
///
/// With `d` the mean distance clamped into `[eps, 1 - eps]`, every entry is
/// scaled by `d^2` and the salient entry additionally gains `ln(1/d - 1)`.
/// That is `ln(exp(l * d^2) * (1/d - 1))` written without the exponential.
pub fn refine_logits(mean: &[f64], salient: usize, distance: f64) -> Result<Vec<f64>> {
    refine_logits_eps(mean, salient, distance, DEFAULT_DISTANCE_EPS)
}

pub fn refine_logits_eps(mean: &[f64], salient: usize, distance: f64, eps: f64) -> Result<Vec<f64>> {
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    if salient >= mean.len() {
        return Err(Error::shape(format!(
            "salient index {salient} out of range for {} logits",
            mean.len()
        )));
    }
    if distance.is_nan() {
        return Err(Error::Numeric("distance is NaN".into()));
    }
    let d = distance.clamp(eps, 1.0 - eps);
    let d2 = d * d;
    let mut out: Vec<f64> = mean.iter().map(|l| l * d2).collect();
    out[salient] += (1.0 / d - 1.0).ln();
    Ok(out)
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetResult {
    pub refined_logits: Vec<f64>,
    pub predicted_class: usize,
    pub p_prob: f64,
    pub novelty: f64,
}

pub fn open_set_probability(refined: &[f64]) -> Result<OpenSetResult> {
    if refined.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    if refined.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let probs = softmax(refined);
    let predicted_class = argmax(&probs);
    let p_prob = probs[predicted_class];
    Ok(OpenSetResult {
        refined_logits: refined.to_vec(),
        predicted_class,
        p_prob,
        novelty: 1.0 - p_prob,
    })
}

/// Averages the three branches, refines with the record's mean distance and
/// takes the softmax maximum. With `refine == false` the averaged logits go
/// straight to the softmax.
pub fn score_sample(record: &LogitsRecord, refine: bool) -> Result<OpenSetResult> {
    record.validate()?;
    let (mean, mp) = salient_mask(&record.joints, &record.bones, &record.velocities)?;
    if refine {
        open_set_probability(&refine_logits(&mean, mp, record.mean_distance())?)
    } else {
        open_set_probability(&mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalize_three_four() {
        let u = channel_normalize(array![3.0, 4.0].view()).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        let v = channel_normalize(array![0.0, 1.0, 0.0].view()).unwrap();
        assert_eq!(v, array![0.0, 1.0, 0.0]);
        assert!(channel_normalize(array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn nearest_distance_examples() {
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let d = nearest_distance(array![0.6, 0.8].view(), g.view()).unwrap();
        assert!((d - 0.4f64.sqrt()).abs() < 1e-12);
        assert_eq!(nearest_distance(array![0.0, 1.0].view(), g.view()).unwrap(), 0.0);
        let anti = nearest_distance(array![-1.0, 0.0].view(), array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(anti, 2.0);
        assert!(nearest_distance(array![1.0].view(), Array2::zeros((0, 1)).view()).is_err());
    }

    #[test]
    fn nearest_ties_prefer_first_row() {
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let q = channel_normalize(array![1.0, 1.0].view()).unwrap();
        assert_eq!(nearest(q.view(), g.view()).unwrap().1, 0);
    }

    #[test]
    fn mean_distance_examples() {
        assert_eq!(mean_distance(0.0, 0.0, 0.0), 0.0);
        assert!((mean_distance(0.3, 0.6, 0.9) - 0.6).abs() < 1e-15);
        assert_eq!(mean_distance(0.3, 0.6, 0.9), mean_distance(0.9, 0.3, 0.6));
    }

    #[test]
    fn salient_mask_examples() {
        let (m, p) = salient_mask(&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!((m, p), (vec![1.0, 0.0], 0));
        let (m, p) = salient_mask(&[3.0, 0.0], &[0.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!((m, p), (vec![1.0, 1.0], 0));
        let (_, p) = salient_mask(&[0.0, 2.0, 1.0], &[0.5, 0.1, 0.0], &[0.0, 0.3, 0.2]).unwrap();
        let (_, q) = salient_mask(&[7.0, 9.0, 8.0], &[7.5, 7.1, 7.0], &[7.0, 7.3, 7.2]).unwrap();
        assert_eq!(p, q);
        assert!(salient_mask(&[1.0, 0.0], &[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn refine_half_distance() {
        let r = refine_logits(&[2.0, 1.0, 0.0], 0, 0.5).unwrap();
        assert_eq!(r, vec![0.5, 0.25, 0.0]);
    }

    #[test]
    fn refine_limits() {
        let near = refine_logits(&[2.0, 1.0, 0.0], 0, 0.0).unwrap();
        assert!((near[0] - (1.0 / DEFAULT_DISTANCE_EPS - 1.0).ln()).abs() < 1e-9);
        assert!(softmax(&near)[0] > 0.9999);
        let far = refine_logits(&[2.0, 1.0, 0.0], 0, 5.0).unwrap();
        assert!(softmax(&far)[0] < 1e-4);
        assert!(refine_logits(&[f64::INFINITY, 0.0], 0, 0.5).is_err());
    }

    #[test]
    fn softmax_example() {
        let r = open_set_probability(&[0.5, 0.25, 0.0]).unwrap();
        // exp(0.5), exp(0.25), 1 normalized by their sum 3.932746...
        let p = softmax(&[0.5, 0.25, 0.0]);
        let expected = [0.419_228_951_6, 0.326_495_835_8, 0.254_275_212_6];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
        assert_eq!(r.predicted_class, 0);
        assert!((r.p_prob - expected[0]).abs() < 1e-7);
        assert!((r.novelty - (1.0 - r.p_prob)).abs() < 1e-15);
    }

    #[test]
    fn softmax_uniform_and_shift() {
        let r = open_set_probability(&[0.7; 4]).unwrap();
        assert!((r.p_prob - 0.25).abs() < 1e-15);
        let a = open_set_probability(&[0.3, -1.0, 2.0]).unwrap();
        let b = open_set_probability(&[8.3, 7.0, 10.0]).unwrap();
        assert_eq!(a.predicted_class, b.predicted_class);
        assert!((a.p_prob - b.p_prob).abs() < 1e-15);
    }

    fn record(lj: Vec<f64>, lb: Vec<f64>, lv: Vec<f64>, d: [f64; 3]) -> LogitsRecord {
        LogitsRecord {
            id: "s".into(),
            label: None,
            joints: lj,
            bones: lb,
            velocities: lv,
            distances: d,
        }
    }

    #[test]
    fn equal_logits_keep_class_zero() {
        let rec = record(vec![1.0; 3], vec![1.0; 3], vec![1.0; 3], [0.2, 0.3, 0.4]);
        let r = score_sample(&rec, true).unwrap();
        assert_eq!(r.predicted_class, 0);
        // Entries are all 0.09, the salient one gains ln(1/0.3 - 1).
        let boost = (1.0f64 / 0.3 - 1.0).ln();
        let expected = boost.exp() / (boost.exp() + 2.0);
        assert!((r.p_prob - expected).abs() < 1e-12);
    }

    #[test]
    fn disabled_refinement_is_vanilla_softmax() {
        let rec = record(
            vec![1.0, 2.0, 0.5],
            vec![0.0, 1.0, 3.0],
            vec![2.0, 2.0, 2.0],
            [0.9, 1.1, 1.5],
        );
        let r = score_sample(&rec, false).unwrap();
        let (mean, _) = salient_mask(&rec.joints, &rec.bones, &rec.velocities).unwrap();
        let p = softmax(&mean);
        assert_eq!(r.p_prob, p[argmax(&p)]);
    }

    #[test]
    fn record_validation() {
        let short = record(vec![1.0], vec![1.0], vec![1.0], [0.0; 3]);
        assert!(score_sample(&short, true).is_err());
        let neg = record(vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], [-0.1, 0.0, 0.0]);
        assert!(score_sample(&neg, true).is_err());
    }

    #[test]
    fn gallery_rows_are_unit() {
        let j = array![[3.0, 4.0], [0.0, 2.0]];
        let g = Gallery::build(&j, &j, &j).unwrap();
        for row in g.modality(Modality::Bones).rows() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        assert_eq!(g.distance(Modality::Joints, array![6.0, 8.0].view()).unwrap(), 0.0);
        assert!(Gallery::build(&array![[0.0, 0.0]], &j, &j).is_err());
    }

    #[test]
    fn gallery_subsample_is_seeded() {
        let j = Array2::from_shape_fn((20, 3), |(i, c)| (i * 3 + c) as f64 + 1.0);
        let g = Gallery::build(&j, &j, &j).unwrap();
        let a = g.subsample(5, 3);
        assert_eq!(a.len(), 5);
        assert_eq!(a, g.subsample(5, 3));
        assert_eq!(g.subsample(50, 3), g);
    }
}
