//! Report artifacts: metrics JSON, curve CSVs and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::formats::{check_header, METRICS_FORMAT};
use crate::metrics::{self, LabeledScore, PrPoint, RocPoint};
use crate::pipeline::{labeled_scores, PipelineReport};

/// Files and directories written so far, so a failed run can remove them.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, path: &Path, contents: &str) -> Result<()> {
        if let Some(parent) = path.parent() {
            let mut missing = Vec::new();
            let mut p = parent;
            while !p.as_os_str().is_empty() && !p.exists() {
                missing.push(p.to_path_buf());
                match p.parent() {
                    Some(q) => p = q,
                    None => break,
                }
            }
            fs::create_dir_all(parent).map_err(|e| io_at(path, e))?;
            self.dirs.extend(missing.into_iter().rev());
        }
        let existed = path.exists();
        fs::write(path, contents).map_err(|e| io_at(path, e))?;
        if !existed {
            self.files.push(path.to_path_buf());
        }
        Ok(())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    /// Removes every file and directory this set created.
    pub fn discard(&mut self) {
        for f in self.files.drain(..).rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.drain(..).rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Scalar metrics of one run. Open-set metrics are absent when the run
/// lacks seen or unseen samples; C-ACC is absent without seen samples that
/// carry predicted and true classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub dataset_name: String,
    pub run_id: u32,
    pub samples: usize,
    pub seen: usize,
    pub unseen: usize,
    pub o_auroc: Option<f64>,
    pub o_aupr: Option<f64>,
    pub c_acc: Option<f64>,
}

impl RunSummary {
    pub fn from_scores(name: &str, dataset_name: &str, run_id: u32, scores: &[LabeledScore]) -> Result<Self> {
        let seen = scores.iter().filter(|s| s.is_seen).count();
        let unseen = scores.len() - seen;
        let both = seen > 0 && unseen > 0;
        Ok(Self {
            name: name.to_string(),
            dataset_name: dataset_name.to_string(),
            run_id,
            samples: scores.len(),
            seen,
            unseen,
            o_auroc: if both { Some(metrics::o_auroc(scores)?) } else { None },
            o_aupr: if both { Some(metrics::o_aupr(scores)?) } else { None },
            c_acc: metrics::c_acc(scores).ok(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub o_auroc: Option<f64>,
    pub o_aupr: Option<f64>,
    pub c_acc: Option<f64>,
}

/// The metrics JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub format: String,
    pub version: u32,
    pub config: Value,
    pub variant: String,
    pub runs: Vec<RunSummary>,
    pub mean: MeanMetrics,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsDocument {
    pub fn new(config: Value, variant: &str, runs: Vec<RunSummary>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::invalid("a metrics document needs at least one run"));
        }
        let mean = MeanMetrics {
            o_auroc: mean_of(runs.iter().map(|r| r.o_auroc)),
            o_aupr: mean_of(runs.iter().map(|r| r.o_aupr)),
            c_acc: mean_of(runs.iter().map(|r| r.c_acc)),
        };
        Ok(Self {
            format: METRICS_FORMAT.0.to_string(),
            version: METRICS_FORMAT.1,
            config,
            variant: variant.to_string(),
            runs,
            mean,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and checks a document against [`validate_metrics_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        validate_metrics_json(&value)?;
        Ok(serde_json::from_value(value)?)
    }
}

fn schema_err(path: &str, msg: &str) -> Error {
    Error::invalid(format!("metrics document: {path} {msg}"))
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| schema_err(&format!("{path}.{key}"), "is missing"))
}

fn check_keys(obj: &serde_json::Map<String, Value>, path: &str, allowed: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema_err(&format!("{path}.{k}"), "is not allowed")),
        None => Ok(()),
    }
}

fn unit_or_null(v: &Value, path: &str) -> Result<()> {
    match v {
        Value::Null => Ok(()),
        Value::Number(n) if n.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x)) => Ok(()),
        _ => Err(schema_err(path, "must be null or a number in [0, 1]")),
    }
}

fn count(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| schema_err(path, "must be a nonnegative integer"))
}

/// Structural check of a metrics document: required keys, no extra keys,
/// metric values in `[0, 1]` or null, consistent sample counts.
pub fn validate_metrics_json(v: &Value) -> Result<()> {
    let root = v.as_object().ok_or_else(|| schema_err("$", "must be an object"))?;
    check_keys(root, "$", &["format", "version", "config", "variant", "runs", "mean"])?;
    let format = field(root, "$", "format")?
        .as_str()
        .ok_or_else(|| schema_err("$.format", "must be a string"))?;
    let version = field(root, "$", "version")?
        .as_u64()
        .and_then(|x| u32::try_from(x).ok())
        .ok_or_else(|| schema_err("$.version", "must be an integer"))?;
    check_header(format, version, METRICS_FORMAT)?;
    if !field(root, "$", "config")?.is_object() {
        return Err(schema_err("$.config", "must be an object"));
    }
    if !field(root, "$", "variant")?.is_string() {
        return Err(schema_err("$.variant", "must be a string"));
    }
    let runs = field(root, "$", "runs")?
        .as_array()
        .filter(|a| !a.is_empty())
        .ok_or_else(|| schema_err("$.runs", "must be a nonempty array"))?;
    const RUN_KEYS: [&str; 9] = [
        "name",
        "dataset_name",
        "run_id",
        "samples",
        "seen",
        "unseen",
        "o_auroc",
        "o_aupr",
        "c_acc",
    ];
    for (i, run) in runs.iter().enumerate() {
        let path = format!("$.runs[{i}]");
        let obj = run.as_object().ok_or_else(|| schema_err(&path, "must be an object"))?;
        check_keys(obj, &path, &RUN_KEYS)?;
        for key in ["name", "dataset_name"] {
            if !field(obj, &path, key)?.is_string() {
                return Err(schema_err(&format!("{path}.{key}"), "must be a string"));
            }
        }
        count(field(obj, &path, "run_id")?, &format!("{path}.run_id"))?;
        let samples = count(field(obj, &path, "samples")?, &format!("{path}.samples"))?;
        let seen = count(field(obj, &path, "seen")?, &format!("{path}.seen"))?;
        let unseen = count(field(obj, &path, "unseen")?, &format!("{path}.unseen"))?;
        if seen + unseen != samples {
            return Err(schema_err(&path, "seen + unseen must equal samples"));
        }
        for key in ["o_auroc", "o_aupr", "c_acc"] {
            unit_or_null(field(obj, &path, key)?, &format!("{path}.{key}"))?;
        }
    }
    let mean = field(root, "$", "mean")?
        .as_object()
        .ok_or_else(|| schema_err("$.mean", "must be an object"))?;
    check_keys(mean, "$.mean", &["o_auroc", "o_aupr", "c_acc"])?;
    for key in ["o_auroc", "o_aupr", "c_acc"] {
        unit_or_null(field(mean, "$.mean", key)?, &format!("$.mean.{key}"))?;
    }
    Ok(())
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("fpr,tpr\n");
    for p in points {
        let _ = writeln!(s, "{},{}", p.fpr, p.tpr);
    }
    s
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut s = String::from("recall,precision\n");
    for p in points {
        let _ = writeln!(s, "{},{}", p.recall, p.precision);
    }
    s
}

/// Open-set probability counts over equal-width bins of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl Histogram {
    pub fn new(scores: &[LabeledScore], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let mut h = Self {
            seen: vec![0; bins],
            unseen: vec![0; bins],
        };
        for s in scores {
            if !s.score.is_finite() {
                return Err(Error::Numeric(format!("non-finite score {}", s.score)));
            }
            let b = ((s.score.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            if s.is_seen {
                h.seen[b] += 1;
            } else {
                h.unseen[b] += 1;
            }
        }
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.seen.len()
    }

    pub fn total(&self) -> usize {
        self.seen.iter().chain(&self.unseen).sum()
    }

    /// Number of non-empty populations.
    pub fn populations(&self) -> usize {
        [&self.seen, &self.unseen]
            .iter()
            .filter(|p| p.iter().any(|&c| c > 0))
            .count()
    }
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const SEEN_COLOR: &str = "#1f77b4";
const UNSEEN_COLOR: &str = "#d62728";
const SERIES: [&str; 3] = ["#1f77b4", "#2ca02c", "#d62728"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn axes(out: &mut String, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        "<line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{xm}\" y=\"{yl}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
         <text x=\"14\" y=\"{ym}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {ym})\">{}</text>\n",
        escape(xlabel),
        escape(ylabel),
        y0 = H - PAD,
        x1 = W - PAD,
        xm = W / 2.0,
        yl = H - 12.0,
        ym = H / 2.0,
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let x = PAD + t * (W - 2.0 * PAD);
        let y = H - PAD - t * (H - 2.0 * PAD);
        let _ = write!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{t:.2}</text>\n\
             <text x=\"{:.2}\" y=\"{y:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{t:.2}</text>\n",
            H - PAD + 14.0,
            PAD - 4.0,
        );
    }
}

/// Overlaid seen/unseen histogram. Each bar carries its count in `data-count`.
pub fn histogram_svg(h: &Histogram, title: &str) -> String {
    let mut out = svg_open(title);
    axes(&mut out, "open-set probability", "fraction of population");
    let bw = (W - 2.0 * PAD) / h.bins() as f64;
    for (name, counts, color) in [("seen", &h.seen, SEEN_COLOR), ("unseen", &h.unseen, UNSEEN_COLOR)] {
        let total: usize = counts.iter().sum();
        if total == 0 {
            continue;
        }
        let _ = writeln!(out, "<g class=\"{name}\" fill=\"{color}\" fill-opacity=\"0.5\">");
        for (i, &c) in counts.iter().enumerate() {
            let frac = c as f64 / total as f64;
            let height = frac * (H - 2.0 * PAD);
            let _ = writeln!(
                out,
                "<rect data-count=\"{c}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{height:.2}\"/>",
                PAD + i as f64 * bw,
                H - PAD - height,
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn polyline(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", PAD + x * (W - 2.0 * PAD), H - PAD - y * (H - 2.0 * PAD)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// A curve in the unit square.
pub fn curve_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut out = svg_open(title);
    axes(&mut out, xlabel, ylabel);
    let _ = writeln!(
        out,
        "<polyline fill=\"none\" stroke=\"{SEEN_COLOR}\" stroke-width=\"2\" points=\"{}\"/>",
        polyline(points)
    );
    out.push_str("</svg>\n");
    out
}

type Metric = fn(&RunSummary) -> Option<f64>;

/// Radar chart with one axis per run and one polygon per metric.
pub fn radar_svg(runs: &[RunSummary], title: &str) -> String {
    let mut out = svg_open(title);
    let (cx, cy, r) = (W / 2.0, H / 2.0 + 10.0, H / 2.0 - 50.0);
    let n = runs.len().max(1);
    let at = |i: usize, v: f64| {
        let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::TAU * i as f64 / n as f64;
        (cx + r * v * a.cos(), cy + r * v * a.sin())
    };
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..n)
            .map(|i| at(i, ring))
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let _ = writeln!(
            out,
            "<polygon fill=\"none\" stroke=\"#cccccc\" points=\"{}\"/>",
            pts.join(" ")
        );
    }
    for (i, run) in runs.iter().enumerate() {
        let (x, y) = at(i, 1.0);
        let (lx, ly) = at(i, 1.12);
        let _ = writeln!(
            out,
            "<line x1=\"{cx:.2}\" y1=\"{cy:.2}\" x2=\"{x:.2}\" y2=\"{y:.2}\" stroke=\"#999999\"/>\n\
             <text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            escape(&run.name)
        );
    }
    let metrics: [(&str, Metric); 3] = [
        ("O-AUROC", |r| r.o_auroc),
        ("O-AUPR", |r| r.o_aupr),
        ("C-ACC", |r| r.c_acc),
    ];
    for (k, (name, get)) in metrics.iter().enumerate() {
        let pts: Vec<String> = runs
            .iter()
            .enumerate()
            .map(|(i, run)| at(i, get(run).unwrap_or(0.0)))
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let _ = writeln!(
            out,
            "<polygon class=\"{name}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"12\" y=\"{}\" fill=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>",
            SERIES[k],
            pts.join(" "),
            44 + 14 * k,
            SERIES[k],
        );
    }
    out.push_str("</svg>\n");
    out
}

pub const HISTOGRAM_BINS: usize = 20;

/// Adds the config echo to an SVG as a `<metadata>` element.
pub fn svg_with_echo(svg: &str, echo: &str) -> String {
    let (first, rest) = svg.split_once('\n').unwrap_or((svg, ""));
    format!("{first}\n<metadata>config: {}</metadata>\n{rest}", escape(echo))
}

/// Prefixes a CSV with a `# config: <echo>` line.
pub fn csv_with_echo(csv: &str, echo: &str) -> String {
    format!("# config: {}\n{csv}", echo.replace(['\n', '\r'], " "))
}

/// Curves, CSVs and plots of one run under `dir`, each carrying `echo`.
/// Curves need both seen and unseen samples and are skipped otherwise.
pub fn emit_run(
    dir: &Path,
    title: &str,
    scores: &[LabeledScore],
    plots: bool,
    echo: &str,
    outputs: &mut Outputs,
) -> Result<()> {
    let seen = scores.iter().filter(|s| s.is_seen).count();
    if seen > 0 && seen < scores.len() {
        let roc = metrics::roc_curve(scores)?;
        let pr = metrics::pr_curve(scores)?;
        outputs.write(&dir.join("roc.csv"), &csv_with_echo(&roc_csv(&roc), echo))?;
        outputs.write(&dir.join("pr.csv"), &csv_with_echo(&pr_csv(&pr), echo))?;
        if plots {
            let roc_pts: Vec<_> = roc.iter().map(|p| (p.fpr, p.tpr)).collect();
            let pr_pts: Vec<_> = pr.iter().map(|p| (p.recall, p.precision)).collect();
            let roc_svg = curve_svg(&roc_pts, &format!("ROC {title}"), "FPR", "TPR");
            let pr_svg = curve_svg(&pr_pts, &format!("PR {title}"), "recall", "precision");
            outputs.write(&dir.join("roc.svg"), &svg_with_echo(&roc_svg, echo))?;
            outputs.write(&dir.join("pr.svg"), &svg_with_echo(&pr_svg, echo))?;
        }
    }
    if plots {
        let h = Histogram::new(scores, HISTOGRAM_BINS)?;
        let svg = histogram_svg(&h, &format!("Open-set probability {title}"));
        outputs.write(&dir.join("histogram.svg"), &svg_with_echo(&svg, echo))?;
    }
    Ok(())
}

/// Writes `metrics.json`, `radar.svg` and per-run artifacts of a pipeline run.
pub fn emit_report(report: &PipelineReport, dir: &Path, outputs: &mut Outputs) -> Result<MetricsDocument> {
    if report.runs.is_empty() {
        return Err(Error::invalid("no runs to report"));
    }
    let echo = serde_json::to_string(&report.config)?;
    let mut summaries = Vec::with_capacity(report.runs.len());
    for run in &report.runs {
        let scores = labeled_scores(&run.scores, &run.split)?;
        summaries.push(RunSummary::from_scores(
            &run.name,
            &run.split.dataset_name,
            run.split.run_id,
            &scores,
        )?);
        emit_run(&dir.join(&run.name), &run.name, &scores, true, &echo, outputs)?;
    }
    let doc = MetricsDocument::new(report.config.clone(), report.variant.name(), summaries)?;
    outputs.write(&dir.join("metrics.json"), &doc.to_json()?)?;
    let radar = radar_svg(&doc.runs, &format!("Per-run metrics ({})", doc.variant));
    outputs.write(&dir.join("radar.svg"), &svg_with_echo(&radar, &echo))?;
    Ok(doc)
}
