//! Pipeline stages and the end-to-end driver:
//! derive, train, extract, score, eval.
//!
//! Skeleton labels are dataset class ids throughout. The model is trained
//! on seen classes only and its output `i` stands for `split.seen[i]`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cne::{salient_mask, score_sample, Gallery, LogitsRecord};
use crate::crossmmd::{EmbeddingBatch, KernelConfig};
use crate::error::{Error, Result};
use crate::formats::{self, check_header, LogitsFile, ScoreRow, SkeletonRecord, MODEL_FORMAT};
use crate::metrics::{self, LabeledScore, MetricsReport};
use crate::model::{extract_embeddings, train, Extraction, LossBreakdown, ModalityData, Model, TrainConfig};
use crate::report::Outputs;
use crate::skeleton::{perturb, BoneTopology, Modality, PerturbationConfig};
use crate::splits::{load_fixture_split, SplitSpec};
use crate::synthetic::{self, SyntheticConfig};

/// How a test sample's open-set score is computed from its logits record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScoreVariant {
    /// Distance-refined averaged logits (vanilla when refinement is off).
    #[default]
    Crossmax,
    /// Max softmax of the averaged logits.
    VanillaSoftmax,
    /// `1 - clamp(d, 0, 1)` of the mean CNE distance.
    CneOnly,
    DistMin,
    DistMax,
    DistSingle(Modality),
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 8] = [
        ScoreVariant::Crossmax,
        ScoreVariant::VanillaSoftmax,
        ScoreVariant::CneOnly,
        ScoreVariant::DistMin,
        ScoreVariant::DistMax,
        ScoreVariant::DistSingle(Modality::Joints),
        ScoreVariant::DistSingle(Modality::Bones),
        ScoreVariant::DistSingle(Modality::Velocities),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::Crossmax => "crossmax",
            ScoreVariant::VanillaSoftmax => "vanilla_softmax",
            ScoreVariant::CneOnly => "cne_only",
            ScoreVariant::DistMin => "dist_min",
            ScoreVariant::DistMax => "dist_max",
            ScoreVariant::DistSingle(Modality::Joints) => "dist_joints",
            ScoreVariant::DistSingle(Modality::Bones) => "dist_bones",
            ScoreVariant::DistSingle(Modality::Velocities) => "dist_velocities",
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreVariant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = ScoreVariant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!(
                "unknown score variant {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

impl Serialize for ScoreVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ScoreVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps a CNE distance to a score in `[0, 1]`, higher meaning "seen".
pub fn distance_score(d: f64) -> f64 {
    1.0 - d.clamp(0.0, 1.0)
}

/// Predicted output index and open-set score of one record.
pub fn score_record(rec: &LogitsRecord, variant: ScoreVariant, refine: bool) -> Result<(usize, f64)> {
    let scored = |refine| score_sample(rec, refine).map(|r| (r.predicted_class, r.p_prob));
    let distance = |d: f64| -> Result<(usize, f64)> {
        rec.validate()?;
        let (_, mp) = salient_mask(&rec.joints, &rec.bones, &rec.velocities)?;
        Ok((mp, distance_score(d)))
    };
    let [dj, db, dv] = rec.distances;
    match variant {
        ScoreVariant::Crossmax => scored(refine),
        ScoreVariant::VanillaSoftmax => scored(false),
        ScoreVariant::CneOnly => distance(rec.mean_distance()),
        ScoreVariant::DistMin => distance(dj.min(db).min(dv)),
        ScoreVariant::DistMax => distance(dj.max(db).max(dv)),
        ScoreVariant::DistSingle(m) => distance(rec.distances[m.index()]),
    }
}

/// Scores every record; predicted classes are mapped to dataset ids.
pub fn score_logits(file: &LogitsFile, variant: ScoreVariant, refine: bool) -> Result<Vec<ScoreRow>> {
    file.records
        .iter()
        .map(|rec| {
            let (out, p) = score_record(rec, variant, refine)?;
            let class = file
                .class_of(out)
                .ok_or_else(|| Error::shape(format!("output {out} has no class id in the logits file")))?;
            Ok(ScoreRow {
                id: rec.id.clone(),
                class,
                p_prob: p,
                novelty: 1.0 - p,
                label: rec.label,
            })
        })
        .collect()
}

/// Labeled scores of a score table under a split. Every row needs a label.
pub fn labeled_scores(rows: &[ScoreRow], split: &SplitSpec) -> Result<Vec<LabeledScore>> {
    rows.iter()
        .map(|r| {
            let label = r
                .label
                .ok_or_else(|| Error::invalid(format!("sample {} has no label", r.id)))?;
            if label >= split.num_classes() {
                return Err(Error::invalid(format!(
                    "sample {} has label {label} outside the split's {} classes",
                    r.id,
                    split.num_classes()
                )));
            }
            Ok(LabeledScore::new(r.p_prob, split.is_seen(label)).with_classes(r.class, label))
        })
        .collect()
}

pub fn evaluate_scores(rows: &[ScoreRow], split: &SplitSpec) -> Result<MetricsReport> {
    metrics::evaluate(&labeled_scores(rows, split)?)
}

/// A trained model with everything needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seen_classes: Vec<usize>,
    pub train: TrainConfig,
    pub topology: BoneTopology,
    pub model: Model,
    pub loss_log: Vec<LossBreakdown>,
}

impl Checkpoint {
    /// Serializes with an optional echo of the producing configuration.
    pub fn to_json(&self, echo: Option<&serde_json::Value>) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format: &'static str,
            version: u32,
            config: Option<&'a serde_json::Value>,
            checkpoint: &'a Checkpoint,
        }
        let mut s = serde_json::to_string(&Doc {
            format: MODEL_FORMAT.0,
            version: MODEL_FORMAT.1,
            config: echo,
            checkpoint: self,
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            version: u32,
            checkpoint: Checkpoint,
        }
        let doc: Doc = serde_json::from_str(text)?;
        check_header(&doc.format, doc.version, MODEL_FORMAT)?;
        let c = doc.checkpoint;
        c.model.validate()?;
        if c.model.classes() != c.seen_classes.len() {
            return Err(Error::shape(format!(
                "model has {} outputs for {} seen classes",
                c.model.classes(),
                c.seen_classes.len()
            )));
        }
        Ok(c)
    }

    fn inputs(&self, records: &[SkeletonRecord]) -> Result<ModalityData> {
        let seqs: Vec<_> = records.iter().map(|r| r.sequence.clone()).collect();
        ModalityData::from_sequences(&seqs, &self.topology, |_| Ok(0))
    }

    pub fn extract(&self, records: &[SkeletonRecord]) -> Result<Extraction> {
        let data = self.inputs(records)?;
        let widths = [
            self.model.joints.inputs(),
            self.model.bones.inputs(),
            self.model.velocities.inputs(),
        ];
        if data.widths() != widths {
            return Err(Error::shape(format!(
                "input widths {:?} do not match the model's {widths:?}",
                data.widths()
            )));
        }
        extract_embeddings(&self.model, &data)
    }
}

/// Seen-class training records with labels mapped to output indices.
pub fn training_records<'a>(records: &'a [SkeletonRecord], split: &SplitSpec) -> Result<Vec<&'a SkeletonRecord>> {
    let mut out = Vec::new();
    for r in records {
        let label = r
            .sequence
            .label()
            .ok_or_else(|| Error::invalid(format!("training sample {} has no label", r.id)))?;
        if label >= split.num_classes() {
            return Err(Error::invalid(format!(
                "training sample {} has label {label} outside the split's {} classes",
                r.id,
                split.num_classes()
            )));
        }
        if split.is_seen(label) {
            out.push(r);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no training samples of seen classes"));
    }
    Ok(out)
}

pub fn train_stage(
    records: &[SkeletonRecord],
    topology: &BoneTopology,
    split: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    let seqs: Vec<_> = training_records(records, split)?
        .into_iter()
        .map(|r| r.sequence.clone())
        .collect();
    let data = ModalityData::from_sequences(&seqs, topology, |s| {
        let label = s.label().unwrap_or_default();
        split
            .seen_index(label)
            .ok_or_else(|| Error::invalid(format!("label {label} is not a seen class")))
    })?;
    let outcome = train(&data, split.seen.len(), cfg)?;
    Ok(Checkpoint {
        seen_classes: split.seen.clone(),
        train: cfg.clone(),
        topology: topology.clone(),
        model: outcome.model,
        loss_log: outcome.loss_log,
    })
}

/// CNE distances of every test embedding against the gallery.
pub fn cne_distances(gallery: &Gallery, embeddings: &[EmbeddingBatch; 3]) -> Result<Vec<[f64; 3]>> {
    let n = embeddings[0].rows();
    if embeddings.iter().any(|e| e.rows() != n) {
        return Err(Error::shape("embedding files differ in row count"));
    }
    let per: Vec<Vec<f64>> = Modality::ALL
        .iter()
        .map(|&m| gallery.distances(m, embeddings[m.index()].data()))
        .collect::<Result<_>>()?;
    Ok((0..n).map(|i| [per[0][i], per[1][i], per[2][i]]).collect())
}

/// Logits records of extracted samples. Distances are zero without a gallery.
pub fn logits_file(
    ckpt: &Checkpoint,
    records: &[SkeletonRecord],
    extraction: &Extraction,
    gallery: Option<&Gallery>,
) -> Result<LogitsFile> {
    let distances = match gallery {
        Some(g) => cne_distances(g, &extraction.embeddings)?,
        None => vec![[0.0; 3]; records.len()],
    };
    let row = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
    let [lj, lb, lv] = &extraction.logits;
    let out = records
        .iter()
        .enumerate()
        .map(|(i, r)| LogitsRecord {
            id: r.id.clone(),
            label: r.sequence.label(),
            joints: row(lj, i),
            bones: row(lb, i),
            velocities: row(lv, i),
            distances: distances[i],
        })
        .collect();
    Ok(LogitsFile {
        classes: ckpt.seen_classes.clone(),
        records: out,
    })
}

/// Replaces the distances of a logits file with ones computed from embeddings.
pub fn attach_distances(file: &mut LogitsFile, gallery: &Gallery, embeddings: &[EmbeddingBatch; 3]) -> Result<()> {
    let d = cne_distances(gallery, embeddings)?;
    if d.len() != file.records.len() {
        return Err(Error::shape(format!(
            "{} embedding rows for {} logits records",
            d.len(),
            file.records.len()
        )));
    }
    for (r, d) in file.records.iter_mut().zip(d) {
        r.distances = d;
    }
    Ok(())
}

pub fn gallery_from(embeddings: &[EmbeddingBatch; 3]) -> Result<Gallery> {
    for (m, e) in Modality::ALL.iter().zip(embeddings) {
        if e.modality() != *m {
            return Err(Error::invalid(format!("expected {m} embeddings, got {}", e.modality())));
        }
    }
    Gallery::build(embeddings[0].data(), embeddings[1].data(), embeddings[2].data())
}

/// Perturbs every record; record `i` draws from stream `i` of the seed.
pub fn perturb_records(records: &[SkeletonRecord], cfg: &PerturbationConfig) -> Result<Vec<SkeletonRecord>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(SkeletonRecord {
                id: r.id.clone(),
                sequence: perturb(&r.sequence, &cfg.clone().with_stream(i as u64))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRef {
    pub dataset: String,
    pub run: u32,
}

/// Where the skeleton data and splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// One run per seed; the seed drives both data generation and training.
    Synthetic {
        #[serde(default)]
        synthetic: SyntheticConfig,
        #[serde(default = "default_seeds")]
        seeds: Vec<u64>,
    },
    /// Skeleton files with labels in dataset class ids; one run per split.
    Files {
        train: PathBuf,
        test: PathBuf,
        /// Defaults to a chain over the joints.
        #[serde(default)]
        topology: Option<PathBuf>,
        #[serde(default)]
        splits: Vec<PathBuf>,
        #[serde(default)]
        fixtures: Vec<FixtureRef>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            synthetic: SyntheticConfig::default(),
            seeds: default_seeds(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub score_variant: ScoreVariant,
    #[serde(default = "default_true")]
    pub refinement_enabled: bool,
    /// Overrides `train.kernel`.
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Keeps at most this many gallery rows, chosen with the training seed.
    #[serde(default)]
    pub gallery_limit: Option<usize>,
    /// Applied to test sequences before extraction, one stream per sample.
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub data: DataConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            score_variant: ScoreVariant::default(),
            refinement_enabled: true,
            kernel: KernelConfig::default(),
            train: TrainConfig::default(),
            gallery_limit: None,
            perturbation: None,
            data: DataConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The config as JSON, echoed into outputs.
    pub fn echo(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kernel: self.kernel,
            ..self.train.clone()
        }
    }

    /// Checks values and that input paths, resolved against `base`, exist.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.kernel.validate()?;
        if self.train.kernel != KernelConfig::default() && self.train.kernel != self.kernel {
            return Err(Error::Config(
                "set kernel options under [kernel], not [train.kernel]".into(),
            ));
        }
        self.train_config().validate()?;
        if self.gallery_limit == Some(0) {
            return Err(Error::Config("gallery_limit must be >= 1".into()));
        }
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        match &self.data {
            DataConfig::Synthetic { synthetic, seeds } => {
                synthetic.validate()?;
                if seeds.is_empty() {
                    return Err(Error::Config("no seeds given".into()));
                }
            }
            DataConfig::Files {
                train,
                test,
                topology,
                splits,
                fixtures,
            } => {
                if splits.is_empty() && fixtures.is_empty() {
                    return Err(Error::Config("no splits or fixtures given".into()));
                }
                for p in [train, test].into_iter().chain(topology).chain(splits) {
                    let full = base.join(p);
                    if !full.is_file() {
                        return Err(Error::Config(format!("input {} does not exist", full.display())));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Results of one split or seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub split: SplitSpec,
    pub logits: LogitsFile,
    pub scores: Vec<ScoreRow>,
    pub metrics: MetricsReport,
}

impl RunResult {
    /// Metrics of the same logits under another variant.
    pub fn rescore(&self, variant: ScoreVariant, refine: bool) -> Result<MetricsReport> {
        evaluate_scores(&score_logits(&self.logits, variant, refine)?, &self.split)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub config: serde_json::Value,
    pub variant: ScoreVariant,
    pub runs: Vec<RunResult>,
    /// Mean O-AUROC, O-AUPR and C-ACC over runs.
    pub mean: (f64, f64, f64),
}

struct RunInput {
    name: String,
    split: SplitSpec,
    topology: BoneTopology,
    train: Vec<SkeletonRecord>,
    test: Vec<SkeletonRecord>,
    train_cfg: TrainConfig,
}

fn read(base: &Path, p: &Path) -> Result<String> {
    let full = base.join(p);
    std::fs::read_to_string(&full)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", full.display()))))
}

fn run_inputs(cfg: &PipelineConfig, base: &Path) -> Result<Vec<RunInput>> {
    let train_cfg = cfg.train_config();
    match &cfg.data {
        DataConfig::Synthetic { synthetic: syn, seeds } => seeds
            .iter()
            .map(|&seed| {
                let d = synthetic::generate(&SyntheticConfig { seed, ..syn.clone() })?;
                Ok(RunInput {
                    name: format!("seed-{seed}"),
                    split: d.split,
                    topology: d.topology,
                    train: d.train,
                    test: d.test,
                    train_cfg: TrainConfig {
                        seed: train_cfg.seed.wrapping_add(seed),
                        ..train_cfg.clone()
                    },
                })
            })
            .collect(),
        DataConfig::Files {
            train,
            test,
            topology,
            splits,
            fixtures,
        } => {
            let train = formats::parse_skeletons(&read(base, train)?)?;
            let test = formats::parse_skeletons(&read(base, test)?)?;
            let topology = match topology {
                Some(p) => formats::parse_topology(&read(base, p)?)?,
                None => {
                    let joints = train
                        .first()
                        .ok_or_else(|| Error::invalid("empty training file"))?
                        .sequence
                        .points();
                    BoneTopology::chain(joints)?
                }
            };
            let mut specs = Vec::new();
            for p in splits {
                specs.push(SplitSpec::from_json(&read(base, p)?)?);
            }
            for f in fixtures {
                specs.push(load_fixture_split(&f.dataset, f.run)?);
            }
            Ok(specs
                .into_iter()
                .enumerate()
                .map(|(i, split)| RunInput {
                    name: format!("run-{:02}-{}-{}", i + 1, split.dataset_name, split.run_id),
                    split,
                    topology: topology.clone(),
                    train: train.clone(),
                    test: test.clone(),
                    train_cfg: train_cfg.clone(),
                })
                .collect())
        }
    }
}

/// Runs every stage for every run. With `out`, intermediates are written to
/// `out/<run>/`, and removed again if a later stage fails.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path, out: Option<&Path>) -> Result<PipelineReport> {
    let mut outputs = Outputs::new();
    let result = run_pipeline_into(cfg, base, out, &mut outputs);
    if result.is_err() {
        outputs.discard();
    }
    result
}

/// [`run_pipeline`] recording written files in `outputs` and leaving
/// cleanup to the caller.
pub fn run_pipeline_into(
    cfg: &PipelineConfig,
    base: &Path,
    out: Option<&Path>,
    outputs: &mut Outputs,
) -> Result<PipelineReport> {
    cfg.validate(base).map_err(|e| e.in_stage("config"))?;
    let echo = cfg.echo()?;
    let echo_line = serde_json::to_string(&echo)?;
    let inputs = run_inputs(cfg, base).map_err(|e| e.in_stage("load"))?;
    let mut runs = Vec::with_capacity(inputs.len());
    for input in &inputs {
        runs.push(run_one(cfg, input, out, &echo_line, outputs)?);
    }
    let reports: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
    let mean = metrics::mean_metrics(&reports)?;
    Ok(PipelineReport {
        config: echo,
        variant: cfg.score_variant,
        runs,
        mean,
    })
}

fn run_one(
    cfg: &PipelineConfig,
    input: &RunInput,
    out: Option<&Path>,
    echo: &str,
    outputs: &mut Outputs,
) -> Result<RunResult> {
    let dir = out.map(|o| o.join(&input.name));
    let mut save = |name: &str, text: String| -> Result<()> {
        match &dir {
            Some(d) => outputs.write(&d.join(name), &text),
            None => Ok(()),
        }
    };
    let ckpt =
        train_stage(&input.train, &input.topology, &input.split, &input.train_cfg).map_err(|e| e.in_stage("train"))?;
    let echo_value = cfg.echo()?;
    save("split.json", input.split.to_json(Some(&echo_value))?)?;
    save("checkpoint.json", ckpt.to_json(Some(&echo_value))?)?;

    let train_recs: Vec<SkeletonRecord> = training_records(&input.train, &input.split)?
        .into_iter()
        .cloned()
        .collect();
    let gallery_ex = ckpt.extract(&train_recs).map_err(|e| e.in_stage("extract"))?;
    let test = match &cfg.perturbation {
        Some(p) => perturb_records(&input.test, p).map_err(|e| e.in_stage("perturb"))?,
        None => input.test.clone(),
    };
    let test_ex = ckpt.extract(&test).map_err(|e| e.in_stage("extract"))?;
    for m in Modality::ALL {
        save(
            &format!("gallery_{m}.txt"),
            formats::with_echo(&formats::write_embeddings(&gallery_ex.embeddings[m.index()]), echo),
        )?;
        save(
            &format!("test_{m}.txt"),
            formats::with_echo(&formats::write_embeddings(&test_ex.embeddings[m.index()]), echo),
        )?;
    }

    let mut gallery = gallery_ex.gallery().map_err(|e| e.in_stage("score"))?;
    if let Some(limit) = cfg.gallery_limit {
        gallery = gallery.subsample(limit, input.train_cfg.seed);
    }
    let logits = logits_file(&ckpt, &test, &test_ex, Some(&gallery)).map_err(|e| e.in_stage("score"))?;
    save("logits.txt", formats::with_echo(&formats::write_logits(&logits)?, echo))?;
    let scores = score_logits(&logits, cfg.score_variant, cfg.refinement_enabled).map_err(|e| e.in_stage("score"))?;
    save("scores.csv", formats::with_echo(&formats::write_scores(&scores)?, echo))?;

    let metrics = evaluate_scores(&scores, &input.split).map_err(|e| e.in_stage("eval"))?;
    Ok(RunResult {
        name: input.name.clone(),
        split: input.split.clone(),
        logits,
        scores,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(joints: Vec<f64>, distances: [f64; 3]) -> LogitsRecord {
        LogitsRecord {
            id: "x".into(),
            label: Some(0),
            bones: joints.clone(),
            velocities: joints.clone(),
            joints,
            distances,
        }
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in ScoreVariant::ALL {
            assert_eq!(v.name().parse::<ScoreVariant>().unwrap(), v);
        }
        assert!("softmax".parse::<ScoreVariant>().is_err());
    }

    #[test]
    fn distance_variants() {
        let r = record(vec![2.0, 1.0, 0.0], [0.2, 0.4, 1.5]);
        let s = |v| score_record(&r, v, true).unwrap();
        assert_eq!(s(ScoreVariant::DistMin), (0, 0.8));
        assert_eq!(s(ScoreVariant::DistMax), (0, 0.0));
        assert_eq!(s(ScoreVariant::DistSingle(Modality::Bones)).1, 0.6);
        assert!((s(ScoreVariant::CneOnly).1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn crossmax_without_refinement_is_vanilla() {
        let r = record(vec![0.3, -1.2, 2.5, 0.0], [0.7, 0.1, 0.4]);
        assert_eq!(
            score_record(&r, ScoreVariant::Crossmax, false).unwrap(),
            score_record(&r, ScoreVariant::VanillaSoftmax, true).unwrap()
        );
    }

    #[test]
    fn config_from_toml() {
        let cfg = PipelineConfig::from_toml(
            "score_variant = \"dist_min\"\n[train]\nepochs = 3\n[data]\nsource = \"synthetic\"\nseeds = [1, 2]\n",
        )
        .unwrap();
        assert_eq!(cfg.score_variant, ScoreVariant::DistMin);
        assert_eq!(cfg.train.epochs, 3);
        assert!(cfg.refinement_enabled);
        assert!(PipelineConfig::from_toml("bogus = 1\n[data]\nsource = \"synthetic\"\n").is_err());
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_inputs_rejected() {
        let cfg = PipelineConfig::from_toml(
            "[data]\nsource = \"files\"\ntrain = \"nope.txt\"\ntest = \"nope.txt\"\nfixtures = [{ dataset = \"NTU60\", run = 1 }]\n",
        )
        .unwrap();
        assert!(matches!(cfg.validate(Path::new(".")), Err(Error::Config(_))));
    }
}
