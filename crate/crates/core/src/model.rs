//! A small three-branch classifier trained with per-branch cross-entropy
//! plus a weighted CrossMMD term on the hidden embeddings.
//!
//! Each branch is `x -> relu(x W1 + b1) -> (.) W2 + b2`. The hidden layer is
//! the embedding that CrossMMD aligns during training and that the CNE
//! gallery stores at test time. Gradients are written out by hand.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cne::{softmax, Gallery};
use crate::crossmmd::{crossmmd_grad_with, crossmmd_with, EmbeddingBatch, KernelConfig, PairBandwidths, Triple};
use crate::error::{Error, Result};
use crate::skeleton::{BoneTopology, Modality, ModalityTriple, SkeletonSequence};

/// Parameters of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    /// `C_in x H`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `H x K`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Forward activations of a batch through one branch.
#[derive(Debug, Clone)]
pub struct BranchOutput {
    pub pre: Array2<f64>,
    pub embedding: Array2<f64>,
    pub logits: Array2<f64>,
}

impl BranchParams {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            w1: Array2::zeros((inputs, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, classes)),
            b2: Array1::zeros(classes),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(inputs, hidden, classes);
        let a1 = 1.0 / (inputs as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-a1..=a1));
        p.b1.mapv_inplace(|_| rng.random_range(-a1..=a1));
        p.w2.mapv_inplace(|_| rng.random_range(-a2..=a2));
        p.b2.mapv_inplace(|_| rng.random_range(-a2..=a2));
        p
    }

    pub fn inputs(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, k) = (self.hidden(), self.classes());
        if self.b1.len() != h || self.w2.nrows() != h || self.b2.len() != k {
            return Err(Error::shape("inconsistent branch parameter shapes"));
        }
        if h < 2 {
            return Err(Error::invalid(format!("hidden width must be >= 2, got {h}")));
        }
        let all = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite branch parameters".into()));
        }
        Ok(())
    }

    /// Embedding and logits for one input vector.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let out = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok((out.embedding.row(0).to_owned(), out.logits.row(0).to_owned()))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<BranchOutput> {
        if x.ncols() != self.inputs() {
            return Err(Error::shape(format!(
                "branch expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        let pre = x.dot(&self.w1) + &self.b1;
        let embedding = pre.mapv(|v| v.max(0.0));
        let logits = embedding.dot(&self.w2) + &self.b2;
        Ok(BranchOutput { pre, embedding, logits })
    }

    fn axpy(&mut self, scale: f64, g: &BranchParams) {
        self.w1.scaled_add(scale, &g.w1);
        self.b1.scaled_add(scale, &g.b1);
        self.w2.scaled_add(scale, &g.w2);
        self.b2.scaled_add(scale, &g.b2);
    }
}

/// The joint, bone and velocity branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub joints: BranchParams,
    pub bones: BranchParams,
    pub velocities: BranchParams,
}

impl Model {
    pub fn init<R: Rng>(inputs: [usize; 3], hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            joints: BranchParams::init(inputs[0], hidden, classes, rng),
            bones: BranchParams::init(inputs[1], hidden, classes, rng),
            velocities: BranchParams::init(inputs[2], hidden, classes, rng),
        }
    }

    pub fn branch(&self, m: Modality) -> &BranchParams {
        match m {
            Modality::Joints => &self.joints,
            Modality::Bones => &self.bones,
            Modality::Velocities => &self.velocities,
        }
    }

    pub fn branch_mut(&mut self, m: Modality) -> &mut BranchParams {
        match m {
            Modality::Joints => &mut self.joints,
            Modality::Bones => &mut self.bones,
            Modality::Velocities => &mut self.velocities,
        }
    }

    pub fn classes(&self) -> usize {
        self.joints.classes()
    }

    pub fn hidden(&self) -> usize {
        self.joints.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        for m in Modality::ALL {
            self.branch(m).validate()?;
        }
        let (h, k) = (self.hidden(), self.classes());
        if Modality::ALL
            .iter()
            .any(|&m| self.branch(m).hidden() != h || self.branch(m).classes() != k)
        {
            return Err(Error::shape("branches must share hidden width and class count"));
        }
        if k < 2 {
            return Err(Error::invalid("model needs at least two classes"));
        }
        Ok(())
    }

    fn forward_all(&self, data: &ModalityData) -> Result<[BranchOutput; 3]> {
        Ok([
            self.joints.forward_batch(data.inputs[0].view())?,
            self.bones.forward_batch(data.inputs[1].view())?,
            self.velocities.forward_batch(data.inputs[2].view())?,
        ])
    }

    fn axpy(&mut self, scale: f64, g: &Model) {
        for m in Modality::ALL {
            self.branch_mut(m).axpy(scale, g.branch(m));
        }
    }
}

/// Flattened per-modality inputs with class labels in `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityData {
    pub inputs: [Array2<f64>; 3],
    pub labels: Vec<usize>,
}

impl ModalityData {
    pub fn new(inputs: [Array2<f64>; 3], labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        if inputs.iter().any(|x| x.nrows() != n) {
            return Err(Error::shape("modality inputs and labels differ in length"));
        }
        if inputs.iter().flat_map(|x| x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite model input"));
        }
        Ok(Self { inputs, labels })
    }

    /// Derives and flattens the three modalities of each sequence. Labels
    /// come from `label_of`, which maps a sequence to its class index.
    pub fn from_sequences<F>(seqs: &[SkeletonSequence], topo: &BoneTopology, mut label_of: F) -> Result<Self>
    where
        F: FnMut(&SkeletonSequence) -> Result<usize>,
    {
        if seqs.is_empty() {
            return Err(Error::invalid("no sequences"));
        }
        let mut rows: [Vec<f64>; 3] = Default::default();
        let mut widths = [0usize; 3];
        let mut labels = Vec::with_capacity(seqs.len());
        for (i, seq) in seqs.iter().enumerate() {
            let triple = ModalityTriple::derive(seq, topo)?;
            for m in Modality::ALL {
                let flat = triple.get(m).flatten();
                if i == 0 {
                    widths[m.index()] = flat.len();
                } else if flat.len() != widths[m.index()] {
                    return Err(Error::shape(format!(
                        "sequence {i} has {} {m} features, expected {}",
                        flat.len(),
                        widths[m.index()]
                    )));
                }
                rows[m.index()].extend(flat);
            }
            labels.push(label_of(seq)?);
        }
        let n = seqs.len();
        let [j, b, v] = rows;
        let inputs = [
            Array2::from_shape_vec((n, widths[0]), j).map_err(|e| Error::shape(e.to_string()))?,
            Array2::from_shape_vec((n, widths[1]), b).map_err(|e| Error::shape(e.to_string()))?,
            Array2::from_shape_vec((n, widths[2]), v).map_err(|e| Error::shape(e.to_string()))?,
        ];
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn widths(&self) -> [usize; 3] {
        std::array::from_fn(|m| self.inputs[m].ncols())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: std::array::from_fn(|m| self.inputs[m].select(Axis(0), rows)),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub kernel: KernelConfig,
    /// Epochs after which the learning rate is multiplied by `lr_decay_rate`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            hidden: 32,
            kernel: KernelConfig::default(),
            lr_decay_epochs: Vec::new(),
            lr_decay_rate: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.hidden < 2 {
            return Err(Error::Config("hidden width must be >= 2".into()));
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate.is_finite()) {
            return Err(Error::Config("lr decay rate must be > 0".into()));
        }
        self.kernel.validate()
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.lr_decay_rate.powi(decays as i32)
    }
}

/// Loss components of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cross_entropy: [f64; 3],
    pub crossmmd: f64,
    pub total: f64,
}

fn check_labels(data: &ModalityData, classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).to_vec();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (k, p) in softmax(&row).into_iter().enumerate() {
            grad[[i, k]] = (p - if k == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

fn embeddings(outs: &[BranchOutput; 3]) -> Result<[EmbeddingBatch; 3]> {
    Ok([
        EmbeddingBatch::new(outs[0].embedding.clone(), Modality::Joints)?,
        EmbeddingBatch::new(outs[1].embedding.clone(), Modality::Bones)?,
        EmbeddingBatch::new(outs[2].embedding.clone(), Modality::Velocities)?,
    ])
}

/// Bandwidths of the batch's current embeddings.
pub fn batch_bandwidths(data: &ModalityData, model: &Model, kernel: &KernelConfig) -> Result<PairBandwidths> {
    let outs = model.forward_all(data)?;
    let [j, b, v] = embeddings(&outs)?;
    Triple::new(&j, &b, &v)?.bandwidths(kernel)
}

/// Cross-entropy of each branch plus `lambda * CrossMMD`.
pub fn total_loss(data: &ModalityData, model: &Model, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let bw = batch_bandwidths(data, model, &cfg.kernel)?;
    total_loss_with(data, model, cfg.lambda, &bw)
}

/// [`total_loss`] with the kernel bandwidths held fixed.
pub fn total_loss_with(
    data: &ModalityData,
    model: &Model,
    lambda: f64,
    bandwidths: &PairBandwidths,
) -> Result<LossBreakdown> {
    check_labels(data, model.classes())?;
    let outs = model.forward_all(data)?;
    let cross_entropy = std::array::from_fn(|m| cross_entropy(&outs[m].logits, &data.labels).0);
    let [j, b, v] = embeddings(&outs)?;
    let mmd = crossmmd_with(&Triple::new(&j, &b, &v)?, bandwidths);
    Ok(LossBreakdown {
        cross_entropy,
        crossmmd: mmd,
        total: cross_entropy.iter().sum::<f64>() + lambda * mmd,
    })
}

/// Loss and analytic gradient for all three branches.
pub fn backward(data: &ModalityData, model: &Model, cfg: &TrainConfig) -> Result<(LossBreakdown, Model)> {
    let bw = batch_bandwidths(data, model, &cfg.kernel)?;
    backward_with(data, model, cfg.lambda, &bw)
}

/// [`backward`] with the kernel bandwidths held fixed.
pub fn backward_with(
    data: &ModalityData,
    model: &Model,
    lambda: f64,
    bandwidths: &PairBandwidths,
) -> Result<(LossBreakdown, Model)> {
    check_labels(data, model.classes())?;
    let outs = model.forward_all(data)?;
    let [j, b, v] = embeddings(&outs)?;
    let triple = Triple::new(&j, &b, &v)?;
    let (mmd, mmd_grad) = if lambda != 0.0 {
        let (value, grad) = crossmmd_grad_with(&triple, bandwidths);
        (value, Some(grad))
    } else {
        (crossmmd_with(&triple, bandwidths), None)
    };

    let mut cross_entropy = [0.0; 3];
    let mut grads = Vec::with_capacity(3);
    for m in Modality::ALL {
        let out = &outs[m.index()];
        let params = model.branch(m);
        let (ce, d_logits) = self::cross_entropy(&out.logits, &data.labels);
        cross_entropy[m.index()] = ce;
        let w2 = out.embedding.t().dot(&d_logits);
        let b2 = d_logits.sum_axis(Axis(0));
        let mut d_emb = d_logits.dot(&params.w2.t());
        if let Some(g) = &mmd_grad {
            d_emb.scaled_add(lambda, g.get(m));
        }
        let d_pre = &d_emb * &out.pre.mapv(|p| if p > 0.0 { 1.0 } else { 0.0 });
        let w1 = data.inputs[m.index()].t().dot(&d_pre);
        let b1 = d_pre.sum_axis(Axis(0));
        grads.push(BranchParams { w1, b1, w2, b2 });
    }
    let mut grads = grads.into_iter();
    let grad = Model {
        joints: grads.next().unwrap(),
        bones: grads.next().unwrap(),
        velocities: grads.next().unwrap(),
    };
    Ok((
        LossBreakdown {
            cross_entropy,
            crossmmd: mmd,
            total: cross_entropy.iter().sum::<f64>() + lambda * mmd,
        },
        grad,
    ))
}

/// Trained model and, per epoch, the mini-batch losses averaged with
/// batch-size weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub loss_log: Vec<LossBreakdown>,
}

/// Mini-batch gradient descent on [`total_loss`].
///
/// The generator seeded from `cfg.seed` drives initialization and the
/// per-epoch shuffles, so the result is a pure function of its inputs.
pub fn train(data: &ModalityData, classes: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if classes < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    check_labels(data, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::init(data.widths(), cfg.hidden, classes, &mut rng);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown {
            cross_entropy: [0.0; 3],
            crossmmd: 0.0,
            total: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (loss, grad) = backward(&batch, &model, cfg)?;
            let w = chunk.len() as f64 / data.len() as f64;
            for m in 0..3 {
                sum.cross_entropy[m] += w * loss.cross_entropy[m];
            }
            sum.crossmmd += w * loss.crossmmd;
            sum.total += w * loss.total;
            model.axpy(-lr, &grad);
        }
        model
            .validate()
            .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        if !sum.total.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: non-finite loss")));
        }
        loss_log.push(sum);
    }
    Ok(TrainOutcome { model, loss_log })
}

/// Hidden embeddings and logits of every sample.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub embeddings: [EmbeddingBatch; 3],
    pub logits: [Array2<f64>; 3],
}

impl Extraction {
    pub fn gallery(&self) -> Result<Gallery> {
        Gallery::build(
            self.embeddings[0].data(),
            self.embeddings[1].data(),
            self.embeddings[2].data(),
        )
    }
}

pub fn extract_embeddings(model: &Model, data: &ModalityData) -> Result<Extraction> {
    let outs = model.forward_all(data)?;
    let embeddings = embeddings(&outs)?;
    let [a, b, c] = outs;
    Ok(Extraction {
        embeddings,
        logits: [a.logits, b.logits, c.logits],
    })
}
