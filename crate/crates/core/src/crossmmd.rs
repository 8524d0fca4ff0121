//! Multi-kernel Gaussian MMD across the three modality embeddings.
//!
//! For each pair of modalities `(a, b)` the two batches are concatenated,
//! squared Euclidean distances are taken over the concatenation and a base
//! bandwidth is set to their mean off-diagonal value. A geometric list of
//! `num_kernels` bandwidths `bw * alpha^i` then defines a stack of Gaussian
//! kernels `exp(-d / beta)`, and the three blocks of that stack (a-a, b-b,
//! a-b) are averaged entrywise, diagonal included.
//!
//! The intra term collects the self blocks, the inter term the cross blocks:
//!
//! ```text
//! intra = sum_(a,b) (E[K_aa] + E[K_bb]) / 2
//! inter = sum_(a,b) E[K_ab]
//! crossmmd = intra - inter = 1/2 * sum_(a,b) MMD^2_(a,b)
//! ```
//!
//! Every modality takes part in exactly two pairs, so each self term appears
//! with total weight one, and each summand is a biased MMD^2 estimate with a
//! positive-definite kernel. The result is therefore nonnegative.
//!
//! Bandwidths are treated as constants when differentiating.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Modality;

/// An `N x C` embedding matrix tagged with its modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    data: Array2<f64>,
    modality: Modality,
}

impl EmbeddingBatch {
    pub fn new(data: Array2<f64>, modality: Modality) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "empty {modality} embedding batch ({}x{})",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry in {modality} embeddings")));
        }
        Ok(Self { data, modality })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub num_kernels: usize,
    pub alpha: f64,
    pub bandwidth_floor: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            num_kernels: 5,
            alpha: 2.0,
            bandwidth_floor: 1e-8,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_kernels == 0 {
            return Err(Error::Config("num_kernels must be >= 1".into()));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be > 1, got {}", self.alpha)));
        }
        if !(self.bandwidth_floor > 0.0 && self.bandwidth_floor.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth floor must be > 0, got {}",
                self.bandwidth_floor
            )));
        }
        Ok(())
    }
}

/// Gaussian kernel matrices, one per bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStack {
    pub matrices: Vec<Array2<f64>>,
    pub bandwidths: Vec<f64>,
}

impl KernelStack {
    /// Mean of the `rows x cols` block summed over all kernels.
    pub fn block_mean(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
        let count = (rows.len() * cols.len()) as f64;
        let mut total = 0.0;
        for m in &self.matrices {
            let mut block = 0.0;
            for i in rows.clone() {
                for j in cols.clone() {
                    block += m[[i, j]];
                }
            }
            total += block / count;
        }
        total
    }
}

/// Squared Euclidean distances over the row concatenation of `a` and `b`.
pub fn pairwise_sq_distances(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "channel mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let z = concatenate(Axis(0), &[a, b]).map_err(|e| Error::shape(e.to_string()))?;
    Ok(sq_distance_matrix(z.view()))
}

fn sq_distance_matrix(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = z.nrows();
    let mut d = Array2::zeros((n, n));
    for p in 0..n {
        for q in (p + 1)..n {
            let dist: f64 = z.row(p).iter().zip(z.row(q)).map(|(x, y)| (x - y) * (x - y)).sum();
            d[[p, q]] = dist;
            d[[q, p]] = dist;
        }
    }
    d
}

/// Mean off-diagonal distance `sum(d) / (n^2 - n)`, floored at `floor`.
pub fn bandwidth(dz: &Array2<f64>, floor: f64) -> Result<f64> {
    let n = dz.nrows();
    if n < 2 || dz.ncols() != n {
        return Err(Error::shape(format!(
            "bandwidth needs a square matrix with at least 2 rows, got {}x{}",
            dz.nrows(),
            dz.ncols()
        )));
    }
    let raw = dz.sum() / (n * n - n) as f64;
    Ok(raw.max(floor))
}

/// `[bw * alpha^i for i in 0..num_kernels]`.
pub fn bandwidth_list(bw: f64, cfg: &KernelConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.num_kernels);
    let mut beta = bw;
    for _ in 0..cfg.num_kernels {
        out.push(beta);
        beta *= cfg.alpha;
    }
    out
}

/// Kernel stack with bandwidths derived from `dz` itself.
pub fn kernel_stack(dz: &Array2<f64>, cfg: &KernelConfig) -> Result<KernelStack> {
    cfg.validate()?;
    let bw = bandwidth(dz, cfg.bandwidth_floor)?;
    Ok(kernel_stack_with(dz, &bandwidth_list(bw, cfg)))
}

/// Kernel stack for explicitly given bandwidths.
pub fn kernel_stack_with(dz: &Array2<f64>, bandwidths: &[f64]) -> KernelStack {
    let matrices = bandwidths.iter().map(|&beta| dz.mapv(|d| (-d / beta).exp())).collect();
    KernelStack {
        matrices,
        bandwidths: bandwidths.to_vec(),
    }
}

/// The three modality pairs in their fixed evaluation order.
pub const PAIRS: [(Modality, Modality); 3] = [
    (Modality::Joints, Modality::Bones),
    (Modality::Joints, Modality::Velocities),
    (Modality::Bones, Modality::Velocities),
];

/// Bandwidth lists for the three modality pairs, in [`PAIRS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBandwidths(pub [Vec<f64>; 3]);

/// Block means of one pair's kernel stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerms {
    pub self_a: f64,
    pub self_b: f64,
    pub cross: f64,
}

impl PairTerms {
    /// Biased multi-kernel MMD^2 of the pair.
    pub fn mmd2(&self) -> f64 {
        self.self_a + self.self_b - 2.0 * self.cross
    }
}

/// Aligned joint/bone/velocity embedding batches.
#[derive(Debug, Clone, Copy)]
pub struct Triple<'a> {
    pub joints: &'a EmbeddingBatch,
    pub bones: &'a EmbeddingBatch,
    pub velocities: &'a EmbeddingBatch,
}

impl<'a> Triple<'a> {
    pub fn new(joints: &'a EmbeddingBatch, bones: &'a EmbeddingBatch, velocities: &'a EmbeddingBatch) -> Result<Self> {
        let rows = joints.rows();
        let channels = joints.channels();
        for b in [bones, velocities] {
            if b.rows() != rows {
                return Err(Error::shape(format!(
                    "batch size mismatch: {} has {} rows, joints has {rows}",
                    b.modality(),
                    b.rows()
                )));
            }
            if b.channels() != channels {
                return Err(Error::shape(format!(
                    "channel mismatch: {} has {} channels, joints has {channels}",
                    b.modality(),
                    b.channels()
                )));
            }
        }
        Ok(Self {
            joints,
            bones,
            velocities,
        })
    }

    pub fn get(&self, m: Modality) -> &'a EmbeddingBatch {
        match m {
            Modality::Joints => self.joints,
            Modality::Bones => self.bones,
            Modality::Velocities => self.velocities,
        }
    }

    fn pair_distances(&self, k: usize) -> Array2<f64> {
        let (a, b) = PAIRS[k];
        let z =
            concatenate(Axis(0), &[self.get(a).view(), self.get(b).view()]).expect("channels checked in Triple::new");
        sq_distance_matrix(z.view())
    }

    /// Bandwidth lists from the current embeddings.
    pub fn bandwidths(&self, cfg: &KernelConfig) -> Result<PairBandwidths> {
        cfg.validate()?;
        let mut out: [Vec<f64>; 3] = Default::default();
        for (k, slot) in out.iter_mut().enumerate() {
            let bw = bandwidth(&self.pair_distances(k), cfg.bandwidth_floor)?;
            *slot = bandwidth_list(bw, cfg);
        }
        Ok(PairBandwidths(out))
    }

    /// Block means of every pair under fixed bandwidths.
    pub fn pair_terms(&self, bandwidths: &PairBandwidths) -> [PairTerms; 3] {
        let n = self.joints.rows();
        std::array::from_fn(|k| {
            let stack = kernel_stack_with(&self.pair_distances(k), &bandwidths.0[k]);
            PairTerms {
                self_a: stack.block_mean(0..n, 0..n),
                self_b: stack.block_mean(n..2 * n, n..2 * n),
                cross: stack.block_mean(0..n, n..2 * n),
            }
        })
    }
}

fn intra_from(terms: &[PairTerms; 3]) -> f64 {
    terms.iter().map(|t| 0.5 * (t.self_a + t.self_b)).sum()
}

fn inter_from(terms: &[PairTerms; 3]) -> f64 {
    terms.iter().map(|t| t.cross).sum()
}

/// Sum of the three self-modality kernel means.
pub fn intra_term(zj: &EmbeddingBatch, zb: &EmbeddingBatch, zv: &EmbeddingBatch, cfg: &KernelConfig) -> Result<f64> {
    let t = Triple::new(zj, zb, zv)?;
    Ok(intra_from(&t.pair_terms(&t.bandwidths(cfg)?)))
}

/// Sum of the three cross-modality kernel means.
pub fn inter_term(zj: &EmbeddingBatch, zb: &EmbeddingBatch, zv: &EmbeddingBatch, cfg: &KernelConfig) -> Result<f64> {
    let t = Triple::new(zj, zb, zv)?;
    Ok(inter_from(&t.pair_terms(&t.bandwidths(cfg)?)))
}

/// `intra - inter`.
pub fn crossmmd(zj: &EmbeddingBatch, zb: &EmbeddingBatch, zv: &EmbeddingBatch, cfg: &KernelConfig) -> Result<f64> {
    let t = Triple::new(zj, zb, zv)?;
    let bw = t.bandwidths(cfg)?;
    Ok(crossmmd_with(&t, &bw))
}

/// CrossMMD under fixed bandwidths.
pub fn crossmmd_with(t: &Triple<'_>, bandwidths: &PairBandwidths) -> f64 {
    let terms = t.pair_terms(bandwidths);
    intra_from(&terms) - inter_from(&terms)
}

/// Gradients of CrossMMD with respect to each embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossMmdGrad {
    pub joints: Array2<f64>,
    pub bones: Array2<f64>,
    pub velocities: Array2<f64>,
}

impl CrossMmdGrad {
    pub fn get(&self, m: Modality) -> &Array2<f64> {
        match m {
            Modality::Joints => &self.joints,
            Modality::Bones => &self.bones,
            Modality::Velocities => &self.velocities,
        }
    }

    fn get_mut(&mut self, m: Modality) -> &mut Array2<f64> {
        match m {
            Modality::Joints => &mut self.joints,
            Modality::Bones => &mut self.bones,
            Modality::Velocities => &mut self.velocities,
        }
    }
}

/// Value and gradient of CrossMMD with bandwidths held constant.
pub fn crossmmd_grad(
    zj: &EmbeddingBatch,
    zb: &EmbeddingBatch,
    zv: &EmbeddingBatch,
    cfg: &KernelConfig,
) -> Result<(f64, CrossMmdGrad)> {
    let t = Triple::new(zj, zb, zv)?;
    let bw = t.bandwidths(cfg)?;
    Ok(crossmmd_grad_with(&t, &bw))
}

pub fn crossmmd_grad_with(t: &Triple<'_>, bandwidths: &PairBandwidths) -> (f64, CrossMmdGrad) {
    let shape = t.joints.data().raw_dim();
    let mut grad = CrossMmdGrad {
        joints: Array2::zeros(shape),
        bones: Array2::zeros(shape),
        velocities: Array2::zeros(shape),
    };
    let n = t.joints.rows();
    let mut value = 0.0;
    for (k, &(ma, mb)) in PAIRS.iter().enumerate() {
        let a = t.get(ma).data();
        let b = t.get(mb).data();
        let z = concatenate(Axis(0), &[a.view(), b.view()]).expect("channels checked");
        let dz = sq_distance_matrix(z.view());
        let stack = kernel_stack_with(&dz, &bandwidths.0[k]);
        value += 0.5 * stack.block_mean(0..n, 0..n) + 0.5 * stack.block_mean(n..2 * n, n..2 * n)
            - stack.block_mean(0..n, n..2 * n);

        // w[p, q] = sum_k exp(-d_pq / beta_k) / beta_k, so that
        // d/dz_p exp(-|z_p - z_q|^2 / beta) summed over kernels
        // equals -2 w[p, q] (z_p - z_q).
        let mut w = Array2::<f64>::zeros(dz.raw_dim());
        for (m, &beta) in stack.matrices.iter().zip(&stack.bandwidths) {
            w.scaled_add(1.0 / beta, m);
        }
        let scale = 2.0 / (n * n) as f64;
        // Self blocks carry weight 1/2 and each row appears in both the row
        // and column position, which cancels the 1/2. Cross blocks carry
        // weight -1.
        let mut acc = |target: Modality, rows: std::ops::Range<usize>| {
            let g = grad.get_mut(target);
            for (gi, p) in rows.clone().enumerate() {
                for (same, cols) in [(true, rows.clone()), (false, other(&rows, n))] {
                    let sign = if same { -1.0 } else { 1.0 };
                    for q in cols {
                        let coef = sign * scale * w[[p, q]];
                        for c in 0..z.ncols() {
                            g[[gi, c]] += coef * (z[[p, c]] - z[[q, c]]);
                        }
                    }
                }
            }
        };
        acc(ma, 0..n);
        acc(mb, n..2 * n);
    }
    (value, grad)
}

fn other(rows: &std::ops::Range<usize>, n: usize) -> std::ops::Range<usize> {
    if rows.start == 0 {
        n..2 * n
    } else {
        0..n
    }
}
