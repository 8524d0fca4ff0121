#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crossmax::crossmmd::PairBandwidths;
use crossmax::{EmbeddingBatch, KernelConfig, Modality};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

pub fn batches(data: [Array2<f64>; 3]) -> [EmbeddingBatch; 3] {
    let [j, b, v] = data;
    [
        EmbeddingBatch::new(j, Modality::Joints).unwrap(),
        EmbeddingBatch::new(b, Modality::Bones).unwrap(),
        EmbeddingBatch::new(v, Modality::Velocities).unwrap(),
    ]
}

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Biased multi-kernel MMD^2 between the rows of `a` and `b`, bandwidths
/// given explicitly.
pub fn mmd2_with(a: &Array2<f64>, b: &Array2<f64>, betas: &[f64]) -> f64 {
    let rows = |m: &Array2<f64>| -> Vec<Vec<f64>> { m.rows().into_iter().map(|r| r.to_vec()).collect() };
    let (ra, rb) = (rows(a), rows(b));
    let mean_k = |x: &[Vec<f64>], y: &[Vec<f64>], beta: f64| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += (-sq(p, q) / beta).exp();
            }
        }
        s / (x.len() * y.len()) as f64
    };
    betas
        .iter()
        .map(|&beta| mean_k(&ra, &ra, beta) + mean_k(&rb, &rb, beta) - 2.0 * mean_k(&ra, &rb, beta))
        .sum()
}

/// Bandwidth list of a pair: mean off-diagonal squared distance over the
/// stacked rows, floored, times powers of alpha.
pub fn pair_betas(a: &Array2<f64>, b: &Array2<f64>, cfg: &KernelConfig) -> Vec<f64> {
    let z: Vec<Vec<f64>> = a.rows().into_iter().chain(b.rows()).map(|r| r.to_vec()).collect();
    let n = z.len();
    let mut total = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                total += sq(&z[p], &z[q]);
            }
        }
    }
    let bw = (total / (n * n - n) as f64).max(cfg.bandwidth_floor);
    (0..cfg.num_kernels).map(|i| bw * cfg.alpha.powi(i as i32)).collect()
}

/// Half the sum of the three pairwise MMD^2 values.
pub fn crossmmd_oracle(j: &Array2<f64>, b: &Array2<f64>, v: &Array2<f64>, cfg: &KernelConfig) -> f64 {
    let pairs = [(j, b), (j, v), (b, v)];
    0.5 * pairs
        .iter()
        .map(|(x, y)| mmd2_with(x, y, &pair_betas(x, y, cfg)))
        .sum::<f64>()
}

pub fn oracle_bandwidths(j: &Array2<f64>, b: &Array2<f64>, v: &Array2<f64>, cfg: &KernelConfig) -> PairBandwidths {
    PairBandwidths([pair_betas(j, b, cfg), pair_betas(j, v, cfg), pair_betas(b, v, cfg)])
}
