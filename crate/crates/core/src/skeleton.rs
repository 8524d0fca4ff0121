//! Skeleton sequences and the three input modalities derived from them.
//!
//! Joints are the raw `T x N x 3` coordinates. Bones are per-frame
//! differences between a child joint and its parent; velocities are
//! frame-to-frame differences with the first frame padded with zeros so all
//! three modalities keep `T` frames.
//!
//! The two perturbations used for robustness ablations (additive Gaussian
//! noise and random coordinate occlusion) live here as well. Both are pure
//! functions of their input and seed.

use ndarray::{s, Array3, ArrayView2, Zip};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x N x 3` coordinate tensor with an optional class label.
///
/// `N` counts joints for raw sequences and bones for derived bone sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    coords: Array3<f64>,
    label: Option<usize>,
}

impl SkeletonSequence {
    pub fn new(coords: Array3<f64>, label: Option<usize>) -> Result<Self> {
        let (frames, points, dims) = coords.dim();
        if dims != 3 {
            return Err(Error::shape(format!(
                "skeleton coordinates must have 3 components, got {dims}"
            )));
        }
        if frames == 0 || points == 0 {
            return Err(Error::invalid(format!(
                "skeleton sequence must be non-empty, got {frames} frames x {points} points"
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("skeleton coordinates must be finite"));
        }
        Ok(Self { coords, label })
    }

    /// Builds a sequence from row-major `frames * points * 3` values.
    pub fn from_flat(frames: usize, points: usize, values: Vec<f64>, label: Option<usize>) -> Result<Self> {
        let expected = frames * points * 3;
        if values.len() != expected {
            return Err(Error::shape(format!(
                "expected {expected} coordinates for {frames}x{points}x3, got {}",
                values.len()
            )));
        }
        let coords = Array3::from_shape_vec((frames, points, 3), values).map_err(|e| Error::shape(e.to_string()))?;
        Self::new(coords, label)
    }

    pub fn coords(&self) -> &Array3<f64> {
        &self.coords
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn frames(&self) -> usize {
        self.coords.dim().0
    }

    pub fn points(&self) -> usize {
        self.coords.dim().1
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.coords.slice(s![t, .., ..])
    }

    /// Row-major copy of the coordinates.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.iter().copied().collect()
    }

    /// Adds the same offset to every point of every frame.
    pub fn translated(&self, offset: [f64; 3]) -> Result<Self> {
        let mut coords = self.coords.clone();
        for mut point in coords.lanes_mut(ndarray::Axis(2)) {
            for (c, o) in point.iter_mut().zip(offset) {
                *c += o;
            }
        }
        Self::new(coords, self.label)
    }
}

/// Ordered `(child, parent)` joint pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoneTopology {
    edges: Vec<(usize, usize)>,
}

impl BoneTopology {
    pub fn new(edges: Vec<(usize, usize)>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::invalid("bone topology needs at least one edge"));
        }
        if let Some(&(a, _)) = edges.iter().find(|(a, b)| a == b) {
            return Err(Error::invalid(format!("self-edge ({a}, {a}) in bone topology")));
        }
        Ok(Self { edges })
    }

    /// Chain topology where joint `i` hangs off joint `i - 1`.
    pub fn chain(joints: usize) -> Result<Self> {
        if joints < 2 {
            return Err(Error::invalid("chain topology needs at least two joints"));
        }
        Self::new((1..joints).map(|i| (i, i - 1)).collect())
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Checks every index against a joint count.
    pub fn check_joints(&self, joints: usize) -> Result<()> {
        for &(child, parent) in &self.edges {
            if child >= joints || parent >= joints {
                return Err(Error::invalid(format!(
                    "bone ({child}, {parent}) out of range for {joints} joints"
                )));
            }
        }
        Ok(())
    }
}

/// Which modality a tensor or embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Joints,
    Bones,
    Velocities,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Joints, Modality::Bones, Modality::Velocities];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Joints => "joints",
            Modality::Bones => "bones",
            Modality::Velocities => "velocities",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joints" | "j" => Ok(Modality::Joints),
            "bones" | "b" => Ok(Modality::Bones),
            "velocities" | "v" => Ok(Modality::Velocities),
            other => Err(Error::invalid(format!("unknown modality {other:?}"))),
        }
    }
}

/// Frame differences `j_t - j_{t-1}`; frame 0 is all zeros.
pub fn derive_velocities(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let frames = seq.frames();
    if frames < 2 {
        return Err(Error::invalid(format!(
            "velocities need at least 2 frames, got {frames}"
        )));
    }
    let mut out = Array3::zeros(seq.coords.raw_dim());
    let prev = seq.coords.slice(s![..frames - 1, .., ..]);
    let next = seq.coords.slice(s![1.., .., ..]);
    Zip::from(out.slice_mut(s![1.., .., ..]))
        .and(&next)
        .and(&prev)
        .for_each(|o, &n, &p| *o = n - p);
    SkeletonSequence::new(out, seq.label)
}

/// Per-frame bone vectors `j[child] - j[parent]`, one point per edge.
pub fn derive_bones(seq: &SkeletonSequence, topo: &BoneTopology) -> Result<SkeletonSequence> {
    topo.check_joints(seq.points())?;
    let frames = seq.frames();
    let mut out = Array3::zeros((frames, topo.len(), 3));
    for t in 0..frames {
        for (e, &(child, parent)) in topo.edges().iter().enumerate() {
            for c in 0..3 {
                out[[t, e, c]] = seq.coords[[t, child, c]] - seq.coords[[t, parent, c]];
            }
        }
    }
    SkeletonSequence::new(out, seq.label)
}

/// All three modalities of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTriple {
    pub joints: SkeletonSequence,
    pub bones: SkeletonSequence,
    pub velocities: SkeletonSequence,
}

impl ModalityTriple {
    pub fn derive(seq: &SkeletonSequence, topo: &BoneTopology) -> Result<Self> {
        Ok(Self {
            joints: seq.clone(),
            bones: derive_bones(seq, topo)?,
            velocities: derive_velocities(seq)?,
        })
    }

    pub fn get(&self, modality: Modality) -> &SkeletonSequence {
        match modality {
            Modality::Joints => &self.joints,
            Modality::Bones => &self.bones,
            Modality::Velocities => &self.velocities,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    GaussianNoise,
    Occlusion,
}

/// Settings for the noise and occlusion ablations.
///
/// `stream` selects an independent ChaCha stream under the same seed so a
/// file of sequences can be perturbed with one seed but distinct draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub kind: PerturbationKind,
    pub gamma: f64,
    pub theta_choices: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl PerturbationConfig {
    pub const DEFAULT_GAMMA: f64 = 0.3;
    pub const DEFAULT_THETAS: [f64; 3] = [0.1, 0.2, 0.3];

    pub fn gaussian(gamma: f64, seed: u64) -> Self {
        Self {
            kind: PerturbationKind::GaussianNoise,
            gamma,
            theta_choices: Vec::new(),
            seed,
            stream: 0,
        }
    }

    pub fn occlusion(theta_choices: Vec<f64>, seed: u64) -> Self {
        Self {
            kind: PerturbationKind::Occlusion,
            gamma: 0.0,
            theta_choices,
            seed,
            stream: 0,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if let Some(bad) = self.theta_choices.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("occlusion ratio must lie in (0, 1), got {bad}")));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `s + gamma * n` with `n` i.i.d. standard normal.
pub fn add_gaussian_noise(seq: &SkeletonSequence, cfg: &PerturbationConfig) -> Result<SkeletonSequence> {
    if cfg.kind != PerturbationKind::GaussianNoise {
        return Err(Error::Config("expected a gaussian_noise perturbation".into()));
    }
    cfg.validate()?;
    let mut rng = cfg.rng();
    let mut coords = seq.coords.clone();
    for v in coords.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += cfg.gamma * n;
    }
    SkeletonSequence::new(coords, seq.label)
}

/// Number of coordinates zeroed for ratio `theta` (round half up).
pub fn occluded_count(theta: f64, total: usize) -> usize {
    (theta * total as f64 + 0.5).floor() as usize
}

/// Zeroes a random `theta` fraction of the coordinate entries, with `theta`
/// drawn uniformly from the configured choices.
pub fn apply_random_occlusion(seq: &SkeletonSequence, cfg: &PerturbationConfig) -> Result<SkeletonSequence> {
    if cfg.kind != PerturbationKind::Occlusion {
        return Err(Error::Config("expected an occlusion perturbation".into()));
    }
    if cfg.theta_choices.is_empty() {
        return Err(Error::Config("occlusion needs at least one ratio".into()));
    }
    cfg.validate()?;
    let mut rng = cfg.rng();
    let theta = cfg.theta_choices[rng.random_range(0..cfg.theta_choices.len())];
    let total = seq.coords.len();
    let count = occluded_count(theta, total).min(total);
    let mut flat = seq.flatten();
    for i in index::sample(&mut rng, total, count) {
        flat[i] = 0.0;
    }
    let (frames, points, _) = seq.coords.dim();
    SkeletonSequence::from_flat(frames, points, flat, seq.label)
}

/// Dispatches on `cfg.kind`.
pub fn perturb(seq: &SkeletonSequence, cfg: &PerturbationConfig) -> Result<SkeletonSequence> {
    match cfg.kind {
        PerturbationKind::GaussianNoise => add_gaussian_noise(seq, cfg),
        PerturbationKind::Occlusion => apply_random_occlusion(seq, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, points: usize, f: impl Fn(usize, usize, usize) -> f64) -> SkeletonSequence {
        let coords = Array3::from_shape_fn((frames, points, 3), |(t, p, c)| f(t, p, c));
        SkeletonSequence::new(coords, None).unwrap()
    }

    #[test]
    fn constant_sequence_has_zero_velocity() {
        let s = seq(5, 3, |_, p, c| (p * 3 + c) as f64);
        let v = derive_velocities(&s).unwrap();
        assert!(v.coords().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_frame_velocity() {
        let s = SkeletonSequence::from_flat(2, 1, vec![0., 0., 0., 1., 2., 3.], Some(4)).unwrap();
        let v = derive_velocities(&s).unwrap();
        assert_eq!(v.flatten(), vec![0., 0., 0., 1., 2., 3.]);
        assert_eq!(v.label(), Some(4));
    }

    #[test]
    fn linear_motion_has_constant_velocity() {
        let u = [0.5, -1.25, 2.0];
        let s = seq(6, 2, |t, _, c| t as f64 * u[c]);
        let v = derive_velocities(&s).unwrap();
        for t in 1..6 {
            for p in 0..2 {
                for (c, &uc) in u.iter().enumerate() {
                    assert_eq!(v.coords()[[t, p, c]], uc);
                }
            }
        }
    }

    #[test]
    fn velocities_reject_single_frame() {
        let s = seq(1, 2, |_, _, _| 1.0);
        assert!(derive_velocities(&s).is_err());
    }

    #[test]
    fn velocities_telescope() {
        let s = seq(7, 4, |t, p, c| ((t * 31 + p * 7 + c) as f64).sin() * 3.0);
        let v = derive_velocities(&s).unwrap();
        for p in 0..4 {
            for c in 0..3 {
                let sum: f64 = (1..7).map(|t| v.coords()[[t, p, c]]).sum();
                let direct = s.coords()[[6, p, c]] - s.coords()[[0, p, c]];
                assert!((sum - direct).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_bone() {
        let s = SkeletonSequence::from_flat(2, 2, vec![0., 0., 0., 1., 1., 1., 0., 0., 0., 1., 1., 1.], None).unwrap();
        let topo = BoneTopology::new(vec![(1, 0)]).unwrap();
        let b = derive_bones(&s, &topo).unwrap();
        assert_eq!(b.points(), 1);
        assert_eq!(b.frame(0).iter().copied().collect::<Vec<_>>(), vec![1., 1., 1.]);
    }

    #[test]
    fn self_edge_rejected() {
        assert!(BoneTopology::new(vec![(1, 0), (2, 2)]).is_err());
        assert!(BoneTopology::new(vec![]).is_err());
    }

    #[test]
    fn out_of_range_bone_rejected() {
        let s = seq(2, 3, |_, _, _| 0.0);
        let topo = BoneTopology::new(vec![(3, 0)]).unwrap();
        assert!(derive_bones(&s, &topo).is_err());
    }

    #[test]
    fn bones_are_translation_invariant() {
        let s = seq(4, 5, |t, p, c| (t + 2 * p) as f64 * 0.25 + c as f64);
        let topo = BoneTopology::chain(5).unwrap();
        let shifted = s.translated([3.0, -2.0, 0.5]).unwrap();
        // Offsets and coordinates are dyadic, so the cancellation is exact.
        assert_eq!(derive_bones(&s, &topo).unwrap(), derive_bones(&shifted, &topo).unwrap());
    }

    #[test]
    fn zero_gamma_is_identity() {
        let s = seq(3, 2, |t, p, c| (t + p + c) as f64);
        let out = add_gaussian_noise(&s, &PerturbationConfig::gaussian(0.0, 9)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn noise_is_seeded() {
        let s = seq(3, 2, |t, p, c| (t + p + c) as f64);
        let cfg = PerturbationConfig::gaussian(0.3, 42);
        let a = add_gaussian_noise(&s, &cfg).unwrap();
        let b = add_gaussian_noise(&s, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = add_gaussian_noise(&s, &cfg.clone().with_stream(1)).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn noise_variance_matches_gamma_squared() {
        // 1000 * 34 * 3 = 102_000 draws.
        let s = seq(1000, 34, |_, _, _| 0.0);
        let out = add_gaussian_noise(&s, &PerturbationConfig::gaussian(0.3, 7)).unwrap();
        let n = out.coords().len() as f64;
        let mean = out.coords().sum() / n;
        let var = out.coords().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.09).abs() / 0.09 < 0.05, "variance {var}");
    }

    #[test]
    fn half_occlusion_of_six_entries_zeroes_three() {
        let s = seq(2, 1, |_, _, c| c as f64 + 1.0);
        let out = apply_random_occlusion(&s, &PerturbationConfig::occlusion(vec![0.5], 3)).unwrap();
        let zeros = out.coords().iter().filter(|&&x| x == 0.0).count();
        assert_eq!(zeros, 3);
    }

    #[test]
    fn occlusion_rejects_bad_ratio() {
        let s = seq(2, 1, |_, _, _| 1.0);
        for bad in [vec![0.0], vec![1.0], vec![0.2, 1.5], vec![]] {
            assert!(apply_random_occlusion(&s, &PerturbationConfig::occlusion(bad, 0)).is_err());
        }
    }

    #[test]
    fn occlusion_mask_is_seeded() {
        let s = seq(10, 5, |t, p, c| (t * 100 + p * 10 + c) as f64 + 1.0);
        let cfg = PerturbationConfig::occlusion(PerturbationConfig::DEFAULT_THETAS.to_vec(), 11);
        let a = apply_random_occlusion(&s, &cfg).unwrap();
        let b = apply_random_occlusion(&s, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_kind_rejected() {
        let s = seq(2, 2, |_, _, _| 1.0);
        assert!(add_gaussian_noise(&s, &PerturbationConfig::occlusion(vec![0.1], 0)).is_err());
        assert!(apply_random_occlusion(&s, &PerturbationConfig::gaussian(0.3, 0)).is_err());
    }

    #[test]
    fn nonfinite_coordinates_rejected() {
        assert!(SkeletonSequence::from_flat(1, 1, vec![0.0, f64::NAN, 0.0], None).is_err());
        assert!(SkeletonSequence::from_flat(1, 1, vec![0.0, 0.0], None).is_err());
    }
}
