//! Seeded Gaussian-cluster skeleton data for end-to-end checks.
//!
//! Each class has a prototype motion: a base pose plus a per-joint drift
//! applied linearly over time. Samples add i.i.d. Gaussian noise to every
//! coordinate of their class prototype. Training data holds only seen
//! classes; test data holds every class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::SkeletonRecord;
use crate::skeleton::{BoneTopology, SkeletonSequence};
use crate::splits::SplitSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub unseen: usize,
    pub frames: usize,
    pub joints: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Standard deviation of the prototype pose coordinates.
    pub pose_scale: f64,
    /// When set, each unseen prototype is a seen prototype (taken in turn)
    /// shifted by Gaussian noise of this scale instead of an independent
    /// draw, so unseen classes resemble known ones.
    pub unseen_shift: Option<f64>,
    /// Standard deviation of the per-frame drift.
    pub drift_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            unseen: 2,
            frames: 8,
            joints: 5,
            train_samples: 600,
            test_samples: 400,
            pose_scale: 1.0,
            unseen_shift: Some(1.0),
            drift_scale: 0.2,
            noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unseen == 0 || self.unseen >= self.classes {
            return Err(Error::Config("need 0 < unseen < classes".into()));
        }
        if self.frames < 2 || self.joints < 2 {
            return Err(Error::Config("need at least 2 frames and 2 joints".into()));
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        for (name, v) in [
            ("pose_scale", self.pose_scale),
            ("unseen_shift", self.unseen_shift.unwrap_or(0.0)),
            ("drift_scale", self.drift_scale),
            ("noise", self.noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// The last `unseen` classes are unseen.
    pub fn split(&self) -> Result<SplitSpec> {
        let unseen: Vec<usize> = (self.classes - self.unseen..self.classes).collect();
        SplitSpec::from_unseen("synthetic", 1, self.classes, &unseen, Some(self.seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub split: SplitSpec,
    pub topology: BoneTopology,
    pub train: Vec<SkeletonRecord>,
    pub test: Vec<SkeletonRecord>,
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))
}

/// Generates the dataset; classes are assigned round-robin so every class
/// gets an equal share (up to one sample) of each set.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let split = cfg.split()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pose = normal(cfg.pose_scale)?;
    let shift = normal(cfg.unseen_shift.unwrap_or(0.0))?;
    let drift = normal(cfg.drift_scale)?;
    let noise = normal(cfg.noise)?;
    let width = cfg.joints * 3;
    let mut prototypes: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let base: Vec<f64> = (0..width).map(|_| pose.sample(&mut rng)).collect();
            let step: Vec<f64> = (0..width).map(|_| drift.sample(&mut rng)).collect();
            (0..cfg.frames)
                .flat_map(|t| (0..width).map(move |i| (t, i)))
                .map(|(t, i)| base[i] + t as f64 * step[i])
                .collect()
        })
        .collect();
    if cfg.unseen_shift.is_some() {
        for (k, &c) in split.unseen.iter().enumerate() {
            let base = split.seen[k % split.seen.len()];
            let offset: Vec<f64> = (0..width).map(|_| shift.sample(&mut rng)).collect();
            prototypes[c] = prototypes[base]
                .iter()
                .enumerate()
                .map(|(i, p)| p + offset[i % width])
                .collect();
        }
    }
    let mut sample = |prefix: &str, i: usize, class: usize| -> Result<SkeletonRecord> {
        let values = prototypes[class].iter().map(|&p| p + noise.sample(&mut rng)).collect();
        Ok(SkeletonRecord {
            id: format!("{prefix}{i:05}"),
            sequence: SkeletonSequence::from_flat(cfg.frames, cfg.joints, values, Some(class))?,
        })
    };
    let train = (0..cfg.train_samples)
        .map(|i| sample("train", i, split.seen[i % split.seen.len()]))
        .collect::<Result<_>>()?;
    let test = (0..cfg.test_samples)
        .map(|i| sample("test", i, i % cfg.classes))
        .collect::<Result<_>>()?;
    Ok(SyntheticDataset {
        split,
        topology: BoneTopology::chain(cfg.joints)?,
        train,
        test,
    })
}
