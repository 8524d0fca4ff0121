//! Open-set skeleton action recognition toolkit.
//!
//! Three modalities (joints, bones, velocities) are derived from a skeleton
//! sequence and fed to separate branches. Training aligns their embedding
//! distributions with a cross-modality MMD term. At test time the distance
//! of a sample to its nearest training embedding refines the averaged
//! logits, and the maximum softmax probability is the open-set score.

pub mod cne;
pub mod crossmmd;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod skeleton;
pub mod splits;
pub mod synthetic;

pub use cne::{score_sample, Gallery, LogitsRecord, OpenSetResult};
pub use crossmmd::{crossmmd, crossmmd_grad, EmbeddingBatch, KernelConfig};
pub use error::{Error, Result};
pub use metrics::{evaluate, LabeledScore, MetricsReport};
pub use model::{train, ModalityData, Model, TrainConfig};
pub use pipeline::{run_pipeline, Checkpoint, PipelineConfig, ScoreVariant};
pub use skeleton::{BoneTopology, Modality, ModalityTriple, SkeletonSequence};
pub use splits::{generate_split, load_fixture_split, SplitSpec};
