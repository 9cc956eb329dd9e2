//! Two-submodel CNN feature extractor: architecture, batched
//! forward/backward passes, training and checkpoints.

mod arch;
mod checkpoint;
pub mod loss;
mod model;
mod ops;
mod optim;
mod train;

pub use arch::{ArchSpec, FeatureTap, KERNEL, PADDING};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, Fingerprint};
pub use model::{build_submodel, CnnSubmodel, ForwardCache, Mode, Output, BN_EPS, BN_MOMENTUM};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub(crate) use train::{check_training_set, fit, infer, inference_view};
pub use train::{evaluate, stratified_split, train_extractor, EpochStats, FeatureExtractor, Split, TrainConfig, TrainReport};
