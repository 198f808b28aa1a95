//! Model assembly, BPR triplet sampling, the joint loss, and the training loop.

pub mod config;
pub mod fit;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use config::{TrainConfig, ENV_PREFIX, VALIDATION_K};
pub use fit::{build_inputs, fit, EpochLog, FitOutcome, GraphCache};
pub use model::{
    bpr_loss, score, total_loss, Forward, LossConfig, LossTerms, LossVars, Model, ModelConfig,
    ModelInputs, ModelParams, TripletBatch,
};
pub use sampler::{sample_triplets, TripletSampler};
pub use synthetic::{fixture_config, planted_blocks, SyntheticData, SyntheticSpec};
