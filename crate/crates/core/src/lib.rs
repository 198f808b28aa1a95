//! Spectrum-based multimodal recommendation.
//!
//! Item modality features (visual and textual) are projected to a shared
//! space, fused and denoised by learnable filters in the frequency domain,
//! propagated over frozen item-item similarity graphs and the user-item
//! interaction graph, and combined with behavioural ID embeddings. Training
//! optimises BPR plus an InfoNCE alignment term; evaluation ranks all items.

pub mod diffcore;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod ingest;
pub mod inspect;
pub mod preference;
pub mod spectral;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
