//! Online transfer learning across two parallel data streams: a labelled
//! source stream and an unlabelled target stream that share a feature
//! space but not a distribution.
//!
//! The model is a single-hidden-layer network whose encoder is shared by a
//! softmax classifier (trained on the source), a denoising decoder
//! (trained on the target), and a divergence step that pulls the two
//! domains' hidden representations together. The hidden width evolves from
//! a single unit: each domain keeps a self-evolving Gaussian mixture over
//! its inputs, and the expected network error under that mixture — split
//! into bias and variance — decides when to add or remove units.
//!
//! The crate also ships the evaluation side: synthetic drifting streams, a
//! chunked CSV loader, the covariate-shift split and the prequential
//! test-then-train loop. The `atl-cli` crate wraps these in a command-line
//! tool; the `book/` directory of the repository walks through the
//! concepts with runnable examples.

pub mod agmm;
pub mod error;
pub mod network;
pub mod significance;
pub mod stream;
pub mod synth;
pub mod trainer;

pub use agmm::{Agmm, GaussianComponent};
pub use error::AtlError;
pub use network::ElasticNetwork;
pub use significance::NsTracker;
pub use stream::{run_prequential, write_metrics, DatasetConfig, RunMetrics, StreamChunk};
pub use synth::{generate, Dataset, SyntheticKind};
pub use trainer::{AtlState, SourceBatch, TargetBatch, TrainerConfig};

#[cfg(doctest)]
mod book;
