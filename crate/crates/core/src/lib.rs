//! Deterministic laboratory for contrastive pre-training on signal-noise data.
//!
//! The pipeline under study: draw two-patch samples (one signal patch `y*mu`,
//! one Gaussian noise patch orthogonal to `mu`), pre-train a linear CNN with
//! the SimCLR loss, analyze the induced power-method dynamics through the
//! contrast kernel `A`, decompose the learned filters against the fine-tuning
//! noise basis, and fine-tune a two-layer ReLU^q CNN by gradient descent --
//! side by side with a direct supervised baseline.

pub mod baseline;
pub mod data;
pub mod decompose;
mod error;
pub mod finetune;
pub mod linalg;
pub mod pretrain;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
