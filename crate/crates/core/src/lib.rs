//! Video object segmentation as pixel-wise retrieval in a learned embedding space.
//!
//! A small embedding head maps every stride-grid cell of every frame (plus its
//! position and frame number) to a vector. Segmentation is then a k-nearest
//! neighbor vote against a pool of labeled reference cells. Because the
//! embeddings never depend on user input, interactive clicks only cost one
//! distance evaluation per grid cell.
//!
//! Module map:
//!
//! - [`video`]: frames, label masks, annotations and the stride grid
//! - [`synth`]: deterministic moving-shape sequences with ground truth
//! - [`embed`]: base features, spatio-temporal augmentation and the head
//! - [`loss`]: pool-min triplet loss, ablation losses, batch sampling, gradients
//! - [`train`]: SGD with momentum over sampled batches
//! - [`retrieval`]: reference pool, exact kNN, online adaptation, upsampling
//! - [`metrics`]: region similarity J and contour accuracy F
//! - [`session`]: the interactive engine and the simulated click robot
//! - [`io`]: on-disk formats (sequence directories, model, pool, click log)

pub mod embed;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod retrieval;
pub mod session;
pub mod synth;
pub mod train;
pub mod video;

pub use error::{Error, Result};
