//! # qdsb-core
//!
//! Quantized diffusion Schrödinger bridges (QDSB).
//!
//! Simulation-free bridge training needs endpoint pairs `(x0, x1)` drawn from
//! an entropic optimal-transport coupling of the source and target samples.
//! Solving that transport problem on the full data (or on every minibatch) is
//! expensive, so this crate quantizes each endpoint cloud onto a small anchor
//! set chosen by farthest-first traversal, solves entropic OT between the
//! weighted anchor measures, and lifts the anchor plan back to original sample
//! pairs by sampling uniformly inside matched cells.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`datasets`] | [`PointCloud`], 2D toy generators, CSV I/O |
//! | [`anchors`] | farthest-first traversal, nearest-anchor cells, quantization error |
//! | [`transport`] | cost matrices, log-domain Sinkhorn, Hungarian assignment |
//! | [`coupling`] | anchor-lifted pair sampler and minibatch / independent baselines |
//! | [`bridge`] | Brownian-bridge sampling, drift and score targets, loss terms |
//! | [`model`] | time-conditioned MLPs with analytic gradients, AdamW, checkpoints |
//! | [`trainer`] | the training loop with periodic anchor refresh |
//! | [`simulate`] | Euler–Maruyama / Euler integration of the learned dynamics |
//! | [`evaluate`] | RBF-kernel MMD with median-heuristic bandwidth |
//! | [`verify`] | empirical checks of the quantization stability bounds |

pub mod anchors;
pub mod bridge;
pub mod coupling;
pub mod datasets;
mod error;
pub mod evaluate;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod trainer;
pub mod transport;
pub mod verify;

pub use anchors::{AnchorQuantization, QuantExponent};
pub use coupling::CouplingSampler;
pub use datasets::PointCloud;
pub use error::{Error, Result};
pub use model::{Mlp, ModelBundle};
pub use trainer::{train, TrainConfig};
pub use transport::{CostKind, TransportPlan};
