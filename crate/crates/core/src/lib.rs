//! Semi-adaptable neural-network prediction of 3-D trajectories.
//!
//! An offline-trained ReLU network maps the last `N` positions of a joint to
//! its next `M` positions. Online, the hidden layers are frozen and act as a
//! feature extractor while the output layer is re-estimated by recursive
//! least squares with forgetting. The mean-squared estimation error of the
//! parameters is propagated alongside, which gives a covariance and a
//! confidence ellipsoid for every predicted position.
//!
//! Modules:
//! - [`mlp`]: the network, backprop training and the JSON model file.
//! - [`rls`]: block-wise RLS adaptation of the output layer.
//! - [`uncertainty`]: MSEE propagation and error ellipsoids.
//! - [`baseline`]: gradient adaptation of all weights, for comparison.
//! - [`datagen`]: synthetic systems, smoothing and windowing.
//! - [`pipeline`]: the streaming predict/adapt loop.
//! - [`eval`]: multi-method experiments and reports.
//! - [`io`]: trajectory CSV and JSON-lines readers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod mlp;
pub mod pipeline;
pub mod rls;
pub mod uncertainty;

pub use error::{Error, Result};
