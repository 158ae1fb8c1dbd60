//! Desk-scale laboratory for count-based intrinsic-reward exploration in
//! deterministic token-generation MDPs.
//!
//! The pieces, bottom to top:
//!
//! - [`mod@env`]: finite-horizon token environments with sparse terminal
//!   rewards and exact enumeration.
//! - [`net`]: small feedforward networks with handwritten backprop and
//!   SGD/AdamW optimizers.
//! - [`policy`]: softmax token policy, group rollout sampling, and the
//!   clipped surrogate update.
//! - [`cfn`]: the coin-flipping pseudo-count estimator plus an exact-count
//!   oracle.
//! - [`uncertainty`]: posterior-variance propagation for known transitions
//!   and its Monte-Carlo verification oracle.
//! - [`shaping`]: group advantages, the three-stage bonus filter,
//!   standardization, capped integration, and the coefficient schedule.
//! - [`harness`]: configuration, the training loop, evaluation, ablations,
//!   and the count demo behind the CLI.

pub mod cfn;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod net;
pub mod policy;
pub mod rng;
pub mod shaping;
pub mod stats;
pub mod uncertainty;

pub use error::{Error, Result};
