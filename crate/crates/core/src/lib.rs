//! Quantile-option reinforcement learning laboratory.
//!
//! The crate is organised bottom-up:
//!
//! - [`distcore`]: quantile levels, Huber / quantile-Huber losses and the
//!   quantile-regression loss with its analytic gradient.
//! - [`envs`]: the two diagnostic chains and a small continuous task.
//! - [`tabular`]: Q-learning, QR, O-QR, P-QR and tabular QUOTA, plus the
//!   steps-to-optimal trial protocol.
//! - [`nnkit`]: small dense networks with hand-written backprop.
//! - [`deepagents`]: QR-DQN and deep QUOTA with synchronous n-step workers.
//! - [`contagents`]: DDPG, QR-DDPG and continuous QUOTA.
//! - [`harness`]: configuration, seeding, sweeps, training drivers and CSV
//!   output.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contagents;
pub mod deepagents;
pub mod distcore;
pub mod envs;
mod error;
pub mod harness;
pub mod nnkit;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
pub use rng::SeededRng;
