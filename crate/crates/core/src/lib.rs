//! Fluid approximations, joint central-limit predictions and deterministic
//! simulation for generalized UCB1 in stochastic multi-armed bandits.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`]: bandit instances, exploration functions, reward streams.
//! * [`fluid`]: the fluid fixed-point system and gap regimes.
//! * [`perturb`]: the linearised index system relating pull-count
//!   deviations to sample-mean deviations.
//! * [`predict`]: closed-form covariance, regret and bias predictions.
//! * [`engine`]: exact and batched UCB simulation, replication ensembles.
//! * [`stylized`]: the one-stage-adaptive sampling model used to study bias.
//! * [`stats`]: ensemble statistics and verdicts against predictions.
//! * [`cli`]: configuration, reports and the command-line entry point.

pub mod cli;
pub mod engine;
pub mod env;
pub mod error;
pub mod fluid;
pub mod numeric;
pub mod perturb;
pub mod predict;
pub mod stats;
pub mod stylized;

pub use error::{Error, Result};
