//! Actor-learner reinforcement learning with centralized batched inference.
//!
//! The learner service owns the single copy of the model. Thin actors host
//! environments and stream observations over a framed wire protocol; the
//! learner batches inference calls, accumulates trajectories with per-step
//! behavior outputs, and trains with either policy gradients corrected by
//! clipped importance sampling (`vtrace`) or recurrent Q-learning with
//! prioritized sequence replay (`qlearn`).
//!
//! Crate layout:
//!
//! - [`nn`] — dense/LSTM network kernel, reverse-mode gradients, Adam,
//!   versioned parameter snapshots.
//! - [`vtrace`] — off-policy policy-gradient targets and loss.
//! - [`qlearn`] — value rescaling, n-step double-Q targets, burn-in,
//!   sequence priorities, the per-actor epsilon schedule.
//! - [`replay`] — bounded trajectory queue and prioritized sequence buffer.
//! - [`wire`] — the framed protocol and the server-side inference batcher.
//! - [`learner`] — the service: inference workers, trajectory accumulation,
//!   prefetch, training, atomic parameter publication.
//! - [`actor`] — the thin client loop around environments.
//! - [`envs`] — deterministic toy environments with exact oracles.
//! - [`bench`] — throughput/latency harness and the cloud cost model.

pub mod actor;
pub mod bench;
pub mod config;
pub mod envs;
pub mod error;
pub mod learner;
pub mod nn;
pub mod qlearn;
pub mod replay;
pub mod vtrace;
pub mod wire;

pub use config::{Algo, RunConfig};
pub use error::SeedError;
