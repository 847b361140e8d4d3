//! Learner-side storage between trajectory accumulation and training.
//!
//! The policy-gradient path consumes trajectories once, in order, through a
//! bounded [`TrajectoryQueue`] that applies backpressure to the actors. The
//! Q-learning path stores overlapping sequences in a [`PrioritizedBuffer`]
//! and samples them proportionally to priority via a [`SumTree`].

mod prioritized;
mod queue;
mod sum_tree;

pub use prioritized::{PrioritizedBuffer, SampleBatch, SeqId};
pub use queue::{OverflowPolicy, TrajectoryQueue};
pub use sum_tree::SumTree;
