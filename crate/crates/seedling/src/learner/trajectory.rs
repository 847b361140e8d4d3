//! Training data records and their batched, time-major assembly.
//!
//! Inference emits one [`Trajectory`] per completed unroll (policy-gradient
//! mode) or one [`StoredSequence`] per completed replay sequence (Q-mode).
//! Both carry everything training needs to replay the forward pass exactly:
//! observations, the auxiliary recurrent inputs (previous action and reward,
//! reset flags), the initial recurrent state, and the behavior outputs and
//! parameter versions recorded at inference time. Prefetchers turn groups
//! of them into the `[steps, batch]` time-major arrays the network expects.

use crate::nn::{StateBatch, PREV_ACTION_NONE};
use crate::replay::SeqId;

/// One completed unroll: `steps` transitions plus a bootstrap row holding
/// the observation after the last transition. Arrays indexed by row carry
/// `steps + 1` entries; arrays indexed by transition carry `steps`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub actor_id: u32,
    pub env_id: u32,
    pub steps: usize,
    pub obs: Vec<f32>,
    pub prev_actions: Vec<u32>,
    pub prev_rewards: Vec<f32>,
    pub resets: Vec<bool>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub behavior_log_probs: Vec<f32>,
    /// Behavior policy logits per transition, `[steps, actions]`.
    pub behavior_logits: Vec<f32>,
    pub param_versions: Vec<u64>,
    pub init_hidden: Vec<f32>,
    pub init_cell: Vec<f32>,
}

/// One replay sequence: `prefix_real` retained warm-up rows (trained by the
/// previous sequence) followed by the rows this sequence trains, plus an
/// optional bootstrap row. A sequence ending at an episode boundary has no
/// bootstrap row; nothing is bootstrapped past a terminal step. Row-indexed
/// arrays carry one extra entry when `has_bootstrap`.
#[derive(Clone, Debug)]
pub struct StoredSequence {
    pub actor_id: u32,
    pub env_id: u32,
    pub prefix_real: usize,
    pub has_bootstrap: bool,
    pub obs: Vec<f32>,
    pub prev_actions: Vec<u32>,
    pub prev_rewards: Vec<f32>,
    pub resets: Vec<bool>,
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    /// Behavior Q-values per row, `[rows, actions]`.
    pub behavior_q: Vec<f32>,
    pub param_versions: Vec<u64>,
    pub epsilon: f32,
    pub init_hidden: Vec<f32>,
    pub init_cell: Vec<f32>,
}

impl StoredSequence {
    /// Transitions this sequence contributes gradient for.
    pub fn trained_steps(&self) -> usize {
        self.actions.len() - self.prefix_real
    }
}

/// A batch ready for one training step, already time-major.
pub enum PreparedBatch {
    Pg(PgBatch),
    Q(QBatch),
}

pub struct PgBatch {
    pub steps: usize,
    pub batch: usize,
    /// `[steps + 1, batch, obs_dim]`; the last row is the bootstrap.
    pub obs: Vec<f32>,
    pub prev_actions: Vec<u32>,
    pub prev_rewards: Vec<f32>,
    pub resets: Vec<bool>,
    pub init: StateBatch,
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub behavior_log_probs: Vec<f32>,
}

pub struct QBatch {
    /// Trained steps per sequence (sequence length minus burn-in).
    pub steps: usize,
    pub batch: usize,
    pub burn_in: usize,
    /// `[burn_in + steps + 1, batch, obs_dim]`.
    pub obs: Vec<f32>,
    pub prev_actions: Vec<u32>,
    pub prev_rewards: Vec<f32>,
    pub resets: Vec<bool>,
    pub init: StateBatch,
    /// Trained region only, `[steps, batch]`.
    pub actions: Vec<u32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub valid: Vec<usize>,
    pub weights: Vec<f32>,
    pub ids: Vec<SeqId>,
}

/// Stacks same-length trajectories into one time-major batch.
pub fn assemble_pg(trajs: &[Trajectory], obs_dim: usize, units: usize) -> PgBatch {
    let batch = trajs.len();
    let steps = trajs[0].steps;
    debug_assert!(trajs.iter().all(|t| t.steps == steps));
    let rows = steps + 1;
    let mut out = PgBatch {
        steps,
        batch,
        obs: vec![0.0; rows * batch * obs_dim],
        prev_actions: vec![PREV_ACTION_NONE; rows * batch],
        prev_rewards: vec![0.0; rows * batch],
        resets: vec![false; rows * batch],
        init: StateBatch::zeros(batch, units),
        actions: vec![0; steps * batch],
        rewards: vec![0.0; steps * batch],
        dones: vec![false; steps * batch],
        behavior_log_probs: vec![0.0; steps * batch],
    };
    for (b, t) in trajs.iter().enumerate() {
        out.init.hidden[b * units..(b + 1) * units].copy_from_slice(&t.init_hidden);
        out.init.cell[b * units..(b + 1) * units].copy_from_slice(&t.init_cell);
        for row in 0..rows {
            let at = row * batch + b;
            out.obs[at * obs_dim..(at + 1) * obs_dim]
                .copy_from_slice(&t.obs[row * obs_dim..(row + 1) * obs_dim]);
            out.prev_actions[at] = t.prev_actions[row];
            out.prev_rewards[at] = t.prev_rewards[row];
            out.resets[at] = t.resets[row];
        }
        for step in 0..steps {
            let at = step * batch + b;
            out.actions[at] = t.actions[step];
            out.rewards[at] = t.rewards[step];
            out.dones[at] = t.dones[step];
            out.behavior_log_probs[at] = t.behavior_log_probs[step];
        }
    }
    out
}

/// Lays sampled sequences out as uniform `[burn_in + steps + 1, batch]`
/// grids. Sequences that started at an episode boundary carry fewer than
/// `burn_in` real warm-up rows; their missing prefix is zero padding, and
/// the reset flag on their first real row discards the padding's effect on
/// recurrent state. Short final episodes leave tail padding behind `valid`.
pub fn assemble_q(
    seqs: &[StoredSequence],
    ids: Vec<SeqId>,
    weights: Vec<f32>,
    trained: usize,
    burn_in: usize,
    obs_dim: usize,
    units: usize,
) -> QBatch {
    let batch = seqs.len();
    let rows = burn_in + trained + 1;
    let mut out = QBatch {
        steps: trained,
        batch,
        burn_in,
        obs: vec![0.0; rows * batch * obs_dim],
        prev_actions: vec![PREV_ACTION_NONE; rows * batch],
        prev_rewards: vec![0.0; rows * batch],
        // Padding rows sit behind a reset so they cannot smear state.
        resets: vec![true; rows * batch],
        init: StateBatch::zeros(batch, units),
        actions: vec![0; trained * batch],
        rewards: vec![0.0; trained * batch],
        dones: vec![false; trained * batch],
        valid: vec![0; batch],
        weights,
        ids,
    };
    for (b, s) in seqs.iter().enumerate() {
        debug_assert!(s.prefix_real <= burn_in);
        out.init.hidden[b * units..(b + 1) * units].copy_from_slice(&s.init_hidden);
        out.init.cell[b * units..(b + 1) * units].copy_from_slice(&s.init_cell);
        let pad_front = burn_in - s.prefix_real;
        let real_rows = s.prev_actions.len();
        for r in 0..real_rows {
            let at = (pad_front + r) * batch + b;
            out.obs[at * obs_dim..(at + 1) * obs_dim]
                .copy_from_slice(&s.obs[r * obs_dim..(r + 1) * obs_dim]);
            out.prev_actions[at] = s.prev_actions[r];
            out.prev_rewards[at] = s.prev_rewards[r];
            out.resets[at] = s.resets[r];
        }
        let valid = s.trained_steps();
        out.valid[b] = valid;
        for step in 0..valid {
            let at = step * batch + b;
            let r = s.prefix_real + step;
            out.actions[at] = s.actions[r];
            out.rewards[at] = s.rewards[r];
            out.dones[at] = s.dones[r];
        }
    }
    out
}
