//! Per-environment state on the learner: recurrent state, episode
//! bookkeeping, and the step accumulators that turn a stream of inference
//! steps into training data.
//!
//! Each connected environment owns one [`EnvSlot`]. A step arrives in two
//! halves: the reward and done flag complete the previous transition
//! ([`EnvSlot::begin_step`], before the forward pass), and the chosen action
//! with its behavior outputs finish the new one ([`EnvSlot::push_step_pg`] /
//! [`EnvSlot::push_step_q`], after it). Policy-gradient unrolls run across
//! episode boundaries and emit a fixed number of transitions plus a
//! bootstrap row. Q-mode sequences never cross an episode boundary; when a
//! sequence fills, its last `burn_in` rows are retained as the next
//! sequence's gradient-free warm-up prefix, so every transition is trained
//! exactly once.

use crate::nn::{RecurrentState, PREV_ACTION_NONE};

use super::trajectory::{StoredSequence, Trajectory};

/// Shape constants the accumulators need, lifted from the run config.
#[derive(Clone, Copy, Debug)]
pub struct SlotShape {
    pub obs_dim: usize,
    pub num_actions: usize,
    pub lstm_units: usize,
    /// Transitions per policy-gradient trajectory.
    pub unroll: usize,
    /// Gradient-free prefix rows per replay sequence.
    pub burn_in: usize,
    /// Trained transitions per replay sequence.
    pub trained: usize,
}

/// One recorded row: the forward inputs that produced an action, the action
/// and behavior outputs, and (once the next request arrives) the reward and
/// done flag of the resulting transition.
#[derive(Clone, Debug)]
struct Row {
    obs: Vec<f32>,
    prev_action: u32,
    prev_reward: f32,
    reset: bool,
    action: u32,
    behavior: Vec<f32>,
    behavior_log_prob: f32,
    version: u64,
    reward: f32,
    done: bool,
    complete: bool,
}

enum Acc {
    Pg(PgAcc),
    Q(QAcc),
}

struct PgAcc {
    rows: Vec<Row>,
    init: RecurrentState,
}

struct QAcc {
    rows: Vec<Row>,
    init: RecurrentState,
    /// How many leading rows are retained overlap from the previous
    /// sequence (0 right after an episode boundary, `burn_in` otherwise).
    prefix_real: usize,
    /// State entering the row that seeds the next sequence's prefix.
    retain_state: RecurrentState,
}

impl QAcc {
    /// Index of the first row the next sequence will retain.
    fn boundary(&self, shape: &SlotShape) -> usize {
        (self.prefix_real + shape.trained).saturating_sub(shape.burn_in)
    }
}

/// Effects of completing a transition, reported back to the service loop.
#[derive(Default)]
pub struct BeginOutcome {
    /// Finished episode's return, when the transition was terminal.
    pub episode_return: Option<f32>,
    /// Q-mode sequence emitted at the episode boundary.
    pub sequence: Option<StoredSequence>,
    /// Generated steps that will never reach training (short leftovers).
    pub dropped: u64,
}

pub struct EnvSlot {
    pub conn: u64,
    pub actor_id: u32,
    pub env_id: u32,
    pub state: RecurrentState,
    pub last_action: u32,
    pub epsilon: f64,
    pub episode_return: f32,
    pub episode_steps: u64,
    has_history: bool,
    acc: Acc,
}

impl EnvSlot {
    pub fn new_pg(conn: u64, actor_id: u32, env_id: u32, shape: &SlotShape) -> Self {
        EnvSlot::new(conn, actor_id, env_id, shape, 0.0, true)
    }

    pub fn new_q(conn: u64, actor_id: u32, env_id: u32, shape: &SlotShape, epsilon: f64) -> Self {
        EnvSlot::new(conn, actor_id, env_id, shape, epsilon, false)
    }

    fn new(
        conn: u64,
        actor_id: u32,
        env_id: u32,
        shape: &SlotShape,
        epsilon: f64,
        pg: bool,
    ) -> Self {
        let zeros = RecurrentState::zeros(shape.lstm_units);
        let acc = if pg {
            Acc::Pg(PgAcc {
                rows: Vec::with_capacity(shape.unroll + 1),
                init: zeros.clone(),
            })
        } else {
            Acc::Q(QAcc {
                rows: Vec::with_capacity(shape.burn_in + shape.trained + 1),
                init: zeros.clone(),
                prefix_real: 0,
                retain_state: zeros.clone(),
            })
        };
        EnvSlot {
            conn,
            actor_id,
            env_id,
            state: zeros,
            last_action: PREV_ACTION_NONE,
            epsilon,
            episode_return: 0.0,
            episode_steps: 0,
            has_history: false,
            acc,
        }
    }

    /// Applies the reward/done half of an incoming request: completes the
    /// pending transition, closes the episode if it ended (zeroing recurrent
    /// state and, in Q-mode, emitting the episode's final sequence), and
    /// leaves the slot ready for the new step's forward pass.
    pub fn begin_step(&mut self, reward: f32, done: bool, shape: &SlotShape) -> BeginOutcome {
        let mut out = BeginOutcome::default();
        if self.has_history {
            match &mut self.acc {
                Acc::Pg(acc) => complete_last(&mut acc.rows, reward, done),
                Acc::Q(acc) => complete_last(&mut acc.rows, reward, done),
            }
            self.episode_return += reward;
            self.episode_steps += 1;
            if done {
                out.episode_return = Some(self.episode_return);
            }
        }
        if done {
            self.state.reset();
            self.last_action = PREV_ACTION_NONE;
            self.episode_return = 0.0;
            self.episode_steps = 0;
            if let Acc::Q(acc) = &mut self.acc {
                let trained = acc.rows.len() - acc.prefix_real;
                if self.has_history && trained > 0 {
                    let mut seq = emit_sequence(acc, self.actor_id, self.env_id, None);
                    seq.epsilon = self.epsilon as f32;
                    out.sequence = Some(seq);
                }
                // Retained rows were trained by the previous sequence; only
                // genuinely untrained leftovers count as dropped (none here,
                // since everything after the prefix was just emitted).
                acc.rows.clear();
                acc.prefix_real = 0;
                acc.init = RecurrentState::zeros(shape.lstm_units);
                acc.retain_state = RecurrentState::zeros(shape.lstm_units);
            }
        }
        out
    }

    /// Records the new step after the forward pass. `pre_state` is the
    /// recurrent state that entered this step's forward. Returns a finished
    /// trajectory when this step's observation completed one as bootstrap.
    #[allow(clippy::too_many_arguments)]
    pub fn push_step_pg(
        &mut self,
        shape: &SlotShape,
        obs: &[f32],
        prev_action: u32,
        prev_reward: f32,
        reset: bool,
        action: u32,
        behavior_logits: Vec<f32>,
        behavior_log_prob: f32,
        version: u64,
        pre_state: &RecurrentState,
    ) -> Option<Trajectory> {
        self.has_history = true;
        let Acc::Pg(acc) = &mut self.acc else {
            unreachable!("policy-gradient push on a Q-mode slot");
        };
        let row = Row {
            obs: obs.to_vec(),
            prev_action,
            prev_reward,
            reset,
            action,
            behavior: behavior_logits,
            behavior_log_prob,
            version,
            reward: 0.0,
            done: false,
            complete: false,
        };
        let emitted = if acc.rows.len() == shape.unroll {
            let traj = emit_trajectory(acc, self.actor_id, self.env_id, &row, shape);
            acc.rows.clear();
            acc.init = pre_state.clone();
            Some(traj)
        } else {
            None
        };
        acc.rows.push(row);
        emitted
    }

    /// Q-mode counterpart of [`EnvSlot::push_step_pg`]. Returns a finished
    /// sequence when this step's observation completed one as bootstrap.
    #[allow(clippy::too_many_arguments)]
    pub fn push_step_q(
        &mut self,
        shape: &SlotShape,
        obs: &[f32],
        prev_action: u32,
        prev_reward: f32,
        reset: bool,
        action: u32,
        behavior_q: Vec<f32>,
        version: u64,
        pre_state: &RecurrentState,
    ) -> Option<StoredSequence> {
        self.has_history = true;
        let epsilon = self.epsilon as f32;
        let Acc::Q(acc) = &mut self.acc else {
            unreachable!("Q push on a policy-gradient slot");
        };
        if acc.rows.len() == acc.boundary(shape) {
            acc.retain_state = pre_state.clone();
        }
        let row = Row {
            obs: obs.to_vec(),
            prev_action,
            prev_reward,
            reset,
            action,
            behavior: behavior_q,
            behavior_log_prob: 0.0,
            version,
            reward: 0.0,
            done: false,
            complete: false,
        };
        let emitted = if acc.rows.len() == acc.prefix_real + shape.trained {
            let boundary = acc.boundary(shape);
            let mut seq = emit_sequence(acc, self.actor_id, self.env_id, Some(&row));
            seq.epsilon = epsilon;
            acc.rows = acc.rows.split_off(boundary);
            acc.prefix_real = acc.rows.len();
            acc.init = acc.retain_state.clone();
            Some(seq)
        } else {
            None
        };
        acc.rows.push(row);
        emitted
    }

    /// Steps sitting in the accumulator that training has not seen yet
    /// (retained prefix rows excluded; they were already trained).
    pub fn open_steps(&self) -> u64 {
        match &self.acc {
            Acc::Pg(acc) => acc.rows.len() as u64,
            Acc::Q(acc) => (acc.rows.len() - acc.prefix_real) as u64,
        }
    }
}

fn complete_last(rows: &mut [Row], reward: f32, done: bool) {
    if let Some(last) = rows.last_mut() {
        debug_assert!(!last.complete, "transition completed twice");
        last.reward = reward;
        last.done = done;
        last.complete = true;
    }
}

fn emit_trajectory(
    acc: &PgAcc,
    actor_id: u32,
    env_id: u32,
    bootstrap: &Row,
    shape: &SlotShape,
) -> Trajectory {
    let steps = acc.rows.len();
    debug_assert!(acc.rows.iter().all(|r| r.complete));
    let mut t = Trajectory {
        actor_id,
        env_id,
        steps,
        obs: Vec::with_capacity((steps + 1) * shape.obs_dim),
        prev_actions: Vec::with_capacity(steps + 1),
        prev_rewards: Vec::with_capacity(steps + 1),
        resets: Vec::with_capacity(steps + 1),
        actions: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        dones: Vec::with_capacity(steps),
        behavior_log_probs: Vec::with_capacity(steps),
        behavior_logits: Vec::with_capacity(steps * shape.num_actions),
        param_versions: Vec::with_capacity(steps),
        init_hidden: acc.init.hidden.clone(),
        init_cell: acc.init.cell.clone(),
    };
    for row in acc.rows.iter().chain(std::iter::once(bootstrap)) {
        t.obs.extend_from_slice(&row.obs);
        t.prev_actions.push(row.prev_action);
        t.prev_rewards.push(row.prev_reward);
        t.resets.push(row.reset);
    }
    for row in &acc.rows {
        t.actions.push(row.action);
        t.rewards.push(row.reward);
        t.dones.push(row.done);
        t.behavior_log_probs.push(row.behavior_log_prob);
        t.behavior_logits.extend_from_slice(&row.behavior);
        t.param_versions.push(row.version);
    }
    t
}

fn emit_sequence(
    acc: &QAcc,
    actor_id: u32,
    env_id: u32,
    bootstrap: Option<&Row>,
) -> StoredSequence {
    let rows = acc.rows.len();
    debug_assert!(acc.rows.iter().all(|r| r.complete));
    let aux_rows = rows + usize::from(bootstrap.is_some());
    let mut s = StoredSequence {
        actor_id,
        env_id,
        prefix_real: acc.prefix_real,
        has_bootstrap: bootstrap.is_some(),
        obs: Vec::with_capacity(aux_rows),
        prev_actions: Vec::with_capacity(aux_rows),
        prev_rewards: Vec::with_capacity(aux_rows),
        resets: Vec::with_capacity(aux_rows),
        actions: Vec::with_capacity(rows),
        rewards: Vec::with_capacity(rows),
        dones: Vec::with_capacity(rows),
        behavior_q: Vec::new(),
        param_versions: Vec::with_capacity(rows),
        epsilon: 0.0,
        init_hidden: acc.init.hidden.clone(),
        init_cell: acc.init.cell.clone(),
    };
    for row in acc.rows.iter().chain(bootstrap) {
        s.obs.extend_from_slice(&row.obs);
        s.prev_actions.push(row.prev_action);
        s.prev_rewards.push(row.prev_reward);
        s.resets.push(row.reset);
    }
    for row in &acc.rows {
        s.actions.push(row.action);
        s.rewards.push(row.reward);
        s.dones.push(row.done);
        s.behavior_q.extend_from_slice(&row.behavior);
        s.param_versions.push(row.version);
    }
    s
}
