//! Exact action values for the tabular environments, computed by value
//! iteration. Training runs are judged against these tables.

use super::{chain, grid, EnvKind};
use crate::error::{Result, SeedError};

/// A deterministic finite MDP: one (next state, reward, terminal) triple per
/// state-action pair. Terminal transitions end the episode, so nothing is
/// bootstrapped through them.
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    transitions: Vec<(usize, f64, bool)>,
}

impl TabularMdp {
    /// The corridor of `n` states with the goal at the far end. The episode
    /// cap is deliberately left out: it exists to stop wandering rollouts,
    /// not to define the task, and the optimal policy never meets it.
    pub fn chain(n: usize) -> Self {
        assert!(n >= 2, "chain needs at least two states");
        let goal = n - 1;
        let mut transitions = Vec::with_capacity(n * 2);
        for s in 0..n {
            for next in [s.saturating_sub(1), (s + 1).min(goal)] {
                let entering_goal = next == goal && s != goal;
                transitions.push((
                    next,
                    if entering_goal { 1.0 } else { 0.0 },
                    entering_goal || s == goal,
                ));
            }
        }
        TabularMdp {
            num_states: n,
            num_actions: 2,
            transitions,
        }
    }

    /// The `side` x `side` room with the goal in the corner opposite the
    /// start. As with the chain, the step cap is not modeled.
    pub fn grid(side: usize) -> Self {
        let goal = (side - 1, side - 1);
        let mut transitions = Vec::with_capacity(side * side * 4);
        for row in 0..side {
            for col in 0..side {
                for action in 0..4u32 {
                    let (r2, c2) = match action {
                        0 => (row.saturating_sub(1), col),
                        1 => ((row + 1).min(side - 1), col),
                        2 => (row, col.saturating_sub(1)),
                        _ => (row, (col + 1).min(side - 1)),
                    };
                    let at_start_goal = (row, col) == goal;
                    let entering_goal = (r2, c2) == goal && !at_start_goal;
                    transitions.push((
                        r2 * side + c2,
                        if entering_goal { 1.0 } else { 0.0 },
                        entering_goal || at_start_goal,
                    ));
                }
            }
        }
        TabularMdp {
            num_states: side * side,
            num_actions: 4,
            transitions,
        }
    }

    /// The MDP matching an environment's dynamics, for the tabular kinds.
    pub fn for_env(kind: EnvKind) -> Result<Self> {
        match kind {
            EnvKind::Chain => Ok(TabularMdp::chain(chain::NUM_STATES)),
            EnvKind::Grid => Ok(TabularMdp::grid(grid::SIDE)),
            EnvKind::Catch => Err(SeedError::config(
                "catch has random starts and is not oracled as a tabular MDP",
            )),
        }
    }

    pub fn transition(&self, state: usize, action: usize) -> (usize, f64, bool) {
        self.transitions[state * self.num_actions + action]
    }
}

/// Value iteration on the action values until the sup-norm update falls to
/// `tolerance`. Returns Q indexed by `state * num_actions + action`.
pub fn oracle_q(mdp: &TabularMdp, discount: f64, tolerance: f64) -> Vec<f64> {
    let mut q = vec![0.0; mdp.num_states * mdp.num_actions];
    loop {
        let mut worst: f64 = 0.0;
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                let (next, reward, terminal) = mdp.transition(s, a);
                let future = if terminal {
                    0.0
                } else {
                    let row = &q[next * mdp.num_actions..(next + 1) * mdp.num_actions];
                    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                };
                let updated = reward + discount * future;
                worst = worst.max((updated - q[s * mdp.num_actions + a]).abs());
                q[s * mdp.num_actions + a] = updated;
            }
        }
        if worst <= tolerance {
            return q;
        }
    }
}
