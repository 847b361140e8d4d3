//! Chain: a corridor of N states with actions left and right. Only reaching
//! the far end pays, so the reward signal is maximally sparse.
//!
//! The observation is a one-hot encoding of the current state. Moving right
//! from the second-to-last state yields reward 1 and ends the episode; every
//! other transition pays nothing. Walking off either end leaves the state
//! unchanged. Episodes are cut at 2 N steps so a wandering policy cannot
//! stall forever; under discount 0.99 the optimal action value from the
//! start is 0.99 cubed since the goal is four steps away.

use super::{EnvKind, EnvSpec, Environment, StepResult};
use crate::error::{Result, SeedError};

pub const NUM_STATES: usize = 5;

pub struct ChainEnv {
    state: usize,
    steps: usize,
    done: bool,
}

impl ChainEnv {
    pub fn new() -> Self {
        ChainEnv {
            state: 0,
            steps: 0,
            done: true,
        }
    }

    fn observation(&self) -> Vec<f32> {
        let mut obs = vec![0.0; NUM_STATES];
        obs[self.state] = 1.0;
        obs
    }
}

impl Default for ChainEnv {
    fn default() -> Self {
        ChainEnv::new()
    }
}

impl Environment for ChainEnv {
    fn spec(&self) -> EnvSpec {
        EnvKind::Chain.spec()
    }

    fn reset(&mut self) -> Vec<f32> {
        self.state = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: u32) -> Result<StepResult> {
        if self.done {
            return Err(SeedError::config("step called on a finished episode"));
        }
        match action {
            0 => self.state = self.state.saturating_sub(1),
            1 => self.state = (self.state + 1).min(NUM_STATES - 1),
            _ => {
                return Err(SeedError::config(format!(
                    "chain action must be < 2, got {action}"
                )))
            }
        }
        self.steps += 1;
        let reached_goal = self.state == NUM_STATES - 1;
        let capped = self.steps >= 2 * NUM_STATES;
        self.done = reached_goal || capped;
        Ok(StepResult {
            obs: self.observation(),
            reward: if reached_goal { 1.0 } else { 0.0 },
            done: self.done,
        })
    }
}
