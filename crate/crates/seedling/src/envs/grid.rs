//! Grid: a 5 x 5 room with the agent starting in one corner and a rewarding
//! goal in the opposite corner.
//!
//! The observation is a one-hot encoding of the agent's cell. Four actions
//! move up, down, left, and right; walking into a wall wastes the step.
//! Reaching the goal pays 1 and ends the episode; there is no step cost, so
//! discounting alone makes shorter routes preferable. Episodes are cut at 50
//! steps.

use super::{EnvKind, EnvSpec, Environment, StepResult};
use crate::error::{Result, SeedError};

pub const SIDE: usize = 5;
const CAP: usize = 50;

pub struct GridEnv {
    row: usize,
    col: usize,
    steps: usize,
    done: bool,
}

impl GridEnv {
    pub fn new() -> Self {
        GridEnv {
            row: 0,
            col: 0,
            steps: 0,
            done: true,
        }
    }

    fn observation(&self) -> Vec<f32> {
        let mut obs = vec![0.0; SIDE * SIDE];
        obs[self.row * SIDE + self.col] = 1.0;
        obs
    }
}

impl Default for GridEnv {
    fn default() -> Self {
        GridEnv::new()
    }
}

impl Environment for GridEnv {
    fn spec(&self) -> EnvSpec {
        EnvKind::Grid.spec()
    }

    fn reset(&mut self) -> Vec<f32> {
        self.row = 0;
        self.col = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: u32) -> Result<StepResult> {
        if self.done {
            return Err(SeedError::config("step called on a finished episode"));
        }
        match action {
            0 => self.row = self.row.saturating_sub(1),
            1 => self.row = (self.row + 1).min(SIDE - 1),
            2 => self.col = self.col.saturating_sub(1),
            3 => self.col = (self.col + 1).min(SIDE - 1),
            _ => {
                return Err(SeedError::config(format!(
                    "grid action must be < 4, got {action}"
                )))
            }
        }
        self.steps += 1;
        let at_goal = self.row == SIDE - 1 && self.col == SIDE - 1;
        self.done = at_goal || self.steps >= CAP;
        Ok(StepResult {
            obs: self.observation(),
            reward: if at_goal { 1.0 } else { 0.0 },
            done: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_route_reaches_the_goal_in_eight_steps() {
        let mut env = GridEnv::new();
        env.reset();
        let mut total = 0.0;
        for step in 1..=8 {
            let action = if step <= 4 { 1 } else { 3 };
            let r = env.step(action).unwrap();
            total += r.reward;
            assert_eq!(r.done, step == 8);
        }
        assert_eq!(total, 1.0);
    }

    #[test]
    fn walls_clamp_movement() {
        let mut env = GridEnv::new();
        let start = env.reset();
        let r = env.step(0).unwrap();
        assert_eq!(r.obs, start, "moving up from the corner stays put");
        assert_eq!(r.reward, 0.0);
    }

    #[test]
    fn wandering_episode_is_capped() {
        let mut env = GridEnv::new();
        env.reset();
        for step in 1..=CAP {
            let r = env.step(0).unwrap();
            assert_eq!(r.done, step == CAP);
        }
    }
}
