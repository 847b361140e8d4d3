//! Catch: a ball falls one row per step; the paddle on the bottom row moves
//! left, stays, or moves right to intercept it.
//!
//! The observation is two stacked W x H one-hot planes (ball position,
//! paddle position) flattened plane-major, row-major. The ball starts in a
//! random column of the top row and the paddle in the bottom-row center, so
//! every episode lasts exactly HEIGHT - 1 steps and ends with reward +1 on a
//! catch and -1 on a miss. Greedy pursuit of the ball column always catches:
//! the paddle starts at most WIDTH / 2 columns away and has HEIGHT - 1 moves.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvKind, EnvSpec, Environment, StepResult};
use crate::error::{Result, SeedError};

pub const WIDTH: usize = 5;
pub const HEIGHT: usize = 10;

pub struct CatchEnv {
    rng: ChaCha8Rng,
    ball_row: usize,
    ball_col: usize,
    paddle_col: usize,
    done: bool,
}

impl CatchEnv {
    pub fn new(seed: u64) -> Self {
        CatchEnv {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ball_row: 0,
            ball_col: 0,
            paddle_col: WIDTH / 2,
            done: true,
        }
    }

    fn observation(&self) -> Vec<f32> {
        let mut obs = vec![0.0; 2 * WIDTH * HEIGHT];
        obs[self.ball_row * WIDTH + self.ball_col] = 1.0;
        obs[WIDTH * HEIGHT + (HEIGHT - 1) * WIDTH + self.paddle_col] = 1.0;
        obs
    }
}

impl Environment for CatchEnv {
    fn spec(&self) -> EnvSpec {
        EnvKind::Catch.spec()
    }

    fn reset(&mut self) -> Vec<f32> {
        self.ball_row = 0;
        self.ball_col = self.rng.gen_range(0..WIDTH);
        self.paddle_col = WIDTH / 2;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: u32) -> Result<StepResult> {
        if self.done {
            return Err(SeedError::config("step called on a finished episode"));
        }
        let shift = match action {
            0 => -1isize,
            1 => 0,
            2 => 1,
            _ => {
                return Err(SeedError::config(format!(
                    "catch action must be < 3, got {action}"
                )))
            }
        };
        self.paddle_col = (self.paddle_col as isize + shift).clamp(0, WIDTH as isize - 1) as usize;
        self.ball_row += 1;
        if self.ball_row == HEIGHT - 1 {
            self.done = true;
            let reward = if self.ball_col == self.paddle_col {
                1.0
            } else {
                -1.0
            };
            Ok(StepResult {
                obs: self.observation(),
                reward,
                done: true,
            })
        } else {
            Ok(StepResult {
                obs: self.observation(),
                reward: 0.0,
                done: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn greedy_action(env: &CatchEnv) -> u32 {
        match env.ball_col.cmp(&env.paddle_col) {
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => 1,
            std::cmp::Ordering::Greater => 2,
        }
    }

    #[test]
    fn greedy_policy_catches_from_every_start() {
        let mut env = CatchEnv::new(0);
        let mut starts_seen = [false; WIDTH];
        // Enough episodes to see every starting column with near certainty.
        for _ in 0..200 {
            env.reset();
            starts_seen[env.ball_col] = true;
            loop {
                let r = env.step(greedy_action(&env)).unwrap();
                if r.done {
                    assert_eq!(r.reward, 1.0);
                    break;
                }
            }
        }
        assert!(starts_seen.iter().all(|&s| s));
    }

    #[test]
    fn episode_lasts_height_minus_one_steps() {
        let mut env = CatchEnv::new(5);
        env.reset();
        for step in 1..HEIGHT {
            let r = env.step(1).unwrap();
            assert_eq!(r.done, step == HEIGHT - 1);
        }
    }

    #[test]
    fn missing_the_ball_is_penalized() {
        let mut env = CatchEnv::new(7);
        loop {
            env.reset();
            if env.ball_col == WIDTH / 2 {
                break;
            }
        }
        // Run away from the ball: it starts centered, so hug the left wall.
        loop {
            let r = env.step(0).unwrap();
            if r.done {
                assert_eq!(r.reward, -1.0);
                break;
            }
        }
    }

    #[test]
    fn observation_marks_ball_and_paddle() {
        let mut env = CatchEnv::new(11);
        let obs = env.reset();
        assert_eq!(obs.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(obs[env.ball_col], 1.0, "ball starts in the top row");
        let paddle_at = WIDTH * HEIGHT + (HEIGHT - 1) * WIDTH + WIDTH / 2;
        assert_eq!(obs[paddle_at], 1.0, "paddle starts centered");
    }
}
