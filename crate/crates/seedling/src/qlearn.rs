//! Recurrent Q-learning math: value rescaling, n-step double-Q targets,
//! burn-in, sequence priorities, and the per-actor exploration schedule.
//!
//! Everything here is pure; the learner supplies forward-pass outputs and
//! applies the resulting gradients. Targets are computed in f64 and treated
//! as constants by the loss.

use crate::error::{Result, SeedError};
use crate::nn::{forward_sequence, NetworkSpec, SequenceInputs, StateBatch, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct QConfig {
    pub discount: f64,
    pub n_steps: usize,
    /// Warm-up prefix length; these steps condition the recurrent state and
    /// receive no loss.
    pub burn_in: usize,
    /// Total stored sequence length, burn-in included.
    pub sequence_length: usize,
    pub target_update_interval: u64,
    /// Mixing weight between max and mean absolute TD error in priorities.
    pub priority_eta: f64,
    pub priority_exponent: f64,
    pub importance_exponent: f64,
    pub rescale_eps: f64,
    /// Trained transitions per generated transition; the trainer throttles
    /// to hold this ratio.
    pub replay_ratio: f64,
    pub eval_epsilon: f64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            discount: 0.997,
            n_steps: 5,
            burn_in: 40,
            sequence_length: 120,
            target_update_interval: 2500,
            priority_eta: 0.9,
            priority_exponent: 0.9,
            importance_exponent: 0.6,
            rescale_eps: 1e-3,
            replay_ratio: 0.75,
            eval_epsilon: 1e-3,
        }
    }
}

impl QConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(SeedError::config("discount must be in (0, 1]"));
        }
        if self.burn_in >= self.sequence_length {
            return Err(SeedError::config("burn_in must be < sequence_length"));
        }
        if self.n_steps == 0 {
            return Err(SeedError::config("n_steps must be >= 1"));
        }
        for (name, v) in [
            ("priority_eta", self.priority_eta),
            ("priority_exponent", self.priority_exponent),
            ("importance_exponent", self.importance_exponent),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SeedError::config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.replay_ratio <= 0.0 {
            return Err(SeedError::config("replay_ratio must be > 0"));
        }
        Ok(())
    }

    /// Trained steps per sequence.
    pub fn trained_steps(&self) -> usize {
        self.sequence_length - self.burn_in
    }
}

/// Reward-scale compression `sign(x) * (sqrt(|x| + 1) - 1) + eps * x`.
pub fn rescale(x: f64, eps: f64) -> f64 {
    x.signum() * ((x.abs() + 1.0).sqrt() - 1.0) + eps * x
}

/// Closed-form inverse of [`rescale`].
pub fn rescale_inverse(y: f64, eps: f64) -> f64 {
    let inner = (1.0 + 4.0 * eps * (y.abs() + 1.0 + eps)).sqrt() - 1.0;
    let root = inner / (2.0 * eps);
    y.signum() * (root * root - 1.0)
}

/// Exploration rate for stream `i` of `n`: 0.4 at the greediest end down to
/// 0.4^8 at the other, geometrically spaced. A single stream explores at 0.4.
pub fn epsilon_for_actor(i: usize, n: usize) -> f64 {
    assert!(i < n.max(1), "stream index {i} out of range for {n}");
    if n <= 1 {
        return 0.4;
    }
    0.4f64.powf(1.0 + 7.0 * i as f64 / (n - 1) as f64)
}

/// One sequence's trained suffix plus its bootstrap row.
///
/// `q_online` and `q_target` hold `steps + 1` rows of `num_actions` values:
/// the trained steps followed by the step after the window (used only for
/// bootstrapping). `valid_steps` counts non-padding rows; padding exists
/// only after an in-sequence episode end, so `dones[valid_steps - 1]` tells
/// whether the window ended at a terminal.
pub struct QTargetInputs<'a> {
    pub q_online: &'a [f32],
    pub q_target: &'a [f32],
    pub rewards: &'a [f32],
    pub dones: &'a [bool],
    pub valid_steps: usize,
    pub steps: usize,
    pub num_actions: usize,
}

/// Per-step targets `y_t = rescale(sum of discounted rewards + bootstrap)`,
/// with the bootstrap value chosen by the online argmax and valued by the
/// target network. The reward sum stops at episode end (dropping the
/// bootstrap) or at the window edge (bootstrapping early).
pub fn nstep_double_q_targets(inp: &QTargetInputs, cfg: &QConfig) -> Result<Vec<f64>> {
    let (s, a) = (inp.steps, inp.num_actions);
    if inp.valid_steps == 0 || inp.valid_steps > s {
        return Err(SeedError::config(format!(
            "valid_steps {} out of range for {s}-step window",
            inp.valid_steps
        )));
    }
    for (name, len, want) in [
        ("q_online", inp.q_online.len(), (s + 1) * a),
        ("q_target", inp.q_target.len(), (s + 1) * a),
        ("rewards", inp.rewards.len(), s),
        ("dones", inp.dones.len(), s),
    ] {
        if len != want {
            return Err(SeedError::Shape {
                context: name,
                expected: want,
                actual: len,
            });
        }
    }
    let v = inp.valid_steps;
    let terminal = inp.dones[v - 1];
    let mut targets = vec![0.0f64; s];
    for t in 0..v {
        let boot = (t + cfg.n_steps).min(v);
        let mut sum = 0.0f64;
        let mut g = 1.0f64;
        for k in t..boot {
            sum += g * inp.rewards[k] as f64;
            g *= cfg.discount;
        }
        if !(terminal && boot == v) {
            let row = &inp.q_online[boot * a..(boot + 1) * a];
            let best = row
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).expect("finite q"))
                .map(|(i, _)| i)
                .expect("non-empty actions");
            let q_boot = inp.q_target[boot * a + best] as f64;
            sum += g * rescale_inverse(q_boot, cfg.rescale_eps);
        }
        targets[t] = rescale(sum, cfg.rescale_eps);
    }
    Ok(targets)
}

/// Mixed max/mean absolute-TD-error priority for a replay sequence.
pub fn sequence_priority(td_abs: &[f64], eta: f64) -> Result<f64> {
    if td_abs.is_empty() {
        return Err(SeedError::config("priority over empty TD errors"));
    }
    let max = td_abs.iter().cloned().fold(0.0f64, f64::max);
    let mean = td_abs.iter().sum::<f64>() / td_abs.len() as f64;
    Ok(eta * max + (1.0 - eta) * mean)
}

/// Runs the stored burn-in prefix forward (no tape) and returns the
/// recurrent state entering the trained suffix.
pub fn burn_in_unroll(
    spec: &NetworkSpec,
    params: &[Tensor],
    prefix: &SequenceInputs,
    stored_state: &StateBatch,
) -> Result<StateBatch> {
    if prefix.steps == 0 {
        return Ok(stored_state.clone());
    }
    let (out, _) = forward_sequence(spec, params, prefix, stored_state, false)?;
    Ok(out.final_state)
}

/// Batched Q-loss inputs, time-major `[steps + 1, batch]` for the Q arrays
/// and `[steps, batch]` for per-step data (matching the network layout).
pub struct QLossInputs<'a> {
    pub q_online: &'a [f32],
    pub q_target: &'a [f32],
    pub actions: &'a [u32],
    pub rewards: &'a [f32],
    pub dones: &'a [bool],
    pub valid_steps: &'a [usize],
    pub is_weights: &'a [f32],
    pub steps: usize,
    pub batch: usize,
    pub num_actions: usize,
}

#[derive(Clone, Debug)]
pub struct QLoss {
    /// Mean over valid trained steps of IS-weighted squared TD error.
    pub total: f64,
    /// Gradient w.r.t. `q_online`, `[steps + 1, batch, actions]`; zero on
    /// bootstrap rows and padding.
    pub d_q_online: Vec<f32>,
    /// `|y_t - Q(s_t, a_t)|` per `[steps, batch]` entry, zero on padding;
    /// feeds sequence priorities.
    pub td_abs: Vec<f64>,
    /// Mean online Q-value of taken actions over valid steps, for logging.
    pub mean_q: f64,
}

/// Squared-error loss on n-step double-Q targets over a batch of sequences.
pub fn q_loss(inp: &QLossInputs, cfg: &QConfig) -> Result<QLoss> {
    let (s, b, a) = (inp.steps, inp.batch, inp.num_actions);
    let rows = s * b;
    for (name, len, want) in [
        ("q_online", inp.q_online.len(), (s + 1) * b * a),
        ("q_target", inp.q_target.len(), (s + 1) * b * a),
        ("actions", inp.actions.len(), rows),
        ("rewards", inp.rewards.len(), rows),
        ("dones", inp.dones.len(), rows),
        ("valid_steps", inp.valid_steps.len(), b),
        ("is_weights", inp.is_weights.len(), b),
    ] {
        if len != want {
            return Err(SeedError::Shape {
                context: name,
                expected: want,
                actual: len,
            });
        }
    }

    // Per-sequence targets via column extraction from the time-major layout.
    let mut col_q_online = vec![0.0f32; (s + 1) * a];
    let mut col_q_target = vec![0.0f32; (s + 1) * a];
    let mut col_rewards = vec![0.0f32; s];
    let mut col_dones = vec![false; s];
    let mut targets = vec![0.0f64; rows];
    for bi in 0..b {
        for t in 0..=s {
            let src = (t * b + bi) * a;
            col_q_online[t * a..(t + 1) * a].copy_from_slice(&inp.q_online[src..src + a]);
            col_q_target[t * a..(t + 1) * a].copy_from_slice(&inp.q_target[src..src + a]);
        }
        for t in 0..s {
            col_rewards[t] = inp.rewards[t * b + bi];
            col_dones[t] = inp.dones[t * b + bi];
        }
        let y = nstep_double_q_targets(
            &QTargetInputs {
                q_online: &col_q_online,
                q_target: &col_q_target,
                rewards: &col_rewards,
                dones: &col_dones,
                valid_steps: inp.valid_steps[bi],
                steps: s,
                num_actions: a,
            },
            cfg,
        )?;
        for t in 0..s {
            targets[t * b + bi] = y[t];
        }
    }

    let valid_total: usize = inp.valid_steps.iter().sum();
    if valid_total == 0 {
        return Err(SeedError::config("batch has no valid steps"));
    }
    let mut d_q = vec![0.0f32; (s + 1) * b * a];
    let mut td_abs = vec![0.0f64; rows];
    let mut loss = 0.0f64;
    let mut q_sum = 0.0f64;
    for bi in 0..b {
        let w = inp.is_weights[bi] as f64;
        for t in 0..inp.valid_steps[bi] {
            let r = t * b + bi;
            let act = inp.actions[r] as usize;
            if act >= a {
                return Err(SeedError::protocol(format!(
                    "action {act} out of range for {a} actions"
                )));
            }
            let q = inp.q_online[r * a + act] as f64;
            let delta = q - targets[r];
            loss += w * delta * delta;
            td_abs[r] = delta.abs();
            q_sum += q;
            d_q[r * a + act] = (2.0 * w * delta / valid_total as f64) as f32;
        }
    }
    Ok(QLoss {
        total: loss / valid_total as f64,
        d_q_online: d_q,
        td_abs,
        mean_q: q_sum / valid_total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;

    const EPS: f64 = 1e-3;

    #[test]
    fn rescale_closed_forms() {
        assert_eq!(rescale(0.0, EPS), 0.0);
        assert!((rescale(3.0, EPS) - 1.003).abs() < 1e-12);
        assert!((rescale(-3.0, EPS) + 1.003).abs() < 1e-12);
        assert!((rescale(1.0, EPS) - (2.0f64.sqrt() - 1.0 + 0.001)).abs() < 1e-12);
    }

    #[test]
    fn rescale_roundtrips_and_is_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in -100..=100 {
            let x = i as f64 * 100.0; // covers |x| <= 1e4
            let y = rescale(x, EPS);
            assert!(y > prev, "monotone at {x}");
            prev = y;
            assert!((rescale_inverse(y, EPS) - x).abs() < 1e-5, "roundtrip {x}");
        }
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        assert!((epsilon_for_actor(0, 8) - 0.4).abs() < 1e-12);
        assert!((epsilon_for_actor(1, 2) - 0.4f64.powi(8)).abs() < 1e-12);
        assert!((epsilon_for_actor(7, 8) - 0.00065536).abs() < 1e-9);
        assert!((epsilon_for_actor(0, 1) - 0.4).abs() < 1e-12);
    }

    fn flat_q(rows: usize, actions: usize, f: impl Fn(usize, usize) -> f32) -> Vec<f32> {
        let mut q = vec![0.0; rows * actions];
        for r in 0..rows {
            for a in 0..actions {
                q[r * actions + a] = f(r, a);
            }
        }
        q
    }

    #[test]
    fn terminal_reward_targets() {
        // Three valid steps ending in a terminal with reward 1 at the end.
        let cfg = QConfig::default();
        let q = flat_q(4, 2, |_, _| 0.0);
        let y = nstep_double_q_targets(
            &QTargetInputs {
                q_online: &q,
                q_target: &q,
                rewards: &[0.0, 0.0, 1.0],
                dones: &[false, false, true],
                valid_steps: 3,
                steps: 3,
                num_actions: 2,
            },
            &cfg,
        )
        .unwrap();
        // y_2 = rescale(1); earlier steps discount it through the sum only.
        assert!((y[2] - rescale(1.0, EPS)).abs() < 1e-12);
        assert!((y[1] - rescale(0.997, EPS)).abs() < 1e-12);
        assert!((y[0] - rescale(0.997 * 0.997, EPS)).abs() < 1e-12);
        assert!((y[2] - 0.4152135623730951).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_uses_online_argmax_target_value() {
        let cfg = QConfig {
            n_steps: 1,
            discount: 0.5,
            ..QConfig::default()
        };
        // Online prefers action 1 at the bootstrap row; target values differ.
        let q_online = [0.0, 0.0, /* boot row: */ 1.0, 2.0];
        let q_target = [9.0, 9.0, /* boot row: */ 5.0, rescale(4.0, EPS) as f32];
        let y = nstep_double_q_targets(
            &QTargetInputs {
                q_online: &q_online,
                q_target: &q_target,
                rewards: &[0.0],
                dones: &[false],
                valid_steps: 1,
                steps: 1,
                num_actions: 2,
            },
            &cfg,
        )
        .unwrap();
        // y_0 = rescale(0 + 0.5 * rescale_inverse(q_target[boot, argmax=1]))
        let expect = rescale(0.5 * rescale_inverse(rescale(4.0, EPS) as f32 as f64, EPS), EPS);
        assert!((y[0] - expect).abs() < 1e-9);

        // Perturbing the target at the non-argmax action changes nothing.
        let q_target2 = [9.0, 9.0, -100.0, rescale(4.0, EPS) as f32];
        let y2 = nstep_double_q_targets(
            &QTargetInputs {
                q_online: &q_online,
                q_target: &q_target2,
                rewards: &[0.0],
                dones: &[false],
                valid_steps: 1,
                steps: 1,
                num_actions: 2,
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(y[0], y2[0]);
    }

    #[test]
    fn window_edge_truncates_horizon() {
        // No terminal: the reward sum stops at the window edge and
        // bootstraps there with the correspondingly smaller exponent.
        let cfg = QConfig {
            n_steps: 5,
            discount: 0.9,
            ..QConfig::default()
        };
        let q_online = flat_q(4, 2, |r, a| if r == 3 && a == 0 { 1.0 } else { 0.0 });
        let q_target = flat_q(4, 2, |r, a| {
            if r == 3 && a == 0 {
                rescale(2.0, EPS) as f32
            } else {
                0.0
            }
        });
        let y = nstep_double_q_targets(
            &QTargetInputs {
                q_online: &q_online,
                q_target: &q_target,
                rewards: &[1.0, 1.0, 1.0],
                dones: &[false, false, false],
                valid_steps: 3,
                steps: 3,
                num_actions: 2,
            },
            &cfg,
        )
        .unwrap();
        let boot = rescale_inverse(rescale(2.0, EPS) as f32 as f64, EPS);
        let expect0 = rescale(1.0 + 0.9 + 0.81 + 0.729 * boot, EPS);
        let expect2 = rescale(1.0 + 0.9 * boot, EPS);
        assert!((y[0] - expect0).abs() < 1e-6, "{} vs {expect0}", y[0]);
        assert!((y[2] - expect2).abs() < 1e-6);
    }

    #[test]
    fn priority_mixes_max_and_mean() {
        assert_eq!(sequence_priority(&[0.0, 0.0, 0.0], 0.9).unwrap(), 0.0);
        let p = sequence_priority(&[1.0, 3.0], 0.9).unwrap();
        assert!((p - 2.9).abs() < 1e-12);
        let c = sequence_priority(&[0.7; 5], 0.3).unwrap();
        assert!((c - 0.7).abs() < 1e-12);
        assert!(sequence_priority(&[], 0.9).is_err());
    }

    #[test]
    fn burn_in_matches_full_forward() {
        let spec = NetworkSpec {
            input_dim: 3,
            mlp_hidden: vec![4],
            lstm_units: 5,
            head: HeadKind::DuelingQ,
            num_actions: 2,
            dueling_hidden: 3,
        };
        let params = spec.init_params(77);
        let steps = 6;
        let obs: Vec<f32> = (0..steps * 3).map(|i| (i as f32 * 0.37).sin()).collect();
        let pa: Vec<u32> = (0..steps).map(|i| (i % 2) as u32).collect();
        let pr: Vec<f32> = (0..steps).map(|i| i as f32 * 0.1).collect();
        let resets = vec![false; steps];
        let init = {
            let mut s = StateBatch::zeros(1, 5);
            for v in s.hidden.iter_mut().chain(s.cell.iter_mut()) {
                *v = 0.3;
            }
            s
        };
        let burn = 4;
        let prefix = SequenceInputs {
            obs: &obs[..burn * 3],
            prev_actions: &pa[..burn],
            prev_rewards: &pr[..burn],
            resets: &resets[..burn],
            steps: burn,
            batch: 1,
        };
        let warmed = burn_in_unroll(&spec, &params, &prefix, &init).unwrap();

        // Oracle: full forward, reading the state entering step `burn`.
        let mut state = init.clone();
        for t in 0..burn {
            crate::nn::forward_step(
                &spec,
                &params,
                &obs[t * 3..(t + 1) * 3],
                1,
                &pa[t..t + 1],
                &pr[t..t + 1],
                &resets[t..t + 1],
                &mut state,
            )
            .unwrap();
        }
        assert_eq!(warmed, state);

        // Zero burn-in returns the stored state untouched.
        let empty = SequenceInputs {
            obs: &[],
            prev_actions: &[],
            prev_rewards: &[],
            resets: &[],
            steps: 0,
            batch: 1,
        };
        assert_eq!(burn_in_unroll(&spec, &params, &empty, &init).unwrap(), init);
    }

    #[test]
    fn q_loss_gradient_matches_finite_difference() {
        let cfg = QConfig {
            n_steps: 2,
            discount: 0.9,
            ..QConfig::default()
        };
        // One sequence, 3 trained steps + bootstrap row, 2 actions, with
        // clear argmax margins so perturbation cannot flip the bootstrap
        // action choice.
        let q_online = vec![0.5f32, -0.2, 0.1, 0.9, -0.4, 0.3, 0.8, 0.1];
        let q_target = vec![0.2f32, 0.6, -0.1, 0.4, 0.5, 0.2, 0.3, -0.6];
        let loss_at = |q: &[f32]| {
            q_loss(
                &QLossInputs {
                    q_online: q,
                    q_target: &q_target,
                    actions: &[0, 1, 0],
                    rewards: &[1.0, -0.5, 0.25],
                    dones: &[false, false, false],
                    valid_steps: &[3],
                    is_weights: &[0.7],
                    steps: 3,
                    batch: 1,
                    num_actions: 2,
                },
                &cfg,
            )
            .unwrap()
        };
        let base = loss_at(&q_online);
        for i in 0..q_online.len() {
            let mut hi = q_online.clone();
            hi[i] += 1e-3;
            let mut lo = q_online.clone();
            lo[i] -= 1e-3;
            let fd = (loss_at(&hi).total - loss_at(&lo).total) / 2e-3;
            let an = base.d_q_online[i] as f64;
            assert!(
                (fd - an).abs() < 1e-5,
                "q[{i}]: fd {fd} vs analytic {an}"
            );
        }
        // Bootstrap row gets no gradient.
        assert_eq!(&base.d_q_online[6..8], &[0.0, 0.0]);
    }
}
