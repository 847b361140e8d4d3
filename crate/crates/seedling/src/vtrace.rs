//! Off-policy policy-gradient targets with clipped importance sampling.
//!
//! Trajectories arrive with per-step behavior log-probabilities recorded at
//! acting time; because the model keeps training while a trajectory is being
//! produced, consecutive steps may come from different policy versions. The
//! target computation corrects for that drift with clipped importance
//! ratios, then the loss treats the targets as constants.
//!
//! All target arithmetic runs in f64; only the gradients handed back to the
//! f32 network are narrowed.

use crate::error::{Result, SeedError};

#[derive(Clone, Copy, Debug)]
pub struct VTraceConfig {
    pub discount: f64,
    pub lambda: f64,
    /// Clip for the importance ratio in the TD term.
    pub rho_bar: f64,
    /// Clip for the importance ratio in the trace coefficient.
    pub c_bar: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
}

impl Default for VTraceConfig {
    fn default() -> Self {
        VTraceConfig {
            discount: 0.99,
            lambda: 1.0,
            rho_bar: 1.0,
            c_bar: 1.0,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 1e-3,
        }
    }
}

impl VTraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(SeedError::config("discount must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SeedError::config("lambda must be in [0, 1]"));
        }
        if !(self.c_bar > 0.0 && self.rho_bar >= self.c_bar) {
            return Err(SeedError::config("clips must satisfy rho_bar >= c_bar > 0"));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.learning_rate <= 0.0 {
            return Err(SeedError::config(
                "coefficients must be >= 0 and learning rate > 0",
            ));
        }
        Ok(())
    }
}

/// One trajectory's per-step inputs. `dones[t]` marks the transition
/// `t -> t+1` as terminal, zeroing the discount across it.
pub struct VTraceInputs<'a> {
    pub behavior_log_probs: &'a [f32],
    pub target_log_probs: &'a [f32],
    pub rewards: &'a [f32],
    pub dones: &'a [bool],
    pub values: &'a [f32],
    pub bootstrap_value: f32,
}

/// Backward-recursion outputs; `rhos` are the clipped TD importance ratios,
/// exposed so clipping behavior is observable.
#[derive(Clone, Debug)]
pub struct VTraceTargets {
    pub vs: Vec<f64>,
    pub pg_advantages: Vec<f64>,
    pub rhos: Vec<f64>,
}

/// Computes value targets and policy-gradient advantages for one trajectory.
pub fn vtrace_targets(inp: &VTraceInputs, cfg: &VTraceConfig) -> Result<VTraceTargets> {
    let t_len = inp.values.len();
    if t_len == 0 {
        return Err(SeedError::config("vtrace needs at least one step"));
    }
    for (name, len) in [
        ("behavior_log_probs", inp.behavior_log_probs.len()),
        ("target_log_probs", inp.target_log_probs.len()),
        ("rewards", inp.rewards.len()),
        ("dones", inp.dones.len()),
    ] {
        if len != t_len {
            return Err(SeedError::Shape {
                context: name,
                expected: t_len,
                actual: len,
            });
        }
    }

    let mut vs = vec![0.0f64; t_len];
    let mut pg = vec![0.0f64; t_len];
    let mut rhos = vec![0.0f64; t_len];
    // v_{T} is defined as the bootstrap value.
    let mut v_next = inp.bootstrap_value as f64;
    for t in (0..t_len).rev() {
        let log_ratio = (inp.target_log_probs[t] - inp.behavior_log_probs[t]) as f64;
        if !log_ratio.is_finite() {
            return Err(SeedError::NonFinite {
                layer: "importance ratio".to_string(),
            });
        }
        let ratio = log_ratio.exp();
        let rho = ratio.min(cfg.rho_bar);
        let c = cfg.lambda * ratio.min(cfg.c_bar);
        let gamma_t = if inp.dones[t] { 0.0 } else { cfg.discount };
        let value_t = inp.values[t] as f64;
        let value_next = if t + 1 < t_len {
            inp.values[t + 1] as f64
        } else {
            inp.bootstrap_value as f64
        };
        let delta = rho * (inp.rewards[t] as f64 + gamma_t * value_next - value_t);
        vs[t] = value_t + delta + gamma_t * c * (v_next - value_next);
        pg[t] = rho * (inp.rewards[t] as f64 + gamma_t * v_next - value_t);
        rhos[t] = rho;
        v_next = vs[t];
    }
    Ok(VTraceTargets {
        vs,
        pg_advantages: pg,
        rhos,
    })
}

/// Flattened `[steps, batch]` loss inputs, time-major like the network
/// sequence layout. `bootstrap_values` has one entry per trajectory.
pub struct VTraceLossInputs<'a> {
    pub logits: &'a [f32],
    pub values: &'a [f32],
    pub actions: &'a [u32],
    pub behavior_log_probs: &'a [f32],
    pub rewards: &'a [f32],
    pub dones: &'a [bool],
    pub bootstrap_values: &'a [f32],
    pub steps: usize,
    pub batch: usize,
    pub num_actions: usize,
}

/// Loss value, its exact decomposition, and gradients with respect to the
/// network outputs. `entropy_term` is the signed term as it enters the
/// total; `mean_entropy` is the per-step policy entropy for logging.
#[derive(Clone, Debug)]
pub struct VTraceLoss {
    pub total: f64,
    pub pg: f64,
    pub baseline: f64,
    pub entropy_term: f64,
    pub mean_entropy: f64,
    pub mean_rho: f64,
    pub d_logits: Vec<f32>,
    pub d_values: Vec<f32>,
}

/// Policy-gradient + baseline + entropy loss over a batch of trajectories,
/// summed over steps:
/// `sum[-log pi(a) * adv] + 0.5 * vf_coef * sum[(v - V)^2] - ent_coef * sum[H]`.
pub fn vtrace_loss(inp: &VTraceLossInputs, cfg: &VTraceConfig) -> Result<VTraceLoss> {
    let rows = inp.steps * inp.batch;
    for (name, len, want) in [
        ("logits", inp.logits.len(), rows * inp.num_actions),
        ("values", inp.values.len(), rows),
        ("actions", inp.actions.len(), rows),
        (
            "behavior_log_probs",
            inp.behavior_log_probs.len(),
            rows,
        ),
        ("rewards", inp.rewards.len(), rows),
        ("dones", inp.dones.len(), rows),
        ("bootstrap_values", inp.bootstrap_values.len(), inp.batch),
    ] {
        if len != want {
            return Err(SeedError::Shape {
                context: name,
                expected: want,
                actual: len,
            });
        }
    }

    let acts = inp.num_actions;
    // Per-row log-softmax in f64.
    let mut log_probs = vec![0.0f64; rows * acts];
    let mut probs = vec![0.0f64; rows * acts];
    for r in 0..rows {
        let z = &inp.logits[r * acts..(r + 1) * acts];
        let max = z.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        for a in 0..acts {
            sum += ((z[a] as f64) - max).exp();
        }
        let lse = max + sum.ln();
        for a in 0..acts {
            let lp = z[a] as f64 - lse;
            log_probs[r * acts + a] = lp;
            probs[r * acts + a] = lp.exp();
        }
    }

    // Targets per trajectory (column of the time-major layout).
    let (steps, batch) = (inp.steps, inp.batch);
    let mut vs = vec![0.0f64; rows];
    let mut advs = vec![0.0f64; rows];
    let mut rho_sum = 0.0f64;
    let mut col_beh = vec![0.0f32; steps];
    let mut col_tgt = vec![0.0f32; steps];
    let mut col_rew = vec![0.0f32; steps];
    let mut col_done = vec![false; steps];
    let mut col_val = vec![0.0f32; steps];
    for b in 0..batch {
        for t in 0..steps {
            let r = t * batch + b;
            col_beh[t] = inp.behavior_log_probs[r];
            let a = inp.actions[r] as usize;
            if a >= acts {
                return Err(SeedError::protocol(format!(
                    "action {a} out of range for {acts} actions"
                )));
            }
            col_tgt[t] = log_probs[r * acts + a] as f32;
            col_rew[t] = inp.rewards[r];
            col_done[t] = inp.dones[r];
            col_val[t] = inp.values[r];
        }
        let targets = vtrace_targets(
            &VTraceInputs {
                behavior_log_probs: &col_beh,
                target_log_probs: &col_tgt,
                rewards: &col_rew,
                dones: &col_done,
                values: &col_val,
                bootstrap_value: inp.bootstrap_values[b],
            },
            cfg,
        )?;
        for t in 0..steps {
            let r = t * batch + b;
            vs[r] = targets.vs[t];
            advs[r] = targets.pg_advantages[t];
            rho_sum += targets.rhos[t];
        }
    }

    // Loss terms and analytic gradients; targets are constants.
    let mut pg_term = 0.0f64;
    let mut baseline_term = 0.0f64;
    let mut entropy_sum = 0.0f64;
    let mut d_logits = vec![0.0f32; rows * acts];
    let mut d_values = vec![0.0f32; rows];
    for r in 0..rows {
        let a_taken = inp.actions[r] as usize;
        let lp = &log_probs[r * acts..(r + 1) * acts];
        let p = &probs[r * acts..(r + 1) * acts];
        let adv = advs[r];
        pg_term += -lp[a_taken] * adv;

        let mut entropy = 0.0f64;
        for a in 0..acts {
            entropy -= p[a] * lp[a];
        }
        entropy_sum += entropy;

        let diff = inp.values[r] as f64 - vs[r];
        baseline_term += 0.5 * cfg.value_coef * diff * diff;
        d_values[r] = (cfg.value_coef * diff) as f32;

        for a in 0..acts {
            let indicator = if a == a_taken { 1.0 } else { 0.0 };
            let d_pg = adv * (p[a] - indicator);
            let d_ent = cfg.entropy_coef * p[a] * (lp[a] + entropy);
            d_logits[r * acts + a] = (d_pg + d_ent) as f32;
        }
    }
    let entropy_term = -cfg.entropy_coef * entropy_sum;
    Ok(VTraceLoss {
        total: pg_term + baseline_term + entropy_term,
        pg: pg_term,
        baseline: baseline_term,
        entropy_term,
        mean_entropy: entropy_sum / rows as f64,
        mean_rho: rho_sum / rows as f64,
        d_logits,
        d_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on_policy_cfg() -> VTraceConfig {
        VTraceConfig {
            discount: 0.9,
            lambda: 1.0,
            rho_bar: 1.0,
            c_bar: 1.0,
            entropy_coef: 0.0,
            value_coef: 0.5,
            learning_rate: 1e-3,
        }
    }

    #[test]
    fn hand_worked_two_step_example() {
        let targets = vtrace_targets(
            &VTraceInputs {
                behavior_log_probs: &[-0.5, -0.5],
                target_log_probs: &[-0.5, -0.5],
                rewards: &[0.5, 1.0],
                dones: &[false, false],
                values: &[1.0, 2.0],
                bootstrap_value: 0.0,
            },
            &on_policy_cfg(),
        )
        .unwrap();
        assert!((targets.vs[1] - 1.0).abs() < 1e-12);
        assert!((targets.vs[0] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn fully_clipped_ratio_keeps_values() {
        // Target probability vastly below behavior: ratio ~ 0, so both the
        // TD term and the trace vanish and v_t = V(x_t).
        let targets = vtrace_targets(
            &VTraceInputs {
                behavior_log_probs: &[-0.1, -0.1, -0.1],
                target_log_probs: &[-60.0, -60.0, -60.0],
                rewards: &[1.0, -1.0, 0.5],
                dones: &[false, false, false],
                values: &[0.3, -0.7, 1.1],
                bootstrap_value: 2.0,
            },
            &on_policy_cfg(),
        )
        .unwrap();
        for (v, expect) in targets.vs.iter().zip([0.3f32, -0.7, 1.1]) {
            assert!((v - expect as f64).abs() < 1e-9);
        }
        assert!(targets.rhos.iter().all(|&r| r < 1e-20));
    }

    #[test]
    fn done_cuts_dependence_on_later_steps() {
        let base = VTraceInputs {
            behavior_log_probs: &[-0.3, -0.8],
            target_log_probs: &[-0.4, -0.2],
            rewards: &[1.0, 5.0],
            dones: &[true, false],
            values: &[0.5, 3.0],
            bootstrap_value: 9.0,
        };
        let a = vtrace_targets(&base, &on_policy_cfg()).unwrap();
        let perturbed = VTraceInputs {
            rewards: &[1.0, -100.0],
            values: &[0.5, 42.0],
            bootstrap_value: -3.0,
            ..base
        };
        let b = vtrace_targets(&perturbed, &on_policy_cfg()).unwrap();
        assert_eq!(a.vs[0], b.vs[0]);
        assert_eq!(a.pg_advantages[0], b.pg_advantages[0]);
        // v_0 = V_0 + rho*(r_0 - V_0), everything after the cut ignored.
        let rho = ((-0.4f32 + 0.3) as f64).exp().min(1.0);
        assert!((a.vs[0] - (0.5 + rho * (1.0 - 0.5))).abs() < 1e-9);
    }

    #[test]
    fn loss_closed_forms() {
        // Single step, two actions, uniform logits, advantage forced via
        // behavior == target and reward shaping is irrelevant here: we call
        // the loss directly with a crafted instance where pg_adv = 1.
        // With V = v targets the baseline term vanishes.
        let cfg = VTraceConfig {
            discount: 1.0,
            entropy_coef: 0.0,
            ..on_policy_cfg()
        };
        // One step, V(x_0)=0, bootstrap 0, reward 1 => on-policy adv = 1,
        // vs_0 = 1. Make the baseline term zero by checking components.
        let out = vtrace_loss(
            &VTraceLossInputs {
                logits: &[0.0, 0.0],
                values: &[0.0],
                actions: &[0],
                behavior_log_probs: &[(0.5f32).ln()],
                rewards: &[1.0],
                dones: &[true],
                bootstrap_values: &[0.0],
                steps: 1,
                batch: 1,
                num_actions: 2,
            },
            &cfg,
        )
        .unwrap();
        assert!((out.pg - 0.5f64.ln().abs()).abs() < 1e-6, "{}", out.pg);
        // baseline: 0.5 * 0.5 * (0 - 1)^2 = 0.25
        assert!((out.baseline - 0.25).abs() < 1e-9);
        assert_eq!(out.entropy_term, 0.0);
        assert!((out.total - (out.pg + out.baseline)).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_uniform_policy() {
        let cfg = VTraceConfig {
            entropy_coef: 0.01,
            value_coef: 0.0,
            ..on_policy_cfg()
        };
        let out = vtrace_loss(
            &VTraceLossInputs {
                logits: &[0.0; 4],
                values: &[0.0],
                actions: &[2],
                behavior_log_probs: &[(0.25f32).ln()],
                rewards: &[0.0],
                dones: &[true],
                bootstrap_values: &[0.0],
                steps: 1,
                batch: 1,
                num_actions: 4,
            },
            &cfg,
        )
        .unwrap();
        assert!((out.mean_entropy - 4.0f64.ln()).abs() < 1e-6);
        assert!((out.entropy_term + 0.01 * 4.0f64.ln()).abs() < 1e-6);
    }

    /// The loss treats targets as constants, so finite differences only
    /// match the analytic logit gradient when the targets cannot move with
    /// the perturbation. Behavior log-probs far below any target log-prob
    /// pin every importance ratio at its clip, which freezes the targets.
    #[test]
    fn loss_gradients_match_finite_differences() {
        let cfg = VTraceConfig {
            discount: 0.95,
            lambda: 0.9,
            entropy_coef: 0.05,
            value_coef: 0.7,
            ..VTraceConfig::default()
        };
        let logits = [0.3f32, -0.2, 0.5, 1.0, 0.1, -0.4];
        let loss_at = |z: &[f32]| {
            vtrace_loss(
                &VTraceLossInputs {
                    logits: z,
                    values: &[0.7, -0.3],
                    actions: &[2, 0],
                    behavior_log_probs: &[-20.0, -20.0],
                    rewards: &[1.0, -0.5],
                    dones: &[false, false],
                    bootstrap_values: &[0.25],
                    steps: 2,
                    batch: 1,
                    num_actions: 3,
                },
                &cfg,
            )
            .unwrap()
        };
        let g = loss_at(&logits);
        for i in 0..logits.len() {
            let mut hi = logits;
            hi[i] += 1e-3;
            let mut lo = logits;
            lo[i] -= 1e-3;
            let fd = (loss_at(&hi).total - loss_at(&lo).total) / 2e-3;
            let rel = (fd - g.d_logits[i] as f64).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-3, "logit {i}: fd {fd} vs {}", g.d_logits[i]);
        }

        // Value gradient: only the baseline term differentiates V under the
        // constant-target convention, giving vf_coef * (V - vs). With a
        // clipped ratio and a terminal single step, vs = r exactly.
        let out = vtrace_loss(
            &VTraceLossInputs {
                logits: &logits[..3],
                values: &[0.3],
                actions: &[1],
                behavior_log_probs: &[-20.0],
                rewards: &[2.0],
                dones: &[true],
                bootstrap_values: &[0.0],
                steps: 1,
                batch: 1,
                num_actions: 3,
            },
            &cfg,
        )
        .unwrap();
        let expect = 0.7 * (0.3 - 2.0);
        assert!((out.d_values[0] as f64 - expect).abs() < 1e-6);
    }
}
