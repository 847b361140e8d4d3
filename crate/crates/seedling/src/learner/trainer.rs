//! Prefetch and training threads.
//!
//! Prefetchers move completed work from the inference side into time-major
//! prepared batches: the policy-gradient path drains the trajectory queue
//! in FIFO order, the Q path samples the prioritized buffer under the
//! replay-ratio throttle. A single trainer thread consumes prepared
//! batches, runs forward/backward, applies Adam under global-norm
//! clipping, publishes a new parameter snapshot per update, and (in Q
//! mode) refreshes priorities and periodically syncs the target network.

use std::sync::atomic::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Algo;
use crate::error::Result;
use crate::nn::{
    backward_sequence, clip_global_norm, forward_sequence, Adam, ParamSnapshot, SequenceInputs,
    Tensor,
};
use crate::qlearn::{burn_in_unroll, q_loss, sequence_priority, QLossInputs};
use crate::vtrace::{vtrace_loss, VTraceLossInputs};

use super::trajectory::{assemble_pg, assemble_q, PgBatch, PreparedBatch, QBatch};
use super::{Shared, TrainStats};

pub fn run_prefetcher(shared: &Shared, worker: u64) {
    match shared.cfg.algo {
        Algo::Vtrace => prefetch_pg(shared),
        Algo::R2d2 => prefetch_q(shared, worker),
    }
}

fn prefetch_pg(shared: &Shared) {
    let batch_size = shared.cfg.training_batch_size;
    let (obs_dim, units) = (shared.shape.obs_dim, shared.shape.lstm_units);
    loop {
        let mut group = Vec::with_capacity(batch_size);
        while group.len() < batch_size {
            match shared.pg_queue.pop() {
                Some(t) => group.push(t),
                None => {
                    // Queue closed; whatever was grouped will not train.
                    let leftover: u64 = group.iter().map(|t| t.steps as u64).sum();
                    if leftover > 0 {
                        shared.metrics.add(&shared.metrics.steps_dropped, leftover);
                        shared
                            .metrics
                            .steps_emitted
                            .fetch_sub(leftover, Ordering::Relaxed);
                    }
                    return;
                }
            }
        }
        let batch = assemble_pg(&group, obs_dim, units);
        if shared.prepared.push(PreparedBatch::Pg(batch)).is_err() {
            return;
        }
    }
}

fn prefetch_q(shared: &Shared, worker: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(shared.cfg.seed ^ (0xfe7c_0000 + worker));
    let cfg = &shared.cfg;
    let (obs_dim, units) = (shared.shape.obs_dim, shared.shape.lstm_units);
    let pause = std::time::Duration::from_millis(1);
    while !shared.stop.load(Ordering::SeqCst) {
        if !shared.replay.is_ready() {
            std::thread::sleep(pause);
            continue;
        }
        let frames = shared.metrics.frames.load(Ordering::Relaxed);
        let planned = shared.planned_trained.load(Ordering::Relaxed);
        if planned as f64 >= cfg.replay_ratio * frames as f64 {
            std::thread::sleep(pause);
            continue;
        }
        let Ok(sample) = shared.replay.sample(cfg.training_batch_size, &mut rng) else {
            std::thread::sleep(pause);
            continue;
        };
        let trained: u64 = sample.items.iter().map(|s| s.trained_steps() as u64).sum();
        let batch = assemble_q(
            &sample.items,
            sample.ids,
            sample.weights,
            cfg.trained_steps(),
            cfg.burn_in,
            obs_dim,
            units,
        );
        shared.planned_trained.fetch_add(trained, Ordering::Relaxed);
        if shared.prepared.push(PreparedBatch::Q(batch)).is_err() {
            return;
        }
    }
}

pub fn run_trainer(shared: &Shared, mut params: Vec<Tensor>, start_version: u64) {
    let names = shared.snapshot.load().names_arc();
    let mut adam = Adam::new(shared.cfg.adam_config(), &params);
    let mut target_params = params.clone();
    let mut version = start_version;
    let mut completed: u64 = 0;

    while let Some(batch) = shared.prepared.pop() {
        let outcome = match batch {
            PreparedBatch::Pg(b) => train_pg(shared, &mut params, &mut adam, &b),
            PreparedBatch::Q(b) => train_q(shared, &mut params, &target_params, &mut adam, &b),
        };
        match outcome {
            Ok(Some((stats, trained))) => {
                version += 1;
                shared.snapshot.publish(ParamSnapshot::new(
                    version,
                    names.clone(),
                    params.clone(),
                ));
                shared.retain_snapshot(shared.snapshot.load());
                completed += 1;
                let m = &shared.metrics;
                m.add(&m.updates, 1);
                m.add(&m.trained_steps, trained);
                m.record_train(stats);
                if shared.cfg.algo == Algo::R2d2
                    && completed % shared.cfg.target_network_update_interval == 0
                {
                    target_params = params.clone();
                }
            }
            Ok(None) => {
                shared
                    .metrics
                    .add(&shared.metrics.skipped_updates, 1);
            }
            Err(err) => {
                shared
                    .metrics
                    .add(&shared.metrics.skipped_updates, 1);
                if !shared.stop.load(Ordering::SeqCst) {
                    eprintln!("training step failed: {err}");
                }
            }
        }
    }
}

type UpdateOutcome = Result<Option<(TrainStats, u64)>>;

fn train_pg(shared: &Shared, params: &mut [Tensor], adam: &mut Adam, b: &PgBatch) -> UpdateOutcome {
    let spec = &shared.net_spec;
    let (steps, batch, actions) = (b.steps, b.batch, spec.num_actions);
    let inp = SequenceInputs {
        obs: &b.obs,
        prev_actions: &b.prev_actions,
        prev_rewards: &b.prev_rewards,
        resets: &b.resets,
        steps: steps + 1,
        batch,
    };
    let (out, tape) = forward_sequence(spec, params, &inp, &b.init, true)?;
    let tape = tape.expect("tape requested");
    let boundary = steps * batch;
    let loss = vtrace_loss(
        &VTraceLossInputs {
            logits: &out.head[..boundary * actions],
            values: &out.value[..boundary],
            actions: &b.actions,
            behavior_log_probs: &b.behavior_log_probs,
            rewards: &b.rewards,
            dones: &b.dones,
            bootstrap_values: &out.value[boundary..],
            steps,
            batch,
            num_actions: actions,
        },
        &shared.cfg.vtrace_config(),
    )?;
    // The bootstrap row contributes no gradient of its own.
    let mut d_head = loss.d_logits;
    d_head.resize((steps + 1) * batch * actions, 0.0);
    let mut d_value = loss.d_values;
    d_value.resize((steps + 1) * batch, 0.0);
    let mut grads = backward_sequence(spec, params, &tape, &d_head, &d_value)?;
    let norm = clip_global_norm(&mut grads, shared.cfg.gradient_norm_clipping);
    if !loss.total.is_finite() || !norm.is_finite() {
        return Ok(None);
    }
    adam.step(params, &grads)?;
    let stats = TrainStats {
        loss: loss.total,
        pg_loss: loss.pg,
        value_loss: loss.baseline,
        entropy: loss.mean_entropy,
        mean_q: 0.0,
        grad_norm: norm,
    };
    Ok(Some((stats, (steps * batch) as u64)))
}

fn train_q(
    shared: &Shared,
    params: &mut [Tensor],
    target_params: &[Tensor],
    adam: &mut Adam,
    b: &QBatch,
) -> UpdateOutcome {
    let spec = &shared.net_spec;
    let (steps, batch, actions) = (b.steps, b.batch, spec.num_actions);
    let obs_dim = spec.input_dim;
    let burn = b.burn_in;
    let row_off = burn * batch;
    let obs_off = row_off * obs_dim;

    let prefix = SequenceInputs {
        obs: &b.obs[..obs_off],
        prev_actions: &b.prev_actions[..row_off],
        prev_rewards: &b.prev_rewards[..row_off],
        resets: &b.resets[..row_off],
        steps: burn,
        batch,
    };
    let state_online = burn_in_unroll(spec, params, &prefix, &b.init)?;
    let state_target = burn_in_unroll(spec, target_params, &prefix, &b.init)?;

    let train_inp = SequenceInputs {
        obs: &b.obs[obs_off..],
        prev_actions: &b.prev_actions[row_off..],
        prev_rewards: &b.prev_rewards[row_off..],
        resets: &b.resets[row_off..],
        steps: steps + 1,
        batch,
    };
    let (out_online, tape) = forward_sequence(spec, params, &train_inp, &state_online, true)?;
    let tape = tape.expect("tape requested");
    let (out_target, _) = forward_sequence(spec, target_params, &train_inp, &state_target, false)?;

    let loss = q_loss(
        &QLossInputs {
            q_online: &out_online.head,
            q_target: &out_target.head,
            actions: &b.actions,
            rewards: &b.rewards,
            dones: &b.dones,
            valid_steps: &b.valid,
            is_weights: &b.weights,
            steps,
            batch,
            num_actions: actions,
        },
        &shared.cfg.q_config(),
    )?;
    let mut grads = backward_sequence(spec, params, &tape, &loss.d_q_online, &[])?;
    let norm = clip_global_norm(&mut grads, shared.cfg.gradient_norm_clipping);
    if !loss.total.is_finite() || !norm.is_finite() {
        return Ok(None);
    }
    adam.step(params, &grads)?;

    let eta = shared.cfg.priority_eta;
    let mut priorities = Vec::with_capacity(batch);
    for elem in 0..batch {
        let td: Vec<f64> = (0..b.valid[elem])
            .map(|t| loss.td_abs[t * batch + elem])
            .collect();
        priorities.push(sequence_priority(&td, eta)?);
    }
    shared.replay.update_priorities(&b.ids, &priorities)?;

    let trained: u64 = b.valid.iter().map(|&v| v as u64).sum();
    let stats = TrainStats {
        loss: loss.total,
        pg_loss: 0.0,
        value_loss: loss.total,
        entropy: 0.0,
        mean_q: loss.mean_q,
        grad_norm: norm,
    };
    Ok(Some((stats, trained)))
}
