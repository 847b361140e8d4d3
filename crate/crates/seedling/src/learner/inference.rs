//! Inference workers: the consumers of the dynamic batcher.
//!
//! Each worker polls one batch at a time, loads the freshest parameter
//! snapshot, runs a single batched forward pass, samples an action per
//! entry, writes responses back, and feeds completed steps into the
//! training pipeline. The snapshot is loaded after the batch is taken, and
//! an environment's next request cannot exist before its previous response
//! was written, so the parameter versions recorded along one environment's
//! stream never decrease.

use std::collections::HashMap;
use std::io::Write as _;
use std::sync::atomic::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Algo;
use crate::nn::{forward_step, StateBatch};
use crate::wire::{InferenceBatch, WireMessage};

use super::slots::EnvSlot;
use super::{Shared, TAP_LIMIT};

pub fn run_worker(shared: &Shared, worker: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(shared.cfg.seed ^ (0x5eed_0000 + worker));
    while let Some(batch) = shared.batcher.poll() {
        process_batch(shared, batch, &mut rng);
    }
}

fn process_batch(shared: &Shared, batch: InferenceBatch, rng: &mut ChaCha8Rng) {
    let entries = batch.entries;
    let n = entries.len();
    if n == 0 {
        return;
    }
    let received = std::time::Instant::now();
    let snapshot = shared.snapshot.load();
    let m = &shared.metrics;
    m.add(&m.frames, n as u64);
    m.record_batch(n);
    let waited: u64 = entries
        .iter()
        .map(|e| received.duration_since(e.submitted_at).as_nanos() as u64)
        .sum();
    m.add(&m.wait_ns, waited);

    let spec = &shared.net_spec;
    let shape = &shared.shape;
    let (obs_dim, num_actions, units) = (shape.obs_dim, shape.num_actions, shape.lstm_units);

    // First pass: complete each environment's previous transition and
    // gather this step's forward inputs. Slot locks are scoped to one entry
    // at a time; holding two at once could deadlock against another worker.
    let mut obs = Vec::with_capacity(n * obs_dim);
    let mut prev_actions = Vec::with_capacity(n);
    let mut prev_rewards = Vec::with_capacity(n);
    let mut resets = Vec::with_capacity(n);
    let mut epsilons = vec![0.0f64; n];
    let mut state = StateBatch::zeros(n, units);
    let mut dropped = 0u64;
    let mut q_emissions = Vec::new();

    for (i, e) in entries.iter().enumerate() {
        let key = (e.actor_id, e.env_id);
        let mut slot = shared.slots.entry(key).or_insert_with(|| {
            let rung = shared.epsilon_counter.fetch_add(1, Ordering::Relaxed);
            new_slot(shared, e.conn, e.actor_id, e.env_id, rung)
        });
        if slot.conn != e.conn {
            // The environment reconnected before its old slot was cleaned
            // up. The old connection's partial work is dropped.
            dropped += slot.open_steps();
            let epsilon = slot.epsilon;
            *slot = match shared.cfg.algo {
                Algo::Vtrace => EnvSlot::new_pg(e.conn, e.actor_id, e.env_id, shape),
                Algo::R2d2 => EnvSlot::new_q(e.conn, e.actor_id, e.env_id, shape, epsilon),
            };
        }
        let outcome = slot.begin_step(e.reward, e.done, shape);
        if let Some(ret) = outcome.episode_return {
            m.record_episode(ret);
        }
        if let Some(seq) = outcome.sequence {
            q_emissions.push(seq);
        }
        dropped += outcome.dropped;

        obs.extend_from_slice(&e.obs);
        prev_actions.push(slot.last_action);
        prev_rewards.push(if e.done { 0.0 } else { e.reward });
        resets.push(e.done);
        epsilons[i] = slot.epsilon;
        state.set_row(i, &slot.state);
    }

    let pre = state.clone();
    let forward_start = std::time::Instant::now();
    let forward = forward_step(
        spec,
        snapshot.params(),
        &obs,
        n,
        &prev_actions,
        &prev_rewards,
        &resets,
        &mut state,
    );
    m.add(&m.forward_ns, forward_start.elapsed().as_nanos() as u64);
    let (head, healthy) = match forward {
        Ok(out) => (out.head, true),
        Err(err) => {
            // Answer anyway so no environment hangs; the step is recorded
            // as a deterministic fallback.
            m.add(&m.inference_errors, 1);
            if !shared.stop.load(Ordering::SeqCst) {
                eprintln!("inference forward failed: {err}");
            }
            state = pre.clone();
            (vec![0.0; n * num_actions], false)
        }
    };

    // Sample one action per entry under the recorded behavior outputs.
    let mut actions = Vec::with_capacity(n);
    let mut log_probs = vec![0.0f32; n];
    for i in 0..n {
        let row = &head[i * num_actions..(i + 1) * num_actions];
        if !healthy {
            actions.push(0u32);
            continue;
        }
        match shared.cfg.algo {
            Algo::Vtrace => {
                let (action, lp) = sample_categorical(row, rng);
                actions.push(action);
                log_probs[i] = lp;
            }
            Algo::R2d2 => {
                let action = if rng.gen::<f64>() < epsilons[i] {
                    rng.gen_range(0..num_actions) as u32
                } else {
                    argmax(row)
                };
                actions.push(action);
            }
        }
    }

    // Second pass: commit post-forward state and the new step to each slot,
    // collecting any unrolls this step completed.
    let mut pg_emissions = Vec::new();
    let version = snapshot.version();
    for (i, e) in entries.iter().enumerate() {
        let key = (e.actor_id, e.env_id);
        let Some(mut slot) = shared.slots.get_mut(&key) else {
            dropped += 1;
            continue;
        };
        if slot.conn != e.conn {
            dropped += 1;
            continue;
        }
        slot.state = state.row(i);
        slot.last_action = actions[i];
        if shared.cfg.bench_mode {
            continue;
        }
        let row = &head[i * num_actions..(i + 1) * num_actions];
        match shared.cfg.algo {
            Algo::Vtrace => {
                if let Some(traj) = slot.push_step_pg(
                    shape,
                    &e.obs,
                    prev_actions[i],
                    prev_rewards[i],
                    resets[i],
                    actions[i],
                    row.to_vec(),
                    log_probs[i],
                    version,
                    &pre.row(i),
                ) {
                    pg_emissions.push(traj);
                }
            }
            Algo::R2d2 => {
                if let Some(seq) = slot.push_step_q(
                    shape,
                    &e.obs,
                    prev_actions[i],
                    prev_rewards[i],
                    resets[i],
                    actions[i],
                    row.to_vec(),
                    version,
                    &pre.row(i),
                ) {
                    q_emissions.push(seq);
                }
            }
        }
    }

    // Clear in-flight marks before writing: the moment a response leaves,
    // the environment's next request may arrive on another thread.
    let respond_start = std::time::Instant::now();
    for e in &entries {
        shared.batcher.mark_responded(e.conn, e.env_id);
    }
    let mut frames_by_conn: HashMap<u64, Vec<u8>> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        let msg = WireMessage::ActionResponse {
            env_id: e.env_id,
            action: actions[i],
        };
        msg.encode_into(frames_by_conn.entry(e.conn).or_default());
    }
    for (conn_id, bytes) in frames_by_conn {
        if let Some(conn) = shared.conns.get(&conn_id) {
            let mut writer = conn.writer.lock().unwrap();
            let _ = writer.write_all(&bytes);
        }
    }
    m.add(&m.respond_ns, respond_start.elapsed().as_nanos() as u64);

    // Hand completed work to training last; a full queue blocks this worker
    // only after every response above went out.
    for traj in pg_emissions {
        if shared.cfg.snapshot_retention > 0 {
            let mut tap = shared.tap.lock().unwrap();
            if tap.len() < TAP_LIMIT {
                tap.push(traj.clone());
            }
        }
        let steps = traj.steps as u64;
        match shared.pg_queue.push(traj) {
            Ok(()) => m.add(&m.steps_emitted, steps),
            Err(_) => dropped += steps,
        }
    }
    for seq in q_emissions {
        let steps = seq.trained_steps() as u64;
        shared.replay.insert(seq);
        m.add(&m.steps_emitted, steps);
    }
    if dropped > 0 {
        m.add(&m.steps_dropped, dropped);
    }
}

fn new_slot(shared: &Shared, conn: u64, actor_id: u32, env_id: u32, rung: usize) -> EnvSlot {
    match shared.cfg.algo {
        Algo::Vtrace => EnvSlot::new_pg(conn, actor_id, env_id, &shared.shape),
        Algo::R2d2 => {
            let ladder = shared.cfg.epsilon_ladder;
            let epsilon = crate::qlearn::epsilon_for_actor(rung % ladder, ladder);
            EnvSlot::new_q(conn, actor_id, env_id, &shared.shape, epsilon)
        }
    }
}

/// Samples from the categorical distribution the logits define; returns the
/// action and its log probability, both computed in f64.
fn sample_categorical(logits: &[f32], rng: &mut ChaCha8Rng) -> (u32, f32) {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut action = exps.len() - 1;
    for (a, &e) in exps.iter().enumerate() {
        if u < e {
            action = a;
            break;
        }
        u -= e;
    }
    let log_prob = (logits[action] as f64 - max) - total.ln();
    (action as u32, log_prob as f32)
}

fn argmax(row: &[f32]) -> u32 {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = a;
        }
    }
    best as u32
}
