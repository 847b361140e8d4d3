//! Throwaway probe: controlled R2D2 training loop on Chain, then Q vs
//! oracle. Real components throughout: ChainEnv (episode cap included),
//! dueling network, prioritized replay, n-step double-Q rescaled targets,
//! periodic target sync, Adam with gradient clipping.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seedling::envs::{make_env, oracle_q, EnvKind, TabularMdp};
use seedling::nn::{
    backward_sequence, clip_global_norm, forward_sequence, forward_step, Adam, AdamConfig,
    HeadKind, NetworkSpec, SequenceInputs, StateBatch, Tensor, PREV_ACTION_NONE,
};
use seedling::qlearn::{q_loss, rescale_inverse, sequence_priority, QConfig, QLossInputs};
use seedling::replay::PrioritizedBuffer;

const CAP: usize = 10;
const OBS: usize = 5;
const ACTS: usize = 2;

#[derive(Clone)]
struct Episode {
    obs: Vec<f32>,
    actions: Vec<u32>,
    rewards: Vec<f32>,
    len: usize,
}

fn envf(key: &str, default: f64) -> f64 {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

#[test]
fn chain_probe() {
    let spec = NetworkSpec {
        input_dim: OBS,
        mlp_hidden: vec![64],
        lstm_units: 0,
        head: HeadKind::DuelingQ,
        num_actions: ACTS,
        dueling_hidden: 64,
    };
    let qcfg = QConfig {
        discount: 0.99,
        n_steps: 5,
        burn_in: 0,
        sequence_length: CAP,
        target_update_interval: envf("SYNC", 250.0) as u64,
        ..QConfig::default()
    };
    let epsilon = envf("EPS", 0.1);
    let episodes_budget = envf("EPISODES", 25_000.0) as usize;
    let batch = 8;

    let mut rng = ChaCha8Rng::seed_from_u64(envf("SEED", 5.0) as u64);
    let mut params = spec.init_params(9);
    let mut target = params.clone();
    let mut opt = Adam::new(
        AdamConfig {
            lr: envf("LR", 1e-3),
            eps: 1e-3,
            ..AdamConfig::default()
        },
        &params,
    );
    let buffer: PrioritizedBuffer<Episode> = PrioritizedBuffer::new(
        2000,
        100,
        qcfg.priority_exponent,
        qcfg.importance_exponent,
    );

    let mdp = TabularMdp::for_env(EnvKind::Chain).unwrap();
    let oracle = oracle_q(&mdp, qcfg.discount, 1e-10);
    let eval_worst = |params: &[Tensor], rescale_eps: f64| -> f64 {
        let mut probe_obs = vec![0.0f32; OBS * OBS];
        for s in 0..OBS {
            probe_obs[s * OBS + s] = 1.0;
        }
        let mut state = StateBatch::zeros(OBS, 0);
        let out = forward_step(
            &spec,
            params,
            &probe_obs,
            OBS,
            &[PREV_ACTION_NONE; OBS],
            &[0.0; OBS],
            &[true; OBS],
            &mut state,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for s in 0..OBS - 1 {
            for a in 0..ACTS {
                let q = rescale_inverse(out.head[s * ACTS + a] as f64, rescale_eps);
                worst = worst.max((q - oracle[s * ACTS + a]).abs());
            }
        }
        worst
    };

    let mut env = make_env(EnvKind::Chain, 1);
    let mut updates = 0u64;
    let mut crossed = None;
    let steps = CAP;
    for ep in 0..episodes_budget {
        if ep > 0 && ep % 20_000 == 0 {
            let w = eval_worst(&params, qcfg.rescale_eps);
            println!("ep={ep} updates={updates} worst={w:.4}");
            if w <= 0.04 {
                crossed = Some(ep);
                break;
            }
        }
        let mut obs = env.reset();
        let mut episode = Episode {
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            len: 0,
        };
        loop {
            let mut state = StateBatch::zeros(1, 0);
            let out = forward_step(
                &spec,
                &params,
                &obs,
                1,
                &[PREV_ACTION_NONE],
                &[0.0],
                &[true],
                &mut state,
            )
            .unwrap();
            let greedy = if out.head[1] > out.head[0] { 1 } else { 0 };
            let action = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..ACTS as u32)
            } else {
                greedy
            };
            episode.obs.extend_from_slice(&obs);
            episode.actions.push(action);
            let r = env.step(action).unwrap();
            episode.rewards.push(r.reward);
            episode.len += 1;
            obs = r.obs;
            if r.done {
                episode.obs.extend_from_slice(&obs);
                break;
            }
        }
        buffer.insert(episode);

        if buffer.is_ready() && ep % 10 == 0 {
            let sample = buffer.sample(batch, &mut rng).unwrap();
            let rows = (steps + 1) * batch;
            let mut obs_tm = vec![0.0f32; rows * OBS];
            let mut prev_a = vec![PREV_ACTION_NONE; rows];
            let mut prev_r = vec![0.0f32; rows];
            let mut resets = vec![false; rows];
            let mut actions = vec![0u32; steps * batch];
            let mut rewards = vec![0.0f32; steps * batch];
            let mut dones = vec![true; steps * batch];
            let mut valid = vec![0usize; batch];
            for (b, e) in sample.items.iter().enumerate() {
                valid[b] = e.len;
                resets[b] = true;
                for t in 0..=e.len {
                    let dst = (t * batch + b) * OBS;
                    obs_tm[dst..dst + OBS].copy_from_slice(&e.obs[t * OBS..(t + 1) * OBS]);
                    if t > 0 {
                        prev_a[t * batch + b] = e.actions[t - 1];
                        prev_r[t * batch + b] = e.rewards[t - 1];
                    }
                }
                for t in 0..e.len {
                    actions[t * batch + b] = e.actions[t];
                    rewards[t * batch + b] = e.rewards[t];
                    dones[t * batch + b] = t == e.len - 1;
                }
            }
            let inp = SequenceInputs {
                obs: &obs_tm,
                prev_actions: &prev_a,
                prev_rewards: &prev_r,
                resets: &resets,
                steps: steps + 1,
                batch,
            };
            let init = StateBatch::zeros(batch, 0);
            let (online_out, tape) = forward_sequence(&spec, &params, &inp, &init, true).unwrap();
            let (target_out, _) = forward_sequence(&spec, &target, &inp, &init, false).unwrap();
            let loss = q_loss(
                &QLossInputs {
                    q_online: &online_out.head,
                    q_target: &target_out.head,
                    actions: &actions,
                    rewards: &rewards,
                    dones: &dones,
                    valid_steps: &valid,
                    is_weights: &sample.weights,
                    steps,
                    batch,
                    num_actions: ACTS,
                },
                &qcfg,
            )
            .unwrap();
            let mut grads = backward_sequence(
                &spec,
                &params,
                tape.as_ref().unwrap(),
                &loss.d_q_online,
                &[],
            )
            .unwrap();
            clip_global_norm(&mut grads, 80.0);
            opt.step(&mut params, &grads).unwrap();
            updates += 1;
            if updates % qcfg.target_update_interval == 0 {
                target = params.clone();
            }
            let mut prios = Vec::with_capacity(batch);
            for b in 0..batch {
                let td: Vec<f64> = (0..valid[b]).map(|t| loss.td_abs[t * batch + b]).collect();
                prios.push(sequence_priority(&td, qcfg.priority_eta).unwrap());
            }
            buffer.update_priorities(&sample.ids, &prios).unwrap();
        }
    }
    let final_worst = eval_worst(&params, qcfg.rescale_eps);
    println!("crossed={crossed:?} updates={updates} worst={final_worst:.4}");
    assert!(final_worst <= 0.05, "worst Q error {final_worst} above 0.05");
}
