//! The actor client: a thin environment host with no model of its own.
//!
//! One connection carries every environment the actor hosts. Each
//! environment keeps exactly one request in flight, so the actor pipelines
//! across environments while each individual environment stays in lock-step
//! with the learner. The first request of every episode carries the reset
//! observation together with the previous episode's terminal reward, so no
//! reward is ever lost across the boundary.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use crate::envs::{make_env, EnvKind, Environment};
use crate::error::{Result, SeedError};
use crate::wire::{FrameDecoder, WireMessage};

const LATENCY_SAMPLE_CAP: usize = 4_000_000;

#[derive(Clone, Debug)]
pub struct ActorConfig {
    pub learner_addr: String,
    pub actor_id: u32,
    pub num_envs: u32,
    pub env: EnvKind,
    pub seed: u64,
    /// Stop after sending this many step requests; 0 means run until the
    /// connection dies for good.
    pub frame_budget: u64,
    /// Stop sending once this instant passes, draining in-flight requests.
    pub deadline: Option<Instant>,
    /// Latency samples recorded within this span of the start are counted
    /// as warmup so benchmarks can exclude them.
    pub latency_warmup: Duration,
    /// First reconnect delay; doubles per consecutive failure.
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
    /// Consecutive connection failures before giving up.
    pub max_failures: u32,
}

impl ActorConfig {
    pub fn new(learner_addr: impl Into<String>, actor_id: u32, num_envs: u32, env: EnvKind) -> Self {
        ActorConfig {
            learner_addr: learner_addr.into(),
            actor_id,
            num_envs,
            env,
            seed: 1,
            frame_budget: 0,
            deadline: None,
            latency_warmup: Duration::ZERO,
            backoff_base: Duration::from_millis(100),
            backoff_cap: Duration::from_secs(5),
            max_failures: 20,
        }
    }
}

/// What one actor run produced, for reporting and benchmarking.
#[derive(Debug, Default)]
pub struct ActorStats {
    /// Step requests sent.
    pub frames: u64,
    pub episodes: u64,
    pub return_sum: f64,
    /// Request-to-response round trip per step, in seconds.
    pub latencies: Vec<f32>,
    /// How many leading entries of `latencies` fell inside the warmup span.
    pub warmup_samples: usize,
    pub reconnects: u64,
}

impl ActorStats {
    pub fn mean_return(&self) -> Option<f64> {
        (self.episodes > 0).then(|| self.return_sum / self.episodes as f64)
    }

    /// Latency samples with the warmup prefix removed.
    pub fn measured_latencies(&self) -> &[f32] {
        &self.latencies[self.warmup_samples.min(self.latencies.len())..]
    }
}

struct EnvHost {
    env: Box<dyn Environment>,
    /// Reward and done flag to attach to the next request.
    pending_reward: f32,
    pending_done: bool,
    pending_obs: Vec<f32>,
    episode_return: f64,
    sent_at: Instant,
}

/// Runs one actor until its frame budget is spent or the learner becomes
/// unreachable. Reconnects with exponential backoff, restarting every
/// episode, since the learner dropped this connection's state.
pub fn run_actor(cfg: &ActorConfig) -> Result<ActorStats> {
    if cfg.num_envs == 0 {
        return Err(SeedError::config("an actor needs at least one environment"));
    }
    let mut hosts: Vec<EnvHost> = (0..cfg.num_envs)
        .map(|i| {
            let mut env = make_env(cfg.env, cfg.seed ^ (1000 + i as u64));
            let obs = env.reset();
            EnvHost {
                env,
                pending_reward: 0.0,
                pending_done: true,
                pending_obs: obs,
                episode_return: 0.0,
                sent_at: Instant::now(),
            }
        })
        .collect();
    let mut stats = ActorStats::default();
    let mut failures = 0u32;
    let warmup_until =
        (cfg.latency_warmup > Duration::ZERO).then(|| Instant::now() + cfg.latency_warmup);

    'sessions: loop {
        if budget_spent(cfg, &stats) {
            return Ok(stats);
        }
        let mut stream = match connect(cfg, &mut failures)? {
            Some(s) => s,
            None => return Ok(stats),
        };
        if let Err(err) = hello(&mut stream, cfg) {
            drop(stream);
            if reconnectable(&err) {
                stats.reconnects += 1;
                continue 'sessions;
            }
            return Err(err);
        }

        // Every episode restarts on a fresh connection.
        for host in &mut hosts {
            host.pending_obs = host.env.reset();
            host.pending_reward = 0.0;
            host.pending_done = true;
            host.episode_return = 0.0;
        }
        let mut session = Session {
            stream,
            decoder: FrameDecoder::new(),
            buf: vec![0u8; 64 * 1024],
        };
        let mut out = Vec::with_capacity(32 * 1024);
        let mut in_flight = 0u32;
        for env_id in 0..cfg.num_envs {
            if budget_spent(cfg, &stats) {
                break;
            }
            queue_step(&mut out, &mut hosts, env_id, &mut stats);
            in_flight += 1;
        }
        if in_flight == 0 {
            return Ok(stats);
        }
        if let Err(err) = session.flush(&mut out) {
            if reconnectable(&err) {
                stats.reconnects += 1;
                continue 'sessions;
            }
            return Err(err);
        }
        failures = 0;

        loop {
            // One blocking read, then drain every response it delivered;
            // the matching step requests go out in a single write.
            let mut msg = match session.next_message() {
                Ok(m) => Some(m),
                Err(err) => {
                    if reconnectable(&err) && !budget_spent(cfg, &stats) {
                        stats.reconnects += 1;
                        continue 'sessions;
                    }
                    return if budget_spent(cfg, &stats) {
                        Ok(stats)
                    } else {
                        Err(err)
                    };
                }
            };
            while let Some(m) = msg {
                let (env_id, action) = match m {
                    WireMessage::ActionResponse { env_id, action } => (env_id, action),
                    WireMessage::Error { code, message } => {
                        return Err(SeedError::protocol(format!(
                            "learner rejected the session (code {code}): {message}"
                        )));
                    }
                    other => {
                        return Err(SeedError::protocol(format!(
                            "unexpected message from the learner: {other:?}"
                        )));
                    }
                };
                if env_id >= cfg.num_envs {
                    return Err(SeedError::protocol(format!(
                        "response for unknown environment {env_id}"
                    )));
                }
                in_flight -= 1;
                advance_env(&mut hosts[env_id as usize], action, &mut stats, warmup_until)?;
                if !budget_spent(cfg, &stats) {
                    queue_step(&mut out, &mut hosts, env_id, &mut stats);
                    in_flight += 1;
                }
                msg = session.decoder.next()?;
            }
            if let Err(err) = session.flush(&mut out) {
                if reconnectable(&err) {
                    stats.reconnects += 1;
                    continue 'sessions;
                }
                return Err(err);
            }
            if budget_spent(cfg, &stats) && in_flight == 0 {
                return Ok(stats);
            }
        }
    }
}

struct Session {
    stream: TcpStream,
    decoder: FrameDecoder,
    buf: Vec<u8>,
}

impl Session {
    fn next_message(&mut self) -> Result<WireMessage> {
        loop {
            if let Some(msg) = self.decoder.next()? {
                return Ok(msg);
            }
            let n = self.stream.read(&mut self.buf)?;
            if n == 0 {
                return Err(SeedError::Io(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "learner closed the connection",
                )));
            }
            self.decoder.push(&self.buf[..n]);
        }
    }

    fn flush(&mut self, out: &mut Vec<u8>) -> Result<()> {
        if out.is_empty() {
            return Ok(());
        }
        let result = self.stream.write_all(out).map_err(SeedError::Io);
        out.clear();
        result
    }
}

/// Applies the learner's action: steps the environment, folds the result
/// into the next pending request, and resets at episode end.
fn advance_env(
    host: &mut EnvHost,
    action: u32,
    stats: &mut ActorStats,
    warmup_until: Option<Instant>,
) -> Result<()> {
    let rtt = host.sent_at.elapsed().as_secs_f32();
    if stats.latencies.len() < LATENCY_SAMPLE_CAP {
        stats.latencies.push(rtt);
        if warmup_until.is_some_and(|t| Instant::now() < t) {
            stats.warmup_samples = stats.latencies.len();
        }
    }
    let result = host.env.step(action)?;
    host.episode_return += result.reward as f64;
    host.pending_reward = result.reward;
    host.pending_done = result.done;
    if result.done {
        stats.episodes += 1;
        stats.return_sum += host.episode_return;
        host.episode_return = 0.0;
        host.pending_obs = host.env.reset();
    } else {
        host.pending_obs = result.obs;
    }
    Ok(())
}

fn queue_step(out: &mut Vec<u8>, hosts: &mut [EnvHost], env_id: u32, stats: &mut ActorStats) {
    let host = &mut hosts[env_id as usize];
    let msg = WireMessage::StepRequest {
        env_id,
        reward: host.pending_reward,
        done: host.pending_done,
        obs: host.pending_obs.clone(),
    };
    host.sent_at = Instant::now();
    msg.encode_into(out);
    stats.frames += 1;
}

fn hello(stream: &mut TcpStream, cfg: &ActorConfig) -> Result<()> {
    stream.set_nodelay(true)?;
    let msg = WireMessage::Hello {
        actor_id: cfg.actor_id,
        num_envs: cfg.num_envs,
    };
    stream.write_all(&msg.encode()).map_err(SeedError::Io)
}

/// Dials with exponential backoff. Returns `None` once the learner looks
/// permanently gone or the deadline has passed.
fn connect(cfg: &ActorConfig, failures: &mut u32) -> Result<Option<TcpStream>> {
    loop {
        if cfg.deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(None);
        }
        match TcpStream::connect(&cfg.learner_addr) {
            Ok(s) => return Ok(Some(s)),
            Err(_) if *failures < cfg.max_failures => {
                let backoff = cfg.backoff_base * 2u32.pow((*failures).min(6));
                std::thread::sleep(backoff.min(cfg.backoff_cap));
                *failures += 1;
            }
            Err(e) => {
                eprintln!("giving up on {}: {e}", cfg.learner_addr);
                return Ok(None);
            }
        }
    }
}

fn budget_spent(cfg: &ActorConfig, stats: &ActorStats) -> bool {
    (cfg.frame_budget > 0 && stats.frames >= cfg.frame_budget)
        || cfg.deadline.is_some_and(|d| Instant::now() >= d)
}

/// Socket-level failures trigger a reconnect; anything else is fatal.
fn reconnectable(err: &SeedError) -> bool {
    matches!(err, SeedError::Io(_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    /// A miniature learner speaking just enough protocol to exercise the
    /// actor loop: always answers action 0 and counts what it saw.
    fn fake_learner(
        listener: TcpListener,
        obs_dim: usize,
    ) -> std::thread::JoinHandle<(u64, u64, bool)> {
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().expect("actor connects");
            let mut decoder = FrameDecoder::new();
            let mut buf = [0u8; 16 * 1024];
            let mut steps = 0u64;
            let mut dones = 0u64;
            let mut hello_first = false;
            let mut saw_any = false;
            loop {
                let n = match stream.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                decoder.push(&buf[..n]);
                while let Some(msg) = decoder.next().expect("well-formed frames") {
                    match msg {
                        WireMessage::Hello { num_envs, .. } => {
                            hello_first = !saw_any && num_envs > 0;
                            saw_any = true;
                        }
                        WireMessage::StepRequest {
                            env_id, done, obs, ..
                        } => {
                            saw_any = true;
                            assert_eq!(obs.len(), obs_dim);
                            steps += 1;
                            if done {
                                dones += 1;
                            }
                            let reply = WireMessage::ActionResponse { env_id, action: 0 };
                            if stream.write_all(&reply.encode()).is_err() {
                                return (steps, dones, hello_first);
                            }
                        }
                        other => panic!("actor sent {other:?}"),
                    }
                }
            }
            (steps, dones, hello_first)
        })
    }

    #[test]
    fn actor_runs_episodes_against_a_scripted_learner() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let spec = EnvKind::Chain.spec();
        let learner = fake_learner(listener, spec.obs_dim);
        let mut cfg = ActorConfig::new(addr, 3, 2, EnvKind::Chain);
        cfg.seed = 9;
        cfg.frame_budget = 100;
        let stats = run_actor(&cfg).expect("actor run succeeds");
        let (steps, dones, hello_first) = learner.join().unwrap();
        assert!(hello_first, "hello must precede step requests");
        assert_eq!(stats.frames, 100);
        assert_eq!(steps, 100);
        // Action 0 walks left forever, so every episode hits the step cap;
        // each episode boundary sends done=1, as does each env's first step.
        assert!(dones >= 2, "initial requests carry the reset flag");
        assert!(stats.episodes > 0, "step-capped episodes complete");
        assert_eq!(stats.latencies.len() as u64, stats.frames);
        assert!(stats.mean_return().unwrap() <= 0.0 + 1e-9);
    }

    #[test]
    fn actor_gives_up_when_learner_is_unreachable() {
        // Nothing listens on this port (bound then dropped).
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let mut cfg = ActorConfig::new(addr, 0, 1, EnvKind::Chain);
        cfg.frame_budget = 10;
        cfg.backoff_base = Duration::from_millis(1);
        cfg.backoff_cap = Duration::from_millis(4);
        cfg.max_failures = 3;
        let stats = run_actor(&cfg).expect("gives up cleanly");
        assert_eq!(stats.frames, 0);
    }
}
