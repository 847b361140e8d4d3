//! Closed-loop throughput and latency measurement.
//!
//! The harness runs a real service in benchmark mode (inference without
//! training) and drives it with actors, either as in-process threads or as
//! spawned actor binaries. Throughput is counted on the learner as answered
//! step requests per second after a warmup; latency is measured on the
//! actor side as the request-to-response round trip. A microbenchmark
//! compares batched against one-at-a-time forward passes to quantify what
//! centralized inference buys.

use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use crate::actor::{run_actor, ActorConfig};
use crate::config::{Algo, RunConfig};
use crate::envs::EnvKind;
use crate::error::{Result, SeedError};
use crate::learner::{self, Metrics, BATCH_HIST_BUCKETS};
use crate::nn::{forward_step, NetworkSpec, StateBatch};

/// Nearest-rank percentile of an ascending-sorted sample list.
/// `q` is a fraction in `(0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample set");
    assert!(q > 0.0 && q <= 1.0, "quantile fraction out of range: {q}");
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One benchmark run's results. Latency quantiles are round trips seen by
/// the actors; the stage breakdown splits a request's life on the learner,
/// with `wire_ms` the residual (socket transfer plus actor-side work).
#[derive(Clone, Debug)]
pub struct LatencyReport {
    /// Step requests answered per second over the measurement window.
    pub fps: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    /// Latency samples behind the quantiles (warmup excluded).
    pub samples: usize,
    /// Mean entries per released inference batch.
    pub mean_batch: f64,
    /// Released-batch size histogram; bucket `k` counts sizes in
    /// `[2^k, 2^(k+1))`, last bucket unbounded.
    pub batch_hist: [u64; BATCH_HIST_BUCKETS],
    /// Per-frame time spent waiting for the batch to fill or time out.
    pub batch_wait_ms: f64,
    /// Per-frame amortized forward-pass time.
    pub forward_ms: f64,
    /// Per-frame amortized response serialization and write time.
    pub respond_ms: f64,
    /// Mean round trip minus the learner-side stages, floored at zero.
    pub wire_ms: f64,
}

impl LatencyReport {
    /// Builds a report from raw actor-side samples (seconds) plus
    /// learner-side window counters.
    pub fn from_samples(
        latencies_s: &[f32],
        fps: f64,
        mean_batch: f64,
        batch_hist: [u64; BATCH_HIST_BUCKETS],
        stages_ms: (f64, f64, f64),
    ) -> Result<Self> {
        if latencies_s.is_empty() {
            return Err(SeedError::config("no latency samples to summarize"));
        }
        let mut ms: Vec<f64> = latencies_s.iter().map(|&s| s as f64 * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
        let (batch_wait_ms, forward_ms, respond_ms) = stages_ms;
        let report = LatencyReport {
            fps,
            p50_ms: percentile(&ms, 0.50),
            p95_ms: percentile(&ms, 0.95),
            p99_ms: percentile(&ms, 0.99),
            mean_ms,
            samples: ms.len(),
            mean_batch,
            batch_hist,
            batch_wait_ms,
            forward_ms,
            respond_ms,
            wire_ms: (mean_ms - batch_wait_ms - forward_ms - respond_ms).max(0.0),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let quantiles_ordered = self.p50_ms <= self.p95_ms && self.p95_ms <= self.p99_ms;
        let finite = [
            self.fps,
            self.p50_ms,
            self.p95_ms,
            self.p99_ms,
            self.mean_ms,
            self.mean_batch,
            self.batch_wait_ms,
            self.forward_ms,
            self.respond_ms,
            self.wire_ms,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !quantiles_ordered || !finite {
            return Err(SeedError::config(format!(
                "malformed latency report: p50={} p95={} p99={} fps={}",
                self.p50_ms, self.p95_ms, self.p99_ms, self.fps
            )));
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let hist = self
            .batch_hist
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, &c)| format!("{}+:{c}", 1usize << k))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "fps={:.0}\nlatency_ms p50={:.3} p95={:.3} p99={:.3} mean={:.3} samples={}\n\
             stages_ms wire={:.3} batch_wait={:.3} forward={:.3} respond={:.3}\n\
             batch mean={:.1} hist=[{hist}]",
            self.fps,
            self.p50_ms,
            self.p95_ms,
            self.p99_ms,
            self.mean_ms,
            self.samples,
            self.wire_ms,
            self.batch_wait_ms,
            self.forward_ms,
            self.respond_ms,
            self.mean_batch,
        )
    }
}

/// Settings for one throughput run.
#[derive(Clone, Debug)]
pub struct ThroughputConfig {
    pub actors: u32,
    pub envs_per_actor: u32,
    /// Total run length, including warmup.
    pub duration: Duration,
    /// Span at the start excluded from throughput and latency numbers.
    pub warmup: Duration,
    /// Service settings; benchmark mode is forced on.
    pub learner: RunConfig,
    /// When set, each actor runs as this spawned binary instead of an
    /// in-process thread.
    pub actor_binary: Option<PathBuf>,
}

impl ThroughputConfig {
    pub fn new(actors: u32, envs_per_actor: u32) -> Self {
        let mut learner = RunConfig::defaults(Algo::Vtrace, EnvKind::Catch);
        learner.listen = "127.0.0.1:0".into();
        learner.bench_mode = true;
        learner.total_frames = 0;
        ThroughputConfig {
            actors,
            envs_per_actor,
            duration: Duration::from_secs(30),
            warmup: Duration::from_secs(10),
            learner,
            actor_binary: None,
        }
    }
}

struct Counters {
    frames: u64,
    batches: u64,
    entries: u64,
    wait_ns: u64,
    forward_ns: u64,
    respond_ns: u64,
    hist: [u64; BATCH_HIST_BUCKETS],
}

impl Counters {
    fn read(m: &Metrics) -> Self {
        Counters {
            frames: m.frames.load(Ordering::Relaxed),
            batches: m.batches.load(Ordering::Relaxed),
            entries: m.batch_entries.load(Ordering::Relaxed),
            wait_ns: m.wait_ns.load(Ordering::Relaxed),
            forward_ns: m.forward_ns.load(Ordering::Relaxed),
            respond_ns: m.respond_ns.load(Ordering::Relaxed),
            hist: m.batch_histogram(),
        }
    }
}

/// Runs a benchmark-mode service plus actors and reports throughput and
/// latency over the post-warmup window.
pub fn run_throughput_bench(cfg: &ThroughputConfig) -> Result<LatencyReport> {
    if cfg.actors == 0 || cfg.envs_per_actor == 0 {
        return Err(SeedError::config("need at least one actor and environment"));
    }
    if cfg.duration <= cfg.warmup {
        return Err(SeedError::config(format!(
            "duration {:?} must exceed warmup {:?}",
            cfg.duration, cfg.warmup
        )));
    }
    let mut learner_cfg = cfg.learner.clone();
    learner_cfg.bench_mode = true;
    let handle = learner::spawn(learner_cfg)?;
    let addr = handle.addr.to_string();
    let deadline = Instant::now() + cfg.duration;

    enum Running {
        Threads(Vec<std::thread::JoinHandle<Result<crate::actor::ActorStats>>>),
        Procs(Vec<std::process::Child>),
    }
    let running = match &cfg.actor_binary {
        None => {
            let mut joins = Vec::with_capacity(cfg.actors as usize);
            for i in 0..cfg.actors {
                let mut acfg =
                    ActorConfig::new(addr.clone(), i, cfg.envs_per_actor, cfg.learner.env);
                acfg.seed = cfg.learner.seed + 1 + u64::from(i);
                acfg.deadline = Some(deadline);
                acfg.latency_warmup = cfg.warmup;
                let join = std::thread::Builder::new()
                    .name(format!("bench-actor-{i}"))
                    .spawn(move || run_actor(&acfg))
                    .map_err(SeedError::Io)?;
                joins.push(join);
            }
            Running::Threads(joins)
        }
        Some(bin) => {
            let mut children = Vec::with_capacity(cfg.actors as usize);
            for i in 0..cfg.actors {
                let child = Command::new(bin)
                    .args([
                        "--learner",
                        &addr,
                        "--id",
                        &i.to_string(),
                        "--num-envs",
                        &cfg.envs_per_actor.to_string(),
                        "--env",
                        &cfg.learner.env.to_string(),
                        "--seed",
                        &(cfg.learner.seed + 1 + u64::from(i)).to_string(),
                        "--duration-secs",
                        &cfg.duration.as_secs_f64().to_string(),
                        "--warmup-secs",
                        &cfg.warmup.as_secs_f64().to_string(),
                    ])
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(SeedError::Io)?;
                children.push(child);
            }
            Running::Procs(children)
        }
    };

    std::thread::sleep(cfg.warmup);
    let before = Counters::read(&handle.shared.metrics);
    let t0 = Instant::now();
    std::thread::sleep(cfg.duration - cfg.warmup);
    let after = Counters::read(&handle.shared.metrics);
    let window = t0.elapsed().as_secs_f64();

    let fps = (after.frames - before.frames) as f64 / window;
    let d_entries = after.entries - before.entries;
    let d_batches = after.batches - before.batches;
    let mean_batch = if d_batches > 0 {
        d_entries as f64 / d_batches as f64
    } else {
        0.0
    };
    let stage = |a: u64, b: u64| {
        if d_entries > 0 {
            (a - b) as f64 / d_entries as f64 / 1e6
        } else {
            0.0
        }
    };
    let stages_ms = (
        stage(after.wait_ns, before.wait_ns),
        stage(after.forward_ns, before.forward_ns),
        stage(after.respond_ns, before.respond_ns),
    );
    let hist = std::array::from_fn(|k| after.hist[k] - before.hist[k]);

    let report = match running {
        Running::Threads(joins) => {
            let mut merged = Vec::new();
            for join in joins {
                let stats = join
                    .join()
                    .map_err(|_| SeedError::config("an actor thread panicked"))??;
                merged.extend_from_slice(stats.measured_latencies());
            }
            handle.stop();
            LatencyReport::from_samples(&merged, fps, mean_batch, hist, stages_ms)?
        }
        Running::Procs(children) => {
            let mut parsed = Vec::new();
            for child in children {
                let out = child.wait_with_output().map_err(SeedError::Io)?;
                if !out.status.success() {
                    return Err(SeedError::config(format!(
                        "actor process failed with {}",
                        out.status
                    )));
                }
                parsed.push(parse_actor_stats(&String::from_utf8_lossy(&out.stdout))?);
            }
            handle.stop();
            merge_actor_reports(&parsed, fps, mean_batch, hist, stages_ms)?
        }
    };
    Ok(report)
}

/// Per-actor numbers parsed from an actor binary's final stats line.
struct ParsedActor {
    samples: usize,
    p50_ms: f64,
    p95_ms: f64,
    p99_ms: f64,
    mean_ms: f64,
}

fn field(line: &str, key: &str) -> Result<f64> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SeedError::config(format!("actor output lacks {key}= in {line:?}")))
}

fn parse_actor_stats(stdout: &str) -> Result<ParsedActor> {
    let line = stdout
        .lines()
        .rev()
        .find(|l| l.starts_with("actor "))
        .ok_or_else(|| SeedError::config("actor printed no stats line"))?;
    Ok(ParsedActor {
        samples: field(line, "samples")? as usize,
        p50_ms: field(line, "p50_ms")?,
        p95_ms: field(line, "p95_ms")?,
        p99_ms: field(line, "p99_ms")?,
        mean_ms: field(line, "mean_ms")?,
    })
}

/// Combines per-actor quantiles by taking the worst across actors. If at
/// least a fraction `q` of every actor's samples sits at or below that
/// actor's q-quantile, the same holds for the union at the maximum of the
/// per-actor quantiles, so the merged values are valid upper bounds.
fn merge_actor_reports(
    actors: &[ParsedActor],
    fps: f64,
    mean_batch: f64,
    hist: [u64; BATCH_HIST_BUCKETS],
    stages_ms: (f64, f64, f64),
) -> Result<LatencyReport> {
    let with_samples: Vec<&ParsedActor> = actors.iter().filter(|a| a.samples > 0).collect();
    if with_samples.is_empty() {
        return Err(SeedError::config("no actor recorded latency samples"));
    }
    let max = |f: fn(&ParsedActor) -> f64| {
        with_samples.iter().map(|a| f(a)).fold(0.0, f64::max)
    };
    let samples: usize = with_samples.iter().map(|a| a.samples).sum();
    let mean_ms = with_samples
        .iter()
        .map(|a| a.mean_ms * a.samples as f64)
        .sum::<f64>()
        / samples as f64;
    let (batch_wait_ms, forward_ms, respond_ms) = stages_ms;
    let report = LatencyReport {
        fps,
        p50_ms: max(|a| a.p50_ms),
        p95_ms: max(|a| a.p95_ms),
        p99_ms: max(|a| a.p99_ms),
        mean_ms,
        samples,
        mean_batch,
        batch_hist: hist,
        batch_wait_ms,
        forward_ms,
        respond_ms,
        wire_ms: (mean_ms - batch_wait_ms - forward_ms - respond_ms).max(0.0),
    };
    report.validate()?;
    Ok(report)
}

/// Per-frame forward cost under batched versus one-at-a-time inference for
/// the same network and the same number of streams.
#[derive(Clone, Copy, Debug)]
pub struct InferenceComparison {
    pub batch: usize,
    pub rounds: usize,
    pub batched_per_frame_us: f64,
    pub unbatched_per_frame_us: f64,
}

impl InferenceComparison {
    pub fn speedup(&self) -> f64 {
        self.unbatched_per_frame_us / self.batched_per_frame_us
    }

    pub fn batched_wins(&self) -> bool {
        self.batched_per_frame_us < self.unbatched_per_frame_us
    }
}

/// Times `rounds` forward passes over `batch` independent streams, once as
/// a single batched call per round and once as `batch` single-stream calls,
/// and reports the amortized per-frame cost of each mode.
pub fn compare_inference_modes(
    spec: &NetworkSpec,
    batch: usize,
    rounds: usize,
) -> Result<InferenceComparison> {
    spec.validate()?;
    if batch == 0 || rounds == 0 {
        return Err(SeedError::config("batch and rounds must be at least 1"));
    }
    let params = spec.init_params(0xbec4);
    let dim = spec.input_dim;
    let obs: Vec<f32> = (0..batch * dim).map(|i| (i as f32 * 0.37).sin()).collect();
    let prev_actions = vec![0u32; batch];
    let prev_rewards = vec![0.0f32; batch];
    let resets = vec![false; batch];

    let run_batched = |iters: usize| -> Result<Duration> {
        let mut state = StateBatch::zeros(batch, spec.lstm_units);
        let start = Instant::now();
        for _ in 0..iters {
            forward_step(
                spec,
                &params,
                &obs,
                batch,
                &prev_actions,
                &prev_rewards,
                &resets,
                &mut state,
            )?;
        }
        Ok(start.elapsed())
    };
    let run_unbatched = |iters: usize| -> Result<Duration> {
        let mut states: Vec<StateBatch> =
            (0..batch).map(|_| StateBatch::zeros(1, spec.lstm_units)).collect();
        let start = Instant::now();
        for _ in 0..iters {
            for (b, state) in states.iter_mut().enumerate() {
                forward_step(
                    spec,
                    &params,
                    &obs[b * dim..(b + 1) * dim],
                    1,
                    &prev_actions[b..b + 1],
                    &prev_rewards[b..b + 1],
                    &resets[b..b + 1],
                    state,
                )?;
            }
        }
        Ok(start.elapsed())
    };

    let warmup_iters = (rounds / 10).max(3);
    run_batched(warmup_iters)?;
    run_unbatched(warmup_iters)?;
    let batched = run_batched(rounds)?;
    let unbatched = run_unbatched(rounds)?;
    let frames = (rounds * batch) as f64;
    Ok(InferenceComparison {
        batch,
        rounds,
        batched_per_frame_us: batched.as_secs_f64() * 1e6 / frames,
        unbatched_per_frame_us: unbatched.as_secs_f64() * 1e6 / frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_is_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.50), 50.0);
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[7.0], 0.5), 7.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.01), 1.0);
    }

    #[test]
    fn report_from_samples_orders_quantiles() {
        let samples: Vec<f32> = (0..1000).map(|i| 1e-3 + i as f32 * 1e-6).collect();
        let hist = [0u64; BATCH_HIST_BUCKETS];
        let r =
            LatencyReport::from_samples(&samples, 50_000.0, 16.0, hist, (0.2, 0.1, 0.05)).unwrap();
        assert!(r.p50_ms <= r.p95_ms && r.p95_ms <= r.p99_ms);
        assert!(r.p50_ms >= 1.0 && r.p99_ms < 2.1);
        assert_eq!(r.samples, 1000);
        let expected_wire = r.mean_ms - 0.35;
        assert!((r.wire_ms - expected_wire).abs() < 1e-9);
        assert!(LatencyReport::from_samples(&[], 1.0, 1.0, hist, (0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn report_validation_rejects_disorder() {
        let hist = [0u64; BATCH_HIST_BUCKETS];
        let mut r = LatencyReport::from_samples(&[0.001, 0.002], 10.0, 1.0, hist, (0.0, 0.0, 0.0))
            .unwrap();
        r.p95_ms = r.p50_ms - 0.5;
        assert!(r.validate().is_err());
    }

    #[test]
    fn merged_process_quantiles_are_upper_bounds() {
        let a = ParsedActor {
            samples: 100,
            p50_ms: 1.0,
            p95_ms: 2.0,
            p99_ms: 3.0,
            mean_ms: 1.2,
        };
        let b = ParsedActor {
            samples: 300,
            p50_ms: 1.5,
            p95_ms: 1.8,
            p99_ms: 4.0,
            mean_ms: 1.6,
        };
        let hist = [0u64; BATCH_HIST_BUCKETS];
        let r = merge_actor_reports(&[a, b], 1000.0, 8.0, hist, (0.1, 0.1, 0.1)).unwrap();
        assert_eq!(r.p50_ms, 1.5);
        assert_eq!(r.p95_ms, 2.0);
        assert_eq!(r.p99_ms, 4.0);
        assert_eq!(r.samples, 400);
        assert!((r.mean_ms - 1.5).abs() < 1e-12);
    }

    #[test]
    fn actor_stats_lines_parse() {
        let out = "listen noise\nactor id=3 frames=500 episodes=2 mean_return=0.5 \
                   reconnects=0 samples=480 p50_ms=1.25 p95_ms=2.5 p99_ms=3.75 mean_ms=1.5\n";
        let p = parse_actor_stats(out).unwrap();
        assert_eq!(p.samples, 480);
        assert_eq!(p.p50_ms, 1.25);
        assert_eq!(p.p99_ms, 3.75);
        assert!(parse_actor_stats("nothing here\n").is_err());
        assert!(parse_actor_stats("actor id=0 frames=1\n").is_err());
    }

    #[test]
    fn inference_comparison_times_both_modes() {
        let spec = NetworkSpec {
            input_dim: 8,
            mlp_hidden: vec![16],
            lstm_units: 8,
            head: crate::nn::HeadKind::PolicyValue,
            num_actions: 3,
            dueling_hidden: 16,
        };
        let cmp = compare_inference_modes(&spec, 4, 20).unwrap();
        assert!(cmp.batched_per_frame_us > 0.0);
        assert!(cmp.unbatched_per_frame_us > 0.0);
        assert!(cmp.speedup() > 0.0);
        assert!(compare_inference_modes(&spec, 0, 10).is_err());
    }

    #[test]
    fn throughput_bench_rejects_bad_windows() {
        let mut cfg = ThroughputConfig::new(1, 1);
        cfg.duration = Duration::from_secs(1);
        cfg.warmup = Duration::from_secs(2);
        assert!(run_throughput_bench(&cfg).is_err());
        let mut cfg = ThroughputConfig::new(0, 4);
        cfg.duration = Duration::from_secs(2);
        assert!(run_throughput_bench(&cfg).is_err());
    }

    #[test]
    fn throughput_bench_measures_a_tiny_run() {
        let mut cfg = ThroughputConfig::new(1, 4);
        cfg.duration = Duration::from_millis(900);
        cfg.warmup = Duration::from_millis(300);
        cfg.learner.inference_batch_size = 4;
        cfg.learner.batch_wait_us = 300;
        cfg.learner.inference_workers = 1;
        let report = run_throughput_bench(&cfg).unwrap();
        assert!(report.fps > 0.0, "no requests answered: {}", report.summary());
        assert!(report.samples > 0);
        assert!(report.p50_ms > 0.0);
        report.validate().unwrap();
    }
}
