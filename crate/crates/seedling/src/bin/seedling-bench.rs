//! Benchmark CLI: live throughput and latency runs against a
//! benchmark-mode service, a batched-versus-unbatched forward-pass
//! comparison, and the cost model.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};
use seedling::bench::{
    compare_inference_modes, hourly_rate, hours_per_billion, parse_accel_spec,
    run_throughput_bench, ResourcePricing, ThroughputConfig,
};
use seedling::config::Algo;
use seedling::envs::EnvKind;
use seedling::{RunConfig, SeedError};

#[derive(Parser)]
#[command(name = "seedling-bench", about = "Throughput, latency, and cost tooling", version)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Drive a benchmark-mode service with actors; report fps and latency.
    Throughput {
        #[arg(long, default_value_t = 4)]
        actors: u32,
        #[arg(long, default_value_t = 16)]
        envs_per_actor: u32,
        #[arg(long, default_value = "catch")]
        env: String,
        #[arg(long, default_value_t = 30.0)]
        duration_secs: f64,
        #[arg(long, default_value_t = 10.0)]
        warmup_secs: f64,
        #[arg(long)]
        inference_batch: Option<usize>,
        #[arg(long)]
        batch_wait_us: Option<u64>,
        #[arg(long)]
        inference_workers: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Actor binary to spawn per actor; defaults to the sibling
        /// seedling-actor when present.
        #[arg(long)]
        actor_binary: Option<PathBuf>,
        /// Run actors as in-process threads even if a sibling binary exists.
        #[arg(long)]
        threads: bool,
    },
    /// Single-stream round-trip latency: one actor, one environment,
    /// batch size one.
    Latency {
        #[arg(long, default_value = "catch")]
        env: String,
        #[arg(long, default_value_t = 10.0)]
        duration_secs: f64,
        #[arg(long, default_value_t = 2.0)]
        warmup_secs: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Time batched against one-at-a-time forward passes on one network.
    Compare {
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 300)]
        rounds: usize,
        #[arg(long, default_value = "catch")]
        env: String,
        /// Multiplier on the default hidden and recurrent widths.
        #[arg(long, default_value_t = 1)]
        width: usize,
    },
    /// Dollars per billion frames at a measured throughput.
    Cost {
        #[arg(long)]
        fps: f64,
        #[arg(long, default_value_t = 0.0)]
        cpus: f64,
        /// Accelerators as kind:count (p100:2, tpu:8); repeatable.
        #[arg(long = "accel", value_name = "KIND:COUNT")]
        accels: Vec<String>,
        /// Flat `key = value` file overriding the default prices.
        #[arg(long)]
        pricing: Option<PathBuf>,
    },
}

fn sibling_actor_binary() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let path = exe.parent()?.join("seedling-actor");
    path.exists().then_some(path)
}

fn run(cmd: Cmd) -> Result<(), SeedError> {
    match cmd {
        Cmd::Throughput {
            actors,
            envs_per_actor,
            env,
            duration_secs,
            warmup_secs,
            inference_batch,
            batch_wait_us,
            inference_workers,
            seed,
            actor_binary,
            threads,
        } => {
            let mut cfg = ThroughputConfig::new(actors, envs_per_actor);
            cfg.learner.env = env.parse()?;
            cfg.learner.seed = seed;
            cfg.duration = Duration::from_secs_f64(duration_secs);
            cfg.warmup = Duration::from_secs_f64(warmup_secs);
            if let Some(v) = inference_batch {
                cfg.learner.inference_batch_size = v;
            }
            if let Some(v) = batch_wait_us {
                cfg.learner.batch_wait_us = v;
            }
            if let Some(v) = inference_workers {
                cfg.learner.inference_workers = v;
            }
            cfg.actor_binary = if threads {
                None
            } else {
                actor_binary.or_else(sibling_actor_binary)
            };
            let report = run_throughput_bench(&cfg)?;
            println!("{}", report.summary());
        }
        Cmd::Latency {
            env,
            duration_secs,
            warmup_secs,
            seed,
        } => {
            let mut cfg = ThroughputConfig::new(1, 1);
            cfg.learner.env = env.parse()?;
            cfg.learner.seed = seed;
            cfg.learner.inference_batch_size = 1;
            cfg.learner.inference_workers = 1;
            cfg.duration = Duration::from_secs_f64(duration_secs);
            cfg.warmup = Duration::from_secs_f64(warmup_secs);
            let report = run_throughput_bench(&cfg)?;
            println!("{}", report.summary());
        }
        Cmd::Compare {
            batch,
            rounds,
            env,
            width,
        } => {
            let env: EnvKind = env.parse()?;
            let mut rc = RunConfig::defaults(Algo::Vtrace, env);
            rc.hidden_units *= width.max(1);
            rc.lstm_units *= width.max(1);
            let spec = rc.network_spec(env.spec());
            let cmp = compare_inference_modes(&spec, batch, rounds)?;
            println!(
                "batch={} rounds={} batched_us_per_frame={:.3} \
                 unbatched_us_per_frame={:.3} speedup={:.2}",
                cmp.batch,
                cmp.rounds,
                cmp.batched_per_frame_us,
                cmp.unbatched_per_frame_us,
                cmp.speedup(),
            );
        }
        Cmd::Cost {
            fps,
            cpus,
            accels,
            pricing,
        } => {
            let mut prices = ResourcePricing::default();
            if let Some(path) = pricing {
                prices.apply_file(&path)?;
            }
            let accels = accels
                .iter()
                .map(|s| parse_accel_spec(s))
                .collect::<Result<Vec<_>, _>>()?;
            let hours = hours_per_billion(fps)?;
            let rate = hourly_rate(cpus, &accels, &prices)?;
            println!(
                "hours_per_billion={hours:.3} hourly_rate_usd={rate:.4} \
                 cost_per_billion_usd={:.2}",
                hours * rate
            );
        }
    }
    Ok(())
}

fn main() {
    let args = Args::parse();
    if let Err(err) = run(args.cmd) {
        eprintln!("seedling-bench: {err}");
        std::process::exit(1);
    }
}
