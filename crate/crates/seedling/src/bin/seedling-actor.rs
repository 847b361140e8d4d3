//! Actor entry point: hosts environments against a learner and prints one
//! machine-readable stats line at exit, including latency quantiles over
//! the post-warmup samples.

use std::time::{Duration, Instant};

use clap::Parser;
use seedling::actor::{run_actor, ActorConfig};
use seedling::bench::percentile;
use seedling::envs::EnvKind;
use seedling::SeedError;

#[derive(Parser)]
#[command(name = "seedling-actor", about = "Thin environment-hosting client", version)]
struct Args {
    /// Learner address, host:port.
    #[arg(long)]
    learner: String,
    /// Actor id; each concurrent actor needs its own.
    #[arg(long, default_value_t = 0)]
    id: u32,
    /// Environments this actor hosts over one connection.
    #[arg(long, default_value_t = 1)]
    num_envs: u32,
    /// Environment family: catch, chain, or grid; must match the learner.
    #[arg(long, default_value = "catch")]
    env: String,
    /// Stop after sending this many step requests; 0 means run until the
    /// learner goes away.
    #[arg(long, default_value_t = 0)]
    frames: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Stop sending after this many seconds, draining in-flight requests.
    #[arg(long)]
    duration_secs: Option<f64>,
    /// Exclude this first span from the reported latency quantiles.
    #[arg(long, default_value_t = 0.0)]
    warmup_secs: f64,
}

fn run(args: &Args) -> Result<(), SeedError> {
    let env: EnvKind = args.env.parse()?;
    let mut cfg = ActorConfig::new(args.learner.clone(), args.id, args.num_envs, env);
    cfg.seed = args.seed;
    cfg.frame_budget = args.frames;
    if let Some(secs) = args.duration_secs {
        cfg.deadline = Some(Instant::now() + Duration::from_secs_f64(secs));
    }
    if args.warmup_secs > 0.0 {
        cfg.latency_warmup = Duration::from_secs_f64(args.warmup_secs);
    }
    let stats = run_actor(&cfg)?;

    let mut ms: Vec<f64> = stats
        .measured_latencies()
        .iter()
        .map(|&s| f64::from(s) * 1e3)
        .collect();
    ms.sort_by(f64::total_cmp);
    let (p50, p95, p99, mean) = if ms.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (
            percentile(&ms, 0.50),
            percentile(&ms, 0.95),
            percentile(&ms, 0.99),
            ms.iter().sum::<f64>() / ms.len() as f64,
        )
    };
    println!(
        "actor id={} frames={} episodes={} mean_return={} reconnects={} samples={} \
         p50_ms={p50:.4} p95_ms={p95:.4} p99_ms={p99:.4} mean_ms={mean:.4}",
        args.id,
        stats.frames,
        stats.episodes,
        stats
            .mean_return()
            .map_or_else(|| "none".to_string(), |r| format!("{r:.4}")),
        stats.reconnects,
        ms.len(),
    );
    Ok(())
}

fn main() {
    let args = Args::parse();
    if let Err(err) = run(&args) {
        eprintln!("seedling-actor: {err}");
        std::process::exit(1);
    }
}
