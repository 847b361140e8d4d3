//! Service entry point: runs the learner until its frame budget is spent or
//! the process is interrupted, then checkpoints if configured.
//!
//! Settings layer in order: built-in defaults for the chosen algorithm and
//! environment, then the config file, then individual flags, then `--set`
//! overrides. The algorithm and environment are resolved first because the
//! defaults depend on them.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::Parser;
use seedling::config::Algo;
use seedling::envs::EnvKind;
use seedling::{RunConfig, SeedError};

#[derive(Parser)]
#[command(name = "seedling-learner", about = "Central learner service", version)]
struct Args {
    /// Training algorithm: vtrace or r2d2.
    #[arg(long)]
    algo: Option<String>,
    /// Environment family: catch, chain, or grid.
    #[arg(long)]
    env: Option<String>,
    /// Listen address; port 0 picks a free port, printed as `listen addr=`.
    #[arg(long)]
    listen: Option<String>,
    /// Flat `key = value` config file applied before the other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many environment frames; 0 runs until interrupted.
    #[arg(long)]
    frames: Option<u64>,
    /// Trajectory length per policy-gradient unroll.
    #[arg(long)]
    unroll: Option<usize>,
    /// Trajectories or sequences per training update.
    #[arg(long)]
    batch: Option<usize>,
    /// Most requests answered by one batched forward pass.
    #[arg(long)]
    inference_batch: Option<usize>,
    /// Checkpoint restored at startup when present, written at shutdown.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Append one metrics line per second to this file.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Inference-only benchmark mode: no training threads run.
    #[arg(long)]
    bench: bool,
    /// Any config key as key=value, applied last; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn build_config(args: &Args) -> Result<RunConfig, SeedError> {
    let mut file_algo = None;
    let mut file_env = None;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some((key, value)) = line.split_once('=') {
                match key.trim() {
                    "algo" => file_algo = Some(value.trim().to_string()),
                    "env" => file_env = Some(value.trim().to_string()),
                    _ => {}
                }
            }
        }
    }
    let algo: Algo = args
        .algo
        .clone()
        .or(file_algo)
        .unwrap_or_else(|| "vtrace".into())
        .parse()?;
    let env: EnvKind = args
        .env
        .clone()
        .or(file_env)
        .unwrap_or_else(|| "catch".into())
        .parse()?;
    let mut cfg = RunConfig::defaults(algo, env);
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    if let Some(v) = &args.listen {
        cfg.listen = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.frames {
        cfg.total_frames = v;
    }
    if let Some(v) = args.unroll {
        cfg.unroll_length = v;
    }
    if let Some(v) = args.batch {
        cfg.training_batch_size = v;
    }
    if let Some(v) = args.inference_batch {
        cfg.inference_batch_size = v;
    }
    if let Some(v) = &args.checkpoint {
        cfg.checkpoint = Some(v.clone());
    }
    if let Some(v) = &args.metrics {
        cfg.metrics = Some(v.clone());
    }
    if args.bench {
        cfg.bench_mode = true;
    }
    for pair in &args.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            SeedError::config(format!("--set wants key=value, got {pair:?}"))
        })?;
        cfg.apply_kv(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn main() {
    let args = Args::parse();
    unsafe {
        let handler = on_signal as extern "C" fn(libc::c_int) as *const () as libc::sighandler_t;
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
    let outcome = build_config(&args).and_then(|cfg| seedling::learner::run(cfg, &INTERRUPTED));
    if let Err(err) = outcome {
        eprintln!("seedling-learner: {err}");
        std::process::exit(1);
    }
}
