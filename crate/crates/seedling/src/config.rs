//! Run configuration shared by the learner binary and the test harnesses.
//!
//! Every hyperparameter can come from a flat `key = value` config file, and
//! command-line flags override file values. Defaults depend on the
//! algorithm: the two training modes ship with their published settings
//! (discount, optimizer epsilon, gradient clip, replay shape), scaled down
//! where a desk-sized run needs it (replay capacity, batch sizes).

use std::path::{Path, PathBuf};

use crate::envs::{EnvKind, EnvSpec};
use crate::error::{Result, SeedError};
use crate::nn::{AdamConfig, HeadKind, NetworkSpec, DEFAULT_HIDDEN};
use crate::qlearn::QConfig;
use crate::vtrace::VTraceConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Vtrace,
    R2d2,
}

impl std::str::FromStr for Algo {
    type Err = SeedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vtrace" => Ok(Algo::Vtrace),
            "r2d2" => Ok(Algo::R2d2),
            other => Err(SeedError::config(format!(
                "unknown algorithm {other:?}, expected vtrace or r2d2"
            ))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Vtrace => "vtrace",
            Algo::R2d2 => "r2d2",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub algo: Algo,
    pub env: EnvKind,
    pub listen: String,
    pub seed: u64,
    /// Stop after this many environment frames; 0 means run until signaled.
    pub total_frames: u64,

    // Network shape.
    pub hidden_units: usize,
    /// 0 selects a feed-forward network.
    pub lstm_units: usize,

    // Optimization.
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub gradient_norm_clipping: f64,
    pub training_batch_size: usize,

    // Policy-gradient mode.
    pub discount_factor: f64,
    pub entropy_coefficient: f64,
    pub value_function_coefficient: f64,
    pub vtrace_lambda: f64,
    pub unroll_length: usize,

    // Q-mode.
    pub sequence_length: usize,
    pub burn_in: usize,
    pub n_steps: usize,
    pub replay_buffer_size: usize,
    pub min_replay_buffer_size: usize,
    pub priority_exponent: f64,
    pub importance_sampling_exponent: f64,
    pub priority_eta: f64,
    pub target_network_update_interval: u64,
    pub replay_ratio: f64,
    pub eval_epsilon: f64,
    pub value_rescaling_epsilon: f64,
    /// Size of the per-environment exploration-rate ladder.
    pub epsilon_ladder: usize,

    // Service shape.
    pub inference_batch_size: usize,
    pub batch_wait_us: u64,
    pub inference_workers: usize,
    pub prefetch_workers: usize,
    /// Keep this many past parameter snapshots addressable by version, so
    /// recorded behavior outputs can be replayed exactly. 0 retains none.
    pub snapshot_retention: usize,
    /// Answer inference without training, for throughput measurement.
    pub bench_mode: bool,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(algo: Algo, env: EnvKind) -> Self {
        let common = RunConfig {
            algo,
            env,
            listen: "127.0.0.1:7878".to_string(),
            seed: 1,
            total_frames: 0,
            hidden_units: DEFAULT_HIDDEN,
            lstm_units: DEFAULT_HIDDEN,
            learning_rate: 1e-3,
            adam_epsilon: 1e-8,
            gradient_norm_clipping: 40.0,
            training_batch_size: 8,
            discount_factor: 0.99,
            entropy_coefficient: 0.01,
            value_function_coefficient: 0.5,
            vtrace_lambda: 1.0,
            unroll_length: 32,
            sequence_length: 120,
            burn_in: 40,
            n_steps: 5,
            replay_buffer_size: 2000,
            min_replay_buffer_size: 100,
            priority_exponent: 0.9,
            importance_sampling_exponent: 0.6,
            priority_eta: 0.9,
            target_network_update_interval: 2500,
            replay_ratio: 0.75,
            eval_epsilon: 1e-3,
            value_rescaling_epsilon: 1e-3,
            epsilon_ladder: 16,
            inference_batch_size: 32,
            batch_wait_us: 1000,
            inference_workers: 2,
            prefetch_workers: 2,
            snapshot_retention: 0,
            bench_mode: false,
            checkpoint: None,
            metrics: None,
        };
        match algo {
            Algo::Vtrace => common,
            Algo::R2d2 => RunConfig {
                learning_rate: 1e-4,
                adam_epsilon: 1e-3,
                gradient_norm_clipping: 80.0,
                discount_factor: 0.997,
                ..common
            },
        }
    }

    /// Applies one `key = value` pair. Keys match the struct field names.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                SeedError::config(format!("cannot parse {value:?} for key {key:?}"))
            })
        }
        match key {
            "algo" => self.algo = value.parse()?,
            "env" => self.env = value.parse()?,
            "listen" => self.listen = value.to_string(),
            "seed" => self.seed = parse(key, value)?,
            "total_frames" => self.total_frames = parse(key, value)?,
            "hidden_units" => self.hidden_units = parse(key, value)?,
            "lstm_units" => self.lstm_units = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "gradient_norm_clipping" => self.gradient_norm_clipping = parse(key, value)?,
            "training_batch_size" => self.training_batch_size = parse(key, value)?,
            "discount_factor" => self.discount_factor = parse(key, value)?,
            "entropy_coefficient" => self.entropy_coefficient = parse(key, value)?,
            "value_function_coefficient" => {
                self.value_function_coefficient = parse(key, value)?
            }
            "vtrace_lambda" => self.vtrace_lambda = parse(key, value)?,
            "unroll_length" => self.unroll_length = parse(key, value)?,
            "sequence_length" => self.sequence_length = parse(key, value)?,
            "burn_in" => self.burn_in = parse(key, value)?,
            "n_steps" => self.n_steps = parse(key, value)?,
            "replay_buffer_size" => self.replay_buffer_size = parse(key, value)?,
            "min_replay_buffer_size" => self.min_replay_buffer_size = parse(key, value)?,
            "priority_exponent" => self.priority_exponent = parse(key, value)?,
            "importance_sampling_exponent" => {
                self.importance_sampling_exponent = parse(key, value)?
            }
            "priority_eta" => self.priority_eta = parse(key, value)?,
            "target_network_update_interval" => {
                self.target_network_update_interval = parse(key, value)?
            }
            "replay_ratio" => self.replay_ratio = parse(key, value)?,
            "eval_epsilon" => self.eval_epsilon = parse(key, value)?,
            "value_rescaling_epsilon" => self.value_rescaling_epsilon = parse(key, value)?,
            "epsilon_ladder" => self.epsilon_ladder = parse(key, value)?,
            "inference_batch_size" => self.inference_batch_size = parse(key, value)?,
            "batch_wait_us" => self.batch_wait_us = parse(key, value)?,
            "inference_workers" => self.inference_workers = parse(key, value)?,
            "prefetch_workers" => self.prefetch_workers = parse(key, value)?,
            "snapshot_retention" => self.snapshot_retention = parse(key, value)?,
            "bench_mode" => self.bench_mode = parse(key, value)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "metrics" => self.metrics = Some(PathBuf::from(value)),
            other => return Err(SeedError::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Merges a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SeedError::config(format!(
                    "line {} of {} is not key = value: {raw:?}",
                    lineno + 1,
                    path.display()
                )));
            };
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.training_batch_size == 0 || self.inference_batch_size == 0 {
            return Err(SeedError::config("batch sizes must be positive"));
        }
        if self.inference_workers == 0 || self.prefetch_workers == 0 {
            return Err(SeedError::config("worker counts must be positive"));
        }
        if self.unroll_length == 0 {
            return Err(SeedError::config("unroll_length must be positive"));
        }
        if self.hidden_units == 0 {
            return Err(SeedError::config("hidden_units must be positive"));
        }
        match self.algo {
            Algo::Vtrace => self.vtrace_config().validate(),
            Algo::R2d2 => {
                self.q_config().validate()?;
                if self.min_replay_buffer_size > self.replay_buffer_size {
                    return Err(SeedError::config(
                        "min_replay_buffer_size exceeds replay_buffer_size",
                    ));
                }
                if 2 * self.burn_in > self.sequence_length {
                    // Sequence overlap equals burn_in, so each stored
                    // sequence must contribute at least burn_in fresh
                    // steps or overlap prefixes could straddle episodes.
                    return Err(SeedError::config(
                        "burn_in must be at most half of sequence_length",
                    ));
                }
                if self.epsilon_ladder == 0 {
                    return Err(SeedError::config("epsilon_ladder must be positive"));
                }
                Ok(())
            }
        }
    }

    pub fn vtrace_config(&self) -> VTraceConfig {
        VTraceConfig {
            discount: self.discount_factor,
            lambda: self.vtrace_lambda,
            entropy_coef: self.entropy_coefficient,
            value_coef: self.value_function_coefficient,
            learning_rate: self.learning_rate,
            ..VTraceConfig::default()
        }
    }

    pub fn q_config(&self) -> QConfig {
        QConfig {
            discount: self.discount_factor,
            n_steps: self.n_steps,
            burn_in: self.burn_in,
            sequence_length: self.sequence_length,
            target_update_interval: self.target_network_update_interval,
            priority_eta: self.priority_eta,
            priority_exponent: self.priority_exponent,
            importance_exponent: self.importance_sampling_exponent,
            rescale_eps: self.value_rescaling_epsilon,
            replay_ratio: self.replay_ratio,
            eval_epsilon: self.eval_epsilon,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            eps: self.adam_epsilon,
            ..AdamConfig::default()
        }
    }

    pub fn network_spec(&self, env: EnvSpec) -> NetworkSpec {
        NetworkSpec {
            input_dim: env.obs_dim,
            mlp_hidden: vec![self.hidden_units],
            lstm_units: self.lstm_units,
            head: match self.algo {
                Algo::Vtrace => HeadKind::PolicyValue,
                Algo::R2d2 => HeadKind::DuelingQ,
            },
            num_actions: env.num_actions,
            dueling_hidden: self.hidden_units,
        }
    }

    /// Steps of a stored sequence that receive gradient (Q-mode).
    pub fn trained_steps(&self) -> usize {
        self.sequence_length.saturating_sub(self.burn_in)
    }
}
