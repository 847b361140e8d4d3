//! Minimal neural-network kernel.
//!
//! Dense stacks with ReLU, an LSTM cell that additionally consumes the
//! one-hot previous action and previous reward, and two head kinds:
//! policy logits + state value, or dueling Q-values. Reverse-mode gradients
//! are computed from explicit activation tapes recorded during sequence
//! forwards, so training can backpropagate through time while inference
//! runs tape-free.
//!
//! Parameters live in versioned immutable snapshots ([`ParamSnapshot`]):
//! inference readers only ever see a fully published parameter set while the
//! single trainer mutates its private copy and publishes atomically.

mod adam;
mod net;
mod snapshot;
mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use net::{
    backward_sequence, forward_sequence, forward_step, SequenceInputs, SequenceOutput,
    SequenceTape, StateBatch, StepOutput, PREV_ACTION_NONE,
};
pub use snapshot::{read_checkpoint, write_checkpoint, ParamSnapshot, SnapshotSlot};
pub use tensor::{axpy, dot, Tensor};

use crate::error::{Result, SeedError};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which output head the network ends in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Policy logits over actions plus a scalar state-value baseline.
    PolicyValue,
    /// Dueling Q-head: value and advantage branches combined as
    /// `q = v + a - mean(a)`.
    DuelingQ,
}

/// Architecture description. Parameters are derived from this; the tensor
/// ordering of [`NetworkSpec::param_layout`] is the contract shared by the
/// forward pass, the optimizer and the checkpoint format.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub mlp_hidden: Vec<usize>,
    /// 0 disables the recurrent cell entirely (feed-forward network).
    pub lstm_units: usize,
    pub head: HeadKind,
    pub num_actions: usize,
    pub dueling_hidden: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(SeedError::config("input_dim must be >= 1"));
        }
        if self.num_actions < 2 {
            return Err(SeedError::config("num_actions must be >= 2"));
        }
        if self.mlp_hidden.iter().any(|&h| h == 0) {
            return Err(SeedError::config("mlp hidden sizes must be >= 1"));
        }
        if self.head == HeadKind::DuelingQ && self.dueling_hidden == 0 {
            return Err(SeedError::config("dueling_hidden must be >= 1"));
        }
        Ok(())
    }

    /// Output width of the dense stack (input to the LSTM or the heads).
    pub fn mlp_out_dim(&self) -> usize {
        self.mlp_hidden.last().copied().unwrap_or(self.input_dim)
    }

    /// Width of the LSTM input: dense features, one-hot previous action,
    /// previous reward.
    pub fn lstm_input_dim(&self) -> usize {
        self.mlp_out_dim() + self.num_actions + 1
    }

    /// Width of the feature vector entering the head.
    pub fn feature_dim(&self) -> usize {
        if self.lstm_units > 0 {
            self.lstm_units
        } else {
            self.mlp_out_dim()
        }
    }

    /// Ordered parameter names and shapes.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut layout = Vec::new();
        let mut in_dim = self.input_dim;
        for (l, &h) in self.mlp_hidden.iter().enumerate() {
            layout.push((format!("mlp{l}.w"), vec![h, in_dim]));
            layout.push((format!("mlp{l}.b"), vec![h]));
            in_dim = h;
        }
        if self.lstm_units > 0 {
            let h = self.lstm_units;
            layout.push(("lstm.w_ih".into(), vec![4 * h, self.lstm_input_dim()]));
            layout.push(("lstm.w_hh".into(), vec![4 * h, h]));
            layout.push(("lstm.b".into(), vec![4 * h]));
        }
        let f = self.feature_dim();
        match self.head {
            HeadKind::PolicyValue => {
                layout.push(("policy.w".into(), vec![self.num_actions, f]));
                layout.push(("policy.b".into(), vec![self.num_actions]));
                layout.push(("value.w".into(), vec![1, f]));
                layout.push(("value.b".into(), vec![1]));
            }
            HeadKind::DuelingQ => {
                let d = self.dueling_hidden;
                layout.push(("adv_hidden.w".into(), vec![d, f]));
                layout.push(("adv_hidden.b".into(), vec![d]));
                layout.push(("adv_out.w".into(), vec![self.num_actions, d]));
                layout.push(("adv_out.b".into(), vec![self.num_actions]));
                layout.push(("value_hidden.w".into(), vec![d, f]));
                layout.push(("value_hidden.b".into(), vec![d]));
                layout.push(("value_out.w".into(), vec![1, d]));
                layout.push(("value_out.b".into(), vec![1]));
            }
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Glorot-uniform weights, zero biases, seeded.
    pub fn init_params(&self, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.param_layout()
            .iter()
            .map(|(name, shape)| {
                if name.ends_with(".b") {
                    Tensor::zeros(shape)
                } else {
                    let (fan_out, fan_in) = (shape[0], shape[1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    let data = (0..fan_out * fan_in)
                        .map(|_| rng.gen_range(-limit..=limit))
                        .collect();
                    Tensor::from_vec(shape, data).expect("layout shape")
                }
            })
            .collect()
    }

    pub fn zero_params(&self) -> Vec<Tensor> {
        self.param_layout()
            .iter()
            .map(|(_, shape)| Tensor::zeros(shape))
            .collect()
    }
}

/// Recurrent state for a single environment slot. Zeroed at episode start.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<f32>,
    pub cell: Vec<f32>,
}

impl RecurrentState {
    pub fn zeros(units: usize) -> Self {
        RecurrentState {
            hidden: vec![0.0; units],
            cell: vec![0.0; units],
        }
    }

    pub fn reset(&mut self) {
        self.hidden.fill(0.0);
        self.cell.fill(0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.hidden.iter().all(|&v| v == 0.0) && self.cell.iter().all(|&v| v == 0.0)
    }
}

/// Default desk-scale hidden width.
pub const DEFAULT_HIDDEN: usize = 64;
