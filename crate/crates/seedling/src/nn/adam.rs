//! Adam with bias correction and global-norm gradient clipping.
//!
//! Parameters are stored in f32, but the optimizer keeps its moment
//! estimates and does all update arithmetic in f64 so repeated small steps
//! do not lose mass to rounding.

use super::Tensor;
use crate::error::{Result, SeedError};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SeedError::Shape {
                context: "adam tensors",
                expected: self.m.len(),
                actual: params.len().max(grads.len()),
            });
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(SeedError::Shape {
                    context: "adam tensor size",
                    expected: m.len(),
                    actual: p.len().max(g.len()),
                });
            }
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                let gv = g.data()[i] as f64;
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gv;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gv * gv;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *pv = (*pv as f64 - self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping (non-finite if any gradient was).
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for &v in g.data() {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
