use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

/// Linear warmup then polynomial decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub power: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.base_lr > 0.0) || !(self.power > 0.0) {
            return Err(Error::Config("learning rate and decay power must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate for 1-based `step`.
pub fn lr_at(step: u64, s: &Schedule) -> f64 {
    if step < s.warmup_steps {
        return s.base_lr * step as f64 / s.warmup_steps as f64;
    }
    let span = (s.total_steps - s.warmup_steps) as f64;
    let frac = 1.0 - (step - s.warmup_steps) as f64 / span;
    s.base_lr * frac.max(0.0).powf(s.power)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for the trainable parameters of one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct OptimState {
    pub hyper: AdamHyper,
    /// First moment, second moment and update count per trainable tensor.
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>, u64)>,
    step: u64,
}

impl OptimState {
    pub fn new(params: &ParamSet, hyper: AdamHyper) -> Self {
        let moments = params
            .trainable()
            .map(|(p, t)| (p.to_string(), (vec![0.0; t.numel()], vec![0.0; t.numel()], 0)))
            .collect();
        Self { hyper, moments, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_buffers(&self) -> usize {
        self.moments.len()
    }

    /// Trainable tensors that have not received a gradient in any step so far.
    pub fn untouched(&self) -> Vec<&str> {
        self.moments.iter().filter(|(_, m)| m.2 == 0).map(|(p, _)| p.as_str()).collect()
    }

    /// Global L2 norm of the trainable gradients.
    pub fn grad_norm(&self, params: &ParamSet) -> f64 {
        params
            .trainable()
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.into_iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// One bias-corrected Adam update with learning rate `lr`. Gradients
    /// are first rescaled so their global norm is at most `clip`, when
    /// given. Frozen tensors and trainable tensors without a gradient are
    /// skipped, moments and bias-correction counts included; all gradients are cleared after. A step
    /// in which no tensor has a gradient is an error. Returns the pre-clip
    /// gradient norm.
    pub fn step(&mut self, params: &ParamSet, lr: f64, clip: Option<f64>) -> Result<f64> {
        let mut grads = Vec::with_capacity(self.moments.len());
        for (path, t) in params.trainable() {
            if !self.moments.contains_key(path) {
                return Err(Error::Training(format!("{path} became trainable after the optimizer was built")));
            }
            if let Some(g) = t.grad() {
                grads.push((path, t, g));
            }
        }
        if grads.is_empty() {
            return Err(Error::Training("no trainable parameter received a gradient".into()));
        }
        let norm = grads.iter().flat_map(|(_, _, g)| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Training(format!("non-finite gradient norm {norm}")));
        }
        let scale = match clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        for (path, t, g) in grads {
            let (m, v, count) = self.moments.get_mut(path).expect("checked above");
            *count += 1;
            let bc1 = 1.0 - beta1.powi(*count as i32);
            let bc2 = 1.0 - beta2.powi(*count as i32);
            t.update_data(|w| {
                for i in 0..w.len() {
                    let gi = g[i] * scale;
                    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    w[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        params.zero_grads();
        Ok(norm)
    }
}
