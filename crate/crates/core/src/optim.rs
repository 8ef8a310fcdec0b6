//! Adaptive-moment optimizer with decoupled weight decay and a
//! warmup + cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::policy::Gradient;
use crate::scalar::Scalar;

/// Static optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, warmup_steps: usize, total_steps: usize) -> Self {
        AdamWConfig {
            learning_rate,
            warmup_steps,
            total_steps,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(contract("learning rate must be finite and nonnegative"));
        }
        if self.total_steps == 0 {
            return Err(contract("optimizer needs at least one step"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(contract("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0) {
            return Err(contract("eps must be positive, weight decay nonnegative"));
        }
        Ok(())
    }

    /// Learning rate used at (zero-based) step `step`: linear warmup to the
    /// base rate, then cosine decay to zero at `total_steps`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Optimizer state: the step counter plus first and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: usize,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            step: 0,
            first_moment: vec![T::zero(); dim],
            second_moment: vec![T::zero(); dim],
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.first_moment.len()
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.step)
    }

    /// Pure form of [`AdamW::step`]: returns the updated parameters and the
    /// advanced optimizer state, leaving `self` untouched.
    pub fn apply_update(&self, params: &[T], grad: &Gradient<T>) -> Result<(Vec<T>, AdamW<T>)> {
        let mut next = self.clone();
        let mut out = params.to_vec();
        next.step(&mut out, grad)?;
        Ok((out, next))
    }

    /// One descent step on `params` along `grad` (the gradient of a loss).
    pub fn step(&mut self, params: &mut [T], grad: &Gradient<T>) -> Result<()> {
        if params.len() != self.dim() || grad.len() != self.dim() {
            return Err(contract(format!(
                "optimizer dimension {} does not match params {} / grad {}",
                self.dim(),
                params.len(),
                grad.len()
            )));
        }
        if self.step >= self.config.total_steps {
            return Err(Error::ScheduleExhausted {
                step: self.step,
                total: self.config.total_steps,
            });
        }
        if !grad.as_slice().iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to optimizer"));
        }

        let lr = T::lit(self.config.learning_rate_at(self.step));
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let eps = T::lit(self.config.eps);
        let wd = T::lit(self.config.weight_decay);
        self.step += 1;
        let t = self.step as i32;
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            let g = grad[i];
            let m = &mut self.first_moment[i];
            *m = b1 * *m + (T::one() - b1) * g;
            let v = &mut self.second_moment[i];
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        }
        if params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("parameters after update"))
        }
    }
}
