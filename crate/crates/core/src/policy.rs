//! Categorical policies over a finite outcome set.
//!
//! A [`CategoricalPolicy`] is a logit vector plus a temperature. All
//! probability and log-probability evaluations go through a log-sum-exp, so
//! extreme logits (|z| in the hundreds) stay finite. The policy exposes the
//! pieces an RLOO trainer needs: sampling, exact log-probabilities, the score
//! function `d ln pi(z) / d logits`, and a KL penalty toward a reference.

use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Gradient with respect to a parameter vector. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gradient<T>(pub(crate) Vec<T>);

impl<T: Scalar> Gradient<T> {
    pub fn zeros(len: usize) -> Self {
        Gradient(vec![T::zero(); len])
    }

    pub fn from_vec(values: Vec<T>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Gradient(values))
        } else {
            Err(Error::NonFinite("gradient"))
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: T, other: &Gradient<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(contract(format!(
                "gradient length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Gradient<T>) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

impl<T> Index<usize> for Gradient<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for Gradient<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

/// Softmax policy `pi(i) = softmax(logits / temperature)[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPolicy<T> {
    logits: Vec<T>,
    temperature: T,
}

impl<T: Scalar> CategoricalPolicy<T> {
    /// Policy at temperature 1.
    pub fn new(logits: Vec<T>) -> Result<Self> {
        Self::with_temperature(logits, T::one())
    }

    pub fn uniform(outcomes: usize) -> Result<Self> {
        Self::new(vec![T::zero(); outcomes])
    }

    pub fn with_temperature(logits: Vec<T>, temperature: T) -> Result<Self> {
        if logits.is_empty() {
            return Err(contract("policy needs at least one outcome"));
        }
        if !logits.iter().all(|l| l.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        if !(temperature.is_finite() && temperature > T::zero()) {
            return Err(contract("temperature must be positive and finite"));
        }
        Ok(CategoricalPolicy { logits, temperature })
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Replaces the logits, keeping the temperature.
    pub fn set_logits(&mut self, logits: Vec<T>) -> Result<()> {
        if logits.len() != self.logits.len() {
            return Err(contract("logit dimension changed"));
        }
        if !logits.iter().all(|l| l.is_finite()) {
            return Err(Error::NonFinite("policy logits"));
        }
        self.logits = logits;
        Ok(())
    }

    fn scaled(&self) -> Vec<T> {
        self.logits.iter().map(|&l| l / self.temperature).collect()
    }

    fn check_outcome(&self, outcome: usize) -> Result<()> {
        if outcome < self.len() {
            Ok(())
        } else {
            Err(contract(format!(
                "outcome {outcome} outside policy support of size {}",
                self.len()
            )))
        }
    }

    pub fn log_probabilities(&self) -> Vec<T> {
        let z = self.scaled();
        let lse = log_sum_exp(&z);
        z.into_iter().map(|v| v - lse).collect()
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.log_probabilities().into_iter().map(T::exp).collect()
    }

    pub fn log_prob(&self, outcome: usize) -> Result<T> {
        self.check_outcome(outcome)?;
        let z = self.scaled();
        Ok(z[outcome] - log_sum_exp(&z))
    }

    /// `d ln pi(outcome) / d logits = (onehot(outcome) - pi) / temperature`.
    pub fn score_gradient(&self, outcome: usize) -> Result<Gradient<T>> {
        self.check_outcome(outcome)?;
        let mut g: Vec<T> = self.probabilities().into_iter().map(|p| -p).collect();
        g[outcome] += T::one();
        for v in &mut g {
            *v /= self.temperature;
        }
        Gradient::from_vec(g)
    }

    /// Inverse-CDF draw from the softmax distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let probs = self.probabilities();
        for (i, p) in probs.iter().enumerate() {
            acc += p.as_f64();
            if u < acc {
                return i;
            }
        }
        // Rounding can leave `acc` a hair below 1; fall back to the last
        // outcome with nonzero mass.
        probs.iter().rposition(|p| *p > T::zero()).unwrap_or(probs.len() - 1)
    }

    /// Index of the most probable outcome (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.logits.iter().enumerate() {
            if l > self.logits[best] {
                best = i;
            }
        }
        best
    }

    /// `KL(self || reference)` and its gradient with respect to `self`'s logits.
    pub fn kl_to_reference(&self, reference: &CategoricalPolicy<T>) -> Result<(T, Gradient<T>)> {
        if self.len() != reference.len() {
            return Err(contract(format!(
                "KL dimension mismatch: {} vs {}",
                self.len(),
                reference.len()
            )));
        }
        let lp = self.log_probabilities();
        let lq = reference.log_probabilities();
        let p: Vec<T> = lp.iter().map(|v| v.exp()).collect();
        let diff: Vec<T> = lp.iter().zip(&lq).map(|(&a, &b)| a - b).collect();
        let kl: T = p.iter().zip(&diff).map(|(&pi, &d)| pi * d).sum();
        let kl = kl.max(T::zero());
        let grad = p
            .iter()
            .zip(&diff)
            .map(|(&pi, &d)| pi * (d - kl) / self.temperature)
            .collect();
        Ok((kl, Gradient::from_vec(grad)?))
    }
}
