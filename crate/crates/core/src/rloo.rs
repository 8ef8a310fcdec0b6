//! REINFORCE leave-one-out (RLOO) machinery.
//!
//! Each sample in a group of `g` rollouts is baselined by the mean reward of
//! the other `g - 1`. The resulting advantages sum to zero, which is what makes
//! rejection sampling transparent to the update: subtracting the constant
//! `ln pi0(S)` from every log-probability changes nothing once it is multiplied
//! by advantages that sum to zero. [`filtered_gradient_check`] evaluates both
//! sides of that identity independently.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::policy::{CategoricalPolicy, Gradient};
use crate::scalar::Scalar;

/// Resample cap used when the caller does not pick one.
pub const DEFAULT_MAX_TRIES: usize = 256;

/// One sampled outcome with the log-probability it had when it was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollout<T> {
    pub outcome: usize,
    pub log_prob: T,
    pub reward: T,
}

/// A group of `g >= 2` rollouts scored together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup<T> {
    rollouts: Vec<Rollout<T>>,
}

impl<T: Scalar> RolloutGroup<T> {
    pub fn new(rollouts: Vec<Rollout<T>>) -> Result<Self> {
        if rollouts.len() < 2 {
            return Err(contract(format!(
                "leave-one-out needs a group of at least 2, got {}",
                rollouts.len()
            )));
        }
        if !rollouts.iter().all(|r| r.reward.is_finite()) {
            return Err(Error::NonFinite("group rewards"));
        }
        Ok(RolloutGroup { rollouts })
    }

    pub fn rollouts(&self) -> &[Rollout<T>] {
        &self.rollouts
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn rewards(&self) -> Vec<T> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    pub fn outcomes(&self) -> Vec<usize> {
        self.rollouts.iter().map(|r| r.outcome).collect()
    }

    pub fn mean_reward(&self) -> T {
        let n = T::from_usize(self.len()).unwrap();
        self.rollouts.iter().map(|r| r.reward).sum::<T>() / n
    }

    /// Same outcomes, every reward shifted by `delta`.
    pub fn shifted(&self, delta: T) -> Self {
        RolloutGroup {
            rollouts: self
                .rollouts
                .iter()
                .map(|r| Rollout {
                    reward: r.reward + delta,
                    ..*r
                })
                .collect(),
        }
    }
}

/// Leave-one-out advantages; always sums to zero up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Advantages<T>(Vec<T>);

impl<T: Scalar> Advantages<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn sum(&self) -> T {
        self.0.iter().copied().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `A_i = R_i - mean_{j != i} R_j`.
pub fn rloo_advantages<T: Scalar>(rewards: &[T]) -> Result<Advantages<T>> {
    let g = rewards.len();
    if g < 2 {
        return Err(contract(format!("leave-one-out needs at least 2 rewards, got {g}")));
    }
    if !rewards.iter().all(|r| r.is_finite()) {
        return Err(Error::NonFinite("rewards"));
    }
    let n = T::from_usize(g).unwrap();
    let mean = rewards.iter().copied().sum::<T>() / n;
    // R_i - (S - R_i)/(g-1) == g/(g-1) * (R_i - mean); centering first keeps
    // the sum at rounding level even for large reward magnitudes.
    let scale = n / (n - T::one());
    let centered: Vec<T> = rewards.iter().map(|&r| r - mean).collect();
    let drift = centered.iter().copied().sum::<T>() / n;
    Ok(Advantages(centered.into_iter().map(|c| scale * (c - drift)).collect()))
}

/// `sum_i A_i * grad ln pi(z_i)` over the group.
pub fn rloo_policy_gradient<T: Scalar>(policy: &CategoricalPolicy<T>, group: &RolloutGroup<T>) -> Result<Gradient<T>> {
    let adv = rloo_advantages(&group.rewards())?;
    let mut grad = Gradient::zeros(policy.len());
    for (rollout, &a) in group.rollouts().iter().zip(adv.as_slice()) {
        grad.add_scaled(a, &policy.score_gradient(rollout.outcome)?)?;
    }
    Ok(grad)
}

/// Membership test for the accepted outcome set `S`.
pub trait AcceptPredicate {
    fn accepts(&self, outcome: usize) -> bool;
}

impl<F: Fn(usize) -> bool> AcceptPredicate for F {
    fn accepts(&self, outcome: usize) -> bool {
        self(outcome)
    }
}

/// Explicit accept set stored as a mask over the outcome space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptSet {
    mask: Vec<bool>,
}

impl AcceptSet {
    pub fn from_outcomes(size: usize, accepted: &[usize]) -> Self {
        let mut mask = vec![false; size];
        for &o in accepted {
            if o < size {
                mask[o] = true;
            }
        }
        AcceptSet { mask }
    }

    pub fn all(size: usize) -> Self {
        AcceptSet { mask: vec![true; size] }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

impl AcceptPredicate for AcceptSet {
    fn accepts(&self, outcome: usize) -> bool {
        self.mask.get(outcome).copied().unwrap_or(false)
    }
}

/// Draws until `draw` yields `Some`, giving up after `max_tries` attempts.
/// Returns the accepted value and the number of attempts used.
pub fn resample_until<V, F>(max_tries: usize, mut draw: F) -> Result<(V, usize)>
where
    F: FnMut() -> Option<V>,
{
    if max_tries == 0 {
        return Err(contract("max_tries must be at least 1"));
    }
    for attempt in 1..=max_tries {
        if let Some(v) = draw() {
            return Ok((v, attempt));
        }
    }
    Err(Error::ResampleBudget { tries: max_tries })
}

/// Samples from `proposal` until the outcome is in the accept set.
pub fn filtered_sample<T, A, R>(
    proposal: &CategoricalPolicy<T>,
    accept: &A,
    rng: &mut R,
    max_tries: usize,
) -> Result<(usize, usize)>
where
    T: Scalar,
    A: AcceptPredicate + ?Sized,
    R: Rng + ?Sized,
{
    resample_until(max_tries, || {
        let z = proposal.sample(rng);
        accept.accepts(z).then_some(z)
    })
}

/// Proposal restricted to the accept set and renormalized (zero outside `S`).
pub fn renormalized_probabilities<T, A>(proposal: &CategoricalPolicy<T>, accept: &A) -> Result<Vec<T>>
where
    T: Scalar,
    A: AcceptPredicate + ?Sized,
{
    let probs = proposal.probabilities();
    let restricted: Vec<T> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if accept.accepts(i) { p } else { T::zero() })
        .collect();
    let mass: T = restricted.iter().copied().sum();
    if mass <= T::zero() {
        return Err(contract("accept set has zero proposal mass"));
    }
    Ok(restricted.into_iter().map(|p| p / mass).collect())
}

/// Both sides of the filtered-vs-unfiltered RLOO gradient identity.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredGradientCheck<T> {
    /// Uses log-probabilities of the renormalized (filtered) distribution.
    pub filtered: Gradient<T>,
    /// Uses raw proposal log-probabilities.
    pub unfiltered: Gradient<T>,
    pub max_abs_diff: T,
}

/// Computes the RLOO gradient twice: once under the renormalized distribution
/// `pi(z) = pi0(z) / pi0(S)` and once under the raw proposal `pi0`.
///
/// The filtered side differentiates `ln pi(z)` directly as
/// `(onehot(z) - pi) / temperature`, which never touches `pi0`'s mass outside
/// `S`; the unfiltered side uses the proposal's score function.
pub fn filtered_gradient_check<T, A>(
    proposal: &CategoricalPolicy<T>,
    accept: &A,
    outcomes: &[usize],
    rewards: &[T],
) -> Result<FilteredGradientCheck<T>>
where
    T: Scalar,
    A: AcceptPredicate + ?Sized,
{
    if outcomes.len() != rewards.len() {
        return Err(contract("outcomes and rewards differ in length"));
    }
    if let Some(&bad) = outcomes.iter().find(|&&z| !accept.accepts(z)) {
        return Err(contract(format!("outcome {bad} is outside the accept set")));
    }
    let adv = rloo_advantages(rewards)?;
    let renorm = renormalized_probabilities(proposal, accept)?;
    let tau = proposal.temperature();
    let dim = proposal.len();

    let mut filtered = Gradient::zeros(dim);
    let mut unfiltered = Gradient::zeros(dim);
    for (&z, &a) in outcomes.iter().zip(adv.as_slice()) {
        let mut score = vec![T::zero(); dim];
        for (s, &p) in score.iter_mut().zip(&renorm) {
            *s = -p / tau;
        }
        score[z] += T::one() / tau;
        filtered.add_scaled(a, &Gradient::from_vec(score)?)?;
        unfiltered.add_scaled(a, &proposal.score_gradient(z)?)?;
    }
    let max_abs_diff = filtered.max_abs_diff(&unfiltered);
    Ok(FilteredGradientCheck {
        filtered,
        unfiltered,
        max_abs_diff,
    })
}
