//! Student-side RL: short leave-one-out training of a cloned student on one
//! candidate dataset, and the baseline accuracy it is compared against.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::policy::Gradient;
use crate::rloo::rloo_policy_gradient;
use crate::seed::rng_for;
use crate::tasklab::{greedy_accuracy, student_rollout, EnvProfile, QaPair, StudentState, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerLoopConfig {
    pub steps: usize,
    /// Extra steps added per promotion stage.
    pub steps_per_stage: usize,
    pub batch_size: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub kl_coef: f64,
    pub weight_decay: f64,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        InnerLoopConfig {
            steps: 10,
            steps_per_stage: 5,
            batch_size: 8,
            group_size: 32,
            learning_rate: 1.5,
            warmup_steps: 0,
            kl_coef: 0.001,
            weight_decay: 0.0,
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(contract("inner loop needs at least one step and one item per batch"));
        }
        if self.group_size < 2 {
            return Err(contract("student group size must be at least 2"));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(contract("KL coefficient must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn steps_at_stage(&self, stage: usize) -> usize {
        self.steps + self.steps_per_stage * stage
    }

    pub fn optimizer(&self, total_steps: usize) -> AdamWConfig {
        AdamWConfig::new(self.learning_rate, self.warmup_steps, total_steps).with_weight_decay(self.weight_decay)
    }
}

/// Summary of one student update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentStepStats {
    pub mean_reward: f64,
    pub kl: f64,
}

/// Owns a student, its optimizer and the frozen reference it is
/// regularized toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTrainer {
    student: StudentState,
    reference: StudentState,
    optimizer: AdamW<f64>,
    group_size: usize,
    kl_coef: f64,
}

impl StudentTrainer {
    pub fn new(student: StudentState, optimizer: AdamWConfig, group_size: usize, kl_coef: f64) -> Result<Self> {
        if group_size < 2 {
            return Err(contract("student group size must be at least 2"));
        }
        let optimizer = AdamW::new(optimizer, student.levels())?;
        Ok(StudentTrainer {
            reference: student.clone(),
            student,
            optimizer,
            group_size,
            kl_coef,
        })
    }

    pub fn student(&self) -> &StudentState {
        &self.student
    }

    pub fn into_student(self) -> StudentState {
        self.student
    }

    pub fn steps_taken(&self) -> usize {
        self.optimizer.step_count()
    }

    /// One update on `batch`: maximize the mean leave-one-out objective over
    /// items, minus `kl_coef` times the mean KL to the reference.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        batch: &[&QaPair],
        env: &EnvProfile,
        rng: &mut R,
    ) -> Result<StudentStepStats> {
        if batch.is_empty() {
            return Err(contract("empty student batch"));
        }
        let levels = self.student.levels();
        let mut loss_grad = Gradient::zeros(levels);
        let mut reward_sum = 0.0;
        let mut kl_sum = 0.0;
        let item_weight = 1.0 / batch.len() as f64;
        let rollout_weight = item_weight / self.group_size as f64;
        for qa in batch {
            let level = qa.task.level;
            let group = student_rollout(&self.student, qa, self.group_size, env, rng)?;
            reward_sum += group.rewards().iter().sum::<f64>();
            let head = self.student.answer_head(level)?;
            let pg = rloo_policy_gradient(&head, &group)?;
            loss_grad.add_scaled(-rollout_weight, &self.student.head_to_skill_gradient(level, &pg)?)?;
            if self.kl_coef > 0.0 {
                let (kl, kl_grad) = head.kl_to_reference(&self.reference.answer_head(level)?)?;
                kl_sum += kl;
                loss_grad.add_scaled(
                    self.kl_coef * item_weight,
                    &self.student.head_to_skill_gradient(level, &kl_grad)?,
                )?;
            }
        }
        self.optimizer.step(self.student.skills_mut(), &loss_grad)?;
        Ok(StudentStepStats {
            mean_reward: reward_sum / (batch.len() * self.group_size) as f64,
            kl: kl_sum * item_weight,
        })
    }
}

/// Trains a copy of `baseline` on `dataset` for `steps + steps_per_stage *
/// stage` updates. Step `t` draws its batch (uniformly, with replacement) and
/// its rollouts from the stream keyed by `(seed, t)`.
pub fn rl_update_student(
    baseline: &StudentState,
    dataset: &[QaPair],
    cfg: &InnerLoopConfig,
    stage: usize,
    env: &EnvProfile,
    seed: u64,
) -> Result<StudentState> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(contract("inner loop received an empty dataset"));
    }
    if dataset.iter().any(|qa| !qa.well_formed) {
        return Err(contract("inner loop received a malformed pair"));
    }
    let steps = cfg.steps_at_stage(stage);
    let mut trainer = StudentTrainer::new(baseline.clone(), cfg.optimizer(steps), cfg.group_size, cfg.kl_coef)?;
    for t in 0..steps {
        let mut rng = rng_for(&[seed, t as u64]);
        let batch: Vec<&QaPair> = (0..cfg.batch_size)
            .map(|_| &dataset[rng.random_range(0..dataset.len())])
            .collect();
        trainer.step(&batch, env, &mut rng)?;
    }
    Ok(trainer.into_student())
}

/// Greedy accuracy of the untrained baseline on the reward questions.
pub fn baseline_accuracy(baseline: &StudentState, reward_questions: &[Task]) -> Result<f64> {
    greedy_accuracy(baseline, reward_questions)
}

/// Memoizes [`baseline_accuracy`] per (student fingerprint, question ids).
#[derive(Debug, Default, Clone)]
pub struct BaselineCache {
    entries: HashMap<(u64, u64), f64>,
}

impl BaselineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, baseline: &StudentState, reward_questions: &[Task]) -> Result<f64> {
        let mut h = DefaultHasher::new();
        for t in reward_questions {
            (t.id, t.level, t.answer).hash(&mut h);
        }
        let key = (baseline.fingerprint(), h.finish());
        if let Some(&v) = self.entries.get(&key) {
            return Ok(v);
        }
        let v = baseline_accuracy(baseline, reward_questions)?;
        self.entries.insert(key, v);
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasklab::generate_pool;

    fn env() -> EnvProfile {
        EnvProfile::default()
    }

    fn dataset_at(level: usize, n: usize, env: &EnvProfile) -> Vec<QaPair> {
        (0..n)
            .map(|i| QaPair::from_task(Task::new(1000 + i as u64, level, i % env.alphabet, env).unwrap()))
            .collect()
    }

    #[test]
    fn baseline_is_not_mutated_and_runs_are_reproducible() {
        let e = env();
        let base = StudentState::fresh(&e);
        let before = base.fingerprint();
        let data = dataset_at(3, 16, &e);
        let cfg = InnerLoopConfig::default();
        let a = rl_update_student(&base, &data, &cfg, 0, &e, 11).unwrap();
        let b = rl_update_student(&base, &data, &cfg, 0, &e, 11).unwrap();
        assert_eq!(base.fingerprint(), before);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), before);
    }

    #[test]
    fn saturated_dataset_barely_moves_the_student() {
        let e = env();
        let base = StudentState::fresh(&e).with_skills(vec![30.0; e.levels()]).unwrap();
        let data = dataset_at(0, 8, &e);
        let trained = rl_update_student(&base, &data, &InnerLoopConfig::default(), 0, &e, 1).unwrap();
        let delta: f64 = trained
            .skills()
            .iter()
            .zip(base.skills())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta < 1e-3, "delta {delta}");
    }

    #[test]
    fn empty_or_malformed_dataset_is_rejected() {
        let e = env();
        let base = StudentState::fresh(&e);
        let cfg = InnerLoopConfig::default();
        assert!(rl_update_student(&base, &[], &cfg, 0, &e, 0).is_err());
        let mut data = dataset_at(0, 2, &e);
        data[1].well_formed = false;
        assert!(rl_update_student(&base, &data, &cfg, 0, &e, 0).is_err());
    }

    #[test]
    fn later_stages_train_longer() {
        let cfg = InnerLoopConfig::default();
        assert_eq!(cfg.steps_at_stage(0), 10);
        assert_eq!(cfg.steps_at_stage(3), 25);
    }

    #[test]
    fn baseline_cache_matches_direct_evaluation() {
        let e = env();
        let base = StudentState::fresh(&e);
        let tasks = generate_pool(&e, 3, 0).unwrap();
        let mut cache = BaselineCache::new();
        let direct = greedy_accuracy(&base, &tasks).unwrap();
        assert_eq!(cache.get(&base, &tasks).unwrap(), direct);
        assert_eq!(cache.get(&base, &tasks).unwrap(), direct);
        assert_eq!(cache.len(), 1);
        assert!(cache.get(&base, &[]).is_err());
    }
}
