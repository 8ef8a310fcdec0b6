//! Teacher-side meta-RL: generation, dataset partitioning, grounded and
//! learnability rewards, promotion of the baseline student, and the
//! leave-one-out teacher update.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::inner::{rl_update_student, BaselineCache, InnerLoopConfig};
use crate::metrics::{pairwise_cosine_diversity, vendi_score, windowed_mean_of, EmbeddingMatrix};
use crate::optim::{AdamW, AdamWConfig};
use crate::policy::{CategoricalPolicy, Gradient};
use crate::rloo::{rloo_advantages, DEFAULT_MAX_TRIES};
use crate::seed::{derive_seed, rng_for};
use crate::tasklab::{
    embed, greedy_accuracy, teacher_generate, EnvProfile, QaPair, StudentState, Task, HEAD_DISTRACTOR, HEAD_TRUTH,
};

// Stream tags keep the per-step random streams apart.
const TAG_GENERATE: u64 = 1;
const TAG_QUESTIONS: u64 = 2;
const TAG_STUDENT: u64 = 3;
const TAG_LEARNABILITY: u64 = 4;

/// Which signal the teacher is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherReward {
    /// Accuracy gain of students trained on the dataset.
    Grounded,
    /// `1 - s` for moderately solvable items, 0 for unsolved ones.
    Learnability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterLoopConfig {
    /// Datasets per step (teacher RLOO group size).
    pub group_size: usize,
    pub dataset_size: usize,
    /// Students trained per dataset.
    pub repeats: usize,
    pub reward_questions: usize,
    pub threshold: f64,
    pub window: usize,
    /// When set, an exponential moving average with this weight on the newest
    /// reward replaces the windowed mean.
    pub ema_alpha: Option<f64>,
    pub reset_window_on_promotion: bool,
    pub max_steps: usize,
    /// Accepted for configuration compatibility; each outer step draws a
    /// single group of datasets.
    pub teacher_batch_size: usize,
    pub teacher_learning_rate: f64,
    pub teacher_warmup_steps: usize,
    pub teacher_kl_coef: f64,
    pub max_tries: usize,
    pub reward: TeacherReward,
    pub learnability_samples: usize,
}

impl Default for OuterLoopConfig {
    fn default() -> Self {
        OuterLoopConfig {
            group_size: 4,
            dataset_size: 64,
            repeats: 4,
            reward_questions: 64,
            threshold: 0.01,
            window: 3,
            ema_alpha: None,
            reset_window_on_promotion: false,
            max_steps: 200,
            teacher_batch_size: 2,
            teacher_learning_rate: 0.1,
            teacher_warmup_steps: 5,
            teacher_kl_coef: 0.001,
            max_tries: DEFAULT_MAX_TRIES,
            reward: TeacherReward::Grounded,
            learnability_samples: 32,
        }
    }
}

impl OuterLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(contract("teacher group size must be at least 2"));
        }
        if self.dataset_size == 0
            || self.repeats == 0
            || self.reward_questions == 0
            || self.window == 0
            || self.max_steps == 0
            || self.max_tries == 0
            || self.learnability_samples == 0
        {
            return Err(contract("outer-loop counts must be positive"));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN is rejected too
        if !(self.threshold > 0.0) {
            return Err(contract("promotion threshold must be positive"));
        }
        if let Some(a) = self.ema_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(contract("ema_alpha must lie in (0, 1]"));
            }
        }
        if !(self.teacher_kl_coef >= 0.0 && self.teacher_kl_coef.is_finite()) {
            return Err(contract("teacher KL coefficient must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn teacher_optimizer(&self) -> AdamWConfig {
        AdamWConfig::new(self.teacher_learning_rate, self.teacher_warmup_steps, self.max_steps)
    }
}

/// Teacher policy over levels, its frozen initial copy and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherState {
    policy: CategoricalPolicy<f64>,
    reference: CategoricalPolicy<f64>,
    optimizer: AdamW<f64>,
}

impl TeacherState {
    /// Teacher starting from `logits`, which also become the KL reference.
    pub fn new(logits: Vec<f64>, cfg: &OuterLoopConfig) -> Result<Self> {
        let policy = CategoricalPolicy::new(logits)?;
        let optimizer = AdamW::new(cfg.teacher_optimizer(), policy.len())?;
        Ok(TeacherState {
            reference: policy.clone(),
            policy,
            optimizer,
        })
    }

    /// Uniform teacher over the ladder.
    pub fn base(env: &EnvProfile, cfg: &OuterLoopConfig) -> Result<Self> {
        Self::new(vec![0.0; env.levels()], cfg)
    }

    pub fn policy(&self) -> &CategoricalPolicy<f64> {
        &self.policy
    }

    pub fn reference(&self) -> &CategoricalPolicy<f64> {
        &self.reference
    }

    pub fn steps_taken(&self) -> usize {
        self.optimizer.step_count()
    }

    /// Descent on `-(1/(g n)) sum_k A_k sum_items grad ln pi(level) +
    /// kl_coef * grad KL(pi || reference)`.
    pub fn update(&mut self, datasets: &[CandidateDataset], kl_coef: f64) -> Result<()> {
        let rewards = datasets
            .iter()
            .map(|d| d.reward.ok_or_else(|| contract("dataset has no reward")))
            .collect::<Result<Vec<f64>>>()?;
        let loss = teacher_loss_gradient(&self.policy, &self.reference, datasets, &rewards, kl_coef)?;
        let mut logits = self.policy.logits().to_vec();
        self.optimizer.step(&mut logits, &loss)?;
        self.policy.set_logits(logits)
    }
}

/// Gradient of the teacher loss. Each dataset is one leave-one-out arm whose
/// score is the sum of its items' unfiltered level scores.
pub fn teacher_loss_gradient(
    policy: &CategoricalPolicy<f64>,
    reference: &CategoricalPolicy<f64>,
    datasets: &[CandidateDataset],
    rewards: &[f64],
    kl_coef: f64,
) -> Result<Gradient<f64>> {
    if datasets.len() != rewards.len() {
        return Err(contract("one reward per dataset required"));
    }
    let adv = rloo_advantages(rewards)?;
    let items: usize = datasets.iter().map(|d| d.items.len()).sum();
    let mut grad = Gradient::zeros(policy.len());
    for (d, &a) in datasets.iter().zip(adv.as_slice()) {
        for qa in &d.items {
            grad.add_scaled(-a / items as f64, &policy.score_gradient(qa.task.level)?)?;
        }
    }
    if kl_coef > 0.0 {
        let (_, kl_grad) = policy.kl_to_reference(reference)?;
        grad.add_scaled(kl_coef, &kl_grad)?;
    }
    Ok(grad)
}

/// One teacher-generated dataset `X_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDataset {
    pub items: Vec<QaPair>,
    /// Sum of the items' unfiltered generation log-probabilities.
    pub log_prob_sum: f64,
    pub reward: Option<f64>,
}

/// A promotion event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub step: usize,
    pub reward: f64,
}

/// Baseline student, moving-average teacher reward and accumulated
/// promotion datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionLedger {
    baseline: StudentState,
    stage: usize,
    recent: Vec<f64>,
    ema: Option<f64>,
    threshold: f64,
    window: usize,
    ema_alpha: Option<f64>,
    reset_on_promotion: bool,
    best: Vec<CandidateDataset>,
    history: Vec<Promotion>,
}

impl PromotionLedger {
    pub fn new(baseline: StudentState, cfg: &OuterLoopConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PromotionLedger {
            baseline,
            stage: 0,
            recent: Vec::new(),
            ema: None,
            threshold: cfg.threshold,
            window: cfg.window,
            ema_alpha: cfg.ema_alpha,
            reset_on_promotion: cfg.reset_window_on_promotion,
            best: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn baseline(&self) -> &StudentState {
        &self.baseline
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Promotion datasets in the order they were accepted.
    pub fn best(&self) -> &[CandidateDataset] {
        &self.best
    }

    pub fn history(&self) -> &[Promotion] {
        &self.history
    }

    pub fn recent(&self) -> &[f64] {
        &self.recent
    }

    /// Adds a step's mean reward; returns the moving average and whether it
    /// is eligible to trigger promotion. The windowed mean only becomes
    /// eligible once the window is full.
    pub fn observe(&mut self, mean_reward: f64) -> Result<(f64, bool)> {
        if !mean_reward.is_finite() {
            return Err(Error::NonFinite("teacher reward"));
        }
        self.recent.push(mean_reward);
        if self.recent.len() > self.window {
            self.recent.remove(0);
        }
        match self.ema_alpha {
            Some(alpha) => {
                let next = match self.ema {
                    None => mean_reward,
                    Some(prev) => alpha * mean_reward + (1.0 - alpha) * prev,
                };
                self.ema = Some(next);
                Ok((next, next > self.threshold))
            }
            None => {
                let mean = windowed_mean_of(&self.recent, self.window)?;
                Ok((mean, self.recent.len() == self.window && mean > self.threshold))
            }
        }
    }

    /// Replaces the baseline and records `dataset` as a stepping stone.
    pub fn promote(&mut self, step: usize, student: StudentState, dataset: CandidateDataset) -> Result<()> {
        let reward = dataset
            .reward
            .ok_or_else(|| contract("promoted dataset has no reward"))?;
        self.baseline = student;
        self.best.push(dataset);
        self.history.push(Promotion { step, reward });
        self.stage += 1;
        if self.reset_on_promotion {
            self.recent.clear();
            self.ema = None;
        }
        Ok(())
    }
}

/// Index of the median reward; the lower median for even counts. Ties keep
/// the earlier repeat.
pub fn median_index(rewards: &[f64]) -> Result<usize> {
    if rewards.is_empty() {
        return Err(contract("median of no rewards"));
    }
    let mut order: Vec<usize> = (0..rewards.len()).collect();
    order.sort_by(|&a, &b| rewards[a].total_cmp(&rewards[b]).then(a.cmp(&b)));
    Ok(order[(rewards.len() - 1) / 2])
}

pub fn select_promotion_student(rewards: &[f64], students: &[StudentState]) -> Result<StudentState> {
    if rewards.len() != students.len() {
        return Err(contract("one student per repeat reward required"));
    }
    Ok(students[median_index(rewards)?].clone())
}

/// Grounded reward of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedReward {
    pub reward: f64,
    pub repeat_rewards: Vec<f64>,
    pub students: Vec<StudentState>,
}

/// Trains one student per seed on `dataset` and returns the mean accuracy
/// gain on `reward_questions` over `baseline_accuracy`.
#[allow(clippy::too_many_arguments)]
pub fn grounded_reward(
    dataset: &CandidateDataset,
    baseline: &StudentState,
    baseline_accuracy: f64,
    stage: usize,
    reward_questions: &[Task],
    inner: &InnerLoopConfig,
    env: &EnvProfile,
    seeds: &[u64],
) -> Result<GroundedReward> {
    if reward_questions.is_empty() {
        return Err(contract("grounded reward needs at least one question"));
    }
    if seeds.is_empty() {
        return Err(contract("grounded reward needs at least one repeat"));
    }
    let results: Vec<(f64, StudentState)> = seeds
        .par_iter()
        .map(|&seed| {
            let student = rl_update_student(baseline, &dataset.items, inner, stage, env, seed)?;
            let acc = greedy_accuracy(&student, reward_questions)?;
            Ok((acc - baseline_accuracy, student))
        })
        .collect::<Result<_>>()?;
    let (repeat_rewards, students): (Vec<f64>, Vec<StudentState>) = results.into_iter().unzip();
    let reward = repeat_rewards.iter().sum::<f64>() / repeat_rewards.len() as f64;
    Ok(GroundedReward {
        reward,
        repeat_rewards,
        students,
    })
}

/// Per-item learnability: 0 for a never-solved item, `1 - s` otherwise.
pub fn learnability_item_reward(success_rate: f64) -> f64 {
    if success_rate == 0.0 {
        0.0
    } else {
        1.0 - success_rate
    }
}

/// Mean learnability over the dataset, with each item's success rate
/// estimated from `samples` answers scored against the teacher's key.
pub fn learnability_reward<R: Rng + ?Sized>(
    dataset: &CandidateDataset,
    baseline: &StudentState,
    samples: usize,
    env: &EnvProfile,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(contract("learnability needs at least one sample"));
    }
    if dataset.items.is_empty() {
        return Err(contract("learnability of an empty dataset"));
    }
    let mut total = 0.0;
    for qa in &dataset.items {
        let head = baseline.answer_head(qa.task.level)?;
        let mut hits = 0usize;
        for _ in 0..samples {
            let answer = match head.sample(rng) {
                HEAD_TRUTH => Some(qa.task.answer),
                HEAD_DISTRACTOR => Some(qa.task.distractor(env.alphabet)),
                _ => None,
            };
            if answer == Some(qa.proposed_answer) {
                hits += 1;
            }
        }
        total += learnability_item_reward(hits as f64 / samples as f64);
    }
    Ok(total / dataset.items.len() as f64)
}

/// One record per outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub rewards: Vec<f64>,
    pub window_mean: f64,
    pub promoted: bool,
    pub stage: usize,
    pub level_hist: Vec<usize>,
    /// Format rejections across the step's generations.
    pub retries: usize,
    pub vendi: f64,
    pub cosine_div: f64,
}

/// Generates `count` well-formed pairs from the teacher. Returns the pairs,
/// their unfiltered log-probabilities and the number of format rejections.
pub fn generate_items<R: Rng + ?Sized>(
    teacher: &CategoricalPolicy<f64>,
    env: &EnvProfile,
    count: usize,
    max_tries: usize,
    rng: &mut R,
) -> Result<(Vec<QaPair>, Vec<f64>, usize)> {
    let mut items = Vec::with_capacity(count);
    let mut log_probs = Vec::with_capacity(count);
    let mut retries = 0;
    for _ in 0..count {
        let g = teacher_generate(teacher, env, rng, max_tries)?;
        retries += g.tries - 1;
        items.push(g.pair);
        log_probs.push(g.log_prob);
    }
    Ok((items, log_probs, retries))
}

/// Splits generations, in order, into `groups` datasets of equal size.
pub fn partition(items: Vec<QaPair>, log_probs: &[f64], groups: usize) -> Result<Vec<CandidateDataset>> {
    if groups == 0 || !items.len().is_multiple_of(groups) || items.len() != log_probs.len() {
        return Err(contract("generations do not split evenly into datasets"));
    }
    let n = items.len() / groups;
    let mut out = Vec::with_capacity(groups);
    let mut iter = items.into_iter();
    for k in 0..groups {
        let chunk: Vec<QaPair> = iter.by_ref().take(n).collect();
        out.push(CandidateDataset {
            items: chunk,
            log_prob_sum: log_probs[k * n..(k + 1) * n].iter().sum(),
            reward: None,
        });
    }
    Ok(out)
}

/// Vendi score and mean pairwise cosine distance of the items' embeddings.
pub fn diversity_snapshot(items: &[QaPair]) -> Result<(f64, f64)> {
    let emb = EmbeddingMatrix::new(items.iter().map(|qa| embed(&qa.task).to_vec()).collect())?;
    let cos = if emb.len() >= 2 {
        pairwise_cosine_diversity(&emb)?
    } else {
        0.0
    };
    Ok((vendi_score(&emb)?, cos))
}

/// Everything one outer step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub teacher: TeacherState,
    pub ledger: PromotionLedger,
    pub report: StepReport,
    pub datasets: Vec<CandidateDataset>,
}

/// Per-run context shared by every outer step.
#[derive(Debug, Clone, Copy)]
pub struct OuterContext<'a> {
    pub env: &'a EnvProfile,
    pub train_tasks: &'a [Task],
    pub outer: &'a OuterLoopConfig,
    pub inner: &'a InnerLoopConfig,
    pub run_seed: u64,
}

/// One outer step. Inputs are not modified; on error nothing is committed and
/// the error names the step.
pub fn run_outer_step(
    teacher: &TeacherState,
    ledger: &PromotionLedger,
    ctx: &OuterContext<'_>,
    step: usize,
) -> Result<StepOutcome> {
    outer_step_inner(teacher, ledger, ctx, step).map_err(|e| Error::OuterStep {
        step,
        source: Box::new(e),
    })
}

fn outer_step_inner(
    teacher: &TeacherState,
    ledger: &PromotionLedger,
    ctx: &OuterContext<'_>,
    step: usize,
) -> Result<StepOutcome> {
    let OuterContext {
        env,
        train_tasks,
        outer: cfg,
        inner,
        run_seed,
    } = *ctx;
    cfg.validate()?;
    if train_tasks.is_empty() {
        return Err(contract("outer step needs a nonempty training set"));
    }
    let s = step as u64;

    // Teacher generation.
    let mut gen_rng = rng_for(&[run_seed, s, TAG_GENERATE]);
    let total = cfg.group_size * cfg.dataset_size;
    let (items, log_probs, retries) = generate_items(teacher.policy(), env, total, cfg.max_tries, &mut gen_rng)?;
    let mut level_hist = vec![0usize; env.levels()];
    for qa in &items {
        level_hist[qa.task.level] += 1;
    }
    let (vendi, cosine_div) = diversity_snapshot(&items)?;
    let mut datasets = partition(items, &log_probs, cfg.group_size)?;

    // Rewards.
    let mut grounded = None;
    match cfg.reward {
        TeacherReward::Grounded => {
            let mut q_rng = rng_for(&[run_seed, s, TAG_QUESTIONS]);
            let count = cfg.reward_questions.min(train_tasks.len());
            let questions: Vec<Task> = index::sample(&mut q_rng, train_tasks.len(), count)
                .into_iter()
                .map(|i| train_tasks[i].clone())
                .collect();
            let base_acc = BaselineCache::new().get(ledger.baseline(), &questions)?;
            let results: Vec<GroundedReward> = datasets
                .par_iter()
                .enumerate()
                .map(|(k, d)| {
                    let seeds: Vec<u64> = (0..cfg.repeats)
                        .map(|j| derive_seed(&[run_seed, s, TAG_STUDENT, k as u64, j as u64]))
                        .collect();
                    grounded_reward(
                        d,
                        ledger.baseline(),
                        base_acc,
                        ledger.stage(),
                        &questions,
                        inner,
                        env,
                        &seeds,
                    )
                })
                .collect::<Result<_>>()?;
            for (d, r) in datasets.iter_mut().zip(&results) {
                d.reward = Some(r.reward);
            }
            grounded = Some(results);
        }
        TeacherReward::Learnability => {
            let rewards: Vec<f64> = datasets
                .par_iter()
                .enumerate()
                .map(|(k, d)| {
                    let mut rng = rng_for(&[run_seed, s, TAG_LEARNABILITY, k as u64]);
                    learnability_reward(d, ledger.baseline(), cfg.learnability_samples, env, &mut rng)
                })
                .collect::<Result<_>>()?;
            for (d, r) in datasets.iter_mut().zip(rewards) {
                d.reward = Some(r);
            }
        }
    }
    let rewards: Vec<f64> = datasets.iter().map(|d| d.reward.unwrap_or(0.0)).collect();

    // Promotion check against the pre-step baseline.
    let mut next_ledger = ledger.clone();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let (window_mean, eligible) = next_ledger.observe(mean)?;
    let mut promoted = false;
    if let (true, Some(results)) = (eligible, grounded.as_ref()) {
        let best = argmax(&rewards);
        let student = select_promotion_student(&results[best].repeat_rewards, &results[best].students)?;
        next_ledger.promote(step, student, datasets[best].clone())?;
        promoted = true;
    }

    // Teacher update.
    let mut next_teacher = teacher.clone();
    next_teacher.update(&datasets, cfg.teacher_kl_coef)?;

    let report = StepReport {
        step,
        rewards,
        window_mean,
        promoted,
        stage: next_ledger.stage(),
        level_hist,
        retries,
        vendi,
        cosine_div,
    };
    Ok(StepOutcome {
        teacher: next_teacher,
        ledger: next_ledger,
        report,
        datasets,
    })
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
