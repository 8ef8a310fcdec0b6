//! Synthetic verifiable-task environment.
//!
//! Tasks sit on a ladder of difficulty levels `0..=D`. A student holds one
//! latent skill per level; its effective competence at level `d` is
//! `(K w)_d`, where `K` is a band kernel that lets practice on one level leak
//! into its neighbours. The probability of answering a level-`d` task
//! correctly is `sigmoid(sharpness * ((K w)_d - b_d))`.
//!
//! The student's answer head is a three-way categorical
//! `[truth, distractor, malformed]` with logits
//! `[s, ln(1 - mu), ln(mu)]`, `s = sharpness * ((K w)_d - b_d)`, which puts
//! exactly `sigmoid(s)` on the truth and splits the rest between a fixed
//! per-task wrong answer and unparseable output.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::policy::{CategoricalPolicy, Gradient};
use crate::rloo::{resample_until, Rollout, RolloutGroup};
use crate::scalar::sigmoid;
use crate::seed::mix64;

pub const REWARD_CORRECT: f64 = 120.0;
pub const REWARD_MENTION: f64 = 20.0;
pub const REWARD_FORMATTED: f64 = 10.0;
pub const REWARD_MALFORMED: f64 = 0.0;

/// Answer-head outcome indices.
pub const HEAD_TRUTH: usize = 0;
pub const HEAD_DISTRACTOR: usize = 1;
pub const HEAD_MALFORMED: usize = 2;

/// Task ids at or above this value were minted by a teacher.
pub const SYNTHETIC_ID_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Number of neighbouring levels on each side that receive transfer.
    pub bandwidth: usize,
    /// Weight of the first off-diagonal; level distance `k` gets `weight^k`.
    pub off_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Width (in levels) of the Gaussian level profile.
    pub level_width: f64,
    /// Share of squared norm carried by the level profile; the remainder is
    /// task-specific and lives in a block private to the task's level.
    pub level_share: f64,
    /// Dimension of each level's task-specific block.
    pub task_dims: usize,
}

/// Static description of the ladder, the teacher's generation channel and
/// the student's answer head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvProfile {
    /// Top level `D`; the ladder has `D + 1` levels.
    pub top_level: usize,
    /// Difficulty offsets `b_d`, strictly increasing.
    pub offsets: Vec<f64>,
    /// Probability that the teacher's proposed answer is correct, per level.
    pub generator_competence: Vec<f64>,
    /// Probability that a teacher generation is malformed, per level.
    pub format_failure: Vec<f64>,
    pub alphabet: usize,
    pub kernel: KernelSpec,
    /// Chance that a formatted emission also mentions the reference key.
    pub mention_prob: f64,
    /// Share of the student's non-truth mass that is malformed output.
    pub malformed_share: f64,
    pub answer_sharpness: f64,
    pub features: FeatureSpec,
}

impl Default for EnvProfile {
    fn default() -> Self {
        let levels = 9;
        let lerp = |a: f64, b: f64| -> Vec<f64> {
            (0..levels)
                .map(|d| a + (b - a) * d as f64 / (levels - 1) as f64)
                .collect()
        };
        EnvProfile {
            top_level: levels - 1,
            // Easy shelf (0..=3), then a gap to the hard levels (4..=8). With
            // w = 0 the hard levels survive a 0/128 filter almost surely while
            // the shelf never does.
            offsets: vec![-3.0, -1.5, 0.0, 3.0, 9.5, 10.5, 11.5, 12.5, 13.5],
            generator_competence: lerp(0.95, 0.25),
            format_failure: vec![0.15; levels],
            alphabet: 16,
            kernel: KernelSpec {
                bandwidth: 1,
                off_diagonal: 0.35,
            },
            mention_prob: 0.1,
            malformed_share: 0.1,
            answer_sharpness: 1.0,
            features: FeatureSpec {
                level_width: 0.6,
                level_share: 0.6,
                task_dims: 4,
            },
        }
    }
}

impl EnvProfile {
    pub fn levels(&self) -> usize {
        self.top_level + 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels();
        for (name, v) in [
            ("offsets", &self.offsets),
            ("generator_competence", &self.generator_competence),
            ("format_failure", &self.format_failure),
        ] {
            if v.len() != n {
                return Err(contract(format!("{name} has {} entries, ladder has {n}", v.len())));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("environment profile"));
            }
        }
        if !self.offsets.windows(2).all(|w| w[0] < w[1]) {
            return Err(contract("offsets must be strictly increasing"));
        }
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !self.generator_competence.iter().all(|&q| prob(q)) || !self.format_failure.iter().all(|&f| prob(f)) {
            return Err(contract("per-level probabilities must lie in [0, 1]"));
        }
        if !self.generator_competence.windows(2).all(|w| w[0] >= w[1]) {
            return Err(contract("generator competence must be nonincreasing in level"));
        }
        if self.format_failure.iter().all(|&f| f >= 1.0) {
            return Err(contract("every level always fails formatting"));
        }
        if self.alphabet < 2 {
            return Err(contract("answer alphabet needs at least 2 symbols"));
        }
        if !(self.malformed_share > 0.0 && self.malformed_share < 1.0) {
            return Err(contract("malformed_share must lie in (0, 1)"));
        }
        if !prob(self.mention_prob) {
            return Err(contract("mention_prob must lie in [0, 1]"));
        }
        if !(self.answer_sharpness > 0.0 && self.answer_sharpness.is_finite()) {
            return Err(contract("answer sharpness must be positive"));
        }
        if !(self.kernel.off_diagonal >= 0.0 && self.kernel.off_diagonal.is_finite()) {
            return Err(contract("kernel weights must be nonnegative"));
        }
        let f = &self.features;
        if !(f.level_width > 0.0 && f.level_share > 0.0 && f.level_share < 1.0 && f.task_dims > 0) {
            return Err(contract("invalid feature specification"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> TransferKernel {
        TransferKernel::band(self.levels(), self.kernel.bandwidth, self.kernel.off_diagonal)
    }

    pub fn feature_dim(&self) -> usize {
        self.levels() * (1 + self.features.task_dims)
    }
}

/// Dense `(D+1) x (D+1)` nonnegative transfer matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferKernel {
    dim: usize,
    weights: Vec<f64>,
}

impl TransferKernel {
    pub fn band(dim: usize, bandwidth: usize, off_diagonal: f64) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let dist = i.abs_diff(j);
                if dist <= bandwidth {
                    weights[i * dim + j] = off_diagonal.powi(dist as i32);
                }
            }
        }
        TransferKernel { dim, weights }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(w).map(|(k, x)| k * x).sum())
            .collect()
    }
}

/// A verifiable task. `features` is unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub level: usize,
    pub answer: usize,
    pub features: Vec<f64>,
}

impl Task {
    /// Builds a task whose feature vector is a deterministic function of
    /// `(id, level)`.
    pub fn new(id: u64, level: usize, answer: usize, env: &EnvProfile) -> Result<Self> {
        if level > env.top_level {
            return Err(contract(format!("level {level} above top level {}", env.top_level)));
        }
        if answer >= env.alphabet {
            return Err(contract(format!("answer {answer} outside alphabet")));
        }
        Ok(Task {
            id,
            level,
            answer,
            features: task_features(id, level, env),
        })
    }

    pub fn is_synthetic(&self) -> bool {
        self.id >= SYNTHETIC_ID_BASE
    }

    /// The fixed wrong answer the student falls back to on this task.
    pub fn distractor(&self, alphabet: usize) -> usize {
        let shift = 1 + (mix64(self.id) % (alphabet as u64 - 1)) as usize;
        (self.answer + shift) % alphabet
    }
}

fn task_features(id: u64, level: usize, env: &EnvProfile) -> Vec<f64> {
    let spec = &env.features;
    let levels = env.levels();
    let mut profile: Vec<f64> = (0..levels)
        .map(|j| {
            let dz = (j as f64 - level as f64) / spec.level_width;
            (-0.5 * dz * dz).exp()
        })
        .collect();
    normalize(&mut profile);

    let mut rng = ChaCha8Rng::seed_from_u64(mix64(id ^ 0x7a5c_e11f_0000_0000));
    let mut own: Vec<f64> = (0..spec.task_dims).map(|_| rng.random::<f64>() + 1e-3).collect();
    normalize(&mut own);

    let a = spec.level_share.sqrt();
    let b = (1.0 - spec.level_share).sqrt();
    let mut out = vec![0.0; env.feature_dim()];
    for (j, p) in profile.iter().enumerate() {
        out[j] = a * p;
    }
    let start = levels + level * spec.task_dims;
    for (k, u) in own.iter().enumerate() {
        out[start + k] = b * u;
    }
    normalize(&mut out);
    out
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

/// Unit-norm embedding of a task.
pub fn embed(task: &Task) -> &[f64] {
    &task.features
}

/// A question with the teacher's proposed answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub task: Task,
    pub proposed_answer: usize,
    pub well_formed: bool,
}

impl QaPair {
    /// A real question whose key is the ground truth.
    pub fn from_task(task: Task) -> Self {
        let proposed_answer = task.answer;
        QaPair {
            task,
            proposed_answer,
            well_formed: true,
        }
    }

    pub fn key_is_correct(&self) -> bool {
        self.proposed_answer == self.task.answer
    }
}

/// Something the student produced: `answer == None` means unparseable
/// output. `mentions` lists answers appearing in the emission's working.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Emission {
    pub answer: Option<usize>,
    pub mentions: Vec<usize>,
}

/// Reward ladder: exact match 120, key mentioned 20, formatted 10, else 0.
pub fn verify(emission: &Emission, key: usize) -> f64 {
    match emission.answer {
        None => REWARD_MALFORMED,
        Some(a) if a == key => REWARD_CORRECT,
        Some(_) if emission.mentions.contains(&key) => REWARD_MENTION,
        Some(_) => REWARD_FORMATTED,
    }
}

/// Student parameters. The optimizer lives with whoever trains the student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentState {
    skills: Vec<f64>,
    kernel: TransferKernel,
    offsets: Vec<f64>,
    sharpness: f64,
    malformed_share: f64,
}

impl StudentState {
    /// Fresh student with all skills at zero.
    pub fn fresh(env: &EnvProfile) -> Self {
        StudentState {
            skills: vec![0.0; env.levels()],
            kernel: env.kernel(),
            offsets: env.offsets.clone(),
            sharpness: env.answer_sharpness,
            malformed_share: env.malformed_share,
        }
    }

    pub fn with_skills(mut self, skills: Vec<f64>) -> Result<Self> {
        if skills.len() != self.skills.len() {
            return Err(contract("skill vector has the wrong length"));
        }
        if !skills.iter().all(|s| s.is_finite()) {
            return Err(Error::NonFinite("skills"));
        }
        self.skills = skills;
        Ok(self)
    }

    pub fn skills(&self) -> &[f64] {
        &self.skills
    }

    pub(crate) fn skills_mut(&mut self) -> &mut Vec<f64> {
        &mut self.skills
    }

    pub fn levels(&self) -> usize {
        self.skills.len()
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn kernel(&self) -> &TransferKernel {
        &self.kernel
    }

    /// `(K w)_d` for every level.
    pub fn competence(&self) -> Vec<f64> {
        self.kernel.apply(&self.skills)
    }

    fn margin(&self, level: usize) -> f64 {
        let theta: f64 = self
            .kernel
            .row(level)
            .iter()
            .zip(&self.skills)
            .map(|(k, w)| k * w)
            .sum();
        self.sharpness * (theta - self.offsets[level])
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level < self.levels() {
            Ok(())
        } else {
            Err(contract(format!("level {level} outside ladder of {}", self.levels())))
        }
    }

    /// Probability of answering a task at `level` correctly.
    pub fn success_prob_at(&self, level: usize) -> Result<f64> {
        self.check_level(level)?;
        Ok(sigmoid(self.margin(level)))
    }

    /// Answer head at `level` as a categorical policy.
    pub fn answer_head(&self, level: usize) -> Result<CategoricalPolicy<f64>> {
        self.check_level(level)?;
        CategoricalPolicy::new(vec![
            self.margin(level),
            (1.0 - self.malformed_share).ln(),
            self.malformed_share.ln(),
        ])
    }

    /// Chain rule from head-logit gradient to skill gradient: only the truth
    /// logit depends on the skills, with `d s / d w = sharpness * K[level, :]`.
    pub fn head_to_skill_gradient(&self, level: usize, head_grad: &Gradient<f64>) -> Result<Gradient<f64>> {
        self.check_level(level)?;
        let scale = head_grad[HEAD_TRUTH] * self.sharpness;
        Gradient::from_vec(self.kernel.row(level).iter().map(|k| scale * k).collect())
    }

    /// Hash of the full parameter state (bitwise).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in self
            .skills
            .iter()
            .chain(&self.offsets)
            .chain(std::iter::once(&self.sharpness))
            .chain(std::iter::once(&self.malformed_share))
        {
            v.to_bits().hash(&mut h);
        }
        self.kernel.dim.hash(&mut h);
        for w in &self.kernel.weights {
            w.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

pub fn student_success_prob(student: &StudentState, task: &Task) -> Result<f64> {
    student.success_prob_at(task.level)
}

/// Emission produced by a head outcome on `task`.
fn emission_for<R: Rng + ?Sized>(outcome: usize, task: &Task, key: usize, env: &EnvProfile, rng: &mut R) -> Emission {
    let answer = match outcome {
        HEAD_TRUTH => Some(task.answer),
        HEAD_DISTRACTOR => Some(task.distractor(env.alphabet)),
        _ => None,
    };
    let mut mentions = Vec::with_capacity(2);
    if let Some(a) = answer {
        mentions.push(a);
        if rng.random::<f64>() < env.mention_prob && a != key {
            mentions.push(key);
        }
    }
    Emission { answer, mentions }
}

/// Draws `group_size` answers from the student on `qa` and scores each one
/// against the teacher's proposed answer.
pub fn student_rollout<R: Rng + ?Sized>(
    student: &StudentState,
    qa: &QaPair,
    group_size: usize,
    env: &EnvProfile,
    rng: &mut R,
) -> Result<RolloutGroup<f64>> {
    if !qa.well_formed {
        return Err(contract("cannot roll out on a malformed question"));
    }
    let head = student.answer_head(qa.task.level)?;
    let log_probs = head.log_probabilities();
    let rollouts = (0..group_size)
        .map(|_| {
            let outcome = head.sample(rng);
            let emission = emission_for(outcome, &qa.task, qa.proposed_answer, env, rng);
            Rollout {
                outcome,
                log_prob: log_probs[outcome],
                reward: verify(&emission, qa.proposed_answer),
            }
        })
        .collect();
    RolloutGroup::new(rollouts)
}

/// One sampled attempt: did the student emit the ground-truth answer?
pub fn sample_success<R: Rng + ?Sized>(student: &StudentState, task: &Task, rng: &mut R) -> Result<bool> {
    let p = student.success_prob_at(task.level)?;
    Ok(rng.random::<f64>() < p)
}

/// Fraction of tasks on which the student's most likely output is the
/// ground-truth answer. Deterministic.
pub fn greedy_accuracy(student: &StudentState, tasks: &[Task]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(contract("greedy accuracy over an empty task list"));
    }
    let mut hits = 0usize;
    for t in tasks {
        if student.answer_head(t.level)?.argmax() == HEAD_TRUTH {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

/// A teacher generation that passed the format filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub pair: QaPair,
    /// Unfiltered log-probability of the chosen level under the teacher.
    pub log_prob: f64,
    pub tries: usize,
}

/// Samples a level from the teacher, rejecting malformed generations, then
/// draws the task and the teacher's (possibly wrong) answer.
pub fn teacher_generate<R: Rng + ?Sized>(
    teacher: &CategoricalPolicy<f64>,
    env: &EnvProfile,
    rng: &mut R,
    max_tries: usize,
) -> Result<Generation> {
    if teacher.len() != env.levels() {
        return Err(contract("teacher policy does not cover the ladder"));
    }
    let (level, tries) = resample_until(max_tries, || {
        let level = teacher.sample(rng);
        let malformed = rng.random::<f64>() < env.format_failure[level];
        (!malformed).then_some(level)
    })?;
    let id = SYNTHETIC_ID_BASE | (rng.random::<u64>() >> 2);
    let answer = rng.random_range(0..env.alphabet);
    let proposed_answer = if rng.random::<f64>() < env.generator_competence[level] {
        answer
    } else {
        let shift = rng.random_range(1..env.alphabet);
        (answer + shift) % env.alphabet
    };
    let task = Task::new(id, level, answer, env)?;
    Ok(Generation {
        pair: QaPair {
            task,
            proposed_answer,
            well_formed: true,
        },
        log_prob: teacher.log_prob(level)?,
        tries,
    })
}

/// `per_level` tasks at every level of the ladder, ids `0..`.
pub fn generate_pool(env: &EnvProfile, per_level: usize, seed: u64) -> Result<Vec<Task>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(per_level * env.levels());
    for level in 0..env.levels() {
        for _ in 0..per_level {
            let id = tasks.len() as u64;
            let answer = rng.random_range(0..env.alphabet);
            tasks.push(Task::new(id, level, answer, env)?);
        }
    }
    Ok(tasks)
}
