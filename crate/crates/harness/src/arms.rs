//! Experiment arms: teacher sampling, student evaluation per source, and
//! diversity summaries.

use serde::{Deserialize, Serialize};
use soar_core::metrics::{pairwise_cosine_diversity, vendi_bootstrap, EmbeddingMatrix};
use soar_core::outer::{generate_items, TeacherState};
use soar_core::seed::{derive_seed, rng_for};
use soar_core::tasklab::{embed, greedy_accuracy, EnvProfile, QaPair, StudentState};

use crate::config::{Mixing, RunConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate_student, pass_at_k_table, StudentEval};
use crate::split::TaskSetSplit;

const TAG_SAMPLE: u64 = 0x5a3;
const TAG_EVAL: u64 = 0xe7a;
const TAG_PS: u64 = 0x95;
const TAG_DIVERSITY: u64 = 0xd17;

/// Bootstrapped Vendi score plus mean pairwise cosine distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub items: usize,
    pub vendi_mean: f64,
    pub vendi_std: f64,
    pub cosine_div: f64,
}

/// Diversity of a set of generated pairs, from their toy embeddings.
pub fn diversity(items: &[QaPair], subsample: usize, iterations: usize, seed: u64) -> Result<Diversity> {
    if items.len() < 2 {
        return Err(HarnessError::Config("diversity needs at least two items".into()));
    }
    let emb = EmbeddingMatrix::new(items.iter().map(|qa| embed(&qa.task).to_vec()).collect())?;
    let mut rng = rng_for(&[seed, TAG_DIVERSITY]);
    let (vendi_mean, vendi_std) = vendi_bootstrap(&emb, subsample, iterations, &mut rng)?;
    Ok(Diversity {
        items: items.len(),
        vendi_mean,
        vendi_std,
        cosine_div: pairwise_cosine_diversity(&emb)?,
    })
}

/// Well-formed pairs drawn from a teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSample {
    pub teacher_seed: u64,
    pub items: Vec<QaPair>,
    pub log_probs: Vec<f64>,
    pub retries: usize,
    pub level_hist: Vec<usize>,
}

pub fn sample_teacher(
    teacher: &TeacherState,
    env: &EnvProfile,
    count: usize,
    max_tries: usize,
    teacher_seed: u64,
) -> Result<TeacherSample> {
    let mut rng = rng_for(&[teacher_seed, TAG_SAMPLE]);
    let (items, log_probs, retries) = generate_items(teacher.policy(), env, count, max_tries, &mut rng)?;
    let mut level_hist = vec![0; env.levels()];
    for qa in &items {
        level_hist[qa.task.level] += 1;
    }
    Ok(TeacherSample {
        teacher_seed,
        items,
        log_probs,
        retries,
        level_hist,
    })
}

/// A teacher sample as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSampleRecord {
    pub arm: String,
    pub config_hash: String,
    /// Outer steps the sampled teacher had taken; `None` for the base teacher.
    pub checkpoint_step: Option<usize>,
    pub sample: TeacherSample,
}

/// Seed of the student run for a (teacher seed, student seed) cell.
pub fn eval_seed(teacher_seed: u64, student_seed: u64) -> u64 {
    derive_seed(&[teacher_seed, student_seed, TAG_EVAL])
}

/// Trains a fresh student with `synthetic` mixed in per `strategy` (no
/// synthetic items reproduces the hard-only arm).
pub fn evaluate_fresh(
    cfg: &RunConfig,
    split: &TaskSetSplit,
    synthetic: &[QaPair],
    strategy: Mixing,
    teacher_seed: u64,
    student_seed: u64,
) -> Result<StudentEval> {
    evaluate_student(
        &StudentState::fresh(&cfg.env),
        synthetic,
        &split.train,
        &split.test,
        strategy,
        &cfg.eval,
        &cfg.env,
        eval_seed(teacher_seed, student_seed),
    )
}

/// Direct test-set inference with a (promoted) student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceEval {
    pub k_list: Vec<usize>,
    pub pass_at_k: Vec<f64>,
    pub greedy: f64,
}

impl InferenceEval {
    pub fn pass_at(&self, k: usize) -> Option<f64> {
        self.k_list.iter().position(|&x| x == k).map(|i| self.pass_at_k[i])
    }
}

pub fn evaluate_inference(
    cfg: &RunConfig,
    split: &TaskSetSplit,
    student: &StudentState,
    teacher_seed: u64,
) -> Result<InferenceEval> {
    let mut rng = rng_for(&[teacher_seed, TAG_PS]);
    Ok(InferenceEval {
        k_list: cfg.eval.k_list.clone(),
        pass_at_k: pass_at_k_table(student, &split.test, cfg.eval.passk_samples, &cfg.eval.k_list, &mut rng)?,
        greedy: greedy_accuracy(student, &split.test)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalResult {
    Trained(StudentEval),
    Inference(InferenceEval),
}

/// One evaluated cell of the seed grid, tagged with its run identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub label: String,
    pub config_hash: String,
    pub teacher_seed: u64,
    pub student_seed: Option<u64>,
    pub result: EvalResult,
}

impl EvalRecord {
    pub fn k_list(&self) -> &[usize] {
        match &self.result {
            EvalResult::Trained(e) => &e.k_list,
            EvalResult::Inference(e) => &e.k_list,
        }
    }

    /// Reported pass@k: the post-early-stop window for trained students,
    /// direct inference otherwise.
    pub fn pass_at_k(&self) -> &[f64] {
        match &self.result {
            EvalResult::Trained(e) => &e.window_pass_at_k,
            EvalResult::Inference(e) => &e.pass_at_k,
        }
    }

    pub fn greedy(&self) -> f64 {
        match &self.result {
            EvalResult::Trained(e) => e.window_greedy,
            EvalResult::Inference(e) => e.greedy,
        }
    }
}
