//! Run configuration: everything needed to reproduce an experiment.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use soar_core::inner::InnerLoopConfig;
use soar_core::outer::OuterLoopConfig;
use soar_core::tasklab::EnvProfile;

use crate::error::HarnessError;

/// Budget profile. `Desk` shrinks outer and student step budgets so the full
/// pipeline runs in minutes; `Full` keeps the full-scale budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

/// How synthetic and real questions are combined when training a student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mixing {
    /// Synthetic only for the warmup steps, then real only.
    Curriculum,
    /// Uniform draws over the union for the whole run.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    /// Tasks generated per ladder level before filtering.
    pub per_level: usize,
    /// Attempts per task in the fail@k filter.
    pub fail_k: usize,
    pub pool_seed: u64,
    pub filter_seed: u64,
    pub split_seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            per_level: 64,
            fail_k: 128,
            pool_seed: 17,
            filter_seed: 23,
            split_seed: 29,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub strategy: Mixing,
    pub synthetic_warmup_steps: usize,
    pub max_student_steps: usize,
    pub passk_samples: usize,
    pub k_list: Vec<usize>,
    /// Test pass@k is measured every `cadence` student steps.
    pub cadence: usize,
    /// Test metrics are averaged over this many steps after the early stop.
    pub report_window: usize,
    pub smooth_window: usize,
    pub slope_fraction: f64,
    pub batch_size: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub kl_coef: f64,
    /// Items the base-teacher arm samples.
    pub base_teacher_samples: usize,
    /// Subsample size and iterations of the Vendi bootstrap.
    pub vendi_subsample: usize,
    pub vendi_iterations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategy: Mixing::Mixed,
            synthetic_warmup_steps: 64,
            max_student_steps: 1500,
            passk_samples: 32,
            k_list: vec![1, 4, 8, 16, 32],
            cadence: 10,
            report_window: 200,
            smooth_window: 25,
            slope_fraction: 0.15,
            batch_size: 8,
            group_size: 32,
            learning_rate: 0.05,
            warmup_steps: 0,
            kl_coef: 0.001,
            base_teacher_samples: 128,
            vendi_subsample: 128,
            vendi_iterations: 100,
        }
    }
}

/// Teacher seeds and, nested under each, student seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRoster {
    pub teacher: Vec<u64>,
    pub student: Vec<u64>,
}

impl Default for SeedRoster {
    fn default() -> Self {
        SeedRoster {
            teacher: vec![1, 2, 3, 4, 5],
            student: vec![101, 102],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvProfile,
    pub pool: PoolConfig,
    pub outer: OuterLoopConfig,
    pub inner: InnerLoopConfig,
    pub eval: EvalConfig,
    pub seeds: SeedRoster,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = RunConfig {
            env: EnvProfile::default(),
            pool: PoolConfig::default(),
            outer: OuterLoopConfig::default(),
            inner: InnerLoopConfig::default(),
            eval: EvalConfig::default(),
            seeds: SeedRoster::default(),
            output_dir: PathBuf::from("runs"),
        };
        cfg.apply_profile(profile);
        cfg
    }

    /// Overwrites the step budgets with the profile's values.
    pub fn apply_profile(&mut self, profile: Profile) {
        match profile {
            Profile::Desk => {
                self.outer.max_steps = 60;
                self.eval.max_student_steps = 300;
                self.eval.report_window = 100;
            }
            Profile::Full => {
                self.outer.max_steps = 200;
                self.eval.max_student_steps = 1500;
                self.eval.report_window = 200;
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let core = |e: soar_core::Error| HarnessError::Config(e.to_string());
        self.env.validate().map_err(core)?;
        self.outer.validate().map_err(core)?;
        self.inner.validate().map_err(core)?;
        let e = &self.eval;
        if e.max_student_steps == 0
            || e.passk_samples == 0
            || e.cadence == 0
            || e.report_window == 0
            || e.batch_size == 0
            || e.smooth_window == 0
            || e.vendi_subsample == 0
            || e.vendi_iterations == 0
        {
            return Err(HarnessError::Config("evaluation counts must be positive".into()));
        }
        if e.group_size < 2 {
            return Err(HarnessError::Config("evaluation group size must be at least 2".into()));
        }
        if e.k_list.is_empty() || e.k_list.iter().any(|&k| k == 0 || k > e.passk_samples) {
            return Err(HarnessError::Config(format!(
                "every k must lie in 1..={} (the pass@k sample count)",
                e.passk_samples
            )));
        }
        if !(e.slope_fraction > 0.0 && e.slope_fraction < 1.0) {
            return Err(HarnessError::Config("slope_fraction must lie in (0, 1)".into()));
        }
        let p = &self.pool;
        if p.per_level == 0 || p.fail_k == 0 {
            return Err(HarnessError::Config("pool counts must be positive".into()));
        }
        if self.seeds.teacher.is_empty() || self.seeds.student.is_empty() {
            return Err(HarnessError::Config(
                "seed roster needs teacher and student seeds".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output directory
    /// and the seed roster are excluded: a run is identified by this hash
    /// together with its own seeds.
    pub fn hash(&self) -> String {
        let mut identity = self.clone();
        identity.output_dir = PathBuf::new();
        identity.seeds = SeedRoster {
            teacher: Vec::new(),
            student: Vec::new(),
        };
        let json = serde_json::to_vec(&identity).expect("config serializes");
        let digest = Sha256::digest(json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short prefix of [`RunConfig::hash`] used in artifact headers.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}
