//! Outer-loop runs with per-step logging and checkpoint/resume.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soar_core::outer::{
    run_outer_step, CandidateDataset, OuterContext, PromotionLedger, StepReport, TeacherReward, TeacherState,
};
use soar_core::tasklab::{greedy_accuracy, StudentState};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::split::TaskSetSplit;
use crate::store;

pub const STEPS_FILE: &str = "steps.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "run.json";
pub const PQ_FILE: &str = "pq.json";
pub const PS_FILE: &str = "ps.json";
pub const TEACHERS_DIR: &str = "teachers";

/// Identity of a run; written once when the run starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub arm: String,
    pub teacher_seed: u64,
    pub student_seed: Option<u64>,
    pub config_hash: String,
}

/// Best promoted student by training-set greedy accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotedStudent {
    pub step: usize,
    pub train_accuracy: f64,
    pub student: StudentState,
}

/// Accumulated promotion datasets of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionQuestions {
    pub config_hash: String,
    pub teacher_seed: u64,
    pub datasets: Vec<CandidateDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    teacher_seed: u64,
    next_step: usize,
    teacher: TeacherState,
    ledger: PromotionLedger,
    best: Option<PromotedStudent>,
}

/// Final state of an outer-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRun {
    pub reports: Vec<StepReport>,
    pub teacher: TeacherState,
    pub ledger: PromotionLedger,
    pub best: Option<PromotedStudent>,
}

impl OuterRun {
    pub fn promotions(&self) -> usize {
        self.ledger.history().len()
    }
}

/// Drives the outer loop for one teacher seed.
#[derive(Debug, Clone)]
pub struct OuterRunner<'a> {
    pub cfg: &'a RunConfig,
    pub split: &'a TaskSetSplit,
    pub teacher_seed: u64,
    pub reward: TeacherReward,
    /// Artifact directory; `None` keeps everything in memory.
    pub dir: Option<PathBuf>,
}

impl OuterRunner<'_> {
    pub fn arm_name(&self) -> &'static str {
        match self.reward {
            TeacherReward::Grounded => "soar",
            TeacherReward::Learnability => "intrinsic",
        }
    }

    /// Runs to the step budget, or only through step `stop_after - 1` when
    /// given. With `resume`, continues from the directory's checkpoint.
    pub fn run(&self, resume: bool, stop_after: Option<usize>) -> Result<OuterRun> {
        let cfg = self.cfg;
        let mut outer = cfg.outer.clone();
        outer.reward = self.reward;
        let hash = cfg.hash();
        let run_seed = self.teacher_seed;

        let (mut next_step, mut teacher, mut ledger, mut best, mut reports) = match (resume, self.dir.as_deref()) {
            (true, Some(dir)) if dir.join(CHECKPOINT_FILE).exists() => {
                let ck: Checkpoint = store::read_json(&dir.join(CHECKPOINT_FILE))?;
                if ck.config_hash != hash || ck.teacher_seed != self.teacher_seed {
                    return Err(HarnessError::Config(format!(
                        "checkpoint in {} belongs to a different config or seed",
                        dir.display()
                    )));
                }
                let steps = dir.join(STEPS_FILE);
                store::truncate_jsonl(&steps, ck.next_step)?;
                let reports: Vec<StepReport> = store::read_jsonl(&steps)?;
                (ck.next_step, ck.teacher, ck.ledger, ck.best, reports)
            }
            _ => {
                let teacher = TeacherState::base(&cfg.env, &outer)?;
                let ledger = PromotionLedger::new(StudentState::fresh(&cfg.env), &outer)?;
                if let Some(dir) = self.dir.as_deref() {
                    self.start_dir(dir, &hash)?;
                }
                (0, teacher, ledger, None, Vec::new())
            }
        };

        let ctx = OuterContext {
            env: &cfg.env,
            train_tasks: &self.split.train,
            outer: &outer,
            inner: &cfg.inner,
            run_seed,
        };
        let end = stop_after.unwrap_or(outer.max_steps).min(outer.max_steps);
        while next_step < end {
            let out = run_outer_step(&teacher, &ledger, &ctx, next_step)?;
            if out.report.promoted {
                let acc = greedy_accuracy(out.ledger.baseline(), &self.split.train)?;
                if best.as_ref().is_none_or(|b| acc > b.train_accuracy) {
                    best = Some(PromotedStudent {
                        step: next_step,
                        train_accuracy: acc,
                        student: out.ledger.baseline().clone(),
                    });
                }
            }
            teacher = out.teacher;
            ledger = out.ledger;
            next_step += 1;
            if let Some(dir) = self.dir.as_deref() {
                store::append_jsonl(&dir.join(STEPS_FILE), &out.report)?;
                store::write_json(&dir.join(TEACHERS_DIR).join(teacher_file(next_step)), &teacher)?;
                self.write_products(dir, &hash, &ledger, best.as_ref())?;
                store::write_json(
                    &dir.join(CHECKPOINT_FILE),
                    &Checkpoint {
                        config_hash: hash.clone(),
                        teacher_seed: self.teacher_seed,
                        next_step,
                        teacher: teacher.clone(),
                        ledger: ledger.clone(),
                        best: best.clone(),
                    },
                )?;
            }
            reports.push(out.report);
        }
        Ok(OuterRun {
            reports,
            teacher,
            ledger,
            best,
        })
    }

    fn start_dir(&self, dir: &Path, hash: &str) -> Result<()> {
        store::ensure_dir(dir)?;
        for name in [STEPS_FILE, CHECKPOINT_FILE, PQ_FILE, PS_FILE] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
            }
        }
        let teachers = dir.join(TEACHERS_DIR);
        if teachers.exists() {
            fs::remove_dir_all(&teachers).map_err(|e| HarnessError::io(&teachers, e))?;
        }
        fs::write(dir.join(STEPS_FILE), b"").map_err(|e| HarnessError::io(dir, e))?;
        store::write_json(
            &dir.join(MANIFEST_FILE),
            &RunManifest {
                arm: self.arm_name().to_string(),
                teacher_seed: self.teacher_seed,
                student_seed: None,
                config_hash: hash.to_string(),
            },
        )?;
        store::write_json(
            &dir.join(TEACHERS_DIR).join(teacher_file(0)),
            &TeacherState::base(&self.cfg.env, &self.cfg.outer)?,
        )
    }

    fn write_products(
        &self,
        dir: &Path,
        hash: &str,
        ledger: &PromotionLedger,
        best: Option<&PromotedStudent>,
    ) -> Result<()> {
        store::write_json(
            &dir.join(PQ_FILE),
            &PromotionQuestions {
                config_hash: hash.to_string(),
                teacher_seed: self.teacher_seed,
                datasets: ledger.best().to_vec(),
            },
        )?;
        store::write_json(&dir.join(PS_FILE), &best)
    }
}

/// File name of the teacher snapshot taken after `steps` outer steps.
pub fn teacher_file(steps: usize) -> String {
    format!("step_{steps:04}.json")
}

/// Loads the promotion datasets of a finished run.
pub fn load_pq(dir: &Path) -> Result<PromotionQuestions> {
    store::read_json(&dir.join(PQ_FILE))
}

pub fn load_ps(dir: &Path) -> Result<Option<PromotedStudent>> {
    store::read_json(&dir.join(PS_FILE))
}

pub fn load_reports(dir: &Path) -> Result<Vec<StepReport>> {
    store::read_jsonl(&dir.join(STEPS_FILE))
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    store::read_json(&dir.join(MANIFEST_FILE))
}

/// Teacher after `steps` outer steps, or the latest snapshot when `None`.
pub fn load_teacher(dir: &Path, steps: Option<usize>) -> Result<TeacherState> {
    let tdir = dir.join(TEACHERS_DIR);
    let name = match steps {
        Some(s) => teacher_file(s),
        None => {
            let mut names: Vec<String> = fs::read_dir(&tdir)
                .map_err(|e| HarnessError::io(&tdir, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.starts_with("step_") && n.ends_with(".json"))
                .collect();
            names.sort();
            names
                .pop()
                .ok_or_else(|| HarnessError::artifact(&tdir, "no teacher snapshots"))?
        }
    };
    store::read_json(&tdir.join(name))
}
