//! The plateau-escape comparison: SOAR against direct training on the hard
//! set, over the full teacher x student seed grid, kept in memory.

use std::time::{Duration, Instant};

use soar_core::outer::TeacherReward;
use soar_core::tasklab::{QaPair, StudentState};

use crate::arms::{diversity, evaluate_fresh, evaluate_inference, Diversity, InferenceEval};
use crate::config::{Mixing, RunConfig};
use crate::error::Result;
use crate::eval::StudentEval;
use crate::report::median;
use crate::soar::OuterRunner;
use crate::split::{filter_and_split, FilterSummary};

#[derive(Debug, Clone)]
pub struct TeacherSeedOutcome {
    pub teacher_seed: u64,
    pub promotions: usize,
    /// Test inference of the promoted student (the fresh student when no
    /// promotion happened).
    pub promoted_student: InferenceEval,
    /// Diversity of the promotion questions; `None` without a promotion.
    pub pq_diversity: Option<Diversity>,
    /// Fresh students trained on promotion questions plus the hard set, one
    /// per student seed.
    pub pq: Vec<StudentEval>,
    /// Fresh students trained on the hard set only, one per student seed.
    pub hard_only: Vec<StudentEval>,
}

#[derive(Debug, Clone)]
pub struct PlateauEscape {
    pub filter: FilterSummary,
    pub seeds: Vec<TeacherSeedOutcome>,
    pub elapsed: Duration,
}

impl PlateauEscape {
    pub fn hard_only_max_final_greedy(&self) -> f64 {
        self.seeds
            .iter()
            .flat_map(|s| s.hard_only.iter().map(|e| e.final_point.greedy))
            .fold(0.0, f64::max)
    }

    pub fn seeds_with_promotion(&self) -> usize {
        self.seeds.iter().filter(|s| s.promotions > 0).count()
    }

    pub fn median_promoted_pass(&self, k: usize) -> f64 {
        let v: Vec<f64> = self
            .seeds
            .iter()
            .map(|s| s.promoted_student.pass_at(k).unwrap_or(0.0))
            .collect();
        median(&v)
    }

    pub fn median_pq_pass(&self, k: usize) -> f64 {
        median(&self.collect(|s| &s.pq, k))
    }

    pub fn median_hard_only_pass(&self, k: usize) -> f64 {
        median(&self.collect(|s| &s.hard_only, k))
    }

    fn collect(&self, pick: impl Fn(&TeacherSeedOutcome) -> &Vec<StudentEval>, k: usize) -> Vec<f64> {
        self.seeds
            .iter()
            .flat_map(|s| pick(s).iter().map(|e| e.pass_at(k).unwrap_or(0.0)))
            .collect()
    }
}

/// Filter, then for every teacher seed: a SOAR run, promoted-student
/// inference, and PQ-mixed versus hard-only students for every student seed.
pub fn plateau_escape(cfg: &RunConfig) -> Result<PlateauEscape> {
    let start = Instant::now();
    let (split, filter) = filter_and_split(&cfg.env, &cfg.pool)?;
    let fresh = StudentState::fresh(&cfg.env);
    let mut seeds = Vec::new();
    for &ts in &cfg.seeds.teacher {
        let run = OuterRunner {
            cfg,
            split: &split,
            teacher_seed: ts,
            reward: TeacherReward::Grounded,
            dir: None,
        }
        .run(false, None)?;
        let ps = run.best.as_ref().map_or(&fresh, |b| &b.student);
        let promoted_student = evaluate_inference(cfg, &split, ps, ts)?;
        let synthetic: Vec<QaPair> = run.ledger.best().iter().flat_map(|d| d.items.clone()).collect();
        let pq_diversity = if synthetic.len() >= 2 {
            Some(diversity(
                &synthetic,
                cfg.eval.vendi_subsample,
                cfg.eval.vendi_iterations,
                ts,
            )?)
        } else {
            None
        };
        let mut pq = Vec::new();
        let mut hard_only = Vec::new();
        for &ss in &cfg.seeds.student {
            pq.push(evaluate_fresh(cfg, &split, &synthetic, Mixing::Mixed, ts, ss)?);
            hard_only.push(evaluate_fresh(cfg, &split, &[], Mixing::Mixed, ts, ss)?);
        }
        seeds.push(TeacherSeedOutcome {
            teacher_seed: ts,
            promotions: run.promotions(),
            promoted_student,
            pq_diversity,
            pq,
            hard_only,
        });
    }
    Ok(PlateauEscape {
        filter,
        seeds,
        elapsed: start.elapsed(),
    })
}
