//! Long-horizon student training and pass@k evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use soar_core::inner::StudentTrainer;
use soar_core::metrics::{early_stop_step, pass_at_k, EarlyStop, MetricSeries, SampleRecord};
use soar_core::optim::AdamWConfig;
use soar_core::seed::rng_for;
use soar_core::tasklab::{greedy_accuracy, sample_success, EnvProfile, QaPair, StudentState, Task};

use crate::config::{EvalConfig, Mixing};
use crate::error::{HarnessError, Result};

/// Mean pass@k over `tasks`, one entry per `k`, from `samples` draws per task.
pub fn pass_at_k_table<R: Rng + ?Sized>(
    student: &StudentState,
    tasks: &[Task],
    samples: usize,
    ks: &[usize],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(HarnessError::Config("pass@k over an empty task set".into()));
    }
    let mut sums = vec![0.0; ks.len()];
    for t in tasks {
        let mut c = 0;
        for _ in 0..samples {
            if sample_success(student, t, rng)? {
                c += 1;
            }
        }
        let rec = SampleRecord::new(t.id, samples, c)?;
        for (s, &k) in sums.iter_mut().zip(ks) {
            *s += pass_at_k(&rec, k)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / tasks.len() as f64).collect())
}

/// Test metrics at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub step: usize,
    pub pass_at_k: Vec<f64>,
    pub greedy: f64,
}

/// Result of training one student under the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentEval {
    pub k_list: Vec<usize>,
    /// Mean rollout reward per student step.
    pub train_reward: Vec<f64>,
    pub test: Vec<TestPoint>,
    pub early_stop: Option<usize>,
    /// `[start, end)` of the steps whose test points were averaged.
    pub window: (usize, usize),
    pub window_pass_at_k: Vec<f64>,
    pub window_greedy: f64,
    pub final_point: TestPoint,
}

impl StudentEval {
    /// Windowed pass@k for a particular `k`.
    pub fn pass_at(&self, k: usize) -> Option<f64> {
        self.k_list
            .iter()
            .position(|&x| x == k)
            .map(|i| self.window_pass_at_k[i])
    }
}

/// Trains `start` for `max_student_steps` steps on real tasks, optionally
/// with synthetic pairs mixed in per `strategy`, measuring the test set
/// every `cadence` steps.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_student(
    start: &StudentState,
    synthetic: &[QaPair],
    train: &[Task],
    test: &[Task],
    strategy: Mixing,
    cfg: &EvalConfig,
    env: &EnvProfile,
    seed: u64,
) -> Result<StudentEval> {
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::Config(
            "evaluation needs nonempty train and test sets".into(),
        ));
    }
    let real: Vec<QaPair> = train.iter().cloned().map(QaPair::from_task).collect();
    let union: Vec<&QaPair> = synthetic.iter().chain(&real).collect();
    let real_refs: Vec<&QaPair> = real.iter().collect();
    let synth_refs: Vec<&QaPair> = synthetic.iter().collect();

    let steps = cfg.max_student_steps;
    let opt = AdamWConfig::new(cfg.learning_rate, cfg.warmup_steps, steps);
    let mut trainer = StudentTrainer::new(start.clone(), opt, cfg.group_size, cfg.kl_coef)?;
    let mut train_reward = Vec::with_capacity(steps);
    let mut points = Vec::new();
    let measure = |student: &StudentState, step: usize| -> Result<TestPoint> {
        let mut rng = rng_for(&[seed, 0x7e57, step as u64]);
        Ok(TestPoint {
            step,
            pass_at_k: pass_at_k_table(student, test, cfg.passk_samples, &cfg.k_list, &mut rng)?,
            greedy: greedy_accuracy(student, test)?,
        })
    };

    for t in 0..steps {
        if t % cfg.cadence == 0 {
            points.push(measure(trainer.student(), t)?);
        }
        let source: &[&QaPair] = match strategy {
            _ if synthetic.is_empty() => &real_refs,
            Mixing::Curriculum if t < cfg.synthetic_warmup_steps => &synth_refs,
            Mixing::Curriculum => &real_refs,
            Mixing::Mixed => &union,
        };
        let mut rng = rng_for(&[seed, t as u64]);
        let batch: Vec<&QaPair> = (0..cfg.batch_size)
            .map(|_| source[rng.random_range(0..source.len())])
            .collect();
        let stats = trainer.step(&batch, env, &mut rng)?;
        train_reward.push(stats.mean_reward);
    }
    let final_point = measure(trainer.student(), steps)?;
    points.push(final_point.clone());

    let series = MetricSeries::from_values(train_reward.iter().copied())?;
    let early_stop = if series.len() > cfg.smooth_window {
        match early_stop_step(&series, cfg.smooth_window, cfg.slope_fraction)? {
            EarlyStop::At(s) => Some(s),
            EarlyStop::NoPlateau => None,
        }
    } else {
        None
    };
    let window = match early_stop {
        Some(s) => (s, (s + cfg.report_window).min(steps + 1)),
        None => (steps.saturating_sub(cfg.report_window), steps + 1),
    };
    let in_window: Vec<&TestPoint> = points
        .iter()
        .filter(|p| p.step >= window.0 && p.step < window.1)
        .collect();
    let chosen: Vec<&TestPoint> = if in_window.is_empty() {
        vec![&final_point]
    } else {
        in_window
    };
    let n = chosen.len() as f64;
    let window_pass_at_k = (0..cfg.k_list.len())
        .map(|i| chosen.iter().map(|p| p.pass_at_k[i]).sum::<f64>() / n)
        .collect();
    let window_greedy = chosen.iter().map(|p| p.greedy).sum::<f64>() / n;

    Ok(StudentEval {
        k_list: cfg.k_list.clone(),
        train_reward,
        test: points,
        early_stop,
        window,
        window_pass_at_k,
        window_greedy,
        final_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use soar_core::tasklab::Task;

    #[test]
    fn pass_at_k_table_extremes() {
        let env = EnvProfile::default();
        let tasks: Vec<Task> = (0..4).map(|i| Task::new(i, 8, 0, &env).unwrap()).collect();
        let mut rng = rng_for(&[1]);
        let fresh = StudentState::fresh(&env);
        let t = pass_at_k_table(&fresh, &tasks, 32, &[1, 32], &mut rng).unwrap();
        assert!(t.iter().all(|&v| v < 0.01));
        let expert = fresh.with_skills(vec![60.0; env.levels()]).unwrap();
        let t = pass_at_k_table(&expert, &tasks, 32, &[1, 32], &mut rng).unwrap();
        assert_eq!(t, vec![1.0, 1.0]);
    }

    #[test]
    fn curriculum_without_warmup_equals_hard_only() {
        let env = EnvProfile::default();
        let train: Vec<Task> = (0..6)
            .map(|i| Task::new(i, 4 + i as usize % 3, 1, &env).unwrap())
            .collect();
        let test: Vec<Task> = (10..14).map(|i| Task::new(i, 5, 2, &env).unwrap()).collect();
        let synth = vec![QaPair::from_task(Task::new(99, 3, 0, &env).unwrap())];
        let cfg = EvalConfig {
            max_student_steps: 40,
            report_window: 20,
            synthetic_warmup_steps: 0,
            ..EvalConfig::default()
        };
        let fresh = StudentState::fresh(&env);
        let a = evaluate_student(&fresh, &synth, &train, &test, Mixing::Curriculum, &cfg, &env, 3).unwrap();
        let b = evaluate_student(&fresh, &[], &train, &test, Mixing::Mixed, &cfg, &env, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_reward.len(), 40);
        assert_eq!(a.test.len(), 5);
        assert_eq!(a.test.last().unwrap().step, 40);
    }
}
