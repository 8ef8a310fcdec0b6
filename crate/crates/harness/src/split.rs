//! Hard-task pool: generation, fail@k filtering and the train/test split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use soar_core::metrics::fail_at_k_filter;
use soar_core::seed::rng_for;
use soar_core::tasklab::{generate_pool, sample_success, EnvProfile, StudentState, Task};

use crate::config::PoolConfig;
use crate::error::{HarnessError, Result};

/// Disjoint halves of the filtered pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetSplit {
    pub train: Vec<Task>,
    pub test: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub pool_size: usize,
    pub retained_per_level: Vec<usize>,
    pub train: usize,
    pub test: usize,
}

/// Generates the pool, keeps tasks the fresh student fails `fail_k` times in
/// a row, and splits the survivors 50-50.
pub fn filter_and_split(env: &EnvProfile, pool: &PoolConfig) -> Result<(TaskSetSplit, FilterSummary)> {
    let tasks = generate_pool(env, pool.per_level, pool.pool_seed)?;
    let fresh = StudentState::fresh(env);
    let kept = fail_at_k_filter(&tasks, pool.fail_k, pool.filter_seed, |t, rng| {
        sample_success(&fresh, t, rng)
    })?;
    let mut retained_per_level = vec![0; env.levels()];
    for t in &kept {
        retained_per_level[t.level] += 1;
    }
    if kept.len() < 2 {
        return Err(HarnessError::Config(format!(
            "fail@{} filter kept {} of {} tasks; raise the top difficulty offsets or lower fail_k",
            pool.fail_k,
            kept.len(),
            tasks.len()
        )));
    }
    let split = split_tasks(kept, pool.split_seed);
    let summary = FilterSummary {
        pool_size: tasks.len(),
        retained_per_level,
        train: split.train.len(),
        test: split.test.len(),
    };
    Ok((split, summary))
}

/// Seeded shuffle, first half to train. Each half is stored sorted by id.
pub fn split_tasks(mut tasks: Vec<Task>, seed: u64) -> TaskSetSplit {
    tasks.sort_by_key(|t| t.id);
    tasks.shuffle(&mut rng_for(&[seed]));
    let test = tasks.split_off(tasks.len() / 2);
    let mut train = tasks;
    let mut test = test;
    train.sort_by_key(|t| t.id);
    test.sort_by_key(|t| t.id);
    TaskSetSplit { train, test }
}
