//! Inner and outer loop behaviour on the default ladder: the plateau, the
//! grounded reward of a stepping-stone dataset, promotion bookkeeping and
//! step determinism.

use soar_core::inner::{rl_update_student, InnerLoopConfig};
use soar_core::outer::{
    grounded_reward, learnability_item_reward, learnability_reward, median_index, partition, run_outer_step,
    select_promotion_student, CandidateDataset, OuterContext, OuterLoopConfig, PromotionLedger, TeacherState,
};
use soar_core::seed::{derive_seed, rng_for};
use soar_core::tasklab::{generate_pool, greedy_accuracy, EnvProfile, QaPair, StudentState, Task};

struct Fixture {
    env: EnvProfile,
    pool: Vec<Task>,
    questions: Vec<Task>,
}

fn fixture() -> Fixture {
    let env = EnvProfile::default();
    let pool = generate_pool(&env, 64, 17).unwrap();
    let questions: Vec<Task> = pool
        .iter()
        .filter(|t| t.level >= 4)
        .step_by(5)
        .take(64)
        .cloned()
        .collect();
    Fixture { env, pool, questions }
}

/// 64 pool tasks cycling through `levels`, keyed with the truth.
fn dataset_over(pool: &[Task], levels: &[usize]) -> CandidateDataset {
    let items = (0..64)
        .map(|i| {
            let level = levels[i % levels.len()];
            let task = pool.iter().filter(|t| t.level == level).nth(i / levels.len()).unwrap();
            QaPair::from_task(task.clone())
        })
        .collect();
    CandidateDataset {
        items,
        log_prob_sum: 0.0,
        reward: None,
    }
}

#[test]
fn training_on_the_hard_levels_alone_stays_on_the_plateau() {
    let fx = fixture();
    let fresh = StudentState::fresh(&fx.env);
    let before = greedy_accuracy(&fresh, &fx.questions).unwrap();
    let inner = InnerLoopConfig::default();
    for levels in [vec![8], vec![7, 8], vec![5, 6, 7, 8]] {
        let data = dataset_over(&fx.pool, &levels);
        for seed in 0..3 {
            let student = rl_update_student(&fresh, &data.items, &inner, 0, &fx.env, seed).unwrap();
            let after = greedy_accuracy(&student, &fx.questions).unwrap();
            assert!((after - before).abs() < 0.01, "{levels:?}: {before} -> {after}");
            for &d in &levels {
                let p = student.success_prob_at(d).unwrap();
                assert!(p < 1e-3, "{levels:?}: level {d} reached {p}");
            }
        }
    }
}

#[test]
fn inner_loop_leaves_the_baseline_untouched() {
    let fx = fixture();
    let baseline = StudentState::fresh(&fx.env).with_skills(vec![0.5; 9]).unwrap();
    let print = baseline.fingerprint();
    let data = dataset_over(&fx.pool, &[2, 3]);
    let trained = rl_update_student(&baseline, &data.items, &InnerLoopConfig::default(), 1, &fx.env, 4).unwrap();
    assert_eq!(baseline.fingerprint(), print);
    assert_ne!(trained.fingerprint(), print);
}

#[test]
fn stepping_stone_dataset_earns_positive_grounded_reward() {
    let fx = fixture();
    let baseline = StudentState::fresh(&fx.env);
    let base_acc = greedy_accuracy(&baseline, &fx.questions).unwrap();
    assert_eq!(base_acc, 0.0);
    let inner = InnerLoopConfig::default();
    let seeds: Vec<u64> = (0..5).collect();
    let data = dataset_over(&fx.pool, &[3, 4]);
    let r = grounded_reward(&data, &baseline, base_acc, 0, &fx.questions, &inner, &fx.env, &seeds).unwrap();
    let mut sorted = r.repeat_rewards.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(sorted[2] > 0.0, "repeat rewards {:?}", r.repeat_rewards);

    let hard = dataset_over(&fx.pool, &[7, 8]);
    let r_hard = grounded_reward(&hard, &baseline, base_acc, 0, &fx.questions, &inner, &fx.env, &seeds).unwrap();
    assert_eq!(r_hard.reward, 0.0);
    assert!(r.reward > r_hard.reward);
}

/// Runs the default outer loop from a fresh teacher until the first
/// promotion, then re-evaluates the promoted dataset against the new
/// baseline with the same repeat seeds. The expectation is that the
/// improved baseline leaves less to gain.
///
/// On the default ladder this does not hold: a promoted student trained
/// further on the same stepping-stone mix usually clears the next level
/// too, so the re-evaluated reward rises about as often as it falls.
#[test]
#[ignore = "reward after promotion does not reliably drop on the default ladder"]
fn promotion_lowers_the_reward_of_the_same_dataset() {
    let fx = fixture();
    let train: Vec<Task> = fx.pool.iter().filter(|t| t.level >= 4).cloned().collect();
    let outer = OuterLoopConfig::default();
    let inner = InnerLoopConfig::default();
    let mut drops = 0;
    let seeds = 1..=5u64;
    for run_seed in seeds.clone() {
        let ctx = OuterContext {
            env: &fx.env,
            train_tasks: &train,
            outer: &outer,
            inner: &inner,
            run_seed,
        };
        let mut teacher = TeacherState::base(&fx.env, &outer).unwrap();
        let mut ledger = PromotionLedger::new(StudentState::fresh(&fx.env), &outer).unwrap();
        for step in 0..60 {
            let out = run_outer_step(&teacher, &ledger, &ctx, step).unwrap();
            if out.report.promoted {
                let best = out.ledger.best().last().unwrap();
                let before = best.reward.unwrap();
                let after_acc = greedy_accuracy(out.ledger.baseline(), &fx.questions).unwrap();
                let repeat_seeds: Vec<u64> = (0..outer.repeats as u64).map(|j| derive_seed(&[run_seed, j])).collect();
                let after = grounded_reward(
                    best,
                    out.ledger.baseline(),
                    after_acc,
                    out.ledger.stage(),
                    &fx.questions,
                    &inner,
                    &fx.env,
                    &repeat_seeds,
                )
                .unwrap()
                .reward;
                if after < before {
                    drops += 1;
                }
                break;
            }
            teacher = out.teacher;
            ledger = out.ledger;
        }
    }
    assert_eq!(
        drops,
        seeds.count(),
        "reward dropped after {drops} of 5 first promotions"
    );
}

#[test]
fn promotion_student_is_the_lower_median_repeat() {
    let env = EnvProfile::default();
    let students: Vec<StudentState> = (0..4)
        .map(|i| StudentState::fresh(&env).with_skills(vec![i as f64; 9]).unwrap())
        .collect();
    let cases: [(&[f64], usize); 3] = [(&[0.2], 0), (&[0.3, 0.1, 0.2], 2), (&[0.4, 0.1, 0.3, 0.2], 3)];
    for (rewards, want) in cases {
        assert_eq!(median_index(rewards).unwrap(), want, "{rewards:?}");
        let chosen = select_promotion_student(rewards, &students[..rewards.len()]).unwrap();
        assert_eq!(chosen, students[want]);
    }
    assert!(select_promotion_student(&[0.1, 0.2], &students[..1]).is_err());
}

#[test]
fn scripted_rewards_promote_on_the_third_step() {
    let env = EnvProfile::default();
    let cfg = OuterLoopConfig::default();
    let mut ledger = PromotionLedger::new(StudentState::fresh(&env), &cfg).unwrap();
    let eligibility: Vec<bool> = [0.0, 0.03, 0.03]
        .iter()
        .map(|&r| ledger.observe(r).unwrap().1)
        .collect();
    assert_eq!(eligibility, [false, false, true]);
    let (mean, _) = ledger.observe(0.0).unwrap();
    assert!((mean - 0.02).abs() < 1e-15);

    // A single large reward cannot fire before the window fills.
    let mut early = PromotionLedger::new(StudentState::fresh(&env), &cfg).unwrap();
    assert!(!early.observe(1.0).unwrap().1);
    assert!(!early.observe(1.0).unwrap().1);
    assert!(early.observe(1.0).unwrap().1);
}

#[test]
fn learnability_rewards_partial_success_only() {
    assert_eq!(learnability_item_reward(0.0), 0.0);
    assert_eq!(learnability_item_reward(1.0), 0.0);
    assert!((learnability_item_reward(0.25) - 0.75).abs() < 1e-15);

    let fx = fixture();
    let fresh = StudentState::fresh(&fx.env);
    let mut rng = rng_for(&[0x1ea]);
    let hard = dataset_over(&fx.pool, &[8]);
    assert_eq!(learnability_reward(&hard, &fresh, 32, &fx.env, &mut rng).unwrap(), 0.0);
    let middle = dataset_over(&fx.pool, &[2]);
    let r = learnability_reward(&middle, &fresh, 32, &fx.env, &mut rng).unwrap();
    assert!(r > 0.2 && r < 1.0, "{r}");
}

fn small_config(threshold: f64) -> (OuterLoopConfig, InnerLoopConfig) {
    let outer = OuterLoopConfig {
        group_size: 2,
        dataset_size: 16,
        repeats: 2,
        reward_questions: 16,
        threshold,
        max_steps: 4,
        ..OuterLoopConfig::default()
    };
    let inner = InnerLoopConfig {
        steps: 3,
        group_size: 8,
        ..InnerLoopConfig::default()
    };
    (outer, inner)
}

#[test]
fn infinite_threshold_never_promotes() {
    let fx = fixture();
    let (outer, inner) = small_config(f64::INFINITY);
    let ctx = OuterContext {
        env: &fx.env,
        train_tasks: &fx.questions,
        outer: &outer,
        inner: &inner,
        run_seed: 9,
    };
    let mut teacher = TeacherState::base(&fx.env, &outer).unwrap();
    let mut ledger = PromotionLedger::new(StudentState::fresh(&fx.env), &outer).unwrap();
    for step in 0..4 {
        let out = run_outer_step(&teacher, &ledger, &ctx, step).unwrap();
        assert!(!out.report.promoted);
        teacher = out.teacher;
        ledger = out.ledger;
    }
    assert!(ledger.best().is_empty());
    assert_eq!(ledger.stage(), 0);
    assert_eq!(teacher.steps_taken(), 4);
}

#[test]
fn outer_step_is_a_pure_function_of_its_inputs() {
    let fx = fixture();
    let (outer, inner) = small_config(0.01);
    let ctx = OuterContext {
        env: &fx.env,
        train_tasks: &fx.questions,
        outer: &outer,
        inner: &inner,
        run_seed: 5,
    };
    let teacher = TeacherState::base(&fx.env, &outer).unwrap();
    let ledger = PromotionLedger::new(StudentState::fresh(&fx.env), &outer).unwrap();
    let (t0, l0) = (teacher.clone(), ledger.clone());
    let a = run_outer_step(&teacher, &ledger, &ctx, 0).unwrap();
    let b = run_outer_step(&teacher, &ledger, &ctx, 0).unwrap();
    assert_eq!(teacher, t0);
    assert_eq!(ledger, l0);
    assert_eq!(a.report, b.report);
    assert_eq!(a.teacher, b.teacher);
    assert_eq!(a.datasets, b.datasets);
    assert_eq!(a.datasets.len(), outer.group_size);
    assert!(a
        .datasets
        .iter()
        .all(|d| d.items.len() == outer.dataset_size && d.reward.is_some()));
    let c = run_outer_step(&teacher, &ledger, &ctx, 1).unwrap();
    assert_ne!(a.datasets, c.datasets);
}

#[test]
fn partition_keeps_generation_order() {
    let fx = fixture();
    let items: Vec<QaPair> = fx.pool.iter().take(12).cloned().map(QaPair::from_task).collect();
    let log_probs: Vec<f64> = (0..12).map(|i| -(i as f64)).collect();
    let parts = partition(items.clone(), &log_probs, 3).unwrap();
    for (k, d) in parts.iter().enumerate() {
        assert_eq!(d.items, items[4 * k..4 * (k + 1)]);
        assert_eq!(d.log_prob_sum, log_probs[4 * k..4 * (k + 1)].iter().sum::<f64>());
    }
    assert!(partition(items, &log_probs, 5).is_err());
}
