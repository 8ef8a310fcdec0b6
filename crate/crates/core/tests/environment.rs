//! Statistical and behavioural properties of the task ladder: the teacher's
//! generation channel, the student's rollouts and the default difficulty
//! profile.

use soar_core::policy::CategoricalPolicy;
use soar_core::seed::rng_for;
use soar_core::tasklab::{
    greedy_accuracy, student_rollout, teacher_generate, EnvProfile, QaPair, StudentState, Task, HEAD_DISTRACTOR,
    HEAD_MALFORMED, HEAD_TRUTH, REWARD_CORRECT, REWARD_FORMATTED, REWARD_MALFORMED,
};

/// Pearson chi-square statistic of `counts` against `expected` probabilities.
fn chi_square(counts: &[usize], expected: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(expected)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

#[test]
fn generated_levels_follow_the_filtered_teacher_distribution() {
    let env = EnvProfile {
        format_failure: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.2],
        ..EnvProfile::default()
    };
    let logits = vec![0.5, -0.3, 0.0, 1.0, 0.2, -1.0, 0.7, 0.1, -0.4];
    let teacher = CategoricalPolicy::new(logits).unwrap();
    let weights: Vec<f64> = teacher
        .probabilities()
        .iter()
        .zip(&env.format_failure)
        .map(|(p, f)| p * (1.0 - f))
        .collect();
    let z: f64 = weights.iter().sum();
    let expected: Vec<f64> = weights.iter().map(|w| w / z).collect();
    // 99th percentile of chi-square with 8 degrees of freedom. Ten
    // independent seeds; three or more rejections at a 1% level has
    // probability about 1e-4 under the null.
    let critical = 20.090;
    let mut rejections = 0;
    for seed in 0..10u64 {
        let mut rng = rng_for(&[0x9e7, seed]);
        let mut counts = vec![0usize; env.levels()];
        for _ in 0..20_000 {
            let g = teacher_generate(&teacher, &env, &mut rng, 1000).unwrap();
            counts[g.pair.task.level] += 1;
        }
        if chi_square(&counts, &expected) > critical {
            rejections += 1;
        }
    }
    assert!(rejections <= 2, "{rejections} of 10 seeds rejected");
}

#[test]
fn concentrated_teacher_generates_its_level() {
    let env = EnvProfile::default();
    let mut logits = vec![-10.0; env.levels()];
    logits[2] = 10.0;
    let teacher = CategoricalPolicy::new(logits).unwrap();
    assert!(teacher.probabilities()[2] > 0.999);
    let mut rng = rng_for(&[0xc0c]);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| teacher_generate(&teacher, &env, &mut rng, 100).unwrap().pair.task.level == 2)
        .count();
    assert!(hits as f64 >= 0.99 * n as f64, "{hits} of {n}");
}

#[test]
fn competent_generator_always_proposes_the_truth() {
    let mut env = EnvProfile::default();
    env.generator_competence = vec![1.0; env.levels()];
    let teacher = CategoricalPolicy::uniform(env.levels()).unwrap();
    let mut rng = rng_for(&[0x1]);
    for _ in 0..2_000 {
        let g = teacher_generate(&teacher, &env, &mut rng, 100).unwrap();
        assert!(g.pair.key_is_correct());
        assert!(g.pair.well_formed);
    }
}

#[test]
fn incompetent_generator_never_proposes_the_truth() {
    let mut env = EnvProfile::default();
    env.generator_competence = vec![0.0; env.levels()];
    let teacher = CategoricalPolicy::uniform(env.levels()).unwrap();
    let mut rng = rng_for(&[0x2]);
    for _ in 0..2_000 {
        let g = teacher_generate(&teacher, &env, &mut rng, 100).unwrap();
        assert!(!g.pair.key_is_correct());
        assert!(g.pair.proposed_answer < env.alphabet);
    }
}

#[test]
fn no_format_failure_means_one_try() {
    let mut env = EnvProfile::default();
    env.format_failure = vec![0.0; env.levels()];
    let teacher = CategoricalPolicy::uniform(env.levels()).unwrap();
    let mut rng = rng_for(&[0x3]);
    for _ in 0..1_000 {
        assert_eq!(teacher_generate(&teacher, &env, &mut rng, 1).unwrap().tries, 1);
    }
}

#[test]
fn generation_log_prob_is_the_unfiltered_teacher_log_prob() {
    let env = EnvProfile::default();
    let teacher = CategoricalPolicy::new((0..env.levels()).map(|d| d as f64 * 0.1).collect()).unwrap();
    let mut rng = rng_for(&[0x4]);
    for _ in 0..200 {
        let g = teacher_generate(&teacher, &env, &mut rng, 100).unwrap();
        assert_eq!(g.log_prob, teacher.log_prob(g.pair.task.level).unwrap());
    }
}

#[test]
fn default_profile_has_a_plateau() {
    let env = EnvProfile::default();
    let fresh = StudentState::fresh(&env);
    let top = env.top_level;
    for level in [top - 1, top] {
        let p = fresh.success_prob_at(level).unwrap();
        let solved_in_128 = 1.0 - (1.0 - p).powi(128);
        assert!(solved_in_128 < 1e-3, "level {level}: P(any of 128) = {solved_in_128:e}");
    }
    for level in 0..=2 {
        let p = fresh.success_prob_at(level).unwrap();
        assert!(p > 0.3, "level {level}: p = {p}");
    }
}

#[test]
fn mastering_a_level_lifts_the_next_one() {
    let env = EnvProfile::default();
    let fresh = StudentState::fresh(&env);
    for d in 0..env.top_level {
        let mut skills = vec![0.0; env.levels()];
        skills[d] = 20.0;
        let trained = StudentState::fresh(&env).with_skills(skills).unwrap();
        assert!(trained.success_prob_at(d).unwrap() > 0.999);
        let before = fresh.success_prob_at(d + 1).unwrap();
        let after = trained.success_prob_at(d + 1).unwrap();
        assert!(after > before, "level {}: {before} -> {after}", d + 1);
    }
}

#[test]
fn skill_two_levels_away_does_not_transfer() {
    let env = EnvProfile::default();
    let fresh = StudentState::fresh(&env);
    let mut skills = vec![0.0; env.levels()];
    skills[2] = 20.0;
    let trained = StudentState::fresh(&env).with_skills(skills).unwrap();
    assert_eq!(trained.success_prob_at(4).unwrap(), fresh.success_prob_at(4).unwrap());
}

#[test]
fn certain_student_with_correct_key_always_scores_full_reward() {
    let env = EnvProfile::default();
    let mut skills = vec![0.0; env.levels()];
    skills[1] = 60.0;
    let student = StudentState::fresh(&env).with_skills(skills).unwrap();
    let qa = QaPair::from_task(Task::new(7, 1, 3, &env).unwrap());
    let mut rng = rng_for(&[0x5]);
    let group = student_rollout(&student, &qa, 64, &env, &mut rng).unwrap();
    assert!(group.rewards().iter().all(|&r| r == REWARD_CORRECT));
}

#[test]
fn key_equal_to_the_distractor_rewards_the_distractor() {
    let env = EnvProfile {
        mention_prob: 0.0,
        ..EnvProfile::default()
    };
    let task = Task::new(11, 2, 5, &env).unwrap();
    let qa = QaPair {
        proposed_answer: task.distractor(env.alphabet),
        task,
        well_formed: true,
    };
    let student = StudentState::fresh(&env);
    let mut rng = rng_for(&[0x6]);
    let group = student_rollout(&student, &qa, 512, &env, &mut rng).unwrap();
    let mut seen = [false; 3];
    for r in group.rollouts() {
        let want = match r.outcome {
            HEAD_TRUTH => REWARD_FORMATTED,
            HEAD_DISTRACTOR => REWARD_CORRECT,
            HEAD_MALFORMED => REWARD_MALFORMED,
            other => panic!("unexpected outcome {other}"),
        };
        assert_eq!(r.reward, want);
        seen[r.outcome] = true;
    }
    assert_eq!(seen, [true; 3]);
}

#[test]
fn rollouts_are_reproducible_from_the_seed() {
    let env = EnvProfile::default();
    let student = StudentState::fresh(&env);
    let qa = QaPair::from_task(Task::new(3, 3, 9, &env).unwrap());
    let a = student_rollout(&student, &qa, 32, &env, &mut rng_for(&[42])).unwrap();
    let b = student_rollout(&student, &qa, 32, &env, &mut rng_for(&[42])).unwrap();
    let c = student_rollout(&student, &qa, 32, &env, &mut rng_for(&[43])).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn greedy_accuracy_matches_per_task_enumeration() {
    let env = EnvProfile::default();
    let skills = vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 9.0, 3.0, 0.0];
    let student = StudentState::fresh(&env).with_skills(skills.clone()).unwrap();
    let tasks: Vec<Task> = (0..env.levels())
        .flat_map(|d| (0..3).map(move |i| (d, i)))
        .map(|(d, i)| Task::new((d * 3 + i) as u64, d, i, &env).unwrap())
        .collect();
    // Greedy picks the truth when sigmoid(m) beats the distractor mass
    // (1 - sigmoid(m)) (1 - mu); the malformed mass is always smaller.
    let kernel = env.kernel();
    let mu = env.malformed_share;
    let hits = tasks
        .iter()
        .filter(|t| {
            let theta: f64 = kernel.row(t.level).iter().zip(&skills).map(|(k, w)| k * w).sum();
            let m = env.answer_sharpness * (theta - env.offsets[t.level]);
            let p = 1.0 / (1.0 + (-m).exp());
            p > (1.0 - p) * (1.0 - mu)
        })
        .count();
    let want = hits as f64 / tasks.len() as f64;
    assert_eq!(greedy_accuracy(&student, &tasks).unwrap(), want);
    assert!(want > 0.0 && want < 1.0);
}
