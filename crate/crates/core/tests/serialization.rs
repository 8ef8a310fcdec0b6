//! Checkpointed state must survive a JSON round trip bit for bit, or a
//! resumed run would drift from an uninterrupted one.

use serde::de::DeserializeOwned;
use serde::Serialize;
use soar_core::inner::{InnerLoopConfig, StudentTrainer};
use soar_core::outer::{run_outer_step, OuterContext, OuterLoopConfig, PromotionLedger, TeacherState};
use soar_core::seed::rng_for;
use soar_core::tasklab::{generate_pool, EnvProfile, QaPair, StudentState};

fn round_trip<T: Serialize + DeserializeOwned>(value: &T) -> T {
    serde_json::from_str(&serde_json::to_string(value).unwrap()).unwrap()
}

#[test]
fn outer_state_round_trips_exactly() {
    let env = EnvProfile::default();
    let pool = generate_pool(&env, 8, 1).unwrap();
    let outer = OuterLoopConfig {
        group_size: 2,
        dataset_size: 8,
        repeats: 2,
        reward_questions: 8,
        ..OuterLoopConfig::default()
    };
    let inner = InnerLoopConfig {
        steps: 2,
        group_size: 4,
        ..InnerLoopConfig::default()
    };
    let ctx = OuterContext {
        env: &env,
        train_tasks: &pool,
        outer: &outer,
        inner: &inner,
        run_seed: 3,
    };
    let teacher = TeacherState::base(&env, &outer).unwrap();
    let ledger = PromotionLedger::new(StudentState::fresh(&env), &outer).unwrap();
    let first = run_outer_step(&teacher, &ledger, &ctx, 0).unwrap();
    let (t, l) = (round_trip(&first.teacher), round_trip(&first.ledger));
    assert_eq!(t, first.teacher);
    assert_eq!(l, first.ledger);
    assert_eq!(round_trip(&first.report), first.report);

    let direct = run_outer_step(&first.teacher, &first.ledger, &ctx, 1).unwrap();
    let resumed = run_outer_step(&t, &l, &ctx, 1).unwrap();
    assert_eq!(direct.report, resumed.report);
    assert_eq!(direct.teacher, resumed.teacher);
}

#[test]
fn trainer_round_trips_exactly() {
    let env = EnvProfile::default();
    let pool = generate_pool(&env, 4, 2).unwrap();
    let items: Vec<QaPair> = pool.into_iter().map(QaPair::from_task).collect();
    let batch: Vec<&QaPair> = items.iter().take(6).collect();
    let cfg = InnerLoopConfig::default();
    let mut trainer = StudentTrainer::new(StudentState::fresh(&env), cfg.optimizer(10), 8, cfg.kl_coef).unwrap();
    trainer.step(&batch, &env, &mut rng_for(&[1])).unwrap();
    let mut copy = round_trip(&trainer);
    assert_eq!(copy, trainer);
    trainer.step(&batch, &env, &mut rng_for(&[2])).unwrap();
    copy.step(&batch, &env, &mut rng_for(&[2])).unwrap();
    assert_eq!(copy, trainer);
}
