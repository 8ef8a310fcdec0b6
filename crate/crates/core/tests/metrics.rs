//! Evaluation metrics against independent oracles: subset enumeration for
//! pass@k, a binomial retention rate for the fail@k filter, an
//! arbitrary-precision eigendecomposition for the Vendi Score.

// Oracles keep every digit they were computed with.
#![allow(clippy::excessive_precision)]

use approx::assert_abs_diff_eq;
use rand::Rng;
use soar_core::metrics::{
    early_stop_step, fail_at_k_filter, pass_at_k, primal_kernel, symmetric_eigenvalues, vendi_bootstrap,
    vendi_eigenvalues, vendi_score, EarlyStop, EmbeddingMatrix, MetricSeries, SampleRecord,
};
use soar_core::seed::rng_for;
use soar_core::tasklab::{EnvProfile, Task};

/// Fraction of size-`k` subsets of `n` samples (the first `c` correct) that
/// contain at least one correct sample, by walking every subset bitmask.
fn pass_by_enumeration(n: usize, c: usize, k: usize) -> f64 {
    let correct_mask: u32 = (1u32 << c) - 1;
    let (mut total, mut hit) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            total += 1;
            if mask & correct_mask != 0 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

#[test]
fn pass_at_k_matches_subset_enumeration() {
    for n in 1..=10 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(&SampleRecord::new(0, n, c).unwrap(), k).unwrap();
                assert_abs_diff_eq!(got, pass_by_enumeration(n, c, k), epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn pass_at_k_is_monotone_in_k_and_c() {
    let n = 32;
    for c in 0..=n {
        let rec = SampleRecord::new(0, n, c).unwrap();
        let curve: Vec<f64> = (1..=n).map(|k| pass_at_k(&rec, k).unwrap()).collect();
        assert!(curve.windows(2).all(|w| w[0] <= w[1] + 1e-15), "c = {c}");
        assert!(curve.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
    for k in 1..=n {
        let curve: Vec<f64> = (0..=n)
            .map(|c| pass_at_k(&SampleRecord::new(0, n, c).unwrap(), k).unwrap())
            .collect();
        assert!(curve.windows(2).all(|w| w[0] <= w[1] + 1e-15), "k = {k}");
    }
}

#[test]
fn pass_at_k_survives_large_n() {
    let rec = SampleRecord::new(0, 10_000, 1).unwrap();
    assert_abs_diff_eq!(pass_at_k(&rec, 1).unwrap(), 1e-4, epsilon = 1e-15);
    assert_abs_diff_eq!(pass_at_k(&rec, 5_000).unwrap(), 0.5, epsilon = 1e-12);
}

#[test]
fn fail_at_k_retains_at_the_binomial_rate() {
    let env = EnvProfile::default();
    let p = 0.02;
    let k = 128;
    let n = 10_000;
    let tasks: Vec<Task> = (0..n).map(|i| Task::new(i as u64, 4, 0, &env).unwrap()).collect();
    let kept = fail_at_k_filter(&tasks, k, 7, |_, rng| Ok(rng.random::<f64>() < p)).unwrap();
    let rate = (1.0 - p).powi(k as i32);
    assert_abs_diff_eq!(rate, 0.07532, epsilon = 1e-5);
    let sigma = (rate * (1.0 - rate) / n as f64).sqrt();
    let observed = kept.len() as f64 / n as f64;
    assert!((observed - rate).abs() < 3.0 * sigma, "{observed} vs {rate}");
}

#[test]
fn fail_at_k_keeps_ids_in_order_and_is_reproducible() {
    let env = EnvProfile::default();
    let tasks: Vec<Task> = (0..500).map(|i| Task::new(i, 5, 1, &env).unwrap()).collect();
    let run = || fail_at_k_filter(&tasks, 16, 3, |_, rng| Ok(rng.random::<f64>() < 0.1)).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert!(a.windows(2).all(|w| w[0].id < w[1].id));
    let never = fail_at_k_filter(&tasks, 16, 3, |_, _| Ok(false)).unwrap();
    assert_eq!(never.len(), tasks.len());
    let always = fail_at_k_filter(&tasks, 16, 3, |_, _| Ok(true)).unwrap();
    assert!(always.is_empty());
}

fn unit_rows(raw: &[[f64; 3]]) -> EmbeddingMatrix<f64> {
    EmbeddingMatrix::new(
        raw.iter()
            .map(|r| {
                let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter().map(|x| x / norm).collect()
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn vendi_matches_arbitrary_precision_eigendecomposition() {
    // exp(-sum lambda ln lambda) of K / m at 40 significant digits.
    let oracle = 2.295_460_393_801_953_870_188_854_5;
    let emb = unit_rows(&[
        [1.0, 2.0, 0.0],
        [0.0, 1.0, 1.0],
        [2.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [3.0, 0.0, 0.0],
    ]);
    assert_abs_diff_eq!(vendi_score(&emb).unwrap(), oracle, epsilon = 1e-12);
}

fn random_embedding(rng: &mut impl Rng, m: usize, dim: usize) -> EmbeddingMatrix<f64> {
    let rows = (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    EmbeddingMatrix::new(rows).unwrap()
}

#[test]
fn primal_and_dual_spectra_agree() {
    let mut rng = rng_for(&[0xd0a1]);
    for _ in 0..50 {
        let dim = rng.random_range(2..6);
        let m = rng.random_range(dim + 1..20);
        let emb = random_embedding(&mut rng, m, dim);
        let primal = symmetric_eigenvalues(&primal_kernel(&emb), m, 1e-14).unwrap();
        let mut dual = vendi_eigenvalues(&emb).unwrap();
        let mut primal: Vec<f64> = primal.into_iter().filter(|&l| l > 1e-12).collect();
        dual.retain(|&l| l > 1e-12);
        primal.sort_by(f64::total_cmp);
        dual.sort_by(f64::total_cmp);
        assert_eq!(primal.len(), dual.len());
        for (a, b) in primal.iter().zip(&dual) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let entropy = |ls: &[f64]| (-ls.iter().map(|l| l * l.ln()).sum::<f64>()).exp();
        assert_abs_diff_eq!(entropy(&primal), vendi_score(&emb).unwrap(), epsilon = 1e-9);
    }
}

#[test]
fn vendi_is_permutation_invariant_and_bounded() {
    let mut rng = rng_for(&[0xbead]);
    for _ in 0..50 {
        let m = rng.random_range(2..16);
        let dim = rng.random_range(1..8);
        let emb = random_embedding(&mut rng, m, dim);
        let vs = vendi_score(&emb).unwrap();
        assert!(
            vs >= 1.0 - 1e-9 && vs <= m.min(dim) as f64 + 1e-9,
            "VS {vs} for m {m}, dim {dim}"
        );
        let mut rows = emb.rows().to_vec();
        rows.reverse();
        rows.rotate_left(m / 2);
        let shuffled = EmbeddingMatrix::new(rows).unwrap();
        assert_abs_diff_eq!(vendi_score(&shuffled).unwrap(), vs, epsilon = 1e-9);
    }
}

#[test]
fn two_tight_clusters_score_about_two() {
    let mut rng = rng_for(&[0xc1]);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let base = if i % 2 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let v: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.01..0.01)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let emb = EmbeddingMatrix::new(rows).unwrap();
    let (mean, std) = vendi_bootstrap(&emb, 64, 50, &mut rng).unwrap();
    assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
    assert!(std < 0.05, "std {std}");
}

fn ramp() -> MetricSeries<f64> {
    MetricSeries::from_values((0..400).map(|t| (t as f64 / 100.0).min(1.0))).unwrap()
}

#[test]
fn early_stop_finds_the_end_of_a_ramp() {
    match early_stop_step(&ramp(), 25, 0.15).unwrap() {
        EarlyStop::At(s) => assert!((75..=125).contains(&s), "{s}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn early_stop_is_affine_invariant() {
    let base = early_stop_step(&ramp(), 25, 0.15).unwrap();
    for (a, b) in [(2.0, 0.0), (0.5, 3.0), (-1.0, 1.0), (-7.5, -2.0), (100.0, 0.25)] {
        let mapped = ramp().map_values(|v| a * v + b).unwrap();
        assert_eq!(early_stop_step(&mapped, 25, 0.15).unwrap(), base, "a = {a}, b = {b}");
    }
}

#[test]
fn early_stop_degenerate_series() {
    let flat = MetricSeries::from_pairs((0..50).map(|i| (10 * i + 5, 0.3))).unwrap();
    assert_eq!(early_stop_step(&flat, 9, 0.15).unwrap(), EarlyStop::At(5));
    let linear = MetricSeries::from_values((0..200).map(|t| 0.5 - 0.002 * t as f64)).unwrap();
    assert_eq!(early_stop_step(&linear, 25, 0.15).unwrap(), EarlyStop::NoPlateau);
}
