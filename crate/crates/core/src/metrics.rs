//! Evaluation statistics: pass@k, fail@k filtering, Vendi diversity,
//! pairwise cosine diversity, slope-based early stopping and windowed means.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::tasklab::Task;

/// `c` successes out of `n` samples on one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task_id: u64,
    pub n: usize,
    pub c: usize,
}

impl SampleRecord {
    pub fn new(task_id: u64, n: usize, c: usize) -> Result<Self> {
        if c > n {
            return Err(contract(format!("{c} successes out of {n} samples")));
        }
        Ok(SampleRecord { task_id, n, c })
    }
}

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)`.
///
/// The binomial ratio is accumulated as `sum_i ln((n-c-i)/(n-i))`, which never
/// forms a factorial and cannot overflow.
pub fn pass_at_k(record: &SampleRecord, k: usize) -> Result<f64> {
    let SampleRecord { n, c, .. } = *record;
    if k == 0 || k > n {
        return Err(contract(format!("pass@{k} needs 1 <= k <= n = {n}")));
    }
    if c > n {
        return Err(contract("more successes than samples"));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let log_ratio: f64 = (0..k).map(|i| ((n - c - i) as f64 / (n - i) as f64).ln()).sum();
    Ok(-log_ratio.exp_m1())
}

/// Keeps the tasks on which `sampler` never succeeds in `k` attempts. Each
/// task's attempts use the stream keyed by `(seed, task.id)`.
pub fn fail_at_k_filter<F>(tasks: &[Task], k: usize, seed: u64, mut sampler: F) -> Result<Vec<Task>>
where
    F: FnMut(&Task, &mut rand_chacha::ChaCha8Rng) -> Result<bool>,
{
    if k == 0 {
        return Err(contract("fail@k needs k >= 1"));
    }
    let mut kept = Vec::new();
    'tasks: for t in tasks {
        let mut rng = rng_for(&[seed, t.id]);
        for _ in 0..k {
            if sampler(t, &mut rng)? {
                continue 'tasks;
            }
        }
        kept.push(t.clone());
    }
    Ok(kept)
}

/// Rows of unit-norm vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    rows: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || dim == 0 {
            return Err(contract("embedding matrix needs at least one nonempty row"));
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(16.0));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(contract(format!("row {i} has dimension {} not {dim}", r.len())));
            }
            let norm = r.iter().map(|&x| x * x).sum::<T>().sqrt();
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN norms are rejected too
            if !((norm - T::one()).abs() <= tol) {
                return Err(contract(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(EmbeddingMatrix { rows, dim })
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn select(&self, idx: &[usize]) -> EmbeddingMatrix<T> {
        EmbeddingMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            dim: self.dim,
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Eigenvalues of a symmetric matrix (row-major, `n x n`) by cyclic Jacobi
/// rotations. Sweeps until the off-diagonal mass is below `tol` relative to
/// the Frobenius norm.
pub fn symmetric_eigenvalues<T: Scalar>(matrix: &[T], n: usize, tol: T) -> Result<Vec<T>> {
    if matrix.len() != n * n {
        return Err(contract("matrix is not n x n"));
    }
    let mut a = matrix.to_vec();
    let total: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    if total == T::zero() {
        return Ok(vec![T::zero(); n]);
    }
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += two * a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= tol * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = T::zero();
                a[q * n + p] = T::zero();
            }
        }
    }
    Ok((0..n).map(|i| a[i * n + i]).collect())
}

/// Eigenvalues of `K / m` with `K = X X^T`. When the feature dimension is
/// below `m` the `dim x dim` matrix `X^T X / m` is diagonalized instead; the
/// two share all nonzero eigenvalues.
pub fn vendi_eigenvalues<T: Scalar>(emb: &EmbeddingMatrix<T>) -> Result<Vec<T>> {
    let m = emb.len();
    let mt = T::from_usize(m).unwrap();
    let tol = if T::epsilon() < T::lit(1e-10) {
        T::lit(1e-12)
    } else {
        T::lit(1e-6)
    };
    if emb.dim() < m {
        let d = emb.dim();
        let mut g = vec![T::zero(); d * d];
        for r in emb.rows() {
            for i in 0..d {
                for j in 0..d {
                    g[i * d + j] += r[i] * r[j];
                }
            }
        }
        g.iter_mut().for_each(|x| *x /= mt);
        symmetric_eigenvalues(&g, d, tol)
    } else {
        symmetric_eigenvalues(&primal_kernel(emb), m, tol)
    }
}

/// `K / m` for the rows of `emb`, row-major.
pub fn primal_kernel<T: Scalar>(emb: &EmbeddingMatrix<T>) -> Vec<T> {
    let m = emb.len();
    let mt = T::from_usize(m).unwrap();
    let mut k = vec![T::zero(); m * m];
    for i in 0..m {
        for j in i..m {
            let v = dot(&emb.rows()[i], &emb.rows()[j]) / mt;
            k[i * m + j] = v;
            k[j * m + i] = v;
        }
    }
    k
}

/// `exp(-sum lambda ln lambda)` over nonnegative eigenvalues, `0 ln 0 = 0`.
pub fn vendi_from_eigenvalues<T: Scalar>(eigenvalues: &[T]) -> T {
    let h: T = eigenvalues
        .iter()
        .filter(|&&l| l > T::zero())
        .map(|&l| -l * l.ln())
        .sum();
    h.exp()
}

/// Vendi Score: the exponential of the entropy of the normalized
/// similarity-kernel spectrum. Lies in `[1, m]`.
pub fn vendi_score<T: Scalar>(emb: &EmbeddingMatrix<T>) -> Result<T> {
    let m = T::from_usize(emb.len()).unwrap();
    let vs = vendi_from_eigenvalues(&vendi_eigenvalues(emb)?);
    Ok(vs.max(T::one()).min(m))
}

/// Mean and sample standard deviation of the Vendi Score over `iterations`
/// random subsets of size `subsample` (without replacement when `m >=
/// subsample`, with replacement otherwise).
pub fn vendi_bootstrap<T: Scalar, R: Rng + ?Sized>(
    emb: &EmbeddingMatrix<T>,
    subsample: usize,
    iterations: usize,
    rng: &mut R,
) -> Result<(T, T)> {
    if subsample == 0 || iterations == 0 {
        return Err(contract(
            "bootstrap needs a positive subsample size and iteration count",
        ));
    }
    let m = emb.len();
    let mut scores = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let idx: Vec<usize> = if m >= subsample {
            let mut v = index::sample(rng, m, subsample).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..subsample).map(|_| rng.random_range(0..m)).collect()
        };
        scores.push(vendi_score(&emb.select(&idx))?);
    }
    let n = T::from_usize(iterations).unwrap();
    let mean = scores.iter().copied().sum::<T>() / n;
    let std = if iterations > 1 {
        let ss: T = scores.iter().map(|&s| (s - mean) * (s - mean)).sum();
        (ss / (n - T::one())).sqrt()
    } else {
        T::zero()
    };
    Ok((mean, std))
}

/// Mean of `1 - cos` over unordered pairs of rows.
pub fn pairwise_cosine_diversity<T: Scalar>(emb: &EmbeddingMatrix<T>) -> Result<T> {
    let m = emb.len();
    if m < 2 {
        return Err(contract("pairwise diversity needs at least two rows"));
    }
    let mut total = T::zero();
    for i in 0..m {
        for j in (i + 1)..m {
            total += T::one() - dot(&emb.rows()[i], &emb.rows()[j]);
        }
    }
    Ok(total / T::from_usize(m * (m - 1) / 2).unwrap())
}

/// `(step, value)` pairs with strictly increasing steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSeries<T> {
    steps: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> MetricSeries<T> {
    pub fn new() -> Self {
        MetricSeries {
            steps: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, T)>) -> Result<Self> {
        let mut s = Self::new();
        for (step, v) in pairs {
            s.push(step, v)?;
        }
        Ok(s)
    }

    /// Values at steps `0, 1, 2, ...`.
    pub fn from_values(values: impl IntoIterator<Item = T>) -> Result<Self> {
        Self::from_pairs(values.into_iter().enumerate())
    }

    pub fn push(&mut self, step: usize, value: T) -> Result<()> {
        if self.steps.last().is_some_and(|&last| step <= last) {
            return Err(contract(format!(
                "series step {step} is not after {:?}",
                self.steps.last()
            )));
        }
        if !value.is_finite() {
            return Err(crate::Error::NonFinite("metric series value"));
        }
        self.steps.push(step);
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::from_pairs(self.steps.iter().copied().zip(self.values.iter().map(|&v| f(v))))
    }

    /// Mean of values whose step lies in `[from, to)`.
    pub fn mean_between(&self, from: usize, to: usize) -> Option<T> {
        let sel: Vec<T> = self
            .steps
            .iter()
            .zip(&self.values)
            .filter(|(&s, _)| s >= from && s < to)
            .map(|(_, &v)| v)
            .collect();
        (!sel.is_empty()).then(|| sel.iter().copied().sum::<T>() / T::from_usize(sel.len()).unwrap())
    }
}

/// Outcome of [`early_stop_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EarlyStop {
    At(usize),
    NoPlateau,
}

/// Earliest step after the steepest point of the smoothed curve where the
/// slope has dropped below `fraction` of that maximum.
///
/// Smoothing is a centered moving average over `window` points, kept only
/// where the full window fits. Slopes are divided by the raw value range and
/// oriented by the sign of the net change, so any affine map `a x + b` with
/// `a != 0` leaves the result unchanged. A constant series returns its first
/// step; a series whose slope never falls below the threshold returns
/// [`EarlyStop::NoPlateau`].
pub fn early_stop_step<T: Scalar>(series: &MetricSeries<T>, window: usize, fraction: T) -> Result<EarlyStop> {
    let n = series.len();
    if window == 0 || n <= window {
        return Err(contract(format!("series of length {n} too short for window {window}")));
    }
    let vals = series.values();
    let steps = series.steps();
    let lo = vals.iter().copied().fold(T::infinity(), T::min);
    let hi = vals.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    if range == T::zero() {
        return Ok(EarlyStop::At(steps[0]));
    }
    let w = T::from_usize(window).unwrap();
    let left = (window - 1) / 2;
    // smoothed[j] is centred on index j + left.
    let mut smoothed = Vec::with_capacity(n - window + 1);
    let mut acc: T = vals[..window].iter().copied().sum();
    smoothed.push(acc / w);
    for i in window..n {
        acc += vals[i] - vals[i - window];
        smoothed.push(acc / w);
    }
    let sm_last = *smoothed.last().unwrap();
    let orient = if sm_last >= smoothed[0] { T::one() } else { -T::one() };
    let slopes: Vec<T> = smoothed
        .windows(2)
        .enumerate()
        .map(|(j, s)| {
            let dt = T::from_usize(steps[j + left + 1] - steps[j + left]).unwrap();
            orient * (s[1] - s[0]) / (dt * range)
        })
        .collect();
    let (peak, max_slope) =
        slopes.iter().copied().enumerate().fold(
            (0, T::neg_infinity()),
            |best, (j, s)| if s > best.1 { (j, s) } else { best },
        );
    if slopes.is_empty() || max_slope <= T::zero() {
        return Ok(EarlyStop::At(steps[0]));
    }
    let threshold = fraction * max_slope;
    Ok(slopes[peak..]
        .iter()
        .position(|&s| s < threshold)
        .map_or(EarlyStop::NoPlateau, |off| EarlyStop::At(steps[peak + off + left])))
}

/// Mean of the last `min(width, len)` values.
pub fn windowed_mean<T: Scalar>(series: &MetricSeries<T>, width: usize) -> Result<T> {
    windowed_mean_of(series.values(), width)
}

/// [`windowed_mean`] over a bare slice.
pub fn windowed_mean_of<T: Scalar>(values: &[T], width: usize) -> Result<T> {
    if values.is_empty() || width == 0 {
        return Err(contract("windowed mean of an empty series"));
    }
    let tail = &values[values.len().saturating_sub(width)..];
    Ok(tail.iter().copied().sum::<T>() / T::from_usize(tail.len()).unwrap())
}
