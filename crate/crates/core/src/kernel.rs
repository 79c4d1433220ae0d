//! Gaussian kernel and the squared-distance cache it is computed from.
//!
//! `k_γ(x, x') = exp(-‖x - x'‖² / γ²)`. A [`PreKernelMatrix`] holds the
//! squared distances of one training set so that kernel matrices for every
//! bandwidth on the grid can be derived without touching the features again.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Real};

/// Work counters. All increments are atomic, so one instance can be shared by
/// parallel workers; totals are exact regardless of scheduling.
#[derive(Debug, Default)]
pub struct Counters {
    /// Squared distances computed (pre-kernel and cross-distance caches).
    pub distance_evals: AtomicU64,
    /// Kernel values computed at prediction or validation time.
    pub kernel_evals: AtomicU64,
    /// Entries of training kernel matrices materialized.
    pub kernel_entries: AtomicU64,
    pub prekernel_builds: AtomicU64,
    pub kernel_matrix_builds: AtomicU64,
    pub solver_calls: AtomicU64,
    /// Solver calls skipped because a training set held a single class.
    pub shortcut_skips: AtomicU64,
}

/// Plain-value copy of [`Counters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub distance_evals: u64,
    pub kernel_evals: u64,
    pub kernel_entries: u64,
    pub prekernel_builds: u64,
    pub kernel_matrix_builds: u64,
    pub solver_calls: u64,
    pub shortcut_skips: u64,
}

impl Counters {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let g = |c: &AtomicU64| c.load(Ordering::Relaxed);
        CounterSnapshot {
            distance_evals: g(&self.distance_evals),
            kernel_evals: g(&self.kernel_evals),
            kernel_entries: g(&self.kernel_entries),
            prekernel_builds: g(&self.prekernel_builds),
            kernel_matrix_builds: g(&self.kernel_matrix_builds),
            solver_calls: g(&self.solver_calls),
            shortcut_skips: g(&self.shortcut_skips),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.distance_evals,
            &self.kernel_evals,
            &self.kernel_entries,
            &self.prekernel_builds,
            &self.kernel_matrix_builds,
            &self.solver_calls,
            &self.shortcut_skips,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

impl std::ops::Sub for CounterSnapshot {
    type Output = CounterSnapshot;
    fn sub(self, o: Self) -> Self {
        CounterSnapshot {
            distance_evals: self.distance_evals - o.distance_evals,
            kernel_evals: self.kernel_evals - o.kernel_evals,
            kernel_entries: self.kernel_entries - o.kernel_entries,
            prekernel_builds: self.prekernel_builds - o.prekernel_builds,
            kernel_matrix_builds: self.kernel_matrix_builds - o.kernel_matrix_builds,
            solver_calls: self.solver_calls - o.solver_calls,
            shortcut_skips: self.shortcut_skips - o.shortcut_skips,
        }
    }
}

pub(crate) fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    if gamma > T::zero() && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("kernel width must be positive, got {gamma}")))
    }
}

/// `exp(-d2 / γ²)` for a precomputed squared distance.
#[inline]
pub fn gaussian_from_sq<T: Real>(d2: T, inv_gamma_sq: T) -> T {
    (-d2 * inv_gamma_sq).exp()
}

pub fn gaussian<T: Real>(x: &[T], y: &[T], gamma: T) -> Result<T> {
    check_gamma(gamma)?;
    Ok((-squared_distance(x, y) / (gamma * gamma)).exp())
}

#[inline]
pub(crate) fn tri(i: usize, j: usize) -> usize {
    let (a, b) = if i >= j { (i, j) } else { (j, i) };
    a * (a + 1) / 2 + b
}

/// Squared Euclidean distances of a point set, lower triangle (diagonal included).
#[derive(Debug, Clone, PartialEq)]
pub struct PreKernelMatrix<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Real> PreKernelMatrix<T> {
    /// Builds the cache for `points`. Rows are computed in parallel.
    pub fn build(points: &Dataset<T>, counters: &Counters) -> Self {
        let n = points.len();
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = points.x(i);
                let mut row = Vec::with_capacity(i + 1);
                for j in 0..i {
                    row.push(squared_distance(xi, points.x(j)));
                }
                row.push(T::zero());
                row
            })
            .collect();
        let lower: Vec<T> = rows.into_iter().flatten().collect();
        Counters::add(&counters.prekernel_builds, 1);
        Counters::add(&counters.distance_evals, (n * n.saturating_sub(1) / 2) as u64);
        PreKernelMatrix { n, lower }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.lower[tri(i, j)]
    }

    /// Largest entry, i.e. the squared diameter of the point set.
    pub fn max_entry(&self) -> T {
        self.lower.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    pub fn bytes(&self) -> usize {
        self.lower.len() * std::mem::size_of::<T>()
    }
}

/// Dense symmetric Gaussian kernel matrix, stored row-major in full so the
/// solver can stream whole rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T> {
    n: usize,
    gamma: T,
    entries: Vec<T>,
}

impl<T: Real> KernelMatrix<T> {
    pub fn from_prekernel(pre: &PreKernelMatrix<T>, gamma: T, counters: &Counters) -> Result<Self> {
        check_gamma(gamma)?;
        let n = pre.n;
        let inv = (gamma * gamma).recip();
        let mut entries = vec![T::zero(); n * n];
        entries
            .par_chunks_mut(n.max(1))
            .enumerate()
            .for_each(|(i, row)| {
                for j in 0..i {
                    row[j] = gaussian_from_sq(pre.get(i, j), inv);
                }
                row[i] = T::one();
            });
        for i in 0..n {
            for j in (i + 1)..n {
                entries[i * n + j] = entries[j * n + i];
            }
        }
        Counters::add(&counters.kernel_matrix_builds, 1);
        Counters::add(&counters.kernel_entries, (n * n) as u64);
        Ok(KernelMatrix { n, gamma, entries })
    }

    /// Wraps an explicit symmetric matrix (tests, oracles). Entries must be finite.
    pub fn from_dense(n: usize, entries: Vec<T>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Input(format!("{} entries for a {n}x{n} matrix", entries.len())));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite kernel entry".into()));
        }
        Ok(KernelMatrix {
            n,
            gamma: T::nan(),
            entries,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    #[inline]
    /// All entries, row-major.
    pub fn as_slice(&self) -> &[T] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn bytes(&self) -> usize {
        self.entries.len() * std::mem::size_of::<T>()
    }
}

/// Kernel values between training point `i` and every query point.
pub fn kernel_row<T: Real>(
    points: &Dataset<T>,
    i: usize,
    queries: &Dataset<T>,
    gamma: T,
    counters: &Counters,
) -> Result<Vec<T>> {
    check_gamma(gamma)?;
    let inv = (gamma * gamma).recip();
    let xi = points.x(i);
    let row = queries
        .rows()
        .map(|(q, _)| gaussian_from_sq(squared_distance(xi, q), inv))
        .collect();
    Counters::add(&counters.kernel_evals, queries.len() as u64);
    Ok(row)
}

/// Squared distances between two point sets, `rows × cols`, row-major.
pub(crate) fn cross_sq_distances<T: Real>(
    rows: &Dataset<T>,
    cols: &Dataset<T>,
    counters: &Counters,
) -> Vec<T> {
    let m = cols.len();
    let mut out = vec![T::zero(); rows.len() * m];
    out.par_chunks_mut(m.max(1)).enumerate().for_each(|(i, r)| {
        let xi = rows.x(i);
        for (j, v) in r.iter_mut().enumerate() {
            *v = squared_distance(xi, cols.x(j));
        }
    });
    Counters::add(&counters.distance_evals, (rows.len() * m) as u64);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use rand::{Rng, SeedableRng};

    fn cloud(n: usize, d: usize, seed: u64) -> Dataset<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let feats = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Dataset::from_parts(d, feats, vec![Label::Pos; n]).unwrap()
    }

    #[test]
    fn gaussian_basic_values() {
        let x = [0.3, -1.2];
        assert_eq!(gaussian(&x, &x, 0.7).unwrap(), 1.0);
        let v: f64 = gaussian(&[0.0, 0.0], &[0.6, 0.8], 1.0).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!(matches!(gaussian(&x, &x, 0.0), Err(Error::Parameter(_))));
        assert!(gaussian(&x, &x, -1.0).is_err());
    }

    #[test]
    fn gaussian_matches_direct_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g: f64 = rng.random_range(0.05..5.0);
            let direct = (-((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2))
                / (g * g))
                .exp();
            let v = gaussian(&x, &y, g).unwrap();
            assert!((v - direct).abs() <= 1e-15 * direct.max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn prekernel_small_cases() {
        let c = Counters::new();
        let one = Dataset::from_parts(2, vec![1.0, 2.0], vec![Label::Pos]).unwrap();
        let p = PreKernelMatrix::build(&one, &c);
        assert_eq!((p.len(), p.get(0, 0)), (1, 0.0));
        let two = Dataset::from_parts(2, vec![0.0, 0.0, 3.0, 4.0], vec![Label::Pos; 2]).unwrap();
        let p = PreKernelMatrix::build(&two, &c);
        assert_eq!(p.get(0, 1), 25.0);
        assert_eq!(p.get(1, 0), 25.0);
    }

    #[test]
    fn prekernel_matches_direct_and_is_metric() {
        let pts = cloud(40, 5, 3);
        let p = PreKernelMatrix::build(&pts, &Counters::new());
        for i in 0..pts.len() {
            assert_eq!(p.get(i, i), 0.0);
            for j in 0..pts.len() {
                let direct: f64 = pts
                    .x(i)
                    .iter()
                    .zip(pts.x(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!((p.get(i, j) - direct).abs() < 1e-10);
                assert!(p.get(i, j) >= 0.0);
                for k in 0..pts.len() {
                    let (a, b, c) = (p.get(i, j).sqrt(), p.get(j, k).sqrt(), p.get(i, k).sqrt());
                    assert!(c <= a + b + 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_matrix_entries_and_reuse() {
        let pts = cloud(30, 3, 5);
        let c = Counters::new();
        let pre = PreKernelMatrix::build(&pts, &c);
        let dist_after_pre = c.snapshot().distance_evals;
        for g in [0.3, 1.7] {
            let k = KernelMatrix::from_prekernel(&pre, g, &c).unwrap();
            for i in 0..30 {
                assert_eq!(k.get(i, i), 1.0);
                for j in 0..30 {
                    assert_eq!(k.get(i, j), k.get(j, i));
                    let direct = gaussian(pts.x(i), pts.x(j), g).unwrap();
                    assert!((k.get(i, j) - direct).abs() < 1e-12);
                }
            }
        }
        let s = c.snapshot();
        assert_eq!(s.distance_evals, dist_after_pre);
        assert_eq!(s.prekernel_builds, 1);
        assert_eq!(s.kernel_matrix_builds, 2);
        assert_eq!(s.kernel_entries, 2 * 900);
        assert!(KernelMatrix::from_prekernel(&pre, 0.0, &c).is_err());
    }

    #[test]
    fn wide_kernel_is_nearly_constant() {
        // points inside a box of diameter 1
        let mut pts = cloud(20, 2, 8);
        let scaled: Vec<f64> = pts.features().iter().map(|v| v * 0.35).collect();
        pts = Dataset::from_parts(2, scaled, pts.labels().to_vec()).unwrap();
        let pre = PreKernelMatrix::build(&pts, &Counters::new());
        assert!(pre.max_entry() <= 1.0);
        let k = KernelMatrix::from_prekernel(&pre, 1e9, &Counters::new()).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert!((k.get(i, j) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kernel_monotone_in_gamma() {
        let pts = cloud(15, 2, 9);
        let pre = PreKernelMatrix::build(&pts, &Counters::new());
        let c = Counters::new();
        let a = KernelMatrix::from_prekernel(&pre, 0.5, &c).unwrap();
        let b = KernelMatrix::from_prekernel(&pre, 0.8, &c).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                assert!(a.get(i, j) <= b.get(i, j));
            }
        }
    }

    /// Cholesky of K + jitter·I; fails iff K has an eigenvalue below -jitter (roughly).
    fn cholesky_ok(k: &KernelMatrix<f64>, jitter: f64) -> bool {
        let n = k.len();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = k.get(i, j) + if i == j { jitter } else { 0.0 };
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p];
                }
                if i == j {
                    if s <= 0.0 {
                        return false;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        true
    }

    #[test]
    fn small_kernel_matrices_are_psd() {
        for seed in 0..10 {
            let pts = cloud(50, 3, seed);
            let pre = PreKernelMatrix::build(&pts, &Counters::new());
            let k = KernelMatrix::from_prekernel(&pre, 0.2 + seed as f64 * 0.3, &Counters::new())
                .unwrap();
            assert!(cholesky_ok(&k, 1e-8 * 50.0));
        }
    }

    #[test]
    fn kernel_row_counts_and_matches() {
        let pts = cloud(10, 2, 1);
        let c = Counters::new();
        let self_row = kernel_row(&pts, 3, &pts.select(&[3]), 0.4, &c).unwrap();
        assert_eq!(self_row, vec![1.0]);
        let row = kernel_row(&pts, 2, &pts, 0.4, &c).unwrap();
        for (j, v) in row.iter().enumerate() {
            let g = gaussian(pts.x(2), pts.x(j), 0.4).unwrap();
            assert!((v - g).abs() <= 1e-12 * g);
        }
        assert_eq!(c.snapshot().kernel_evals, 11);
    }

    #[test]
    fn f32_kernel_works() {
        let pts = Dataset::<f32>::from_parts(1, vec![0.0, 1.0], vec![Label::Pos; 2]).unwrap();
        let pre = PreKernelMatrix::build(&pts, &Counters::new());
        let k = KernelMatrix::from_prekernel(&pre, 1.0f32, &Counters::new()).unwrap();
        assert!((k.get(0, 1) - (-1.0f32).exp()).abs() < 1e-7);
    }
}
