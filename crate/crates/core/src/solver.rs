//! SMO-type solver for the offset-free hinge-loss SVM dual on one cell.
//!
//! Per cell the primal is
//!
//! ```text
//! min_f  λ‖f‖²_H + (1/n) Σ_i w_{y_i} max(0, 1 - y_i f(x_i))
//! ```
//!
//! with no offset term. Its dual is the box-constrained quadratic program
//!
//! ```text
//! max_α  D(α) = Σ α_i - ½ Σ_{i,j} α_i α_j y_i y_j K_ij,   0 ≤ α_i ≤ C_i = w_{y_i} / (2λn)
//! ```
//!
//! and `f = Σ α_i y_i k(x_i, ·)`. Without an equality constraint every
//! coordinate can be optimized on its own. Each step picks the coordinate
//! with the largest KKT violation; on its own it would move to its exact 1-D
//! optimum, but pairing it with a correlated second coordinate and solving
//! the two-variable problem exactly converges far faster on smooth kernels.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernel::{check_gamma, gaussian_from_sq, Counters, KernelMatrix};
use crate::scalar::{squared_distance, Real};

/// Loss weights per class. `ClassWeights::from_negative_weight(w)` gives the
/// `(w_{-1}, w_{+1}) = (w, 1 - w)` convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ClassWeights<T> {
    pub neg: T,
    pub pos: T,
}

impl<T: Real> Default for ClassWeights<T> {
    fn default() -> Self {
        ClassWeights {
            neg: T::one(),
            pos: T::one(),
        }
    }
}

impl<T: Real> ClassWeights<T> {
    pub fn from_negative_weight(w: T) -> Result<Self> {
        if !(w > T::zero() && w < T::one()) {
            return Err(Error::Parameter(format!("negative-class weight must lie in (0,1), got {w}")));
        }
        Ok(ClassWeights {
            neg: w,
            pos: T::one() - w,
        })
    }

    pub fn of(&self, y: Label) -> T {
        match y {
            Label::Pos => self.pos,
            Label::Neg => self.neg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolverOptions<T> {
    /// Stop once every coordinate's KKT violation is at most this.
    pub tolerance: T,
    /// Iteration cap, per training sample.
    pub max_iter_per_sample: usize,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            tolerance: T::lit(1e-3),
            max_iter_per_sample: 100_000,
        }
    }
}

/// Upper bounds `C_i = w_{y_i} / (2 λ n)` for a training set of `labels.len()` samples.
pub fn box_bounds<T: Real>(labels: &[Label], lambda: T, weights: &ClassWeights<T>) -> Result<Vec<T>> {
    if !(lambda > T::zero() && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let denom = T::lit(2.0) * lambda * T::lit(labels.len() as f64);
    Ok(labels.iter().map(|&y| weights.of(y) / denom).collect())
}

pub struct DualProblem<'a, T> {
    kernel: &'a KernelMatrix<T>,
    labels: &'a [Label],
    upper: Vec<T>,
    tolerance: T,
    max_iterations: usize,
}

impl<'a, T: Real> DualProblem<'a, T> {
    pub fn new(
        kernel: &'a KernelMatrix<T>,
        labels: &'a [Label],
        upper: Vec<T>,
        opts: &SolverOptions<T>,
    ) -> Result<Self> {
        let n = kernel.len();
        if labels.len() != n || upper.len() != n {
            return Err(Error::Input(format!(
                "dual problem dimensions disagree: kernel {n}, labels {}, bounds {}",
                labels.len(),
                upper.len()
            )));
        }
        if upper.iter().any(|c| !(c.is_finite() && *c > T::zero())) {
            return Err(Error::Input("box bounds must be finite and positive".into()));
        }
        if !(opts.tolerance > T::zero()) {
            return Err(Error::Parameter("solver tolerance must be positive".into()));
        }
        Ok(DualProblem {
            kernel,
            labels,
            upper,
            tolerance: opts.tolerance,
            max_iterations: opts.max_iter_per_sample.saturating_mul(n.max(1)),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    pub dual_objective: T,
    pub max_kkt_violation: T,
    pub iterations: usize,
    /// False when the iteration cap stopped the solver first.
    pub converged: bool,
    /// `g_i = 1 - y_i f(x_i)` at the returned `alpha`.
    gradient: Vec<T>,
}

impl<T: Real> DualSolution<T> {
    /// Decision values `f(x_i)` at the training points.
    pub fn training_outputs(&self, labels: &[Label]) -> Vec<T> {
        self.gradient
            .iter()
            .zip(labels)
            .map(|(&g, &y)| y.sign::<T>() * (T::one() - g))
            .collect()
    }

    /// Scaled primal `½‖f‖² + Σ C_i max(0, 1 - y_i f(x_i))` minus the dual objective.
    pub fn duality_gap(&self, upper: &[T]) -> T {
        let mut primal = T::zero();
        for ((&a, &g), &c) in self.alpha.iter().zip(&self.gradient).zip(upper) {
            primal = primal + T::lit(0.5) * a * (T::one() - g) + c * g.max(T::zero());
        }
        primal - self.dual_objective
    }
}

#[inline(always)]
fn violation<T: Real>(alpha: T, upper: T, g: T) -> T {
    let up = if alpha < upper { g } else { T::zero() };
    let down = if alpha > T::zero() { -g } else { T::zero() };
    if up > down { up } else { down }
}

/// Exact maximizer of `g1 d1 + g2 d2 - ½(k11 d1² + k22 d2² + 2 q d1 d2)`
/// over the box `[l1, u1] × [l2, u2]`, which contains the origin.
#[allow(clippy::too_many_arguments)]
fn two_variable_step<T: Real>(g1: T, g2: T, k11: T, k22: T, q: T, l1: T, u1: T, l2: T, u2: T) -> (T, T) {
    let half = T::lit(0.5);
    let gain = |d1: T, d2: T| g1 * d1 + g2 * d2 - half * (k11 * d1 * d1 + k22 * d2 * d2) - q * d1 * d2;
    let det = k11 * k22 - q * q;
    if det > T::lit(1e-12) * k11 * k22 {
        let d1 = (k22 * g1 - q * g2) / det;
        let d2 = (k11 * g2 - q * g1) / det;
        if d1 >= l1 && d1 <= u1 && d2 >= l2 && d2 <= u2 {
            return (d1, d2);
        }
    }
    // Otherwise the maximum lies on the boundary; each edge is a 1-D problem.
    let mut best = (T::zero(), T::zero());
    let mut best_gain = T::zero();
    let mut consider = |d1: T, d2: T| {
        let v = gain(d1, d2);
        if v > best_gain {
            best_gain = v;
            best = (d1, d2);
        }
    };
    for d1 in [l1, u1] {
        consider(d1, ((g2 - q * d1) / k22).max(l2).min(u2));
    }
    for d2 in [l2, u2] {
        consider(((g1 - q * d2) / k11).max(l1).min(u1), d2);
    }
    consider((g1 / k11).max(l1).min(u1), T::zero());
    best
}

/// Solves the dual. A warm start is clamped into the current box first.
///
/// Each step takes the coordinate `i` with the largest KKT violation and a
/// partner `j` with the largest estimated joint gain, then moves both to the
/// exact optimum of the two-variable subproblem. Coordinates stuck at a bound
/// are periodically set aside (their kernel block is copied out so the rest
/// stays cache resident) and brought back before convergence is declared.
pub fn solve<T: Real>(
    problem: &DualProblem<'_, T>,
    warm_start: Option<&[T]>,
    counters: &Counters,
) -> Result<DualSolution<T>> {
    let n = problem.len();
    let c = &problem.upper;
    let alpha: Vec<T> = match warm_start {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Input(format!("warm start has {} entries, expected {n}", w.len())));
            }
            w.iter()
                .zip(c)
                .map(|(&a, &ci)| if a.is_finite() { a.max(T::zero()).min(ci) } else { T::zero() })
                .collect()
        }
        None => vec![T::zero(); n],
    };
    let ys: Vec<T> = problem.labels.iter().map(|l| l.sign()).collect();
    let mut grad = vec![T::one(); n];
    for (i, &a) in alpha.iter().enumerate() {
        if a != T::zero() {
            let s = a * ys[i];
            for (j, &kij) in problem.kernel.row(i).iter().enumerate() {
                grad[j] = grad[j] - s * ys[j] * kij;
            }
        }
    }
    Ok(optimize(problem, ys, alpha, grad, counters))
}

/// Like [`solve`] warm-started from `previous`, a solution of a problem with
/// the same kernel and labels. When `previous.alpha` already lies in the new
/// box its gradient is reused as is; otherwise this falls back to [`solve`].
pub fn resume<T: Real>(
    problem: &DualProblem<'_, T>,
    previous: DualSolution<T>,
    counters: &Counters,
) -> Result<DualSolution<T>> {
    let fits = previous.alpha.len() == problem.len()
        && previous.alpha.iter().zip(&problem.upper).all(|(&a, &c)| a >= T::zero() && a <= c);
    if !fits {
        return solve(problem, Some(&previous.alpha), counters);
    }
    let ys: Vec<T> = problem.labels.iter().map(|l| l.sign()).collect();
    Ok(optimize(problem, ys, previous.alpha, previous.gradient, counters))
}

fn optimize<T: Real>(
    problem: &DualProblem<'_, T>,
    ys: Vec<T>,
    mut alpha: Vec<T>,
    mut grad: Vec<T>,
    counters: &Counters,
) -> DualSolution<T> {
    let n = problem.len();
    let k = problem.kernel;
    let c = &problem.upper;
    Counters::add(&counters.solver_calls, 1);

    let shrink_every = n.clamp(1, 1000);
    let mut active: Vec<usize> = (0..n).collect();
    let mut block: Option<Vec<T>> = None;
    let mut iterations = 0usize;
    let mut best_v;

    loop {
        let m = active.len();
        let mut w = Working {
            alpha: active.iter().map(|&t| alpha[t]).collect(),
            grad: active.iter().map(|&t| grad[t]).collect(),
            upper: active.iter().map(|&t| c[t]).collect(),
            ys: active.iter().map(|&t| ys[t]).collect(),
            diag: active.iter().map(|&t| k.get(t, t)).collect(),
            rows: match &block {
                Some(b) => b,
                None => k.as_slice(),
            },
            m,
            score: vec![T::zero(); m],
        };
        let budget = problem
            .max_iterations
            .saturating_sub(iterations)
            .min(shrink_every);
        let (done, v) = w.run(budget, problem.tolerance);
        iterations += done;
        best_v = v;
        for (l, &t) in active.iter().enumerate() {
            alpha[t] = w.alpha[l];
            grad[t] = w.grad[l];
        }
        drop(w);

        let capped = iterations >= problem.max_iterations;
        if best_v <= problem.tolerance || capped {
            if m == n {
                break;
            }
            reconstruct_gradient(k, &ys, &alpha, &mut grad, &active);
            active = (0..n).collect();
            block = None;
            best_v = (0..n).fold(T::zero(), |b, t| b.max(violation(alpha[t], c[t], grad[t])));
            if best_v <= problem.tolerance || capped {
                break;
            }
            continue;
        }

        let kept: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&t| {
                let at_lower = alpha[t] <= T::zero() && grad[t] < -best_v;
                let at_upper = alpha[t] >= c[t] && grad[t] > best_v;
                !(at_lower || at_upper)
            })
            .collect();
        if !kept.is_empty() && kept.len() * 10 <= m * 9 {
            let mut b = Vec::with_capacity(kept.len() * kept.len());
            for &t in &kept {
                let row = k.row(t);
                b.extend(kept.iter().map(|&s| row[s]));
            }
            block = Some(b);
            active = kept;
        }
    }

    let dual_objective = alpha
        .iter()
        .zip(&grad)
        .fold(T::zero(), |acc, (&a, &g)| acc + T::lit(0.5) * a * (T::one() + g));
    DualSolution {
        converged: best_v <= problem.tolerance,
        max_kkt_violation: best_v,
        alpha,
        dual_objective,
        iterations,
        gradient: grad,
    }
}

/// Solver state restricted to the active coordinates, indexed locally.
struct Working<'a, T> {
    alpha: Vec<T>,
    grad: Vec<T>,
    upper: Vec<T>,
    ys: Vec<T>,
    diag: Vec<T>,
    /// Row-major `m × m` kernel block of the active coordinates.
    rows: &'a [T],
    m: usize,
    score: Vec<T>,
}

impl<T: Real> Working<'_, T> {
    /// Largest KKT violation and its lowest index.
    #[inline(always)]
    fn most_violating(&mut self) -> (Option<usize>, T) {
        let (alpha, upper, grad) = (&self.alpha, &self.upper, &self.grad);
        for (t, s) in self.score.iter_mut().enumerate() {
            *s = violation(alpha[t], upper[t], grad[t]);
        }
        argmax(&self.score)
    }

    /// Runs up to `budget` steps; returns the steps taken and the final violation.
    fn run(&mut self, budget: usize, tolerance: T) -> (usize, T) {
        #[cfg(target_arch = "x86_64")]
        {
            // SAFETY: each branch runs only on a CPU with the feature its
            // function is compiled for.
            if std::arch::is_x86_feature_detected!("avx512f") {
                return unsafe { self.run_avx512(budget, tolerance) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                return unsafe { self.run_avx2(budget, tolerance) };
            }
        }
        self.run_portable(budget, tolerance)
    }

    // Same arithmetic as `run_portable` with wider vectors. Rust never fuses
    // or reorders floating point operations, so results are bit-identical.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    fn run_avx512(&mut self, budget: usize, tolerance: T) -> (usize, T) {
        self.run_portable(budget, tolerance)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    fn run_avx2(&mut self, budget: usize, tolerance: T) -> (usize, T) {
        self.run_portable(budget, tolerance)
    }

    #[inline(always)]
    fn run_portable(&mut self, budget: usize, tolerance: T) -> (usize, T) {
        let (first, mut best_v) = self.most_violating();
        let mut i = first.unwrap_or(0);
        let m = self.m;
        let mut done = 0;
        while best_v > tolerance && done < budget {
            let rows = self.rows;
            let row_i = &rows[i * m..(i + 1) * m];
            let (gi, kii, yi) = (self.grad[i], self.diag[i], self.ys[i]);

            // Estimated joint gain of moving i together with t, or zero when
            // t cannot move in the improving direction.
            let partner = if kii > T::zero() {
                let floor = T::lit(1e-12) * kii;
                let (diag, ys, grad) = (&self.diag[..m], &self.ys[..m], &self.grad[..m]);
                let (alpha, upper) = (&self.alpha[..m], &self.upper[..m]);
                let score = &mut self.score[..m];
                for t in 0..m {
                    let (ktt, gt, at) = (diag[t], grad[t], alpha[t]);
                    let q = yi * ys[t] * row_i[t];
                    let toward = kii * gt - q * gi;
                    let free = (toward < T::zero() && at > T::zero()) | (toward >= T::zero() && at < upper[t]);
                    let d = kii * ktt - q * q;
                    let f = floor * ktt;
                    let det = if d > f { d } else { f };
                    let num = ktt * gi * gi + gt * (toward - q * gi);
                    let usable = free & (ktt > T::zero());
                    score[t] = if usable { num / det } else { T::zero() };
                }
                score[i] = T::zero();
                argmax(score).0
            } else {
                None
            };

            let (ai, ci) = (self.alpha[i], self.upper[i]);
            let (di, dj) = match partner {
                Some(j) => two_variable_step(
                    gi,
                    self.grad[j],
                    kii,
                    self.diag[j],
                    yi * self.ys[j] * row_i[j],
                    -ai,
                    ci - ai,
                    -self.alpha[j],
                    self.upper[j] - self.alpha[j],
                ),
                None => {
                    let target = if kii > T::zero() {
                        ai + gi / kii
                    } else if gi > T::zero() {
                        ci
                    } else {
                        T::zero()
                    };
                    (target.max(T::zero()).min(ci) - ai, T::zero())
                }
            };
            done += 1;

            let new_i = (ai + di).max(T::zero()).min(ci);
            let si = (new_i - ai) * yi;
            self.alpha[i] = new_i;
            let (sj, j) = match partner {
                Some(j) if dj != T::zero() => {
                    let new_j = (self.alpha[j] + dj).max(T::zero()).min(self.upper[j]);
                    let sj = (new_j - self.alpha[j]) * self.ys[j];
                    self.alpha[j] = new_j;
                    (sj, j)
                }
                _ => (T::zero(), i),
            };

            let (row_i, row_j) = (&rows[i * m..(i + 1) * m], &rows[j * m..(j + 1) * m]);
            let (ys, alpha, upper) = (&self.ys[..m], &self.alpha[..m], &self.upper[..m]);
            let grad = &mut self.grad[..m];
            let score = &mut self.score[..m];
            for t in 0..m {
                let g = grad[t] - ys[t] * (si * row_i[t] + sj * row_j[t]);
                grad[t] = g;
                score[t] = violation(alpha[t], upper[t], g);
            }
            let (next, v) = argmax(score);
            best_v = v;
            i = next.unwrap_or(i);
        }
        (done, best_v)
    }
}

/// Lowest index of the largest positive entry and that entry, or `(None, 0)`.
#[inline(always)]
fn argmax<T: Real>(xs: &[T]) -> (Option<usize>, T) {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] = if c[l] > acc[l] { c[l] } else { acc[l] };
        }
    }
    let mut best = T::zero();
    for &x in acc.iter().chain(tail) {
        best = if x > best { x } else { best };
    }
    if best > T::zero() {
        (xs.iter().position(|&x| x == best), best)
    } else {
        (None, T::zero())
    }
}

/// Recomputes `g_t = 1 - y_t Σ_s α_s y_s K_ts` for every `t` not in `active`.
fn reconstruct_gradient<T: Real>(k: &KernelMatrix<T>, ys: &[T], alpha: &[T], grad: &mut [T], active: &[usize]) {
    let mut is_active = vec![false; grad.len()];
    active.iter().for_each(|&t| is_active[t] = true);
    let support: Vec<(usize, T)> = alpha
        .iter()
        .enumerate()
        .filter(|(_, &a)| a != T::zero())
        .map(|(s, &a)| (s, a * ys[s]))
        .collect();
    for t in (0..grad.len()).filter(|&t| !is_active[t]) {
        let row = k.row(t);
        let f = support.iter().fold(T::zero(), |acc, &(s, b)| acc + b * row[s]);
        grad[t] = T::one() - ys[t] * f;
    }
}

/// If every label equals `c`, the constant function `c`; otherwise `None`.
pub fn single_class_shortcut(labels: &[Label]) -> Option<Label> {
    let first = *labels.first()?;
    labels.iter().all(|&l| l == first).then_some(first)
}

/// Kernel expansion `Σ β_i k_γ(x_i, ·)` over rows of a training set, by index.
///
/// `constant` is zero for solver output. It only becomes nonzero when folds
/// that were answered by the single-class shortcut are merged in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CellDecisionFunction<T> {
    pub gamma: T,
    pub support: Vec<usize>,
    pub coef: Vec<T>,
    pub constant: T,
}

impl<T: Real> CellDecisionFunction<T> {
    pub fn zero(gamma: T) -> Self {
        CellDecisionFunction {
            gamma,
            support: Vec::new(),
            coef: Vec::new(),
            constant: T::zero(),
        }
    }

    /// `β_i = α_i y_i` for nonzero `α_i`; `index_map[i]` translates solver
    /// positions into row indices of the owning dataset.
    pub fn from_alpha(alpha: &[T], labels: &[Label], index_map: &[usize], gamma: T) -> Self {
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            if a != T::zero() {
                support.push(index_map[i]);
                coef.push(a * labels[i].sign::<T>());
            }
        }
        CellDecisionFunction {
            gamma,
            support,
            coef,
            constant: T::zero(),
        }
    }

    pub fn support_count(&self) -> usize {
        self.support.len()
    }

    /// `f(x)`, with `points` the dataset the support indices refer to.
    pub fn decision_value(&self, points: &Dataset<T>, x: &[T], counters: &Counters) -> T {
        let inv = (self.gamma * self.gamma).recip();
        let mut f = self.constant;
        for (&i, &b) in self.support.iter().zip(&self.coef) {
            f = f + b * gaussian_from_sq(squared_distance(points.x(i), x), inv);
        }
        Counters::add(&counters.kernel_evals, self.support.len() as u64);
        f
    }

    /// Copies the support vectors out of `points`.
    pub fn materialize(&self, points: &Dataset<T>) -> SupportExpansion<T> {
        let mut vectors = Vec::with_capacity(self.support.len() * points.dim());
        for &i in &self.support {
            vectors.extend_from_slice(points.x(i));
        }
        SupportExpansion {
            gamma: self.gamma,
            dim: points.dim(),
            vectors,
            coef: self.coef.clone(),
            constant: self.constant,
        }
    }
}

/// Self-contained kernel expansion with its own copy of the support vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SupportExpansion<T> {
    pub gamma: T,
    pub dim: usize,
    pub vectors: Vec<T>,
    pub coef: Vec<T>,
    pub constant: T,
}

impl<T: Real> SupportExpansion<T> {
    pub fn support_count(&self) -> usize {
        self.coef.len()
    }

    pub fn decision_value(&self, x: &[T], counters: &Counters) -> T {
        let inv = (self.gamma * self.gamma).recip();
        let mut f = self.constant;
        for (sv, &b) in self.vectors.chunks_exact(self.dim.max(1)).zip(&self.coef) {
            f = f + b * gaussian_from_sq(squared_distance(sv, x), inv);
        }
        Counters::add(&counters.kernel_evals, self.coef.len() as u64);
        f
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if self.vectors.len() != self.dim * self.coef.len() {
            return Err(Error::Format("support vector buffer does not match coefficients".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::PreKernelMatrix;
    use rand::{Rng, SeedableRng};

    fn opts(tol: f64) -> SolverOptions<f64> {
        SolverOptions {
            tolerance: tol,
            max_iter_per_sample: 100_000,
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let k = KernelMatrix::from_dense(1, vec![1.0]).unwrap();
        let y = [Label::Pos];
        let p = DualProblem::new(&k, &y, vec![0.1], &opts(1e-12)).unwrap();
        let s = solve(&p, None, &Counters::new()).unwrap();
        assert!((s.alpha[0] - 0.1).abs() < 1e-12);
        assert!((s.dual_objective - 0.095).abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn separable_pair_closed_form() {
        let k = KernelMatrix::from_dense(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = [Label::Pos, Label::Neg];
        let p = DualProblem::new(&k, &y, vec![10.0, 10.0], &opts(1e-12)).unwrap();
        let s = solve(&p, None, &Counters::new()).unwrap();
        assert!((s.alpha[0] - 1.0).abs() < 1e-12 && (s.alpha[1] - 1.0).abs() < 1e-12);
        assert!((s.dual_objective - 1.0).abs() < 1e-12);
        let f = s.training_outputs(&y);
        assert!((f[0] - 1.0).abs() < 1e-12 && (f[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_problems() {
        let k = KernelMatrix::from_dense(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = [Label::Pos];
        assert!(DualProblem::new(&k, &y, vec![1.0], &opts(1e-3)).is_err());
        let y = [Label::Pos, Label::Neg];
        assert!(DualProblem::new(&k, &y, vec![1.0, 0.0], &opts(1e-3)).is_err());
        assert!(DualProblem::new(&k, &y, vec![1.0, f64::INFINITY], &opts(1e-3)).is_err());
        assert!(KernelMatrix::from_dense(1, vec![f64::NAN]).is_err());
        assert!(box_bounds(&y, 0.0, &ClassWeights::default()).is_err());
    }

    fn random_instance(seed: u64, n: usize) -> (KernelMatrix<f64>, Vec<Label>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Pos } else { Label::Neg })
            .collect();
        let data = Dataset::from_parts(2, feats, labels.clone()).unwrap();
        let pre = PreKernelMatrix::build(&data, &Counters::new());
        let k = KernelMatrix::from_prekernel(&pre, rng.random_range(0.2..2.0), &Counters::new())
            .unwrap();
        let c = rng.random_range(0.1..10.0);
        (k, labels, vec![c; n])
    }

    #[test]
    fn alpha_stays_in_box_and_objective_never_decreases() {
        let (k, y, c) = random_instance(4, 25);
        let counters = Counters::new();
        let mut last = 0.0;
        for cap in 1..200 {
            let p = DualProblem::new(&k, &y, c.clone(), &opts(1e-9))
                .unwrap()
                .with_max_iterations(cap);
            let s = solve(&p, None, &counters).unwrap();
            assert!(s.alpha.iter().zip(&c).all(|(&a, &ci)| (0.0..=ci).contains(&a)));
            assert!(s.dual_objective >= last - 1e-12);
            last = s.dual_objective;
            if s.converged {
                break;
            }
        }
    }

    #[test]
    fn capped_solve_is_flagged_not_fatal() {
        let (k, y, c) = random_instance(5, 20);
        let p = DualProblem::new(&k, &y, c, &opts(1e-9)).unwrap().with_max_iterations(2);
        let s = solve(&p, None, &Counters::new()).unwrap();
        assert!(!s.converged);
        assert!(s.max_kkt_violation > 1e-9);
        assert_eq!(s.iterations, 2);
    }

    #[test]
    fn duality_gap_certificate() {
        for seed in 0..20 {
            let (k, y, c) = random_instance(100 + seed, 30);
            let tol = 1e-3;
            let p = DualProblem::new(&k, &y, c.clone(), &opts(tol)).unwrap();
            let s = solve(&p, None, &Counters::new()).unwrap();
            assert!(s.converged);
            // explicit primal from alpha and K
            let n = y.len();
            let beta: Vec<f64> = (0..n).map(|i| s.alpha[i] * y[i].sign::<f64>()).collect();
            let f: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * beta[j]).sum()).collect();
            let norm2: f64 = (0..n).map(|i| beta[i] * f[i]).sum();
            let primal: f64 = 0.5 * norm2
                + (0..n).map(|i| c[i] * (1.0 - y[i].sign::<f64>() * f[i]).max(0.0)).sum::<f64>();
            let gap = primal - s.dual_objective;
            assert!(gap >= -1e-9, "negative gap {gap}");
            assert!(gap <= n as f64 * tol * c[0], "gap {gap}");
            assert!((gap - s.duality_gap(&c)).abs() < 1e-8);
        }
    }

    #[test]
    fn warm_start_reaches_the_same_optimum() {
        let (k, y, c) = random_instance(9, 30);
        let p = DualProblem::new(&k, &y, c.clone(), &opts(1e-8)).unwrap();
        let cold = solve(&p, None, &Counters::new()).unwrap();
        let (_, _, other) = random_instance(10, 30);
        let warm_guess: Vec<f64> = other.iter().map(|v| v * 0.7).collect();
        let warm = solve(&p, Some(&warm_guess), &Counters::new()).unwrap();
        let rel = (cold.dual_objective - warm.dual_objective).abs() / cold.dual_objective.abs();
        assert!(rel < 1e-6, "{rel}");
        // warm start outside the box gets clamped
        let huge = vec![1e6; 30];
        let s = solve(&p, Some(&huge), &Counters::new()).unwrap();
        assert!(s.alpha.iter().zip(&c).all(|(&a, &ci)| a <= ci));
    }

    #[test]
    fn resume_matches_a_fresh_warm_start() {
        let (k, y, c) = random_instance(11, 40);
        let p = DualProblem::new(&k, &y, c.clone(), &opts(1e-9)).unwrap();
        let first = solve(&p, None, &Counters::new()).unwrap();

        let wider: Vec<f64> = c.iter().map(|v| v * 3.0).collect();
        let q = DualProblem::new(&k, &y, wider, &opts(1e-9)).unwrap();
        let fresh = solve(&q, Some(&first.alpha), &Counters::new()).unwrap();
        let resumed = resume(&q, first.clone(), &Counters::new()).unwrap();
        let rel = (fresh.dual_objective - resumed.dual_objective).abs() / fresh.dual_objective.abs();
        assert!(rel < 1e-9, "{rel}");

        // a narrower box clamps, so the gradient is rebuilt
        let narrow: Vec<f64> = c.iter().map(|v| v * 0.1).collect();
        let r = DualProblem::new(&k, &y, narrow.clone(), &opts(1e-9)).unwrap();
        let clamped = resume(&r, first, &Counters::new()).unwrap();
        let direct = solve(&r, None, &Counters::new()).unwrap();
        assert!(clamped.alpha.iter().zip(&narrow).all(|(&a, &ci)| a <= ci));
        assert!((clamped.dual_objective - direct.dual_objective).abs() < 1e-8);
        assert!(clamped.duality_gap(&narrow).abs() < 1e-6);
    }

    #[test]
    fn class_weight_increases_true_positives() {
        // imbalanced, overlapping 1-d cell: 5 positives inside 25 negatives
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..25 {
            feats.push(i as f64 * 0.08);
            labels.push(Label::Neg);
        }
        for i in 0..5 {
            feats.push(0.9 + i as f64 * 0.07);
            labels.push(Label::Pos);
        }
        let data = Dataset::from_parts(1, feats, labels.clone()).unwrap();
        let pre = PreKernelMatrix::build(&data, &Counters::new());
        let k = KernelMatrix::from_prekernel(&pre, 0.5, &Counters::new()).unwrap();
        let tp = |w: ClassWeights<f64>| {
            let c = box_bounds(&labels, 0.05, &w).unwrap();
            let p = DualProblem::new(&k, &labels, c, &opts(1e-6)).unwrap();
            let s = solve(&p, None, &Counters::new()).unwrap();
            s.training_outputs(&labels)
                .iter()
                .zip(&labels)
                .filter(|(&f, &l)| l == Label::Pos && f >= 0.0)
                .count()
        };
        let base = tp(ClassWeights::default());
        let boosted = tp(ClassWeights { neg: 1.0, pos: 50.0 });
        assert!(boosted > base, "base {base}, boosted {boosted}");
    }

    #[test]
    fn weights_follow_negative_weight_convention() {
        let w: ClassWeights<f64> = ClassWeights::from_negative_weight(0.987).unwrap();
        assert_eq!(w.neg, 0.987);
        assert!((w.pos - 0.013).abs() < 1e-15);
        assert!(ClassWeights::<f64>::from_negative_weight(1.0).is_err());
    }

    #[test]
    fn shortcut_for_single_class() {
        assert_eq!(single_class_shortcut(&[Label::Pos, Label::Pos]), Some(Label::Pos));
        assert_eq!(single_class_shortcut(&[Label::Pos, Label::Neg]), None);
        assert_eq!(single_class_shortcut(&[]), None);
    }

    #[test]
    fn decision_values_match_matrix_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 20;
        let feats: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<Label> = (0..n)
            .map(|i| if i % 3 == 0 { Label::Pos } else { Label::Neg })
            .collect();
        let data = Dataset::from_parts(3, feats, labels.clone()).unwrap();
        let pre = PreKernelMatrix::build(&data, &Counters::new());
        let k = KernelMatrix::from_prekernel(&pre, 0.6, &Counters::new()).unwrap();
        let p = DualProblem::new(&k, &labels, vec![2.0; n], &opts(1e-6)).unwrap();
        let s = solve(&p, None, &Counters::new()).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let f = CellDecisionFunction::from_alpha(&s.alpha, &labels, &idx, 0.6);
        for (&i, &b) in f.support.iter().zip(&f.coef) {
            assert_eq!(b.signum(), labels[i].sign::<f64>());
        }
        let counters = Counters::new();
        let from_solver = s.training_outputs(&labels);
        let expansion = f.materialize(&data);
        for i in 0..n {
            let direct: f64 = (0..n).map(|j| k.get(i, j) * s.alpha[j] * labels[j].sign::<f64>()).sum();
            let v = f.decision_value(&data, data.x(i), &counters);
            assert!((v - direct).abs() < 1e-10);
            assert!((from_solver[i] - direct).abs() < 1e-10);
            assert!((expansion.decision_value(data.x(i), &counters) - v).abs() < 1e-12);
        }
        assert_eq!(counters.snapshot().kernel_evals, 2 * (n * f.support_count()) as u64);
        let z = CellDecisionFunction::zero(0.5);
        assert_eq!(z.decision_value(&data, data.x(0), &counters), 0.0);
    }
}
