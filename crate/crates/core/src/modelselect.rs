//! Per-cell hyper-parameter selection by k-fold cross-validation.
//!
//! For every fold one pre-kernel matrix is built on the fold's training
//! complement. For every γ the kernel matrix is derived from it, and the λ
//! candidates are solved in sequence, each warm-started from the previous
//! solution. The k fold solutions of a grid point are merged into one
//! function with weights exponential in their validation risks, and the grid
//! point whose merged function has the smallest risk on the cell wins.

use std::io::Write;
use std::time::{Duration, Instant};

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernel::{cross_sq_distances, gaussian_from_sq, Counters, KernelMatrix, PreKernelMatrix};
use crate::scalar::Real;
use crate::seed::{self, Stream};
use crate::solver::{
    box_bounds, resume, single_class_shortcut, solve, CellDecisionFunction, ClassWeights, DualProblem,
    DualSolution,
    SolverOptions,
};

pub fn clip<T: Real>(t: T) -> T {
    t.max(-T::one()).min(T::one())
}

pub fn hinge_loss<T: Real>(y: Label, t: T) -> T {
    (T::one() - y.sign::<T>() * t).max(T::zero())
}

/// `+1` for `t ≥ 0`, else `-1`.
pub fn classify<T: Real>(t: T) -> Label {
    if t >= T::zero() {
        Label::Pos
    } else {
        Label::Neg
    }
}

/// Geometric sequence from `hi` down to `lo` with exact endpoints.
pub fn geometric<T: Real>(hi: T, lo: T, len: usize) -> Vec<T> {
    match len {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let ratio = lo / hi;
            let last = T::lit((len - 1) as f64);
            (0..len)
                .map(|i| match i {
                    0 => hi,
                    i if i == len - 1 => lo,
                    i => hi * ratio.powf(T::lit(i as f64) / last),
                })
                .collect()
        }
    }
}

/// λ and γ candidates, each ordered from largest to smallest.
///
/// Solving λ in this order means the box bounds `C ∝ 1/λ` grow along the
/// sequence, so every warm start is feasible for the next problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct HyperGrid<T> {
    pub lambdas: Vec<T>,
    pub gammas: Vec<T>,
}

impl<T: Real> HyperGrid<T> {
    pub fn new(lambdas: Vec<T>, gammas: Vec<T>) -> Result<Self> {
        for (name, v) in [("lambda", &lambdas), ("gamma", &gammas)] {
            if v.is_empty() {
                return Err(Error::Config(format!("{name} grid is empty")));
            }
            if v.iter().any(|x| !(*x > T::zero() && x.is_finite())) {
                return Err(Error::Config(format!("{name} grid must be positive")));
            }
            if v.windows(2).any(|w| !(w[0] > w[1])) {
                return Err(Error::Config(format!("{name} grid must be strictly decreasing")));
            }
        }
        Ok(HyperGrid { lambdas, gammas })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Grid for a training set of `n_tilde` samples in a cell of radius `r` in
/// dimension `d`: λ from `0.01/ñ` to `0.001/ñ`, γ from `5r` to `0.2 r ñ^(-1/d)`.
pub fn default_grid<T: Real>(
    n_tilde: usize,
    r: T,
    d: usize,
    n_lambda: usize,
    n_gamma: usize,
) -> Result<HyperGrid<T>> {
    if n_tilde < 1 || d < 1 {
        return Err(Error::Parameter(format!(
            "grid needs n_tilde >= 1 and d >= 1, got {n_tilde}, {d}"
        )));
    }
    if n_lambda == 0 || n_gamma == 0 {
        return Err(Error::Config("grid sizes must be positive".into()));
    }
    let r = if r > T::zero() && r.is_finite() {
        r
    } else {
        let fallback = T::epsilon().sqrt();
        warn!("cell radius {r} is degenerate; using {fallback} for the gamma grid");
        fallback
    };
    let nt = T::lit(n_tilde as f64);
    let lambdas = geometric(T::lit(0.01) / nt, T::lit(0.001) / nt, n_lambda);
    let gammas = geometric(
        T::lit(5.0) * r,
        T::lit(0.2) * r / nt.nth_root(d as u32),
        n_gamma,
    );
    Ok(HyperGrid { lambdas, gammas })
}

/// Shuffled indices dealt round-robin into `k` folds; each fold sorted.
pub fn fold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!("{n} samples cannot fill {k} folds")));
    }
    let mut rng = seed::rng(seed, Stream::Folds, &[]);
    let perm = index::sample(&mut rng, n, n).into_vec();
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in perm.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Merges fold functions with weights `∝ exp(-R_ℓ / T)`, `T` the mean risk
/// (1 when the mean is 0). Returns the merged function and the weights.
pub fn combine_folds<T: Real>(
    fold_functions: &[CellDecisionFunction<T>],
    fold_risks: &[T],
) -> (CellDecisionFunction<T>, Vec<T>) {
    let weights = fold_weights(fold_risks);
    (merge_weighted(fold_functions, &weights), weights)
}

pub fn fold_weights<T: Real>(risks: &[T]) -> Vec<T> {
    assert!(!risks.is_empty(), "no folds to weight");
    let k = T::lit(risks.len() as f64);
    let mean = risks.iter().copied().sum::<T>() / k;
    let temp = if mean > T::zero() { mean } else { T::one() };
    let min = risks.iter().copied().fold(T::infinity(), T::min);
    let raw: Vec<T> = risks.iter().map(|&r| (-(r - min) / temp).exp()).collect();
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn merge_weighted<T: Real>(functions: &[CellDecisionFunction<T>], weights: &[T]) -> CellDecisionFunction<T> {
    let gamma = functions[0].gamma;
    let span = functions
        .iter()
        .flat_map(|f| f.support.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    let mut acc = vec![T::zero(); span];
    let mut used = vec![false; span];
    let mut constant = T::zero();
    for (f, &w) in functions.iter().zip(weights) {
        debug_assert!(f.support.is_empty() || f.gamma == gamma);
        constant = constant + w * f.constant;
        for (&i, &b) in f.support.iter().zip(&f.coef) {
            acc[i] = acc[i] + w * b;
            used[i] = true;
        }
    }
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for i in 0..span {
        if used[i] && acc[i] != T::zero() {
            support.push(i);
            coef.push(acc[i]);
        }
    }
    CellDecisionFunction {
        gamma,
        support,
        coef,
        constant,
    }
}

/// Accumulated time per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub kernel_calc: Duration,
    pub solver: Duration,
    pub validation: Duration,
    pub selection: Duration,
}

impl std::ops::AddAssign for PhaseTimes {
    fn add_assign(&mut self, o: Self) {
        self.kernel_calc += o.kernel_calc;
        self.solver += o.solver;
        self.validation += o.validation;
        self.selection += o.selection;
    }
}

/// Everything cross-validation learns about one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationTable<T> {
    pub grid: HyperGrid<T>,
    pub folds: Vec<Vec<usize>>,
    /// `fold_risks[point][fold]`, grid points in `(γ outer, λ inner)` order.
    pub fold_risks: Vec<Vec<T>>,
    pub fold_weights: Vec<Vec<T>>,
    /// Hinge risk of the merged function on the whole cell, per grid point.
    pub combined_risks: Vec<T>,
    /// `fold_functions[point][fold]`; support indices refer to the cell.
    pub fold_functions: Vec<Vec<CellDecisionFunction<T>>>,
    /// Solver calls skipped because a fold's training part held one class.
    pub shortcut_skips: usize,
    pub times: PhaseTimes,
}

impl<T: Real> ValidationTable<T> {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(γ index, λ index)` of a flat grid point.
    pub fn coords(&self, point: usize) -> (usize, usize) {
        let nl = self.grid.lambdas.len();
        (point / nl, point % nl)
    }

    pub fn write_csv(&self, mut w: impl Write, cell: usize) -> Result<()> {
        for (p, risks) in self.fold_risks.iter().enumerate() {
            let (g, l) = self.coords(p);
            let (gamma, lambda) = (self.grid.gammas[g], self.grid.lambdas[l]);
            for (fold, r) in risks.iter().enumerate() {
                writeln!(w, "{cell},{gamma},{lambda},{fold},{r}")?;
            }
            writeln!(w, "{cell},{gamma},{lambda},combined,{}", self.combined_risks[p])?;
        }
        Ok(())
    }
}

/// Solver configuration shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FitOptions<T> {
    pub weights: ClassWeights<T>,
    pub solver: SolverOptions<T>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions {
            weights: ClassWeights::default(),
            solver: SolverOptions::default(),
        }
    }
}

pub(crate) fn constant_function<T: Real>(gamma: T, label: Label) -> CellDecisionFunction<T> {
    CellDecisionFunction {
        constant: label.sign(),
        ..CellDecisionFunction::zero(gamma)
    }
}

/// Runs k-fold cross-validation over `grid` on one cell.
pub fn cross_validate<T: Real>(
    cell: &Dataset<T>,
    grid: &HyperGrid<T>,
    k: usize,
    seed: u64,
    fit: &FitOptions<T>,
    counters: &Counters,
) -> Result<ValidationTable<T>> {
    let folds = fold_split(cell.len(), k, seed)?;
    let n = cell.len();
    let (ng, nl) = (grid.gammas.len(), grid.lambdas.len());
    let points = ng * nl;
    let mut times = PhaseTimes::default();
    let mut shortcut_skips = 0;

    let mut fold_risks = vec![vec![T::zero(); k]; points];
    let mut fold_functions: Vec<Vec<CellDecisionFunction<T>>> = vec![Vec::with_capacity(k); points];
    // values[point][fold * n + i] = f_{point,fold}(x_i) on the whole cell
    let mut values = vec![vec![T::zero(); k * n]; points];

    let mut in_fold = vec![usize::MAX; n];
    for (l, f) in folds.iter().enumerate() {
        for &i in f {
            in_fold[i] = l;
        }
    }

    for (l, held_out) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..n).filter(|&i| in_fold[i] != l).collect();
        if train_idx.is_empty() {
            return Err(Error::Config(format!("fold {l} has an empty training complement")));
        }
        let train = cell.select(&train_idx);
        let val = cell.select(held_out);

        if let Some(label) = single_class_shortcut(train.labels()) {
            Counters::add(&counters.shortcut_skips, points as u64);
            shortcut_skips += points;
            let t0 = Instant::now();
            let c = label.sign::<T>();
            let risk = validation_risk(val.labels(), &vec![c; val.len()]);
            for p in 0..points {
                let (g, _) = (p / nl, p % nl);
                fold_functions[p].push(constant_function(grid.gammas[g], label));
                fold_risks[p][l] = risk;
                values[p][l * n..(l + 1) * n].fill(c);
            }
            times.validation += t0.elapsed();
            continue;
        }

        let t0 = Instant::now();
        let pre = PreKernelMatrix::build(&train, counters);
        let cross = cross_sq_distances(&val, &train, counters);
        times.kernel_calc += t0.elapsed();

        for (g, &gamma) in grid.gammas.iter().enumerate() {
            let t0 = Instant::now();
            let kmat = KernelMatrix::from_prekernel(&pre, gamma, counters)?;
            times.kernel_calc += t0.elapsed();

            let t0 = Instant::now();
            let inv = (gamma * gamma).recip();
            let kval: Vec<T> = cross.iter().map(|&d2| gaussian_from_sq(d2, inv)).collect();
            Counters::add(&counters.kernel_evals, kval.len() as u64);
            times.validation += t0.elapsed();

            let mut warm: Option<DualSolution<T>> = None;
            for (li, &lambda) in grid.lambdas.iter().enumerate() {
                let p = g * nl + li;
                let t0 = Instant::now();
                let upper = box_bounds(train.labels(), lambda, &fit.weights)?;
                let problem = DualProblem::new(&kmat, train.labels(), upper, &fit.solver)?;
                let sol = match warm.take() {
                    Some(prev) => resume(&problem, prev, counters)?,
                    None => solve(&problem, None, counters)?,
                };
                if !sol.converged {
                    warn!(
                        "solver hit its iteration cap (gamma {gamma}, lambda {lambda}, violation {})",
                        sol.max_kkt_violation
                    );
                }
                times.solver += t0.elapsed();

                let t0 = Instant::now();
                let train_out = sol.training_outputs(train.labels());
                let m = train.len();
                let beta: Vec<T> = sol
                    .alpha
                    .iter()
                    .zip(train.labels())
                    .map(|(&a, &y)| a * y.sign::<T>())
                    .collect();
                let val_out: Vec<T> = kval
                    .chunks_exact(m)
                    .map(|row| {
                        row.iter()
                            .zip(&beta)
                            .filter(|(_, &b)| b != T::zero())
                            .fold(T::zero(), |acc, (&kv, &b)| acc + kv * b)
                    })
                    .collect();
                fold_risks[p][l] = validation_risk(val.labels(), &val_out);
                let slot = &mut values[p][l * n..(l + 1) * n];
                for (pos, &i) in train_idx.iter().enumerate() {
                    slot[i] = train_out[pos];
                }
                for (pos, &i) in held_out.iter().enumerate() {
                    slot[i] = val_out[pos];
                }
                fold_functions[p].push(CellDecisionFunction::from_alpha(
                    &sol.alpha,
                    train.labels(),
                    &train_idx,
                    gamma,
                ));
                times.validation += t0.elapsed();
                warm = Some(sol);
            }
        }
    }

    let t0 = Instant::now();
    let mut fold_weights_all = Vec::with_capacity(points);
    let mut combined_risks = Vec::with_capacity(points);
    for p in 0..points {
        let w = fold_weights(&fold_risks[p]);
        let merged: Vec<T> = (0..n)
            .map(|i| {
                (0..k).fold(T::zero(), |acc, l| acc + w[l] * values[p][l * n + i])
            })
            .collect();
        combined_risks.push(validation_risk(cell.labels(), &merged));
        fold_weights_all.push(w);
    }
    times.validation += t0.elapsed();

    Ok(ValidationTable {
        grid: grid.clone(),
        folds,
        fold_risks,
        fold_weights: fold_weights_all,
        combined_risks,
        fold_functions,
        shortcut_skips,
        times,
    })
}

/// Mean hinge loss of clipped decision values.
pub fn validation_risk<T: Real>(labels: &[Label], values: &[T]) -> T {
    if labels.is_empty() {
        return T::zero();
    }
    let total = labels
        .iter()
        .zip(values)
        .fold(T::zero(), |acc, (&y, &v)| acc + hinge_loss(y, clip(v)));
    total / T::lit(labels.len() as f64)
}

/// Outcome of [`select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub gamma: T,
    pub lambda: T,
    pub point: usize,
    pub risk: T,
    pub function: CellDecisionFunction<T>,
    pub weights: Vec<T>,
}

/// Index of the smallest risk; ties go to the larger λ, then the larger γ.
pub fn argmin_risk<T: Real>(risks: &[T], grid: &HyperGrid<T>) -> usize {
    let nl = grid.lambdas.len();
    let mut best = 0;
    for p in 1..risks.len() {
        let (r, rb) = (risks[p], risks[best]);
        let better = if r != rb {
            r < rb
        } else {
            let (lam, lam_b) = (grid.lambdas[p % nl], grid.lambdas[best % nl]);
            if lam != lam_b {
                lam > lam_b
            } else {
                grid.gammas[p / nl] > grid.gammas[best / nl]
            }
        };
        if better {
            best = p;
        }
    }
    best
}

/// Picks the grid point with the smallest combined risk and returns its merged function.
pub fn select<T: Real>(table: &ValidationTable<T>) -> Result<Selection<T>> {
    if table.combined_risks.is_empty() {
        return Err(Error::Input("empty validation table".into()));
    }
    let p = argmin_risk(&table.combined_risks, &table.grid);
    let (g, l) = table.coords(p);
    let (function, weights) = combine_folds(&table.fold_functions[p], &table.fold_risks[p]);
    Ok(Selection {
        gamma: table.grid.gammas[g],
        lambda: table.grid.lambdas[l],
        point: p,
        risk: table.combined_risks[p],
        function,
        weights,
    })
}
