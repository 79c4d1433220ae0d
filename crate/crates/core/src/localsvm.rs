//! End-to-end local SVM: partition, per-cell training, routed prediction.
//!
//! With the spatial strategy the global decision function is
//! `f(x) = Σ_j 1_{A_j}(x) f_j(x)`: a test point is answered by the model of
//! the cell it routes to, and nothing else is evaluated. With random chunks
//! every chunk model is evaluated and the decision values are averaged.
//! Both clip the result to `[-1, 1]`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, MinMaxScaling};
use crate::error::{Error, Result};
use crate::kernel::{Counters, KernelMatrix, PreKernelMatrix};
use crate::modelselect::{
    classify, clip, cross_validate, default_grid, hinge_loss, select, FitOptions, PhaseTimes,
    ValidationTable,
};
use crate::partition::{
    partition_random_chunks, partition_voronoi_by_radius, partition_voronoi_by_size, read_versioned,
    Partition, PartitionKind, Target, DEFAULT_SUBSAMPLE_THRESHOLD,
};
use crate::scalar::{squared_distance, Real};
use crate::seed::{self, Stream};
use crate::solver::{
    box_bounds, single_class_shortcut, solve, CellDecisionFunction, DualProblem, SupportExpansion,
};

const MODEL_MAGIC: &str = "VPSVM-MODEL";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Spatial,
    Chunks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum Strategy<T> {
    /// Voronoi cells with a size or radius target.
    Spatial(Target<T>),
    /// Random chunks of the given size.
    Chunks(usize),
}

impl<T: Real> Strategy<T> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Spatial(_) => StrategyKind::Spatial,
            Strategy::Chunks(_) => StrategyKind::Chunks,
        }
    }
}

/// How each cell's (γ, λ) is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Real")]
pub enum ParamMode<T> {
    /// k-fold cross-validation over the default grid of the cell.
    CrossValidate {
        n_lambda: usize,
        n_gamma: usize,
        k: usize,
    },
    /// One solve per cell. `lambda` is in the global normalization, i.e. the
    /// regularizer of `λ‖f‖² + (1/n) Σ_{i in cell} L` with `n` the full
    /// training set size.
    Fixed { gamma: T, lambda: T },
}

impl<T: Real> Default for ParamMode<T> {
    fn default() -> Self {
        ParamMode::CrossValidate {
            n_lambda: 10,
            n_gamma: 10,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrainConfig<T> {
    pub strategy: Strategy<T>,
    pub params: ParamMode<T>,
    pub fit: FitOptions<T>,
    pub seed: u64,
    pub subsample_threshold: usize,
    /// Keep every cell's validation table (for dumps); costs memory.
    #[serde(skip)]
    pub keep_validation: bool,
}

impl<T: Real> TrainConfig<T> {
    pub fn spatial_by_size(max_cell_size: usize) -> Self {
        Self::with_strategy(Strategy::Spatial(Target::MaxCellSize(max_cell_size)))
    }

    pub fn spatial_by_radius(max_radius: T) -> Self {
        Self::with_strategy(Strategy::Spatial(Target::MaxRadius(max_radius)))
    }

    pub fn chunks(chunk_size: usize) -> Self {
        Self::with_strategy(Strategy::Chunks(chunk_size))
    }

    fn with_strategy(strategy: Strategy<T>) -> Self {
        TrainConfig {
            strategy,
            params: ParamMode::default(),
            fit: FitOptions::default(),
            seed: 0,
            subsample_threshold: DEFAULT_SUBSAMPLE_THRESHOLD,
            keep_validation: false,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn params(mut self, params: ParamMode<T>) -> Self {
        self.params = params;
        self
    }

    pub fn fit(mut self, fit: FitOptions<T>) -> Self {
        self.fit = fit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.params {
            ParamMode::CrossValidate { n_lambda, n_gamma, k } => {
                if k < 2 {
                    return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
                }
                if n_lambda == 0 || n_gamma == 0 {
                    return Err(Error::Config("grid sizes must be positive".into()));
                }
            }
            ParamMode::Fixed { gamma, lambda } => {
                if !(gamma > T::zero() && lambda > T::zero()) {
                    return Err(Error::Config("fixed gamma and lambda must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One cell's trained function and the parameters it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CellModel<T> {
    pub function: SupportExpansion<T>,
    /// Training samples in the cell.
    pub size: usize,
    /// `None` when the cell held a single class and no SVM was trained.
    pub gamma: Option<T>,
    /// λ in the cell's own normalization `λ‖f‖² + (1/n_cell) Σ L`.
    pub lambda_cell: Option<T>,
    /// The same λ in the global normalization, `λ_cell · n_cell / n`.
    pub lambda_global: Option<T>,
    pub fold_weights: Vec<T>,
    pub validation_risk: Option<T>,
}

impl<T: Real> CellModel<T> {
    pub fn support_count(&self) -> usize {
        self.function.support_count()
    }

    pub fn is_constant(&self) -> bool {
        self.gamma.is_none()
    }

    fn constant(label: Label, size: usize, dim: usize) -> Self {
        CellModel {
            function: SupportExpansion {
                gamma: T::one(),
                dim,
                vectors: Vec::new(),
                coef: Vec::new(),
                constant: label.sign(),
            },
            size,
            gamma: None,
            lambda_cell: None,
            lambda_global: None,
            fold_weights: Vec::new(),
            validation_risk: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TrainMeta<T> {
    pub config: TrainConfig<T>,
    pub n: usize,
    pub dim: usize,
    /// Feature scaling fitted on the training data, applied before routing.
    pub scaling: Option<MinMaxScaling<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LocalModel<T> {
    pub strategy: StrategyKind,
    pub partition: Partition<T>,
    pub cells: Vec<CellModel<T>>,
    pub meta: TrainMeta<T>,
}

/// Seconds per phase. The per-cell phases are measured per worker and then
/// apportioned to the wall time of the training stage, so the phases add up
/// to the covered wall time even when cells run in parallel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub partition: f64,
    pub kernel_calc: f64,
    pub solver: f64,
    pub validation: f64,
    pub selection: f64,
    pub test: f64,
    /// Wall time of everything measured above.
    pub wall_total: f64,
    /// Largest kernel cache held by one cell task, in bytes.
    pub peak_memory_bytes: u64,
}

impl TimingReport {
    pub const CSV_HEADER: &'static str =
        "partition,kernel_calc,solver,validation,selection,test,wall_total,peak_memory_bytes";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.partition,
            self.kernel_calc,
            self.solver,
            self.validation,
            self.selection,
            self.test,
            self.wall_total,
            self.peak_memory_bytes
        )
    }

    pub fn phase_sum(&self) -> f64 {
        self.partition + self.kernel_calc + self.solver + self.validation + self.selection + self.test
    }
}

/// Result of [`train`]: the model plus what was measured while training it.
pub struct Trained<T> {
    pub model: LocalModel<T>,
    pub timing: TimingReport,
    /// Per cell, when `keep_validation` was set and the cell was cross-validated.
    pub validation: Vec<Option<ValidationTable<T>>>,
}

struct CellOutcome<T> {
    model: CellModel<T>,
    times: PhaseTimes,
    memory: u64,
    table: Option<ValidationTable<T>>,
}

/// Partitions `data` per the configured strategy and trains every cell.
pub fn train<T: Real>(data: &Dataset<T>, config: &TrainConfig<T>, counters: &Counters) -> Result<Trained<T>> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::Size(format!("need at least 2 training samples, got {}", data.len())));
    }
    let t0 = Instant::now();
    let partition = match config.strategy {
        Strategy::Spatial(Target::MaxCellSize(s)) => {
            partition_voronoi_by_size(data, s, config.seed, config.subsample_threshold)?
        }
        Strategy::Spatial(Target::MaxRadius(r)) => partition_voronoi_by_radius(data, r, config.seed)?,
        Strategy::Chunks(size) => partition_random_chunks(data, size, config.seed)?,
    };
    let partition_time = t0.elapsed();
    info!("partitioned {} samples into {} cells", data.len(), partition.len());
    let mut trained = train_on_partition(data, partition, config, counters)?;
    trained.timing.partition = partition_time.as_secs_f64();
    trained.timing.wall_total += partition_time.as_secs_f64();
    Ok(trained)
}

/// Trains every cell of an existing partition of `data`.
pub fn train_on_partition<T: Real>(
    data: &Dataset<T>,
    partition: Partition<T>,
    config: &TrainConfig<T>,
    counters: &Counters,
) -> Result<Trained<T>> {
    config.validate()?;
    partition.validate(data.len())?;
    if partition.dim != data.dim() {
        return Err(Error::Config(format!(
            "partition dimension {} does not match data dimension {}",
            partition.dim,
            data.dim()
        )));
    }
    let expected = match config.strategy.kind() {
        StrategyKind::Spatial => PartitionKind::Voronoi,
        StrategyKind::Chunks => PartitionKind::RandomChunks,
    };
    if partition.kind != expected {
        return Err(Error::Config(format!(
            "strategy {:?} cannot use a {:?} partition",
            config.strategy.kind(),
            partition.kind
        )));
    }

    let t0 = Instant::now();
    let outcomes: Vec<CellOutcome<T>> = partition
        .cells
        .par_iter()
        .enumerate()
        .map(|(j, cell)| {
            let cell_data = data.select(cell);
            let radius = match partition.kind {
                PartitionKind::Voronoi => partition.cell_radius(j, data)?,
                PartitionKind::RandomChunks => centroid_radius(&cell_data),
            };
            train_cell(&cell_data, j, radius, data.len(), config, counters)
        })
        .collect::<Result<_>>()?;
    let wall = t0.elapsed().as_secs_f64();

    let mut times = PhaseTimes::default();
    let mut peak = 0;
    let mut cells = Vec::with_capacity(outcomes.len());
    let mut validation = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        times += o.times;
        peak = peak.max(o.memory);
        cells.push(o.model);
        validation.push(o.table);
    }
    let measured = [times.kernel_calc, times.solver, times.validation, times.selection]
        .iter()
        .map(Duration::as_secs_f64)
        .sum::<f64>();
    let scale = if measured > 0.0 { wall / measured } else { 0.0 };
    let timing = TimingReport {
        partition: 0.0,
        kernel_calc: times.kernel_calc.as_secs_f64() * scale,
        solver: times.solver.as_secs_f64() * scale,
        validation: times.validation.as_secs_f64() * scale,
        selection: times.selection.as_secs_f64() * scale,
        test: 0.0,
        wall_total: if measured > 0.0 { wall } else { 0.0 },
        peak_memory_bytes: peak,
    };

    Ok(Trained {
        model: LocalModel {
            strategy: config.strategy.kind(),
            partition,
            cells,
            meta: TrainMeta {
                config: config.clone(),
                n: data.len(),
                dim: data.dim(),
                scaling: None,
            },
        },
        timing,
        validation,
    })
}

/// Radius about the centroid, for chunks that have no center.
fn centroid_radius<T: Real>(cell: &Dataset<T>) -> T {
    let mut c = vec![T::zero(); cell.dim()];
    for (x, _) in cell.rows() {
        for (ck, &xk) in c.iter_mut().zip(x) {
            *ck = *ck + xk;
        }
    }
    let n = T::lit(cell.len() as f64);
    c.iter_mut().for_each(|v| *v = *v / n);
    cell.rows()
        .map(|(x, _)| squared_distance(x, &c))
        .fold(T::zero(), T::max)
        .sqrt()
}

fn cache_bytes<T>(n_train: usize, n_val: usize) -> u64 {
    let s = std::mem::size_of::<T>() as u64;
    let (a, b) = (n_train as u64, n_val as u64);
    s * (a * (a + 1) / 2 + a * a + a * b)
}

fn train_cell<T: Real>(
    cell: &Dataset<T>,
    cell_id: usize,
    radius: T,
    n_total: usize,
    config: &TrainConfig<T>,
    counters: &Counters,
) -> Result<CellOutcome<T>> {
    let n = cell.len();
    if let Some(label) = single_class_shortcut(cell.labels()) {
        let skipped = match config.params {
            ParamMode::CrossValidate { n_lambda, n_gamma, k } => k * n_lambda * n_gamma,
            ParamMode::Fixed { .. } => 1,
        };
        Counters::add(&counters.shortcut_skips, skipped as u64);
        debug!("cell {cell_id}: single class {label}, constant model");
        return Ok(CellOutcome {
            model: CellModel::constant(label, n, cell.dim()),
            times: PhaseTimes::default(),
            memory: 0,
            table: None,
        });
    }

    match config.params {
        ParamMode::Fixed { gamma, lambda } => {
            let mut times = PhaseTimes::default();
            let t0 = Instant::now();
            let pre = PreKernelMatrix::build(cell, counters);
            let kmat = KernelMatrix::from_prekernel(&pre, gamma, counters)?;
            drop(pre);
            times.kernel_calc += t0.elapsed();
            let t0 = Instant::now();
            let lambda_cell = lambda * T::lit(n_total as f64) / T::lit(n as f64);
            let upper = box_bounds(cell.labels(), lambda_cell, &config.fit.weights)?;
            let problem = DualProblem::new(&kmat, cell.labels(), upper, &config.fit.solver)?;
            let sol = solve(&problem, None, counters)?;
            times.solver += t0.elapsed();
            let idx: Vec<usize> = (0..n).collect();
            let f = CellDecisionFunction::from_alpha(&sol.alpha, cell.labels(), &idx, gamma);
            Ok(CellOutcome {
                model: CellModel {
                    function: f.materialize(cell),
                    size: n,
                    gamma: Some(gamma),
                    lambda_cell: Some(lambda_cell),
                    lambda_global: Some(lambda),
                    fold_weights: vec![T::one()],
                    validation_risk: None,
                },
                times,
                memory: cache_bytes::<T>(n, 0),
                table: None,
            })
        }
        ParamMode::CrossValidate { n_lambda, n_gamma, k } => {
            let k_eff = k.min(n);
            if k_eff < k {
                debug!("cell {cell_id}: {n} samples, using {k_eff} folds instead of {k}");
            }
            let n_tilde = n - n.div_ceil(k_eff);
            let grid = default_grid(n_tilde.max(1), radius, cell.dim(), n_lambda, n_gamma)?;
            let fold_seed = seed::derive_seed(config.seed, Stream::Folds, &[cell_id as u64]);
            let table = cross_validate(cell, &grid, k_eff, fold_seed, &config.fit, counters)?;
            let t0 = Instant::now();
            let sel = select(&table)?;
            let function = sel.function.materialize(cell);
            let mut times = table.times;
            times.selection += t0.elapsed();
            let lambda_global = sel.lambda * T::lit(n as f64) / T::lit(n_total as f64);
            Ok(CellOutcome {
                model: CellModel {
                    function,
                    size: n,
                    gamma: Some(sel.gamma),
                    lambda_cell: Some(sel.lambda),
                    lambda_global: Some(lambda_global),
                    fold_weights: sel.weights,
                    validation_risk: Some(sel.risk),
                },
                times,
                memory: cache_bytes::<T>(n - n / k_eff, n.div_ceil(k_eff)),
                table: config.keep_validation.then_some(table),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Prediction<T> {
    /// Clipped decision value in `[-1, 1]`.
    pub value: T,
    pub label: Label,
    /// Routed cell (spatial models only).
    pub cell: Option<usize>,
    pub kernel_evals: u64,
}

impl<T: Real> LocalModel<T> {
    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn total_support(&self) -> usize {
        self.cells.iter().map(CellModel::support_count).sum()
    }

    /// Unclipped decision value, the routed cell and the kernel evaluations spent.
    pub fn decision_value(&self, x: &[T], counters: &Counters) -> Result<(T, Option<usize>, u64)> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!(
                "point has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        let scaled;
        let x = match &self.meta.scaling {
            Some(s) => {
                let mut v = x.to_vec();
                s.apply_point(&mut v);
                scaled = v;
                &scaled[..]
            }
            None => x,
        };
        match self.strategy {
            StrategyKind::Spatial => {
                let j = self.partition.route(x)?;
                let cell = &self.cells[j];
                let f = cell.function.decision_value(x, counters);
                Ok((f, Some(j), cell.support_count() as u64))
            }
            StrategyKind::Chunks => {
                let mut sum = T::zero();
                for c in &self.cells {
                    sum = sum + c.function.decision_value(x, counters);
                }
                let f = sum / T::lit(self.cells.len() as f64);
                Ok((f, None, self.total_support() as u64))
            }
        }
    }

    pub fn predict(&self, x: &[T], counters: &Counters) -> Result<Prediction<T>> {
        let (f, cell, kernel_evals) = self.decision_value(x, counters)?;
        let value = clip(f);
        Ok(Prediction {
            value,
            label: classify(value),
            cell,
            kernel_evals,
        })
    }

    pub fn predict_all(&self, data: &Dataset<T>, counters: &Counters) -> Result<Vec<Prediction<T>>> {
        (0..data.len())
            .into_par_iter()
            .map(|i| self.predict(data.x(i), counters))
            .collect()
    }

    /// Classification error and clipped hinge risk, globally and per routed cell.
    pub fn test_risk(&self, test: &Dataset<T>, counters: &Counters) -> Result<RiskReport<T>> {
        if test.is_empty() {
            return Err(Error::Size("test set is empty".into()));
        }
        let preds = self.predict_all(test, counters)?;
        Ok(RiskReport::from_predictions(&preds, test.labels(), self.cells.len()))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}")?;
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let body = read_versioned(r, MODEL_MAGIC, MODEL_VERSION)?;
        let model: LocalModel<T> = serde_json::from_str(&body)?;
        for c in &model.cells {
            if c.gamma.is_some() {
                c.function.validate()?;
            }
        }
        if model.cells.len() != model.partition.len() {
            return Err(Error::Format("cell models do not match the partition".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RiskEstimate<T> {
    pub error: T,
    pub hinge: T,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CellRisk<T> {
    pub n: usize,
    pub errors: usize,
    pub hinge_sum: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct RiskReport<T> {
    pub global: RiskEstimate<T>,
    /// Per routed cell; empty for chunk models.
    pub per_cell: Vec<CellRisk<T>>,
}

impl<T: Real> RiskReport<T> {
    pub fn from_predictions(preds: &[Prediction<T>], labels: &[Label], cells: usize) -> Self {
        let mut per_cell: Vec<CellRisk<T>> = Vec::new();
        if preds.iter().all(|p| p.cell.is_some()) {
            per_cell = vec![
                CellRisk {
                    n: 0,
                    errors: 0,
                    hinge_sum: T::zero()
                };
                cells
            ];
        }
        let mut errors = 0usize;
        let mut hinge = T::zero();
        for (p, &y) in preds.iter().zip(labels) {
            let e = usize::from(p.label != y);
            let h = hinge_loss(y, p.value);
            errors += e;
            hinge = hinge + h;
            if let Some(c) = p.cell.filter(|_| !per_cell.is_empty()) {
                per_cell[c].n += 1;
                per_cell[c].errors += e;
                per_cell[c].hinge_sum = per_cell[c].hinge_sum + h;
            }
        }
        let n = T::lit(preds.len() as f64);
        RiskReport {
            global: RiskEstimate {
                error: T::lit(errors as f64) / n,
                hinge: hinge / n,
                n: preds.len(),
            },
            per_cell,
        }
    }

    /// Global error recomputed as the cell-size-weighted mean of per-cell errors.
    pub fn weighted_cell_error(&self) -> Option<T> {
        if self.per_cell.is_empty() {
            return None;
        }
        let total: usize = self.per_cell.iter().map(|c| c.n).sum();
        let weighted = self
            .per_cell
            .iter()
            .filter(|c| c.n > 0)
            .map(|c| T::lit(c.n as f64) * (T::lit(c.errors as f64) / T::lit(c.n as f64)))
            .sum::<T>();
        Some(weighted / T::lit(total as f64))
    }
}
