use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use vpsvm::data::{read_dataset, write_dataset, Format, LabelColumn, MinMaxScaling, ReadOptions};
use vpsvm::localsvm::{train, train_on_partition, LocalModel, ParamMode, Strategy, TimingReport, TrainConfig};
use vpsvm::modelselect::FitOptions;
use vpsvm::partition::{
    partition_random_chunks, partition_voronoi_by_radius, partition_voronoi_by_size, Partition, Target,
    DEFAULT_SUBSAMPLE_THRESHOLD,
};
use vpsvm::solver::{ClassWeights, SolverOptions};
use vpsvm::toy::{rate_experiment, RateConfig, RateResults, ToyDistribution};
use vpsvm::{Counters, Dataset, Error};

const EXIT_PARSE: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "vpsvm", version, about = "Local SVMs on Voronoi partitions")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a local SVM and write the model file.
    Train(TrainArgs),
    /// Predict a data file with a trained model.
    Predict(PredictArgs),
    /// Partition a data file without training.
    Partition(PartitionArgs),
    /// Excess-risk learning curves on the toy distribution.
    ToyRate(ToyRateArgs),
    /// Draw a data file from the toy distribution.
    ToySample(ToySampleArgs),
    /// Train spatial and chunk models on the same data and compare counted costs.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Libsvm,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LabelColumnArg {
    First,
    Last,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum StrategyArg {
    Spatial,
    Chunks,
}

#[derive(Args, Debug, Clone)]
struct DataFlags {
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Label column for CSV input.
    #[arg(long, value_enum, default_value = "first")]
    label_column: LabelColumnArg,
    /// Read labels as {0, 1} and map 0 to -1.
    #[arg(long)]
    remap_01: bool,
}

#[derive(Args, Debug, Clone)]
struct PartitionFlags {
    #[arg(long, value_enum, default_value = "spatial")]
    strategy: StrategyArg,
    /// Largest cell (spatial) or chunk size (chunks).
    #[arg(long)]
    cell_size: Option<usize>,
    /// Largest cell radius (spatial only).
    #[arg(long)]
    max_radius: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct FitFlags {
    /// Number of λ values in each cell's grid.
    #[arg(long, default_value_t = 10)]
    grid_lambdas: usize,
    /// Number of γ values in each cell's grid.
    #[arg(long, default_value_t = 10)]
    grid_gammas: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Weight of the negative class; the positive class gets 1 - w.
    #[arg(long)]
    weight_neg: Option<f64>,
    /// Solver stopping tolerance on the KKT violation.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Solver iteration cap per training sample.
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Skip cross-validation and use this γ in every cell.
    #[arg(long, requires = "fixed_lambda")]
    fixed_gamma: Option<f64>,
    /// Skip cross-validation and use this λ (normalized by the full training size).
    #[arg(long, requires = "fixed_gamma")]
    fixed_lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training data file.
    #[arg(long)]
    train: PathBuf,
    /// Output model file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    partition: PartitionFlags,
    #[command(flatten)]
    fit: FitFlags,
    /// Scale every feature to [-1, 1] using the training data range.
    #[arg(long)]
    scale: bool,
    /// Reuse a partition file written by `partition` instead of partitioning.
    #[arg(long)]
    from_partition: Option<PathBuf>,
    /// Write every cell's validation risks as CSV.
    #[arg(long)]
    dump_validation: Option<PathBuf>,
    /// Write the phase timings as CSV.
    #[arg(long)]
    timing: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Data file to predict; its labels are used for the test error.
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    /// Write per-sample predictions as CSV.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[arg(long)]
    data_file: PathBuf,
    /// Output partition file.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    partition: PartitionFlags,
    /// Write per-cell statistics as CSV.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ToyRateArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    dims: Vec<usize>,
    /// Comma-separated, increasing training set sizes.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Fixed constants c1,c2,c3; calibrated per dimension when omitted.
    #[arg(long, value_delimiter = ',')]
    constants: Option<Vec<f64>>,
    /// Monte-Carlo sample size for each excess-risk estimate.
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results CSV (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ToySampleArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Training data file; toy data is drawn when omitted.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    data: DataFlags,
    /// Toy dimension.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Toy training size.
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    /// Toy test size.
    #[arg(long, default_value_t = 2_000)]
    n_test: usize,
    #[arg(long, default_value_t = 500)]
    cell_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitFlags,
    /// Results CSV (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: config: --workers must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .expect("thread pool is configured once");
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Partition(a) => cmd_partition(a),
        Command::ToyRate(a) => cmd_toy_rate(a),
        Command::ToySample(a) => cmd_toy_sample(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let class = match code {
                EXIT_PARSE => "parse",
                EXIT_CONFIG => "config",
                _ => "runtime",
            };
            eprintln!("error: {class}: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        return match err {
            Error::Parse { .. } | Error::Format(_) | Error::Json(_) => EXIT_PARSE,
            Error::Config(_) | Error::Usage(_) | Error::Parameter(_) | Error::Size(_) | Error::Input(_) => {
                EXIT_CONFIG
            }
            Error::Io(_) => EXIT_RUNTIME,
        };
    }
    if e.chain().any(|c| c.is::<ConfigError>()) {
        return EXIT_CONFIG;
    }
    EXIT_RUNTIME
}

#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn infer_format(path: &Path, flag: Option<FormatArg>) -> Format {
    match flag {
        Some(FormatArg::Libsvm) => Format::Libsvm,
        Some(FormatArg::Csv) => Format::Csv,
        None => {
            let name = path.to_string_lossy().to_ascii_lowercase();
            if name.ends_with(".csv") || name.ends_with(".csv.gz") {
                Format::Csv
            } else {
                Format::Libsvm
            }
        }
    }
}

fn read_options(path: &Path, flags: &DataFlags, dim: Option<usize>) -> ReadOptions {
    ReadOptions {
        format: infer_format(path, flags.format),
        label_column: match flags.label_column {
            LabelColumnArg::First => LabelColumn::First,
            LabelColumnArg::Last => LabelColumn::Last,
        },
        remap_01: flags.remap_01,
        dim,
    }
}

fn load(path: &Path, flags: &DataFlags, dim: Option<usize>) -> anyhow::Result<Dataset> {
    read_dataset(path, &read_options(path, flags, dim)).with_context(|| format!("reading {}", path.display()))
}

fn target_of(p: &PartitionFlags) -> anyhow::Result<Strategy<f64>> {
    match (p.strategy, p.cell_size, p.max_radius) {
        (StrategyArg::Spatial, Some(s), None) => Ok(Strategy::Spatial(Target::MaxCellSize(s))),
        (StrategyArg::Spatial, None, Some(r)) => Ok(Strategy::Spatial(Target::MaxRadius(r))),
        (StrategyArg::Spatial, Some(_), Some(_)) => {
            Err(config_error("--cell-size and --max-radius are mutually exclusive"))
        }
        (StrategyArg::Spatial, None, None) => Err(config_error("spatial strategy needs --cell-size or --max-radius")),
        (StrategyArg::Chunks, Some(s), None) => Ok(Strategy::Chunks(s)),
        (StrategyArg::Chunks, _, Some(_)) => Err(config_error("--max-radius does not apply to --strategy chunks")),
        (StrategyArg::Chunks, None, None) => Err(config_error("chunks strategy needs --cell-size")),
    }
}

fn params_of(f: &FitFlags) -> ParamMode<f64> {
    match (f.fixed_gamma, f.fixed_lambda) {
        (Some(gamma), Some(lambda)) => ParamMode::Fixed { gamma, lambda },
        _ => ParamMode::CrossValidate {
            n_lambda: f.grid_lambdas,
            n_gamma: f.grid_gammas,
            k: f.folds,
        },
    }
}

fn fit_options(f: &FitFlags) -> anyhow::Result<FitOptions<f64>> {
    let weights = match f.weight_neg {
        Some(w) => ClassWeights::from_negative_weight(w)?,
        None => ClassWeights::default(),
    };
    if !(f.tolerance > 0.0) {
        return Err(config_error("--tolerance must be positive"));
    }
    if f.max_iter == 0 {
        return Err(config_error("--max-iter must be positive"));
    }
    Ok(FitOptions {
        weights,
        solver: SolverOptions {
            tolerance: f.tolerance,
            max_iter_per_sample: f.max_iter,
        },
    })
}

fn train_config(p: &PartitionFlags, f: &FitFlags) -> anyhow::Result<TrainConfig<f64>> {
    let config = TrainConfig {
        strategy: target_of(p)?,
        params: params_of(f),
        fit: fit_options(f)?,
        seed: p.seed,
        subsample_threshold: DEFAULT_SUBSAMPLE_THRESHOLD,
        keep_validation: false,
    };
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes CSV to `path`, or to stdout when `None`.
fn csv_sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn config_comment(args: &impl std::fmt::Debug) -> String {
    format!("# vpsvm {} {args:?}", env!("CARGO_PKG_VERSION"))
}

fn print_counters(counters: &Counters) {
    let s = counters.snapshot();
    println!(
        "counters: distance_evals={} kernel_evals={} kernel_entries={} prekernel_builds={} kernel_matrix_builds={} solver_calls={} shortcut_skips={}",
        s.distance_evals,
        s.kernel_evals,
        s.kernel_entries,
        s.prekernel_builds,
        s.kernel_matrix_builds,
        s.solver_calls,
        s.shortcut_skips
    );
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut config = train_config(&a.partition, &a.fit)?;
    config.keep_validation = a.dump_validation.is_some();
    let raw = load(&a.train, &a.data, None)?;
    let scaling = a.scale.then(|| MinMaxScaling::fit(&raw));
    let data = match &scaling {
        Some(s) => s.apply(&raw)?,
        None => raw.clone(),
    };
    info!("training on {} samples of dimension {}", data.len(), data.dim());
    let counters = Counters::new();
    let mut trained = match &a.from_partition {
        Some(path) => {
            let partition = Partition::load(path).with_context(|| format!("loading {}", path.display()))?;
            train_on_partition(&data, partition, &config, &counters)?
        }
        None => train(&data, &config, &counters)?,
    };
    trained.model.meta.scaling = scaling;
    trained.model.save(&a.model).with_context(|| format!("writing {}", a.model.display()))?;

    let risk = trained.model.test_risk(&raw, &Counters::new())?;
    let m = &trained.model;
    println!("cells: {}", m.cells.len());
    println!("support vectors: {}", m.total_support());
    println!("training error: {}", risk.global.error);
    println!("training hinge risk: {}", risk.global.hinge);
    print_counters(&counters);
    println!("{}", TimingReport::CSV_HEADER);
    println!("{}", trained.timing.csv_row());

    if let Some(path) = &a.timing {
        let mut w = create(path)?;
        writeln!(w, "{}", config_comment(&a))?;
        writeln!(w, "{}", TimingReport::CSV_HEADER)?;
        writeln!(w, "{}", trained.timing.csv_row())?;
        w.flush()?;
    }
    if let Some(path) = &a.dump_validation {
        let mut w = create(path)?;
        writeln!(w, "{}", config_comment(&a))?;
        writeln!(w, "cell,gamma,lambda,fold,risk")?;
        for (j, table) in trained.validation.iter().enumerate() {
            if let Some(t) = table {
                t.write_csv(&mut w, j)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> anyhow::Result<()> {
    let model = LocalModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let mut test = load(&a.test, &a.data, None)?;
    if test.is_empty() {
        bail!(Error::Size(format!("test file {} holds no samples", a.test.display())));
    }
    if test.dim() < model.dim() && infer_format(&a.test, a.data.format) == Format::Libsvm {
        // Sparse files only know the largest index they contain.
        test = load(&a.test, &a.data, Some(model.dim()))?;
    }
    if test.dim() != model.dim() {
        bail!(Error::Config(format!(
            "test data has dimension {}, model expects {}",
            test.dim(),
            model.dim()
        )));
    }
    let counters = Counters::new();
    let t0 = Instant::now();
    let preds = model.predict_all(&test, &counters)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let report = vpsvm::localsvm::RiskReport::from_predictions(&preds, test.labels(), model.cells.len());
    let expected: u64 = preds.iter().map(|p| p.kernel_evals).sum();

    if let Some(path) = &a.output {
        let mut w = create(path)?;
        writeln!(w, "{}", config_comment(&a))?;
        writeln!(w, "value,label,cell")?;
        for p in &preds {
            let cell = p.cell.map(|c| c.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{cell}", p.value, p.label)?;
        }
        w.flush()?;
    }
    println!("samples: {}", preds.len());
    println!("test error: {}", report.global.error);
    println!("test hinge risk: {}", report.global.hinge);
    println!("kernel evaluations: {}", counters.snapshot().kernel_evals);
    println!("kernel evaluations (routed support counts): {expected}");
    println!("test seconds: {elapsed:.6}");
    print_counters(&counters);
    Ok(())
}

fn cmd_partition(a: PartitionArgs) -> anyhow::Result<()> {
    let strategy = target_of(&a.partition)?;
    let data = load(&a.data_file, &a.data, None)?;
    let seed = a.partition.seed;
    let partition = match strategy {
        Strategy::Spatial(Target::MaxCellSize(s)) => {
            partition_voronoi_by_size(&data, s, seed, DEFAULT_SUBSAMPLE_THRESHOLD)?
        }
        Strategy::Spatial(Target::MaxRadius(r)) => partition_voronoi_by_radius(&data, r, seed)?,
        Strategy::Chunks(s) => partition_random_chunks(&data, s, seed)?,
    };
    partition.save(&a.output).with_context(|| format!("writing {}", a.output.display()))?;
    let stats = partition.stats(&data)?;
    let total: usize = stats.cells.iter().map(|c| c.size).sum();
    println!("cells: {}", partition.len());
    println!("samples: {total}");
    println!("largest cell: {}", stats.cells.iter().map(|c| c.size).max().unwrap_or(0));
    println!("max radius: {}", stats.max_radius);
    println!("radius bound 16 m^(-1/d): {}", stats.radius_bound);
    println!("radius bound holds: {}", stats.radius_bound_holds);
    if let Some(path) = &a.stats {
        let mut w = create(path)?;
        writeln!(w, "{}", config_comment(&a))?;
        writeln!(w, "cell,size,radius,negatives,positives")?;
        for (j, c) in stats.cells.iter().enumerate() {
            writeln!(w, "{j},{},{},{},{}", c.size, c.radius, c.negatives, c.positives)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_toy_rate(a: ToyRateArgs) -> anyhow::Result<()> {
    if a.constants.as_ref().is_some_and(|c| c.len() != 3) {
        return Err(config_error("--constants takes exactly three values c1,c2,c3"));
    }
    let config = RateConfig {
        d_list: a.dims.clone(),
        n_list: a.sizes.clone(),
        runs: a.runs,
        constants: a.constants.as_ref().map(|c| (c[0], c[1], c[2])),
        n_mc: a.n_mc,
        seed: a.seed,
    };
    let results: RateResults = rate_experiment(&config, &Counters::new())?;
    let mut w = csv_sink(a.output.as_deref())?;
    writeln!(w, "{}", config_comment(&a))?;
    for t in &results.calibration {
        writeln!(
            w,
            "# calibration d={} c1={} c2={} c3={} cells={} excess_risk={} eligible={}",
            t.schedule.d, t.schedule.c1, t.schedule.c2, t.schedule.c3, t.cells, t.excess_risk, t.eligible
        )?;
    }
    results.write_csv(&mut w)?;
    w.flush()?;
    for s in &results.slopes {
        eprintln!(
            "d={}: fitted slope {:.4}, theoretical {:.4} (c1={}, c2={}, c3={})",
            s.d, s.fitted, s.theoretical, s.schedule.c1, s.schedule.c2, s.schedule.c3
        );
    }
    Ok(())
}

fn cmd_toy_sample(a: ToySampleArgs) -> anyhow::Result<()> {
    let dist = ToyDistribution::new(a.dim)?;
    let data = dist.sample(a.n, a.seed)?;
    let format = infer_format(&a.output, a.format);
    write_dataset(&a.output, &data, format, LabelColumn::First)
        .with_context(|| format!("writing {}", a.output.display()))?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    let (train_set, test_set) = match (&a.train, &a.test) {
        (Some(tr), Some(te)) => {
            let train_set = load(tr, &a.data, None)?;
            let test_set = load(te, &a.data, Some(train_set.dim()))?;
            (train_set, test_set)
        }
        _ => {
            let dist = ToyDistribution::new(a.dim)?;
            (dist.sample(a.n, a.seed)?, dist.sample(a.n_test, a.seed.wrapping_add(1))?)
        }
    };
    let fit = fit_options(&a.fit)?;
    let mut w = csv_sink(a.output.as_deref())?;
    writeln!(w, "{}", config_comment(&a))?;
    writeln!(
        w,
        "strategy,cells,support,kernel_entries,solver_calls,{},test_kernel_evals,kernel_evals_per_sample,test_error",
        TimingReport::CSV_HEADER
    )?;
    let mut per_sample = Vec::new();
    for strategy in [Strategy::Spatial(Target::MaxCellSize(a.cell_size)), Strategy::Chunks(a.cell_size)] {
        let config = TrainConfig {
            strategy,
            params: params_of(&a.fit),
            fit,
            seed: a.seed,
            subsample_threshold: DEFAULT_SUBSAMPLE_THRESHOLD,
            keep_validation: false,
        };
        let counters = Counters::new();
        let mut trained = train(&train_set, &config, &counters)?;
        let train_counts = counters.snapshot();
        counters.reset();
        let t0 = Instant::now();
        let risk = trained.model.test_risk(&test_set, &counters)?;
        trained.timing.test = t0.elapsed().as_secs_f64();
        trained.timing.wall_total += trained.timing.test;
        let evals = counters.snapshot().kernel_evals;
        let each = evals as f64 / test_set.len() as f64;
        per_sample.push(each);
        let name = match strategy {
            Strategy::Spatial(_) => "spatial",
            Strategy::Chunks(_) => "chunks",
        };
        writeln!(
            w,
            "{name},{},{},{},{},{},{evals},{each},{}",
            trained.model.cells.len(),
            trained.model.total_support(),
            train_counts.kernel_entries,
            train_counts.solver_calls,
            trained.timing.csv_row(),
            risk.global.error
        )?;
    }
    w.flush()?;
    eprintln!(
        "prediction kernel evaluations, chunks / spatial: {:.2}",
        per_sample[1] / per_sample[0].max(f64::MIN_POSITIVE)
    );
    Ok(())
}
