//! Synthetic two-Gaussian mixture with a known posterior, and the harness
//! that measures how fast the excess classification risk of fixed-schedule
//! local SVMs decays with the sample size.
//!
//! Both mixture components are truncated to `X = [-2, 2]^d` and renormalized
//! per coordinate, so the truncation constants enter the posterior.

use std::io::Write;
use std::time::Instant;

use log::info;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernel::Counters;
use crate::localsvm::{train, ParamMode, TrainConfig};
use crate::modelselect::classify;
use crate::seed::{self, Stream};

const HALF_WIDTH: f64 = 2.0;

/// Axis-aligned normal with a mean on the first axis, truncated to `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub shift: f64,
    pub sd: f64,
}

impl Component {
    fn mean(&self, k: usize) -> f64 {
        if k == 0 {
            self.shift
        } else {
            0.0
        }
    }

    fn log_normalizer(&self, k: usize) -> f64 {
        let m = self.mean(k);
        let a = (-HALF_WIDTH - m) / self.sd;
        let b = (HALF_WIDTH - m) / self.sd;
        // Φ(b) − Φ(a) written with erfc to keep the tails accurate.
        (0.5 * (erfc(-b / std::f64::consts::SQRT_2) - erfc(-a / std::f64::consts::SQRT_2))).ln()
    }

    /// Log density of the truncated component.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ln_sqrt_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        x.iter()
            .enumerate()
            .map(|(k, &xk)| {
                let z = (xk - self.mean(k)) / self.sd;
                -0.5 * z * z - ln_sqrt_2pi - self.sd.ln() - self.log_normalizer(k)
            })
            .sum()
    }

    fn sample_into(&self, out: &mut [f64], rng: &mut seed::Rng) {
        for (k, v) in out.iter_mut().enumerate() {
            *v = loop {
                let z: f64 = rng.sample(StandardNormal);
                let t = self.mean(k) + self.sd * z;
                if (-HALF_WIDTH..=HALF_WIDTH).contains(&t) {
                    break t;
                }
            };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDistribution {
    pub d: usize,
    /// Probability of the +1 class.
    pub theta: f64,
    pub positive: Component,
    pub negative: Component,
}

impl ToyDistribution {
    /// Noise exponent of this distribution.
    pub const NOISE_EXPONENT: f64 = 1.0;
    /// Margin-noise exponent of this distribution.
    pub const MARGIN_NOISE_EXPONENT: f64 = 2.0;

    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("toy dimension must be at least 1".into()));
        }
        Ok(ToyDistribution {
            d,
            theta: 0.6,
            positive: Component { shift: 0.0, sd: 1.0 },
            negative: Component {
                shift: 1.0,
                sd: (1.0f64 / 8.0).sqrt(),
            },
        })
    }

    /// The same joint distribution with the class names exchanged.
    pub fn swapped(&self) -> Self {
        ToyDistribution {
            d: self.d,
            theta: 1.0 - self.theta,
            positive: self.negative,
            negative: self.positive,
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Config(format!("point has dimension {}, expected {}", x.len(), self.d)));
        }
        if x.iter().any(|v| !(-HALF_WIDTH..=HALF_WIDTH).contains(v)) {
            return Err(Error::Input(format!("point {x:?} lies outside [-2, 2]^{}", self.d)));
        }
        Ok(())
    }

    /// Posterior probability of +1 at `x`.
    pub fn eta(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let a = self.theta.ln() + self.positive.log_density(x);
        let b = (1.0 - self.theta).ln() + self.negative.log_density(x);
        Ok(1.0 / (1.0 + (b - a).exp()))
    }

    /// Marginal density of `x`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.theta * self.positive.log_density(x).exp()
            + (1.0 - self.theta) * self.negative.log_density(x).exp())
    }

    pub fn bayes_classify(&self, x: &[f64]) -> Result<Label> {
        Ok(classify(2.0 * self.eta(x)? - 1.0))
    }

    fn draw(&self, x: &mut [f64], rng: &mut seed::Rng) -> Label {
        if rng.random_bool(self.theta) {
            self.positive.sample_into(x, rng);
            Label::Pos
        } else {
            self.negative.sample_into(x, rng);
            Label::Neg
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset<f64>> {
        if n == 0 {
            return Err(Error::Size("toy sample size must be at least 1".into()));
        }
        let mut rng = seed::rng_from(seed);
        let mut features = vec![0.0; n * self.d];
        let mut labels = Vec::with_capacity(n);
        for x in features.chunks_mut(self.d) {
            labels.push(self.draw(x, &mut rng));
        }
        Dataset::from_parts(self.d, features, labels)
    }
}

/// Monte-Carlo estimate of `E[|2η − 1| · 1{f(x) ≠ bayes(x)}]` over `n_mc`
/// draws from the marginal.
pub fn excess_classification_risk<F>(dist: &ToyDistribution, predictor: F, n_mc: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Label> + Sync,
{
    if n_mc == 0 {
        return Err(Error::Size("n_mc must be at least 1".into()));
    }
    let points = dist.sample(n_mc, seed)?;
    let total = (0..n_mc)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let x = points.x(i);
            let eta = dist.eta(x)?;
            let bayes = classify(2.0 * eta - 1.0);
            Ok(if predictor(x)? != bayes {
                (2.0 * eta - 1.0).abs()
            } else {
                0.0
            })
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum::<f64>();
    Ok(total / n_mc as f64)
}

/// Parameter sequences `r_n = c₁ n^{-ν}`, `λ_n = c₂ n^{-(2+d)/(3+d)}`,
/// `γ_n = c₃ n^{-ν}` with `ν = 1/(3+d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl RateSchedule {
    pub fn new(d: usize, c1: f64, c2: f64, c3: f64) -> Result<Self> {
        if d == 0 || !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) {
            return Err(Error::Config("rate constants must be positive and d >= 1".into()));
        }
        Ok(RateSchedule { d, c1, c2, c3 })
    }

    /// `c₁ = 2√d`, `c₂ = 1`, `c₃ = c₁/5`.
    pub fn default_for(d: usize) -> Self {
        let c1 = 2.0 * (d as f64).sqrt();
        RateSchedule { d, c1, c2: 1.0, c3: c1 / 5.0 }
    }

    pub fn nu(&self) -> f64 {
        1.0 / (3.0 + self.d as f64)
    }

    pub fn radius(&self, n: usize) -> f64 {
        self.c1 * (n as f64).powf(-self.nu())
    }

    pub fn lambda(&self, n: usize) -> f64 {
        let d = self.d as f64;
        self.c2 * (n as f64).powf(-(2.0 + d) / (3.0 + d))
    }

    pub fn gamma(&self, n: usize) -> f64 {
        self.c3 * (n as f64).powf(-self.nu())
    }

    /// Exponent of the excess risk rate, `β(q+1) / (β(q+2) + d(q+1))` at the toy's exponents.
    pub fn risk_exponent(&self) -> f64 {
        let (q, b) = (ToyDistribution::NOISE_EXPONENT, ToyDistribution::MARGIN_NOISE_EXPONENT);
        b * (q + 1.0) / (b * (q + 2.0) + self.d as f64 * (q + 1.0))
    }

    pub fn theoretical_slope(&self) -> f64 {
        -self.risk_exponent()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    pub d_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub runs: usize,
    /// Fixed constants; `None` runs the calibration sweep per dimension.
    pub constants: Option<(f64, f64, f64)>,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            d_list: vec![4],
            n_list: vec![1024, 2048, 4096, 8192, 16384],
            runs: 5,
            constants: None,
            n_mc: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub d: usize,
    pub n: usize,
    pub run: usize,
    pub excess_risk: f64,
    pub cells: usize,
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub d: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub d: usize,
    pub fitted: f64,
    pub theoretical: f64,
    pub schedule: RateSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrial {
    pub schedule: RateSchedule,
    pub cells: usize,
    pub excess_risk: f64,
    pub eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResults {
    pub rows: Vec<RateRow>,
    pub points: Vec<RatePoint>,
    pub slopes: Vec<SlopeSummary>,
    pub calibration: Vec<CalibrationTrial>,
}

impl RateResults {
    pub const CSV_HEADER: &'static str = "d,n,run,excess_risk,cells,elapsed";

    /// Per-run rows, then `mean`/`std` rows per `(d, n)`, then `fitted` and
    /// `theoretical` slope rows per `d` with the slope in the risk column.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{:.3}", r.d, r.n, r.run, r.excess_risk, r.cells, r.elapsed)?;
        }
        for p in &self.points {
            writeln!(w, "{},{},mean,{},,", p.d, p.n, p.mean)?;
            writeln!(w, "{},{},std,{},,", p.d, p.n, p.std)?;
        }
        for s in &self.slopes {
            writeln!(w, "{},slope,fitted,{},,", s.d, s.fitted)?;
            writeln!(w, "{},slope,theoretical,{},,", s.d, s.theoretical)?;
        }
        Ok(())
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One training run with the fixed schedule; returns `(excess risk, cells)`.
pub fn rate_run(
    dist: &ToyDistribution,
    schedule: &RateSchedule,
    n: usize,
    train_seed: u64,
    eval_seed: u64,
    n_mc: usize,
    counters: &Counters,
) -> Result<(f64, usize)> {
    let data = dist.sample(n, train_seed)?;
    let config = TrainConfig::spatial_by_radius(schedule.radius(n))
        .params(ParamMode::Fixed {
            gamma: schedule.gamma(n),
            lambda: schedule.lambda(n),
        })
        .seed(train_seed);
    let model = train(&data, &config, counters)?.model;
    let risk = excess_classification_risk(dist, |x| Ok(model.predict(x, counters)?.label), n_mc, eval_seed)?;
    Ok((risk, model.cells.len()))
}

/// The three triples tried by the calibration sweep: the defaults, then a
/// doubled `c₁` (fewer, larger cells) with `c₃ = c₁/5` and `c₃ = c₁/10`.
pub fn calibration_candidates(d: usize) -> [RateSchedule; 3] {
    let base = RateSchedule::default_for(d);
    let wide = |ratio: f64| RateSchedule {
        c1: 2.0 * base.c1,
        c3: 2.0 * base.c1 / ratio,
        ..base
    };
    [base, wide(5.0), wide(10.0)]
}

/// Tries every candidate at `n` and keeps the lowest-risk one among those
/// giving 2 to 10 cells with `γ_n ≤ r_n`; falls back to all candidates.
pub fn calibrate(
    dist: &ToyDistribution,
    n: usize,
    n_mc: usize,
    seed: u64,
    counters: &Counters,
) -> Result<(RateSchedule, Vec<CalibrationTrial>)> {
    let mut trials = Vec::new();
    for (i, s) in calibration_candidates(dist.d).into_iter().enumerate() {
        let key = [dist.d as u64, n as u64, u64::MAX - i as u64];
        let (risk, cells) = rate_run(
            dist,
            &s,
            n,
            seed::derive_seed(seed, Stream::ToyTrain, &key),
            seed::derive_seed(seed, Stream::ToyEval, &key),
            n_mc,
            counters,
        )?;
        let eligible = (2..=10).contains(&cells) && s.gamma(n) <= s.radius(n);
        info!(
            "calibration d={} c=({:.4}, {:.4}, {:.4}): {cells} cells, excess risk {risk:.5}{}",
            dist.d,
            s.c1,
            s.c2,
            s.c3,
            if eligible { "" } else { " (ineligible)" }
        );
        trials.push(CalibrationTrial {
            schedule: s,
            cells,
            excess_risk: risk,
            eligible,
        });
    }
    let pick = |only_eligible: bool| {
        trials
            .iter()
            .filter(|t| t.eligible || !only_eligible)
            .min_by(|a, b| a.excess_risk.total_cmp(&b.excess_risk))
            .map(|t| t.schedule)
    };
    let chosen = pick(true).or_else(|| pick(false)).expect("three candidates");
    Ok((chosen, trials))
}

pub fn rate_experiment(config: &RateConfig, counters: &Counters) -> Result<RateResults> {
    if config.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if config.n_list.is_empty() || config.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n_list must be nonempty and strictly increasing".into()));
    }
    let mut results = RateResults {
        rows: Vec::new(),
        points: Vec::new(),
        slopes: Vec::new(),
        calibration: Vec::new(),
    };
    for &d in &config.d_list {
        let dist = ToyDistribution::new(d)?;
        let schedule = match config.constants {
            Some((c1, c2, c3)) => RateSchedule::new(d, c1, c2, c3)?,
            None => {
                let (s, trials) = calibrate(&dist, config.n_list[0], config.n_mc, config.seed, counters)?;
                results.calibration.extend(trials);
                s
            }
        };
        info!("d={d}: using c=({}, {}, {})", schedule.c1, schedule.c2, schedule.c3);
        let jobs: Vec<(usize, usize)> = config
            .n_list
            .iter()
            .flat_map(|&n| (0..config.runs).map(move |run| (n, run)))
            .collect();
        let rows: Vec<RateRow> = jobs
            .par_iter()
            .map(|&(n, run)| {
                let key = [d as u64, n as u64, run as u64];
                let t0 = Instant::now();
                let (excess_risk, cells) = rate_run(
                    &dist,
                    &schedule,
                    n,
                    seed::derive_seed(config.seed, Stream::ToyTrain, &key),
                    seed::derive_seed(config.seed, Stream::ToyEval, &key),
                    config.n_mc,
                    counters,
                )?;
                Ok(RateRow {
                    d,
                    n,
                    run,
                    excess_risk,
                    cells,
                    elapsed: t0.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<_>>()?;
        let mut means = Vec::new();
        for &n in &config.n_list {
            let risks: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.excess_risk).collect();
            let mean = risks.iter().sum::<f64>() / risks.len() as f64;
            let var = if risks.len() > 1 {
                risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (risks.len() - 1) as f64
            } else {
                0.0
            };
            results.points.push(RatePoint { d, n, mean, std: var.sqrt() });
            means.push(mean.max(f64::MIN_POSITIVE));
        }
        let ns: Vec<f64> = config.n_list.iter().map(|&n| n as f64).collect();
        let fitted = if ns.len() > 1 { log_log_slope(&ns, &means) } else { f64::NAN };
        results.slopes.push(SlopeSummary {
            d,
            fitted,
            theoretical: schedule.theoretical_slope(),
            schedule,
        });
        results.rows.extend(rows);
    }
    Ok(results)
}
