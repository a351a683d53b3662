//! Backtesting, the NRMSE metric, a naive baseline and synthetic panels.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{self, FittedModel, ModelConfig};
use crate::tensor::{frobenius_norm, DenseTensor};

/// `||forecast - actual||_F / ||actual||_F`
pub fn nrmse(forecast: &DenseTensor, actual: &DenseTensor) -> Result<f64> {
    let diff = forecast.sub(actual)?;
    let norm = frobenius_norm(actual);
    if norm == 0.0 {
        return Err(Error::UndefinedMetric(
            "NRMSE of an all-zero target is undefined".into(),
        ));
    }
    Ok(frobenius_norm(&diff) / norm)
}

/// NRMSE of a sequence of slices, pooled over all of them.
pub fn pooled_nrmse(forecasts: &[DenseTensor], actuals: &[DenseTensor]) -> Result<f64> {
    if forecasts.len() != actuals.len() || actuals.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} forecasts for {} actual slices",
            forecasts.len(),
            actuals.len()
        )));
    }
    nrmse(
        &DenseTensor::stack_last(forecasts)?,
        &DenseTensor::stack_last(actuals)?,
    )
}

/// Repeats the final slice of `x` (time last) `horizon` times.
pub fn naive_last_value(x: &DenseTensor, horizon: usize) -> Result<Vec<DenseTensor>> {
    let t = x.last_extent();
    if t == 0 {
        return Err(Error::InsufficientData("empty series".into()));
    }
    let last = x.slice_last(t - 1)?;
    Ok(vec![last; horizon])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    SinusoidMixture,
    Ar2Panel,
    RandomWalk,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::SinusoidMixture => "sinusoid-mixture",
            SynthKind::Ar2Panel => "ar2-panel",
            SynthKind::RandomWalk => "random-walk",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid-mixture" => Ok(SynthKind::SinusoidMixture),
            "ar2-panel" => Ok(SynthKind::Ar2Panel),
            "random-walk" => Ok(SynthKind::RandomWalk),
            other => Err(Error::Parse(format!(
                "unknown dataset kind {other:?} (expected sinusoid-mixture, ar2-panel or random-walk)"
            ))),
        }
    }
}

/// AR coefficients of the `ar2-panel` generator.
pub const AR2_PANEL_ALPHA: [f64; 2] = [0.5, -0.3];
/// Periods of the three shared components of `sinusoid-mixture`.
pub const SINUSOID_PERIODS: [f64; 3] = [16.0, 20.0, 25.0];
const AR2_BURN_IN: usize = 100;

/// Seeded `n_series x length` panel.
///
/// * `sinusoid-mixture`: each series is a random nonnegative combination of
///   three shared sinusoids (random phases), plus Gaussian noise with standard
///   deviation `noise` times the series' peak absolute clean value.
/// * `ar2-panel`: independent AR(2) series with coefficients
///   [`AR2_PANEL_ALPHA`] and innovation standard deviation `noise`.
/// * `random-walk`: cumulative sums of Gaussian steps with standard deviation `noise`.
pub fn synth_dataset(
    kind: SynthKind,
    n_series: usize,
    length: usize,
    noise: f64,
    seed: u64,
) -> Result<DenseTensor> {
    if n_series == 0 || length == 0 {
        return Err(Error::Config("dataset dimensions must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!(
            "noise = {noise} must be nonnegative"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n_series * length];
    let at = |i: usize, t: usize| i + n_series * t;
    match kind {
        SynthKind::SinusoidMixture => {
            let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..TAU)).collect();
            for i in 0..n_series {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let clean: Vec<f64> = (0..length)
                    .map(|t| {
                        (0..3)
                            .map(|k| {
                                w[k] * (TAU * t as f64 / SINUSOID_PERIODS[k] + phases[k]).sin()
                            })
                            .sum()
                    })
                    .collect();
                let amp = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (t, c) in clean.iter().enumerate() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    data[at(i, t)] = c + noise * amp * e;
                }
            }
        }
        SynthKind::Ar2Panel => {
            let innov = Normal::new(0.0, noise.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::Config(e.to_string()))?;
            let [a1, a2] = AR2_PANEL_ALPHA;
            for i in 0..n_series {
                let (mut x1, mut x2) = (0.0, 0.0);
                for t in 0..AR2_BURN_IN + length {
                    let x = a1 * x1 + a2 * x2 + innov.sample(&mut rng);
                    x2 = x1;
                    x1 = x;
                    if t >= AR2_BURN_IN {
                        data[at(i, t - AR2_BURN_IN)] = x;
                    }
                }
            }
        }
        SynthKind::RandomWalk => {
            let step = Normal::new(0.0, noise.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::Config(e.to_string()))?;
            for i in 0..n_series {
                let mut acc = 0.0;
                for t in 0..length {
                    acc += step.sample(&mut rng);
                    data[at(i, t)] = acc;
                }
            }
        }
    }
    DenseTensor::new(vec![n_series, length], data)
}

/// Something that can be fitted on a history, extended with observations
/// and asked for recursive forecasts.
pub trait Forecaster {
    fn fit(&mut self, history: &DenseTensor) -> Result<()>;
    /// Appends one observed slice without refitting.
    fn observe(&mut self, slice: &DenseTensor) -> Result<()>;
    fn forecast(&self, horizon: usize) -> Result<Vec<DenseTensor>>;
    /// Whether the most recent fit converged.
    fn converged(&self) -> bool {
        true
    }
}

/// The tensor ARIMA model behind the [`Forecaster`] interface.
#[derive(Debug, Clone)]
pub struct BhtForecaster {
    config: ModelConfig,
    model: Option<FittedModel>,
}

impl BhtForecaster {
    pub fn new(config: ModelConfig) -> Self {
        Self {
            config,
            model: None,
        }
    }

    pub fn model(&self) -> Option<&FittedModel> {
        self.model.as_ref()
    }

    fn fitted(&self) -> Result<&FittedModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("forecaster used before fit".into()))
    }
}

impl Forecaster for BhtForecaster {
    fn fit(&mut self, history: &DenseTensor) -> Result<()> {
        self.model = Some(model::fit(history, &self.config)?);
        Ok(())
    }

    fn observe(&mut self, slice: &DenseTensor) -> Result<()> {
        let next = self.fitted()?.observe(slice)?;
        self.model = Some(next);
        Ok(())
    }

    fn forecast(&self, horizon: usize) -> Result<Vec<DenseTensor>> {
        Ok(model::forecast(self.fitted()?, horizon)?.forecasts)
    }

    fn converged(&self) -> bool {
        self.model.as_ref().is_some_and(|m| m.converged())
    }
}

/// Repeats the last seen slice.
#[derive(Debug, Clone, Default)]
pub struct NaiveForecaster {
    last: Option<DenseTensor>,
}

impl Forecaster for NaiveForecaster {
    fn fit(&mut self, history: &DenseTensor) -> Result<()> {
        self.last = naive_last_value(history, 1)?.pop();
        Ok(())
    }

    fn observe(&mut self, slice: &DenseTensor) -> Result<()> {
        self.last = Some(slice.clone());
        Ok(())
    }

    fn forecast(&self, horizon: usize) -> Result<Vec<DenseTensor>> {
        let last = self
            .last
            .as_ref()
            .ok_or_else(|| Error::Config("forecaster used before fit".into()))?;
        Ok(vec![last.clone(); horizon])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestOptions {
    pub train_fraction: f64,
    pub horizon: usize,
    /// One-step protocol only: refit at every step instead of appending the
    /// observation to the existing fit.
    pub refit: bool,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            horizon: 1,
            refit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Pooled NRMSE over every forecast slice.
    pub nrmse: f64,
    /// NRMSE of each horizon step (a single entry for one-step rolling).
    pub per_step_nrmse: Vec<f64>,
    /// NRMSE pooled over steps `1..=h`, for each `h`.
    pub cumulative_nrmse: Vec<f64>,
    /// Pooled NRMSE of the naive last-value baseline under the same protocol.
    pub baseline_nrmse: f64,
    /// Wall-clock time; not part of the serialized report.
    pub runtime_seconds: f64,
    pub config: ModelConfig,
    pub converged_fraction: f64,
    pub train_fraction: f64,
    pub horizon: usize,
    pub train_len: usize,
    pub test_len: usize,
}

fn fmt_real(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_reals(v: &[f64]) -> String {
    v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(",")
}

impl EvalReport {
    /// `key=value` lines. Reals carry nine significant digits; runtime is
    /// omitted so identical runs serialize identically.
    pub fn to_kv_string(&self) -> String {
        let mut lines = vec![
            format!("nrmse={}", fmt_real(self.nrmse)),
            format!("baseline_nrmse={}", fmt_real(self.baseline_nrmse)),
            format!("per_step_nrmse={}", fmt_reals(&self.per_step_nrmse)),
            format!("cumulative_nrmse={}", fmt_reals(&self.cumulative_nrmse)),
            format!("converged_fraction={}", fmt_real(self.converged_fraction)),
            format!("train_fraction={}", self.train_fraction),
            format!("horizon={}", self.horizon),
            format!("train_len={}", self.train_len),
            format!("test_len={}", self.test_len),
        ];
        lines.extend(
            self.config
                .to_pairs()
                .into_iter()
                .map(|(k, v)| format!("config.{k}={v}")),
        );
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Parses [`EvalReport::to_kv_string`] output. `runtime_seconds` is zero.
    pub fn from_kv_str(s: &str) -> Result<Self> {
        fn real(key: &str, v: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Parse(format!("bad value {v:?} for {key}")))
        }
        fn reals(key: &str, v: &str) -> Result<Vec<f64>> {
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| real(key, x)).collect()
        }
        fn count(key: &str, v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Parse(format!("bad value {v:?} for {key}")))
        }
        let mut report = EvalReport {
            nrmse: 0.0,
            per_step_nrmse: Vec::new(),
            cumulative_nrmse: Vec::new(),
            baseline_nrmse: 0.0,
            runtime_seconds: 0.0,
            config: ModelConfig::default(),
            converged_fraction: 0.0,
            train_fraction: 0.0,
            horizon: 0,
            train_len: 0,
            test_len: 0,
        };
        let mut config = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", n + 1)))?;
            match k {
                "nrmse" => report.nrmse = real(k, v)?,
                "baseline_nrmse" => report.baseline_nrmse = real(k, v)?,
                "per_step_nrmse" => report.per_step_nrmse = reals(k, v)?,
                "cumulative_nrmse" => report.cumulative_nrmse = reals(k, v)?,
                "converged_fraction" => report.converged_fraction = real(k, v)?,
                "train_fraction" => report.train_fraction = real(k, v)?,
                "horizon" => report.horizon = count(k, v)?,
                "train_len" => report.train_len = count(k, v)?,
                "test_len" => report.test_len = count(k, v)?,
                _ => {
                    if let Some(key) = k.strip_prefix("config.") {
                        config.push((key, v));
                    }
                }
            }
        }
        report.config = ModelConfig::from_pairs(config)?;
        Ok(report)
    }
}

struct ProtocolResult {
    forecasts: Vec<DenseTensor>,
    actuals: Vec<DenseTensor>,
    fits: usize,
    converged: usize,
}

fn split(x: &DenseTensor, opts: &BacktestOptions) -> Result<(usize, usize)> {
    if !(opts.train_fraction > 0.0 && opts.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} must lie in (0, 1)",
            opts.train_fraction
        )));
    }
    if opts.horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let t = x.last_extent();
    let train = (opts.train_fraction * t as f64).floor() as usize;
    if train == 0 || train >= t {
        return Err(Error::InsufficientData(format!(
            "train fraction {} of {t} time points leaves no train or test data",
            opts.train_fraction
        )));
    }
    if opts.horizon > 1 && t - train < opts.horizon {
        return Err(Error::InsufficientData(format!(
            "{} test points for horizon {}",
            t - train,
            opts.horizon
        )));
    }
    Ok((train, t))
}

fn run_protocol(
    f: &mut impl Forecaster,
    x: &DenseTensor,
    train: usize,
    t: usize,
    opts: &BacktestOptions,
) -> Result<ProtocolResult> {
    let mut out = ProtocolResult {
        forecasts: Vec::new(),
        actuals: Vec::new(),
        fits: 0,
        converged: 0,
    };
    if opts.horizon == 1 {
        for step in train..t {
            if step == train || opts.refit {
                fit_counted(f, x, step, &mut out)?;
            } else {
                f.observe(&x.slice_last(step - 1)?)?;
            }
            out.forecasts.extend(f.forecast(1)?);
            out.actuals.push(x.slice_last(step)?);
        }
    } else {
        fit_counted(f, x, train, &mut out)?;
        out.forecasts = f.forecast(opts.horizon)?;
        for step in train..train + opts.horizon {
            out.actuals.push(x.slice_last(step)?);
        }
    }
    Ok(out)
}

fn fit_counted(
    f: &mut impl Forecaster,
    x: &DenseTensor,
    n: usize,
    out: &mut ProtocolResult,
) -> Result<()> {
    f.fit(&x.truncate_last(n)?)?;
    out.fits += 1;
    out.converged += usize::from(f.converged());
    Ok(())
}

fn shaped(forecast: &DenseTensor, actual: &DenseTensor) -> Result<DenseTensor> {
    if forecast.shape() == actual.shape() {
        Ok(forecast.clone())
    } else {
        forecast.reshape(actual.shape())
    }
}

/// Backtests an arbitrary forecaster against the naive baseline.
///
/// The first `floor(train_fraction * T)` slices are used for fitting. With
/// `horizon == 1` every remaining slice is forecast one step ahead, appending
/// the true observations in between (refitting if `opts.refit`). With a longer
/// horizon the model is fitted once and forecasts `horizon` steps
/// recursively.
pub fn backtest_with(
    f: &mut impl Forecaster,
    x: &DenseTensor,
    config: &ModelConfig,
    opts: &BacktestOptions,
) -> Result<EvalReport> {
    let start = Instant::now();
    let (train, t) = split(x, opts)?;
    let run = run_protocol(f, x, train, t, opts)?;
    let base = run_protocol(&mut NaiveForecaster::default(), x, train, t, opts)?;

    let forecasts = run
        .forecasts
        .iter()
        .zip(&run.actuals)
        .map(|(f, a)| shaped(f, a))
        .collect::<Result<Vec<_>>>()?;
    let nrmse = pooled_nrmse(&forecasts, &run.actuals)?;
    let baseline_nrmse = pooled_nrmse(&base.forecasts, &base.actuals)?;
    let (per_step_nrmse, cumulative_nrmse) = if opts.horizon == 1 {
        (vec![nrmse], vec![nrmse])
    } else {
        let per = forecasts
            .iter()
            .zip(&run.actuals)
            .map(|(f, a)| self::nrmse(f, a))
            .collect::<Result<Vec<_>>>()?;
        let cum = (1..=forecasts.len())
            .map(|h| pooled_nrmse(&forecasts[..h], &run.actuals[..h]))
            .collect::<Result<Vec<_>>>()?;
        (per, cum)
    };
    Ok(EvalReport {
        nrmse,
        per_step_nrmse,
        cumulative_nrmse,
        baseline_nrmse,
        runtime_seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
        converged_fraction: run.converged as f64 / run.fits as f64,
        train_fraction: opts.train_fraction,
        horizon: opts.horizon,
        train_len: train,
        test_len: run.actuals.len(),
    })
}

/// Backtests the tensor ARIMA model with configuration `cfg`.
pub fn rolling_backtest(
    x: &DenseTensor,
    cfg: &ModelConfig,
    opts: &BacktestOptions,
) -> Result<EvalReport> {
    backtest_with(&mut BhtForecaster::new(cfg.clone()), x, cfg, opts)
}
