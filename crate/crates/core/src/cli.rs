//! Command-line front end: dataset I/O, argument handling and the
//! `fit-forecast`, `backtest` and `synth` commands.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{self, BacktestOptions, EvalReport, SynthKind};
use crate::model::{self, FittedModel, ModelConfig, OrthoMode};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    /// Comma-separated, one series per row, time along columns.
    Csv,
    /// First line holds the extents, then all values in canonical order.
    Flat,
}

impl DataFormat {
    /// `.csv` files are CSV, everything else is the flat tensor format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Flat,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub format: DataFormat,
    pub path: PathBuf,
    pub shape: Vec<usize>,
}

fn parse_number(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses CSV text into an `I x T` tensor. A first row without any numeric
/// cell is treated as a header.
pub fn parse_csv_str(text: &str) -> Result<DenseTensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("CSV: {e}")))?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if rows.is_empty() && width.is_none() && record.iter().all(|c| parse_number(c).is_none()) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Parse(format!(
                "line {line}: expected {expected} columns, found {}",
                record.len()
            )));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                parse_number(cell).ok_or_else(|| {
                    Error::Parse(format!(
                        "line {line}, column {}: {cell:?} is not a finite number",
                        col + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("CSV input has no data rows".into()));
    }
    let (n, t) = (rows.len(), rows[0].len());
    DenseTensor::from_fn(&[n, t], |idx| rows[idx[0]][idx[1]])
}

/// Parses the flat tensor format: a line of extents followed by exactly
/// `prod(extents)` whitespace-separated values, first index fastest.
pub fn parse_flat_tensor_str(text: &str) -> Result<DenseTensor> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("flat tensor input is empty".into()))?;
    let shape = header
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Parse(format!("bad extent {tok:?} in header")))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = lines
        .flat_map(str::split_whitespace)
        .enumerate()
        .map(|(i, tok)| {
            parse_number(tok).ok_or_else(|| {
                Error::Parse(format!("value {}: {tok:?} is not a finite number", i + 1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let expected: usize = shape.iter().product();
    if values.len() != expected {
        return Err(Error::Parse(format!(
            "header {shape:?} needs {expected} values, found {}",
            values.len()
        )));
    }
    DenseTensor::new(shape, values)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(path: &Path) -> Result<DenseTensor> {
    with_path(path, parse_csv_str(&read_text(path)?))
}

pub fn parse_flat_tensor(path: &Path) -> Result<DenseTensor> {
    with_path(path, parse_flat_tensor_str(&read_text(path)?))
}

pub fn load_dataset(path: &Path, format: Option<DataFormat>) -> Result<(DatasetFile, DenseTensor)> {
    let format = format.unwrap_or_else(|| DataFormat::from_path(path));
    let x = match format {
        DataFormat::Csv => parse_csv(path)?,
        DataFormat::Flat => parse_flat_tensor(path)?,
    };
    let file = DatasetFile {
        format,
        path: path.to_path_buf(),
        shape: x.shape().to_vec(),
    };
    Ok((file, x))
}

/// CSV rows follow the first mode; the remaining modes are flattened into
/// columns. Values use the shortest representation that parses back exactly.
pub fn format_csv(x: &DenseTensor) -> String {
    let rows = x.shape()[0];
    let cols = x.len() / rows.max(1);
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<String> = (0..cols)
            .map(|c| x.data()[r + rows * c].to_string())
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn format_flat_tensor(x: &DenseTensor) -> String {
    let header: Vec<String> = x.shape().iter().map(|n| n.to_string()).collect();
    let mut out = header.join(" ");
    out.push('\n');
    for chunk in x.data().chunks(x.shape()[0].max(1)) {
        let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Writes to a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Nine significant digits.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn join_sig9(v: &[f64]) -> String {
    v.iter().map(|x| sig9(*x)).collect::<Vec<_>>().join(",")
}

/// `key=value` summary of a fitted model.
pub fn model_summary(model: &FittedModel) -> String {
    let d = model.diagnostics();
    let mut lines: Vec<String> = model
        .config()
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("config.{k}={v}"))
        .collect();
    let ranks: Vec<String> = model.ranks().iter().map(|r| r.to_string()).collect();
    lines.extend([
        format!("ranks={}", ranks.join(",")),
        format!("alpha={}", join_sig9(&model.coefficients().alpha)),
        format!("beta={}", join_sig9(&model.coefficients().beta)),
        format!("converged={}", model.converged()),
        format!("iterations={}", model.iterations()),
        format!("trace={}", join_sig9(model.trace())),
        format!("orthogonality={}", join_sig9(model.orthogonality_trace())),
        format!("ar_fallback={}", d.ar_fallback),
        format!("ma_fallback={}", d.ma_fallback),
        format!("ridge_used={}", d.ridge_used),
        format!("skipped_error_updates={}", d.skipped_error_updates),
        format!("ar_stationary={}", d.ar_stationary),
    ]);
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

#[derive(Debug, Parser)]
#[command(
    name = "bht-arima",
    version,
    about = "Block Hankel tensor ARIMA forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on a whole dataset and forecast the next steps.
    FitForecast {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        /// Output directory for forecast_h<k>.csv files and model_summary.txt.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Backtest against the naive last-value baseline.
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        /// Append observations to the existing fit instead of refitting each step.
        #[arg(long)]
        no_refit: bool,
        /// Worker threads for a grid of configurations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Report file.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate a synthetic panel.
    Synth {
        #[arg(long, default_value = "sinusoid-mixture")]
        kind: String,
        #[arg(long, default_value_t = 20)]
        series: usize,
        #[arg(long, default_value_t = 40)]
        length: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to CSV for `.csv` paths and the flat format otherwise.
        #[arg(long, value_enum)]
        format: Option<DataFormat>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input dataset.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Defaults to CSV for `.csv` paths and the flat format otherwise.
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
}

/// Model flags. The orders and window accept comma lists for backtest grids.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub p: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub q: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub tau: Vec<usize>,
    /// Comma-separated Tucker ranks, or "auto".
    #[arg(long, default_value = "auto")]
    pub ranks: String,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value = "full")]
    pub ortho: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    /// Every combination of the listed orders and windows, in a fixed order.
    pub fn configs(&self) -> Result<Vec<ModelConfig>> {
        let ranks = model::parse_ranks(&self.ranks)?;
        let ortho = OrthoMode::from_str(&self.ortho)?;
        let mut out = Vec::new();
        for &tau in &self.tau {
            for &p in &self.p {
                for &d in &self.d {
                    for &q in &self.q {
                        out.push(ModelConfig {
                            p,
                            d,
                            q,
                            tau,
                            ranks: ranks.clone(),
                            max_iter: self.iters,
                            tol: self.tol,
                            ortho,
                            seed: self.seed,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn single(&self) -> Result<ModelConfig> {
        let mut all = self.configs()?;
        if all.len() != 1 {
            return Err(Error::Config(
                "fit-forecast takes a single value for --p, --d, --q and --tau".into(),
            ));
        }
        Ok(all.remove(0))
    }
}

/// A validated command, ready to run.
#[derive(Debug, Clone)]
pub enum RunSpec {
    FitForecast {
        dataset: DatasetFile,
        data: DenseTensor,
        model: ModelConfig,
        horizon: usize,
        out_dir: PathBuf,
    },
    Backtest {
        dataset: DatasetFile,
        data: DenseTensor,
        models: Vec<ModelConfig>,
        options: BacktestOptions,
        jobs: usize,
        out: PathBuf,
    },
    Synth {
        kind: SynthKind,
        series: usize,
        length: usize,
        noise: f64,
        seed: u64,
        format: DataFormat,
        out: PathBuf,
    },
}

impl RunSpec {
    /// Loads the data and checks every configuration before any fitting.
    pub fn from_command(cmd: Command) -> Result<Self> {
        match cmd {
            Command::FitForecast {
                data,
                model,
                horizon,
                out,
            } => {
                let cfg = model.single()?;
                if horizon == 0 {
                    return Err(Error::Config("--horizon must be at least 1".into()));
                }
                let (dataset, x) = load_dataset(&data.input, data.format)?;
                cfg.validate(x.shape())?;
                Ok(RunSpec::FitForecast {
                    dataset,
                    data: x,
                    model: cfg,
                    horizon,
                    out_dir: out,
                })
            }
            Command::Backtest {
                data,
                model,
                horizon,
                train_fraction,
                no_refit,
                jobs,
                out,
            } => {
                let models = model.configs()?;
                if !(train_fraction > 0.0 && train_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "--train-fraction {train_fraction} must lie in (0, 1)"
                    )));
                }
                if horizon == 0 {
                    return Err(Error::Config("--horizon must be at least 1".into()));
                }
                let (dataset, x) = load_dataset(&data.input, data.format)?;
                let mut train_shape = x.shape().to_vec();
                *train_shape.last_mut().unwrap() =
                    (train_fraction * x.last_extent() as f64).floor() as usize;
                for cfg in &models {
                    cfg.validate(&train_shape)?;
                }
                Ok(RunSpec::Backtest {
                    dataset,
                    data: x,
                    models,
                    options: BacktestOptions {
                        train_fraction,
                        horizon,
                        refit: !no_refit,
                    },
                    jobs: jobs.max(1),
                    out,
                })
            }
            Command::Synth {
                kind,
                series,
                length,
                noise,
                seed,
                format,
                out,
            } => {
                let kind = SynthKind::from_str(&kind)?;
                let format = format.unwrap_or_else(|| DataFormat::from_path(&out));
                Ok(RunSpec::Synth {
                    kind,
                    series,
                    length,
                    noise,
                    seed,
                    format,
                    out,
                })
            }
        }
    }
}

/// Runs the configurations on up to `jobs` threads; results keep input order.
pub fn backtest_grid(
    x: &DenseTensor,
    models: &[ModelConfig],
    options: &BacktestOptions,
    jobs: usize,
) -> Vec<Result<EvalReport>> {
    let jobs = jobs.clamp(1, models.len().max(1));
    let chunk = models.len().div_ceil(jobs).max(1);
    thread::scope(|s| {
        let handles: Vec<_> = models
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|cfg| eval::rolling_backtest(x, cfg, options))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("backtest worker panicked"))
            .collect()
    })
}

/// Executes a validated command and writes its outputs.
pub fn run(spec: &RunSpec) -> Result<()> {
    match spec {
        RunSpec::FitForecast {
            data,
            model: cfg,
            horizon,
            out_dir,
            ..
        } => {
            let fitted = model::fit(data, cfg)?;
            let result = model::forecast(&fitted, *horizon)?;
            fs::create_dir_all(out_dir)?;
            for (h, slice) in result.forecasts.iter().enumerate() {
                let path = out_dir.join(format!("forecast_h{}.csv", h + 1));
                write_atomic(&path, &format_csv(&column(slice)?))?;
            }
            write_atomic(&out_dir.join("model_summary.txt"), &model_summary(&fitted))?;
            println!(
                "wrote {} forecast file(s) to {} (converged={}, iterations={})",
                result.forecasts.len(),
                out_dir.display(),
                fitted.converged(),
                fitted.iterations()
            );
        }
        RunSpec::Backtest {
            data,
            models,
            options,
            jobs,
            out,
            ..
        } => {
            let reports = backtest_grid(data, models, options, *jobs)
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let text = if reports.len() == 1 {
                reports[0].to_kv_string()
            } else {
                reports
                    .iter()
                    .enumerate()
                    .map(|(i, r)| format!("# run {}\n{}", i + 1, r.to_kv_string()))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            write_atomic(out, &text)?;
            for r in &reports {
                println!(
                    "p={} d={} q={} tau={} nrmse={} baseline_nrmse={}",
                    r.config.p,
                    r.config.d,
                    r.config.q,
                    r.config.tau,
                    sig9(r.nrmse),
                    sig9(r.baseline_nrmse)
                );
                eprintln!("runtime_seconds={:.3}", r.runtime_seconds);
            }
        }
        RunSpec::Synth {
            kind,
            series,
            length,
            noise,
            seed,
            format,
            out,
        } => {
            let x = eval::synth_dataset(*kind, *series, *length, *noise, *seed)?;
            let text = match format {
                DataFormat::Csv => format_csv(&x),
                DataFormat::Flat => format_flat_tensor(&x),
            };
            write_atomic(out, &text)?;
        }
    }
    Ok(())
}

/// A forecast slice as a matrix with at least one column, so a scalar series
/// still produces one CSV row.
fn column(slice: &DenseTensor) -> Result<DenseTensor> {
    if slice.order() >= 2 {
        Ok(slice.clone())
    } else {
        slice.reshape(&[slice.len(), 1])
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses arguments, runs the command and returns the process exit code.
/// Failures print a single line on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match RunSpec::from_command(cli.command).and_then(|spec| run(&spec)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
