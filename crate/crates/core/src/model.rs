//! The block Hankel tensor ARIMA estimator.
//!
//! Fitting embeds the input along time, differences the embedded slices, and
//! then alternates closed-form updates of the core tensors, the Tucker factors
//! and the MA error tensors. Forecasting runs the tensor ARIMA recursion in
//! core space and maps each predicted core back through the factors, the
//! differencing and the inverse embedding.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coeffs::{self, ArimaCoefficients};
use crate::diff::{self, DifferencedSeries};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdt;
use crate::tensor::{frobenius_norm, multi_mode_product, unfold, DenseTensor};

/// Scale of the random initial error tensors.
const ERROR_INIT_SCALE: f64 = 1e-2;
/// MA coefficients smaller than this leave their error tensor untouched.
const BETA_GUARD: f64 = 1e-8;
const RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrthoMode {
    /// Every factor has orthonormal columns.
    #[default]
    Full,
    /// The last (window) factor is solved by unconstrained least squares.
    Relaxed,
}

impl fmt::Display for OrthoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrthoMode::Full => "full",
            OrthoMode::Relaxed => "relaxed",
        })
    }
}

impl FromStr for OrthoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(OrthoMode::Full),
            "relaxed" => Ok(OrthoMode::Relaxed),
            other => Err(Error::Parse(format!(
                "unknown orthogonality mode {other:?} (expected full or relaxed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// Delay-embedding window.
    pub tau: usize,
    /// Tucker ranks, one per embedded mode (series modes, then the window).
    /// `None` picks `ceil(0.8 J_m)` for series modes and `tau` for the window.
    pub ranks: Option<Vec<usize>>,
    pub max_iter: usize,
    pub tol: f64,
    pub ortho: OrthoMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            p: 2,
            d: 1,
            q: 1,
            tau: 3,
            ranks: None,
            max_iter: 10,
            tol: 1e-5,
            ortho: OrthoMode::Full,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// `s = p + d + q`, the shortest usable history.
    pub fn min_history(&self) -> usize {
        self.p + self.d + self.q
    }

    /// Shape `J_1 x ... x J_M` of an embedded slice for the given input shape.
    pub fn embedded_shape(&self, input_shape: &[usize]) -> Vec<usize> {
        let mut j = input_shape[..input_shape.len().saturating_sub(1)].to_vec();
        j.push(self.tau);
        j
    }

    pub fn default_ranks(&self, embedded: &[usize]) -> Vec<usize> {
        let m = embedded.len();
        embedded
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                if k + 1 == m {
                    self.tau.min(j)
                } else {
                    ((0.8 * j as f64).ceil() as usize).clamp(1, j)
                }
            })
            .collect()
    }

    /// Checks the configuration against an input of shape `I_1 x ... x I_N x T`
    /// and returns the resolved Tucker ranks.
    pub fn validate(&self, input_shape: &[usize]) -> Result<Vec<usize>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "bad input shape {input_shape:?}"
            )));
        }
        let t = *input_shape.last().unwrap();
        if self.tau == 0 || self.tau > t {
            return Err(Error::Config(format!(
                "tau = {} must lie in 1..={t} (series length)",
                self.tau
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!(
                "tol = {} must be positive",
                self.tol
            )));
        }
        let t_hat = t - self.tau + 1;
        let s = self.min_history();
        if t_hat <= self.d || t_hat - self.d <= s {
            return Err(Error::Config(format!(
                "embedded length {t_hat} minus d = {} must exceed p + d + q = {s}",
                self.d
            )));
        }
        let embedded = self.embedded_shape(input_shape);
        let ranks = match &self.ranks {
            Some(r) => r.clone(),
            None => self.default_ranks(&embedded),
        };
        if ranks.len() != embedded.len() {
            return Err(Error::Config(format!(
                "{} ranks given for {} embedded modes {embedded:?}",
                ranks.len(),
                embedded.len()
            )));
        }
        for (m, (&r, &j)) in ranks.iter().zip(&embedded).enumerate() {
            if r == 0 || r > j {
                return Err(Error::Config(format!(
                    "rank {r} for embedded mode {m} must lie in 1..={j}"
                )));
            }
        }
        if self.ortho == OrthoMode::Relaxed && embedded.len() < 2 {
            return Err(Error::Config(
                "relaxed orthogonality needs at least two embedded modes".into(),
            ));
        }
        Ok(ranks)
    }

    /// `key=value` pairs in a fixed order; [`ModelConfig::from_pairs`] inverts it.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let ranks = match &self.ranks {
            Some(r) => r
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            None => "auto".to_string(),
        };
        vec![
            ("p".into(), self.p.to_string()),
            ("d".into(), self.d.to_string()),
            ("q".into(), self.q.to_string()),
            ("tau".into(), self.tau.to_string()),
            ("ranks".into(), ranks),
            ("max_iter".into(), self.max_iter.to_string()),
            ("tol".into(), format!("{:e}", self.tol)),
            ("ortho".into(), self.ortho.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad value {v:?} for {key}")))
        }
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            match k.trim() {
                "p" => cfg.p = num(k, v)?,
                "d" => cfg.d = num(k, v)?,
                "q" => cfg.q = num(k, v)?,
                "tau" => cfg.tau = num(k, v)?,
                "ranks" => cfg.ranks = parse_ranks(v)?,
                "max_iter" => cfg.max_iter = num(k, v)?,
                "tol" => cfg.tol = num(k, v)?,
                "ortho" => cfg.ortho = v.parse()?,
                "seed" => cfg.seed = num(k, v)?,
                _ => {}
            }
        }
        Ok(cfg)
    }
}

/// Parses `"auto"` or a comma list such as `"20,3"`.
pub fn parse_ranks(v: &str) -> Result<Option<Vec<usize>>> {
    let v = v.trim();
    if v.eq_ignore_ascii_case("auto") || v.is_empty() {
        return Ok(None);
    }
    v.split(',')
        .map(|r| {
            r.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad rank {r:?} in {v:?}")))
        })
        .collect::<Result<Vec<usize>>>()
        .map(Some)
}

/// Shapes needed to undo the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMeta {
    pub tau: usize,
    /// `J_1 x ... x J_M`
    pub embedded_shape: Vec<usize>,
    /// `I_1 x ... x I_N`, the shape of one forecast slice.
    pub slice_shape: Vec<usize>,
    /// Number of observed time points `T`.
    pub series_len: usize,
}

impl HankelMeta {
    /// `T - tau + 1`
    pub fn embedded_len(&self) -> usize {
        self.series_len - self.tau + 1
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Yule-Walker fell back to the random-walk prior in some iteration.
    pub ar_fallback: bool,
    /// MA estimation fell back to constant coefficients in some iteration.
    pub ma_fallback: bool,
    /// The relaxed last-mode update needed ridge regularization.
    pub ridge_used: bool,
    /// Error-tensor updates skipped by the MA-coefficient or denominator guard.
    pub skipped_error_updates: usize,
    /// Stationarity of the final AR polynomial (reported, not enforced).
    pub ar_stationary: bool,
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    config: ModelConfig,
    ranks: Vec<usize>,
    factors: Vec<DMatrix<f64>>,
    synthesis: Vec<DMatrix<f64>>,
    cores: Vec<DenseTensor>,
    errors: Vec<DenseTensor>,
    coeffs: ArimaCoefficients,
    diff_state: DifferencedSeries,
    embedded: Vec<DenseTensor>,
    meta: HankelMeta,
    trace: Vec<f64>,
    orthogonality: Vec<f64>,
    converged: bool,
    diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Factor matrices `U_m` of shape `J_m x R_m`.
    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// Core tensors of the differenced embedded slices, length `T_hat - d`.
    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    /// MA error tensors, one per lag `1..=q`.
    pub fn errors(&self) -> &[DenseTensor] {
        &self.errors
    }

    pub fn coefficients(&self) -> &ArimaCoefficients {
        &self.coeffs
    }

    pub fn diff_state(&self) -> &DifferencedSeries {
        &self.diff_state
    }

    /// Embedded (Hankel) slices before differencing.
    pub fn embedded(&self) -> &[DenseTensor] {
        &self.embedded
    }

    pub fn meta(&self) -> &HankelMeta {
        &self.meta
    }

    /// Relative factor change per outer iteration.
    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    /// Largest `||U_m^T U_m - I||_F` over the constrained factors, per iteration.
    pub fn orthogonality_trace(&self) -> &[f64] {
        &self.orthogonality
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn project(&self, x: &DenseTensor) -> Result<DenseTensor> {
        project(x, &self.factors)
    }

    /// Maps a core back to the embedded space. This is the Tucker composition
    /// with the factors, except that a relaxed (non-orthonormal) last factor
    /// enters as `pinv(U_M^T)` so that composition inverts [`Self::project`].
    pub fn compose(&self, g: &DenseTensor) -> Result<DenseTensor> {
        compose(g, &self.synthesis)
    }

    /// Factors used by [`Self::compose`].
    pub fn synthesis_factors(&self) -> &[DMatrix<f64>] {
        &self.synthesis
    }

    /// Relative error of projecting each differenced slice onto the factors
    /// and composing it back. Zero-norm slices report their absolute error.
    pub fn reconstruction_errors(&self) -> Result<Vec<f64>> {
        self.diff_state
            .slices()
            .iter()
            .map(|x| {
                let back = self.compose(&self.project(x)?)?;
                let err = frobenius_norm(&back.sub(x)?);
                let norm = frobenius_norm(x);
                Ok(if norm > 0.0 { err / norm } else { err })
            })
            .collect()
    }

    /// Extends the model state with an observed slice (`I_1 x ... x I_N`)
    /// without refitting: the new embedded slice, its difference and its
    /// projected core are appended.
    pub fn observe(&self, slice: &DenseTensor) -> Result<FittedModel> {
        let expected = &self.meta.slice_shape;
        if slice.shape() != expected.as_slice() && !(expected.is_empty() && slice.len() == 1) {
            return Err(Error::ShapeMismatch {
                expected: expected.clone(),
                actual: slice.shape().to_vec(),
            });
        }
        let last = self.embedded.last().expect("fitted model has slices");
        let inner = slice.len();
        let tau = self.meta.tau;
        let mut data = Vec::with_capacity(inner * tau);
        data.extend_from_slice(&last.data()[inner..]);
        data.extend_from_slice(slice.data());
        let next = DenseTensor::new(last.shape().to_vec(), data)?;

        let mut model = self.clone();
        let dx = model.diff_state.push_observation(&next)?;
        model.cores.push(project(&dx, &model.factors)?);
        model.embedded.push(next);
        model.meta.series_len += 1;
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct ForecastResult {
    /// Original-space slices `I_1 x ... x I_N`, one per horizon step.
    pub forecasts: Vec<DenseTensor>,
    /// Predicted embedded slices (after inverse differencing).
    pub embedded_forecasts: Vec<DenseTensor>,
    /// Predicted differenced cores.
    pub core_forecasts: Vec<DenseTensor>,
    pub converged: bool,
    pub iterations_used: usize,
}

/// `x ×_1 U_1^T ... ×_M U_M^T`
pub fn project(x: &DenseTensor, factors: &[DMatrix<f64>]) -> Result<DenseTensor> {
    multi_mode_product(x, factors, true, None)
}

/// `g ×_1 U_1 ... ×_M U_M`
pub fn compose(g: &DenseTensor, factors: &[DMatrix<f64>]) -> Result<DenseTensor> {
    multi_mode_product(g, factors, false, None)
}

/// Closed-form core update: the average of the projection and the ARMA
/// prediction, `1/2 (proj + sum_i alpha_i G_{t-i} - sum_i beta_i E_i)`.
///
/// `prev_cores[i]` is `G_{t-1-i}`. The unfolded per-mode form of this update
/// only permutes entries, so it is evaluated directly on the tensors.
pub fn update_core(
    projection: &DenseTensor,
    prev_cores: &[&DenseTensor],
    errors: &[DenseTensor],
    alpha: &[f64],
    beta: &[f64],
) -> Result<DenseTensor> {
    if prev_cores.len() < alpha.len() || errors.len() < beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "core update needs {} previous cores and {} error tensors, got {} and {}",
            alpha.len(),
            beta.len(),
            prev_cores.len(),
            errors.len()
        )));
    }
    let mut acc = projection.clone();
    for (a, g) in alpha.iter().zip(prev_cores) {
        acc = acc.axpy(*a, g)?;
    }
    for (b, e) in beta.iter().zip(errors) {
        acc = acc.axpy(-b, e)?;
    }
    Ok(acc.scale(0.5))
}

/// `unfold_m(x ×_{j != m} U_j^T)`, i.e. `X_(m) (U^(-m))^T` without forming the
/// Kronecker chain.
fn partial_projection(
    x: &DenseTensor,
    factors: &[DMatrix<f64>],
    mode: usize,
) -> Result<DMatrix<f64>> {
    unfold(&multi_mode_product(x, factors, true, Some(mode))?, mode)
}

/// Orthonormal factor update for `mode`:
/// `procrustes(sum_t X_t(m) (U^(-m))^T G_t(m)^T)`.
pub fn update_factor_full(
    xs: &[DenseTensor],
    cores: &[DenseTensor],
    factors: &[DMatrix<f64>],
    mode: usize,
) -> Result<DMatrix<f64>> {
    if xs.len() != cores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} slices but {} cores",
            xs.len(),
            cores.len()
        )));
    }
    let (j, r) = factors[mode].shape();
    let mut m = DMatrix::zeros(j, r);
    for (x, g) in xs.iter().zip(cores) {
        m += partial_projection(x, factors, mode)? * unfold(g, mode)?.transpose();
    }
    linalg::procrustes(&m)
}

#[derive(Debug, Clone)]
pub struct RelaxedUpdate {
    pub factor: DMatrix<f64>,
    /// The Gram sum was singular and a ridge term was added.
    pub ridge: bool,
}

/// Unconstrained least-squares update of the last factor:
/// `(sum_t A_t A_t^T)^-1 sum_t A_t G_t(M)^T` with `A_t = X_t(M) pinv(U^(-M))`.
///
/// The pseudo-inverse of the Kronecker chain is the Kronecker chain of the
/// per-factor pseudo-inverses, applied here as mode products.
pub fn update_factor_relaxed(
    xs: &[DenseTensor],
    cores: &[DenseTensor],
    factors: &[DMatrix<f64>],
) -> Result<RelaxedUpdate> {
    let m_count = factors.len();
    if m_count < 2 {
        return Err(Error::Config(
            "relaxed update needs at least two embedded modes".into(),
        ));
    }
    if xs.len() != cores.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} slices but {} cores",
            xs.len(),
            cores.len()
        )));
    }
    let last = m_count - 1;
    // pinv(U_j^T)^T = pinv(U_j), so X ×_j pinv(U_j) realizes X_(M) pinv(U^(-M)).
    let mut pinvs = factors
        .iter()
        .take(last)
        .map(linalg::pinv)
        .collect::<Result<Vec<_>>>()?;
    pinvs.push(DMatrix::identity(
        factors[last].nrows(),
        factors[last].nrows(),
    ));

    let (j, r) = factors[last].shape();
    let mut gram = DMatrix::zeros(j, j);
    let mut rhs = DMatrix::zeros(j, r);
    for (x, g) in xs.iter().zip(cores) {
        let a = unfold(&multi_mode_product(x, &pinvs, false, Some(last))?, last)?;
        gram += &a * a.transpose();
        rhs += &a * unfold(g, last)?.transpose();
    }
    if gram.iter().all(|&v| v == 0.0) {
        return Ok(RelaxedUpdate {
            factor: factors[last].clone(),
            ridge: true,
        });
    }
    let s = linalg::svd(&gram)?.s;
    let singular = s.min() <= 1e-12 * s.max();
    let mut system = gram.clone();
    if singular {
        let lambda = RIDGE_FACTOR * gram.trace() / j as f64;
        for k in 0..j {
            system[(k, k)] += lambda;
        }
    }
    let factor = system
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| system.lu().solve(&rhs))
        .ok_or_else(|| Error::Singular("relaxed factor Gram matrix".into()))?;
    Ok(RelaxedUpdate {
        factor,
        ridge: singular,
    })
}

#[derive(Debug, Clone)]
pub struct ErrorUpdate {
    pub tensor: DenseTensor,
    /// The guard fired and the previous tensor was kept.
    pub skipped: bool,
}

/// Closed-form update of the error tensor for MA lag `lag + 1`:
///
/// `E_i = sum_t (G_t - sum_j alpha_j G_{t-j} + sum_{j != i} beta_j E_j) / ((s + 1 - T_hat) beta_i)`
///
/// with `t` running over the last `T_hat - s` cores (`s + 1 - T_hat` only
/// depends on that count, so `d` is not needed).
pub fn update_error(
    cores: &[DenseTensor],
    alpha: &[f64],
    beta: &[f64],
    errors: &[DenseTensor],
    lag: usize,
) -> Result<ErrorUpdate> {
    let (p, q) = (alpha.len(), beta.len());
    if lag >= q || errors.len() != q {
        return Err(Error::DimensionMismatch(format!(
            "error lag {lag} with {q} MA coefficients and {} error tensors",
            errors.len()
        )));
    }
    let start = p + q;
    if cores.len() <= start {
        return Err(Error::InsufficientData(format!(
            "error update needs more than {start} cores, got {}",
            cores.len()
        )));
    }
    let keep = || ErrorUpdate {
        tensor: errors[lag].clone(),
        skipped: true,
    };
    let count = (cores.len() - start) as f64;
    let denom = (1.0 - count) * beta[lag];
    if beta[lag].abs() <= BETA_GUARD || denom == 0.0 {
        return Ok(keep());
    }
    let mut others = DenseTensor::zeros(errors[lag].shape())?;
    for (j, (b, e)) in beta.iter().zip(errors).enumerate() {
        if j != lag {
            others = others.axpy(*b, e)?;
        }
    }
    let mut sum = DenseTensor::zeros(errors[lag].shape())?;
    for t in start..cores.len() {
        let mut term = cores[t].add(&others)?;
        for (i, a) in alpha.iter().enumerate() {
            term = term.axpy(-a, &cores[t - 1 - i])?;
        }
        sum = sum.add(&term)?;
    }
    Ok(ErrorUpdate {
        tensor: sum.scale(1.0 / denom),
        skipped: false,
    })
}

/// Relative change `sum ||U_new - U_old||^2 / sum ||U_new||^2`.
pub fn factor_change(new: &[DMatrix<f64>], old: &[DMatrix<f64>]) -> f64 {
    let num: f64 = new
        .iter()
        .zip(old)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let den: f64 = new.iter().map(|a| a.norm_squared()).sum();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

fn random_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn numerical(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| {
        if e.is_numerical() {
            Error::Numerical {
                iteration,
                source: Box::new(e),
            }
        } else {
            e
        }
    }
}

/// Fits the model to `x` of shape `I_1 x ... x I_N x T` (time last).
pub fn fit(x: &DenseTensor, cfg: &ModelConfig) -> Result<FittedModel> {
    let ranks = cfg.validate(x.shape())?;
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidShape(
            "input contains non-finite values".into(),
        ));
    }
    let (p, q) = (cfg.p, cfg.q);
    let embedded_shape = cfg.embedded_shape(x.shape());
    let slice_shape = x.shape()[..x.order() - 1].to_vec();

    let hankel = mdt::mdt_temporal(x, cfg.tau)?;
    let embedded = hankel.slices_last();
    let diff_state = diff::difference(&embedded, cfg.d)?;
    let xs = diff_state.slices().to_vec();
    let len = xs.len();
    let start = p + q;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut factors = embedded_shape
        .iter()
        .zip(&ranks)
        .map(|(&j, &r)| {
            let g = DMatrix::from_fn(j, r, |_, _| random_normal(&mut rng));
            linalg::orthonormalize(&g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut errors = (0..q)
        .map(|_| DenseTensor::from_fn(&ranks, |_| ERROR_INIT_SCALE * random_normal(&mut rng)))
        .collect::<Result<Vec<_>>>()?;

    let relaxed = cfg.ortho == OrthoMode::Relaxed;
    let last_mode = factors.len() - 1;
    let mut diagnostics = FitDiagnostics::default();
    let mut trace = Vec::with_capacity(cfg.max_iter);
    let mut orthogonality = Vec::with_capacity(cfg.max_iter);
    let mut converged = false;
    let mut cores: Vec<DenseTensor>;

    for k in 0..cfg.max_iter {
        let wrap = numerical(k + 1);
        let old = factors.clone();
        cores = xs
            .iter()
            .map(|s| project(s, &factors))
            .collect::<Result<_>>()?;
        let est = coeffs::estimate(&cores, p, q).map_err(&wrap)?;
        diagnostics.ar_fallback |= est.ar_fallback;
        diagnostics.ma_fallback |= est.ma_fallback;
        let (alpha, beta) = (&est.coeffs.alpha, &est.coeffs.beta);

        for mode in 0..factors.len() {
            for t in start..len {
                let proj = project(&xs[t], &factors)?;
                let prev: Vec<&DenseTensor> = (1..=p).map(|i| &cores[t - i]).collect();
                cores[t] = update_core(&proj, &prev, &errors, alpha, beta)?;
            }
            if relaxed && mode == last_mode {
                let upd = update_factor_relaxed(&xs[start..], &cores[start..], &factors)
                    .map_err(&wrap)?;
                diagnostics.ridge_used |= upd.ridge;
                factors[mode] = upd.factor;
            } else {
                factors[mode] = update_factor_full(&xs[start..], &cores[start..], &factors, mode)
                    .map_err(&wrap)?;
            }
        }

        for lag in 0..q {
            let upd = update_error(&cores, alpha, beta, &errors, lag)?;
            if upd.skipped {
                diagnostics.skipped_error_updates += 1;
            }
            errors[lag] = upd.tensor;
        }

        let constrained = if relaxed { last_mode } else { factors.len() };
        orthogonality.push(
            factors[..constrained]
                .iter()
                .map(linalg::orthogonality_defect)
                .fold(0.0, f64::max),
        );
        let change = factor_change(&factors, &old);
        if !change.is_finite() {
            return Err(Error::Numerical {
                iteration: k + 1,
                source: Box::new(Error::Singular("factor change is not finite".into())),
            });
        }
        trace.push(change);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }

    // Forecasting starts from the projections onto the final factors, with
    // coefficients and error tensors refreshed on them.
    cores = xs
        .iter()
        .map(|s| project(s, &factors))
        .collect::<Result<_>>()?;
    let est = coeffs::estimate(&cores, p, q).map_err(numerical(trace.len()))?;
    diagnostics.ar_fallback |= est.ar_fallback;
    diagnostics.ma_fallback |= est.ma_fallback;
    diagnostics.ar_stationary = coeffs::ar_is_stationary(&est.coeffs.alpha);
    for lag in 0..q {
        let upd = update_error(&cores, &est.coeffs.alpha, &est.coeffs.beta, &errors, lag)?;
        if upd.skipped {
            diagnostics.skipped_error_updates += 1;
        }
        errors[lag] = upd.tensor;
    }

    let mut synthesis = factors.clone();
    if relaxed {
        synthesis[last_mode] =
            linalg::pinv(&factors[last_mode].transpose()).map_err(numerical(trace.len()))?;
    }

    Ok(FittedModel {
        config: cfg.clone(),
        ranks,
        factors,
        synthesis,
        cores,
        errors,
        coeffs: est.coeffs,
        diff_state,
        embedded,
        meta: HankelMeta {
            tau: cfg.tau,
            embedded_shape,
            slice_shape,
            series_len: x.last_extent(),
        },
        trace,
        orthogonality,
        converged,
        diagnostics,
    })
}

/// Next differenced core from the tensor ARIMA recursion:
/// `sum_i alpha_i G_{T+1-i} - sum_i beta_i E_i`.
pub fn predict_core(
    cores: &[DenseTensor],
    coeffs: &ArimaCoefficients,
    errors: &[DenseTensor],
) -> Result<DenseTensor> {
    let shape = cores
        .last()
        .ok_or_else(|| Error::InsufficientData("no cores".into()))?
        .shape()
        .to_vec();
    if cores.len() < coeffs.alpha.len() {
        return Err(Error::InsufficientData(format!(
            "AR({}) prediction from {} cores",
            coeffs.alpha.len(),
            cores.len()
        )));
    }
    let mut g = DenseTensor::zeros(&shape)?;
    for (i, a) in coeffs.alpha.iter().enumerate() {
        g = g.axpy(*a, &cores[cores.len() - 1 - i])?;
    }
    for (b, e) in coeffs.beta.iter().zip(errors) {
        g = g.axpy(-b, e)?;
    }
    Ok(g)
}

/// Recursive `horizon`-step forecast; later steps reuse earlier predictions.
pub fn forecast(model: &FittedModel, horizon: usize) -> Result<ForecastResult> {
    if horizon == 0 {
        return Err(Error::Config("forecast horizon must be at least 1".into()));
    }
    let tau = model.meta.tau;
    let mut cores = model.cores.clone();
    let mut diff_state = model.diff_state.clone();
    let mut embedded = model.embedded.clone();
    let mut result = ForecastResult {
        forecasts: Vec::with_capacity(horizon),
        embedded_forecasts: Vec::with_capacity(horizon),
        core_forecasts: Vec::with_capacity(horizon),
        converged: model.converged,
        iterations_used: model.iterations(),
    };
    for _ in 0..horizon {
        let g = predict_core(&cores, &model.coeffs, &model.errors)?;
        let dx = model.compose(&g)?;
        let x_hat = diff_state.push_difference(dx.clone())?;
        embedded.push(x_hat.clone());

        // Only the newest window covers the newest time index, so the inverse
        // embedding of the last tau slices already determines it.
        let window = &embedded[embedded.len().saturating_sub(tau)..];
        let restored = mdt::inverse_mdt_temporal(&DenseTensor::stack_last(window)?, tau)?;
        let slice = restored.slice_last(restored.last_extent() - 1)?;
        let slice = if model.meta.slice_shape.is_empty() {
            slice
        } else {
            slice.reshape(&model.meta.slice_shape)?
        };

        cores.push(project(&dx, &model.factors)?);
        result.forecasts.push(slice);
        result.embedded_forecasts.push(x_hat);
        result.core_forecasts.push(g);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::autocovariance;
    use crate::tensor::kron_chain_skip;
    use rand::Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn rand_orthonormal(rng: &mut ChaCha8Rng, j: usize, r: usize) -> DMatrix<f64> {
        linalg::orthonormalize(&DMatrix::from_fn(j, r, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn max_abs_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    fn all_indices(shape: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &n in shape {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..n).map(move |i| {
                        let mut q = p.clone();
                        q.push(i);
                        q
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn config_validation() {
        let shape = [4, 20];
        assert_eq!(ModelConfig::default().validate(&shape).unwrap(), vec![4, 3]);
        let bad = |cfg: ModelConfig| cfg.validate(&shape).is_err();
        assert!(bad(ModelConfig {
            tau: 0,
            ..Default::default()
        }));
        assert!(bad(ModelConfig {
            tau: 21,
            ..Default::default()
        }));
        assert!(bad(ModelConfig {
            max_iter: 0,
            ..Default::default()
        }));
        assert!(bad(ModelConfig {
            tol: 0.0,
            ..Default::default()
        }));
        assert!(bad(ModelConfig {
            ranks: Some(vec![5, 3]),
            ..Default::default()
        }));
        assert!(bad(ModelConfig {
            ranks: Some(vec![0, 3]),
            ..Default::default()
        }));
        assert!(bad(ModelConfig {
            ranks: Some(vec![3]),
            ..Default::default()
        }));
        // T_hat = 18, d = 1: needs p + d + q < 17
        assert!(bad(ModelConfig {
            p: 10,
            q: 6,
            ..Default::default()
        }));
        assert!(!bad(ModelConfig {
            p: 10,
            q: 5,
            ..Default::default()
        }));
        let single = ModelConfig {
            ortho: OrthoMode::Relaxed,
            ..Default::default()
        };
        assert!(single.validate(&[20]).is_err());
        assert!(single.validate(&[1, 20]).is_ok());
    }

    #[test]
    fn default_ranks() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.default_ranks(&[10, 1, 7, 3]), vec![8, 1, 6, 3]);
        assert_eq!(cfg.embedded_shape(&[5, 6, 30]), vec![5, 6, 3]);
        assert_eq!(cfg.embedded_shape(&[30]), vec![3]);
    }

    #[test]
    fn config_pairs_roundtrip() {
        let cfg = ModelConfig {
            p: 3,
            d: 0,
            q: 2,
            tau: 4,
            ranks: Some(vec![7, 4]),
            max_iter: 25,
            tol: 3.7e-6,
            ortho: OrthoMode::Relaxed,
            seed: 99,
        };
        let pairs = cfg.to_pairs();
        let back =
            ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
        let auto = ModelConfig::default();
        let pairs = auto.to_pairs();
        assert_eq!(
            ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap(),
            auto
        );
        assert!("sideways".parse::<OrthoMode>().is_err());
        assert_eq!("RELAXED".parse::<OrthoMode>().unwrap(), OrthoMode::Relaxed);
    }

    #[test]
    fn core_update_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let proj = rand_tensor(&mut rng, &[2, 3]);
        let half = update_core(&proj, &[], &[], &[], &[]).unwrap();
        assert!(max_abs_diff(&half, &proj.scale(0.5)) == 0.0);

        let same = update_core(&proj, &[&proj], &[], &[1.0], &[]).unwrap();
        assert!(max_abs_diff(&same, &proj) < 1e-15);

        assert!(update_core(&proj, &[], &[], &[0.5], &[]).is_err());
        let wrong = rand_tensor(&mut rng, &[3, 2]);
        assert!(update_core(&proj, &[&wrong], &[], &[0.5], &[]).is_err());
    }

    #[test]
    fn core_update_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = [3, 3, 3];
        let proj = rand_tensor(&mut rng, &shape);
        let prev: Vec<_> = (0..2).map(|_| rand_tensor(&mut rng, &shape)).collect();
        let errs: Vec<_> = (0..2).map(|_| rand_tensor(&mut rng, &shape)).collect();
        let alpha = [0.6, -0.25];
        let beta = [0.3, 0.1];
        let refs: Vec<&DenseTensor> = prev.iter().collect();
        let got = update_core(&proj, &refs, &errs, &alpha, &beta).unwrap();
        for idx in all_indices(&shape) {
            let mut v = proj.get(&idx);
            for i in 0..2 {
                v += alpha[i] * prev[i].get(&idx);
                v -= beta[i] * errs[i].get(&idx);
            }
            assert!((got.get(&idx) - 0.5 * v).abs() < 1e-10);
        }
    }

    #[test]
    fn error_update_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = [3, 3, 3];
        let cores: Vec<_> = (0..9).map(|_| rand_tensor(&mut rng, &shape)).collect();
        let errs: Vec<_> = (0..2).map(|_| rand_tensor(&mut rng, &shape)).collect();
        let alpha = [0.5, -0.2];
        let beta = [0.4, -0.3];
        // Written in terms of T_hat and s for some d; the result must not depend on it.
        let d = 2;
        let t_hat = cores.len() + d;
        let s = alpha.len() + d + beta.len();
        for lag in 0..2 {
            let got = update_error(&cores, &alpha, &beta, &errs, lag).unwrap();
            assert!(!got.skipped);
            for idx in all_indices(&shape) {
                let mut num = 0.0;
                for t in 4..9 {
                    let mut term = cores[t].get(&idx);
                    for i in 0..2 {
                        term -= alpha[i] * cores[t - 1 - i].get(&idx);
                    }
                    for j in 0..2 {
                        if j != lag {
                            term += beta[j] * errs[j].get(&idx);
                        }
                    }
                    num += term;
                }
                let denom = (s as f64 + 1.0 - t_hat as f64) * beta[lag];
                assert!((got.tensor.get(&idx) - num / denom).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn error_update_hand_example() {
        // q = 1, p = 0: three cores, sum over the last two, denominator (1 - 2) * beta.
        let c = |v: f64| DenseTensor::new(vec![1], vec![v]).unwrap();
        let cores = vec![c(1.0), c(2.0), c(5.0)];
        let errs = vec![c(0.7)];
        let got = update_error(&cores, &[], &[0.5], &errs, 0).unwrap();
        assert_eq!(got.tensor.data(), &[(2.0 + 5.0) / (-0.5)]);
    }

    #[test]
    fn error_update_zero_for_ar_consistent_cores() {
        let c = |v: f64| DenseTensor::new(vec![2], vec![v, -v]).unwrap();
        let cores: Vec<_> = (0..8).map(|t| c(0.8f64.powi(t))).collect();
        let errs = vec![DenseTensor::zeros(&[2]).unwrap(), c(0.3)];
        let got = update_error(&cores, &[0.8], &[0.2, 0.4], &errs, 1).unwrap();
        assert!(got.tensor.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn error_update_guards() {
        let c = |v: f64| DenseTensor::new(vec![1], vec![v]).unwrap();
        let cores: Vec<_> = (0..5).map(|t| c(t as f64)).collect();
        let errs = vec![c(0.25)];
        let tiny = update_error(&cores, &[], &[1e-9], &errs, 0).unwrap();
        assert!(tiny.skipped);
        assert_eq!(tiny.tensor, errs[0]);
        // Two cores with p + q = 1 give a single summand: s + 1 - T_hat = 0.
        let zero = update_error(&cores[..2], &[], &[0.5], &errs, 0).unwrap();
        assert!(zero.skipped);
        assert!(update_error(&cores, &[], &[0.5], &errs, 1).is_err());
    }

    fn kron_rest(factors: &[DMatrix<f64>], mode: usize) -> DMatrix<f64> {
        kron_chain_skip(factors, mode).unwrap()
    }

    #[test]
    fn full_factor_update_matches_kronecker_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let factors = vec![
            rand_orthonormal(&mut rng, 3, 2),
            rand_orthonormal(&mut rng, 3, 3),
            rand_orthonormal(&mut rng, 3, 2),
        ];
        let xs: Vec<_> = (0..4).map(|_| rand_tensor(&mut rng, &[3, 3, 3])).collect();
        let cores: Vec<_> = (0..4).map(|_| rand_tensor(&mut rng, &[2, 3, 2])).collect();
        for mode in 0..3 {
            let mut m = DMatrix::zeros(3, factors[mode].ncols());
            for (x, g) in xs.iter().zip(&cores) {
                m += unfold(x, mode).unwrap()
                    * kron_rest(&factors, mode)
                    * unfold(g, mode).unwrap().transpose();
            }
            let svd = m.svd(true, true);
            let oracle = svd.u.unwrap() * svd.v_t.unwrap();
            let got = update_factor_full(&xs, &cores, &factors, mode).unwrap();
            assert!((got - oracle).abs().max() < 1e-10);
        }
    }

    fn objective(xs: &[DenseTensor], cores: &[DenseTensor], factors: &[DMatrix<f64>]) -> f64 {
        xs.iter()
            .zip(cores)
            .map(|(x, g)| frobenius_norm(&g.sub(&project(x, factors).unwrap()).unwrap()).powi(2))
            .sum()
    }

    #[test]
    fn full_factor_update_does_not_increase_objective() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // The mode being updated is square, where the Procrustes step is the exact minimizer.
            let mut factors = vec![
                rand_orthonormal(&mut rng, 4, 4),
                rand_orthonormal(&mut rng, 3, 2),
            ];
            let xs: Vec<_> = (0..5).map(|_| rand_tensor(&mut rng, &[4, 3])).collect();
            let cores: Vec<_> = (0..5).map(|_| rand_tensor(&mut rng, &[4, 2])).collect();
            let before = objective(&xs, &cores, &factors);
            factors[0] = update_factor_full(&xs, &cores, &factors, 0).unwrap();
            let after = objective(&xs, &cores, &factors);
            assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
            assert!(linalg::orthogonality_defect(&factors[0]) < 1e-12);
        }
    }

    #[test]
    fn full_factor_update_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let factors = vec![
            rand_orthonormal(&mut rng, 5, 2),
            rand_orthonormal(&mut rng, 3, 2),
        ];
        let g = rand_tensor(&mut rng, &[2, 2]);
        let x = compose(&g, &factors).unwrap();
        let core = project(&x, &factors).unwrap();
        for mode in 0..2 {
            let got = update_factor_full(
                std::slice::from_ref(&x),
                std::slice::from_ref(&core),
                &factors,
                mode,
            )
            .unwrap();
            assert!((got - &factors[mode]).abs().max() < 1e-10);
        }
    }

    #[test]
    fn full_factor_update_single_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let factors = vec![rand_orthonormal(&mut rng, 4, 2)];
        let xs: Vec<_> = (0..3).map(|_| rand_tensor(&mut rng, &[4])).collect();
        let gs: Vec<_> = (0..3).map(|_| rand_tensor(&mut rng, &[2])).collect();
        let mut m = DMatrix::zeros(4, 2);
        for (x, g) in xs.iter().zip(&gs) {
            m += DMatrix::from_column_slice(4, 1, x.data())
                * DMatrix::from_row_slice(1, 2, g.data());
        }
        let oracle = linalg::procrustes(&m).unwrap();
        let got = update_factor_full(&xs, &gs, &factors, 0).unwrap();
        assert!((got - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn relaxed_update_matches_explicit_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let factors = vec![
            rand_orthonormal(&mut rng, 3, 2),
            rand_orthonormal(&mut rng, 3, 2),
            DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)),
        ];
        let xs: Vec<_> = (0..5).map(|_| rand_tensor(&mut rng, &[3, 3, 3])).collect();
        let cores: Vec<_> = (0..5).map(|_| rand_tensor(&mut rng, &[2, 2, 3])).collect();

        // U^(-M) as a (prod R) x (prod J) matrix, inverted densely.
        let u_rest = kron_rest(&factors, 2).transpose();
        let u_rest_pinv = u_rest.pseudo_inverse(1e-12).unwrap();
        let mut gram = DMatrix::<f64>::zeros(3, 3);
        let mut rhs = DMatrix::<f64>::zeros(3, 3);
        for (x, g) in xs.iter().zip(&cores) {
            let xm = unfold(x, 2).unwrap();
            let gm = unfold(g, 2).unwrap();
            let mut a = DMatrix::<f64>::zeros(3, 4);
            for r in 0..3 {
                for c in 0..4 {
                    for k in 0..9 {
                        a[(r, c)] += xm[(r, k)] * u_rest_pinv[(k, c)];
                    }
                }
            }
            gram += &a * a.transpose();
            rhs += &a * gm.transpose();
        }
        let oracle = gram.try_inverse().unwrap() * rhs;
        let got = update_factor_relaxed(&xs, &cores, &factors).unwrap();
        assert!(!got.ridge);
        assert!((got.factor - oracle).abs().max() < 1e-10);
    }

    #[test]
    fn relaxed_update_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let factors = vec![
            rand_orthonormal(&mut rng, 4, 4),
            rand_orthonormal(&mut rng, 3, 3),
        ];
        let xs: Vec<_> = (0..6).map(|_| rand_tensor(&mut rng, &[4, 3])).collect();
        let cores: Vec<_> = xs.iter().map(|x| project(x, &factors).unwrap()).collect();
        let got = update_factor_relaxed(&xs, &cores, &factors).unwrap();
        assert!((got.factor - &factors[1]).abs().max() < 1e-8);
    }

    #[test]
    fn relaxed_update_single_series_matches_lstsq() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let factors = vec![
            DMatrix::from_element(1, 1, 1.0),
            rand_orthonormal(&mut rng, 2, 2),
        ];
        let xs: Vec<_> = (0..6).map(|_| rand_tensor(&mut rng, &[1, 2])).collect();
        let cores: Vec<_> = (0..6).map(|_| rand_tensor(&mut rng, &[1, 2])).collect();
        // Row t of the stacked system: x_t^T U = g_t^T.
        let a = DMatrix::from_fn(6, 2, |t, j| xs[t].data()[j]);
        let b = DMatrix::from_fn(6, 2, |t, j| cores[t].data()[j]);
        let oracle = linalg::lstsq(&a, &b).unwrap();
        let got = update_factor_relaxed(&xs, &cores, &factors).unwrap();
        assert!((got.factor - oracle).abs().max() < 1e-8);
    }

    #[test]
    fn relaxed_update_ridge_on_rank_deficient_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let factors = vec![
            rand_orthonormal(&mut rng, 2, 2),
            rand_orthonormal(&mut rng, 3, 3),
        ];
        // Every slice has the same window profile, so the window Gram has rank one.
        let profile = [1.0, -2.0, 0.5];
        let xs: Vec<_> = (0..4)
            .map(|_| {
                let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                DenseTensor::from_fn(&[2, 3], |i| s[i[0]] * profile[i[1]]).unwrap()
            })
            .collect();
        let cores: Vec<_> = xs.iter().map(|x| project(x, &factors).unwrap()).collect();
        let got = update_factor_relaxed(&xs, &cores, &factors).unwrap();
        assert!(got.ridge);
        assert!(got.factor.iter().all(|v| v.is_finite()));
        assert!(update_factor_relaxed(&xs, &cores, &factors[1..]).is_err());
    }

    #[test]
    fn constant_input_forecasts_the_constant() {
        let x = DenseTensor::filled(&[3, 12], 4.5).unwrap();
        for ortho in [OrthoMode::Full, OrthoMode::Relaxed] {
            let cfg = ModelConfig {
                ortho,
                ..Default::default()
            };
            let model = fit(&x, &cfg).unwrap();
            assert!(model
                .cores()
                .iter()
                .all(|g| g.data().iter().all(|v| *v == 0.0)));
            assert_eq!(model.cores().len(), 12 - 3 + 1 - 1);
            let fc = forecast(&model, 3).unwrap();
            for f in &fc.forecasts {
                assert_eq!(f.shape(), &[3]);
                assert!(f.data().iter().all(|v| (v - 4.5).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn full_rank_fit_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (shape, ranks) in [(vec![4, 25], vec![4, 3]), (vec![2, 3, 20], vec![2, 3, 3])] {
            let x = rand_tensor(&mut rng, &shape);
            for ortho in [OrthoMode::Full, OrthoMode::Relaxed] {
                let cfg = ModelConfig {
                    ranks: Some(ranks.clone()),
                    ortho,
                    ..Default::default()
                };
                let model = fit(&x, &cfg).unwrap();
                let errs = model.reconstruction_errors().unwrap();
                assert!(errs.iter().all(|e| *e < 1e-6), "{ortho}: {errs:?}");
            }
        }
    }

    #[test]
    fn factors_stay_orthonormal_every_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&mut rng, &[6, 30]);
        let cfg = ModelConfig {
            ranks: Some(vec![4, 2]),
            tol: 1e-14,
            ..Default::default()
        };
        let model = fit(&x, &cfg).unwrap();
        assert_eq!(model.orthogonality_trace().len(), 10);
        assert!(model.orthogonality_trace().iter().all(|d| *d < 1e-8));
        assert!(model.trace().iter().all(|t| t.is_finite()));
        let relaxed = fit(
            &x,
            &ModelConfig {
                ortho: OrthoMode::Relaxed,
                ..cfg
            },
        )
        .unwrap();
        assert!(relaxed.orthogonality_trace().iter().all(|d| *d < 1e-8));
        assert!(linalg::orthogonality_defect(&relaxed.factors()[0]) < 1e-8);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = rand_tensor(&mut rng, &[5, 30]);
        let cfg = ModelConfig {
            seed: 3,
            ..Default::default()
        };
        let a = fit(&x, &cfg).unwrap();
        let b = fit(&x, &cfg).unwrap();
        assert_eq!(a.trace(), b.trace());
        assert_eq!(a.factors(), b.factors());
        let other = fit(&x, &ModelConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.factors(), other.factors());
    }

    #[test]
    fn scalar_ar1_matches_textbook_forecast() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut v = vec![0.0f64];
        for _ in 1..150 {
            let prev = *v.last().unwrap();
            v.push(0.7 * prev + rng.random_range(-1.0..1.0));
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let gamma = |lag: usize| {
            (lag..n)
                .map(|t| (v[t] - mean) * (v[t - lag] - mean))
                .sum::<f64>()
                / (n - lag) as f64
        };
        let alpha = gamma(1) / gamma(0);
        let expected = alpha * v[n - 1];

        let x = DenseTensor::new(vec![n], v.clone()).unwrap();
        let cfg = ModelConfig {
            p: 1,
            d: 0,
            q: 0,
            tau: 1,
            ranks: Some(vec![1]),
            ..Default::default()
        };
        let model = fit(&x, &cfg).unwrap();
        assert!((model.coefficients().alpha[0] - alpha).abs() <= 1e-6 * alpha.abs());
        let got = forecast(&model, 1).unwrap().forecasts[0].data()[0];
        assert!((got - expected).abs() <= 1e-6 * expected.abs());
    }

    #[test]
    fn forecast_satisfies_the_core_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = rand_tensor(&mut rng, &[4, 30]);
        let cfg = ModelConfig {
            q: 2,
            ..Default::default()
        };
        let model = fit(&x, &cfg).unwrap();
        let fc = forecast(&model, 2).unwrap();
        let (a, b) = (&model.coefficients().alpha, &model.coefficients().beta);
        let g = model.cores();
        let n = g.len();
        let mut expected = g[n - 1].scale(a[0]).axpy(a[1], &g[n - 2]).unwrap();
        for (bi, e) in b.iter().zip(model.errors()) {
            expected = expected.axpy(-bi, e).unwrap();
        }
        assert!(max_abs_diff(&fc.core_forecasts[0], &expected) < 1e-12);

        // The second step recurses on the projected first prediction.
        let dx = model.compose(&fc.core_forecasts[0]).unwrap();
        let g1 = model.project(&dx).unwrap();
        let mut second = g1.scale(a[0]).axpy(a[1], &g[n - 1]).unwrap();
        for (bi, e) in b.iter().zip(model.errors()) {
            second = second.axpy(-bi, e).unwrap();
        }
        assert!(max_abs_diff(&fc.core_forecasts[1], &second) < 1e-12);
        assert!(forecast(&model, 0).is_err());
    }

    #[test]
    fn forecast_reads_the_inverse_embedding_of_the_extended_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = rand_tensor(&mut rng, &[3, 20]);
        let model = fit(
            &x,
            &ModelConfig {
                tau: 4,
                ranks: Some(vec![3, 4]),
                ..Default::default()
            },
        )
        .unwrap();
        let fc = forecast(&model, 3).unwrap();
        let mut embedded = model.embedded().to_vec();
        embedded.extend(fc.embedded_forecasts.iter().cloned());
        let full =
            mdt::inverse_mdt_temporal(&DenseTensor::stack_last(&embedded).unwrap(), 4).unwrap();
        assert_eq!(full.last_extent(), 23);
        for (h, f) in fc.forecasts.iter().enumerate() {
            assert_eq!(f.shape(), &[3]);
            let restored_last = mdt::inverse_mdt_temporal(
                &DenseTensor::stack_last(&embedded[..embedded.len() - 2 + h]).unwrap(),
                4,
            )
            .unwrap();
            let want = restored_last
                .slice_last(restored_last.last_extent() - 1)
                .unwrap();
            assert!(max_abs_diff(f, &want) < 1e-12);
        }
        // History before the first forecast window is reproduced exactly.
        let t_hat = 20 - 4 + 1;
        assert!(
            max_abs_diff(
                &full.truncate_last(t_hat).unwrap(),
                &x.truncate_last(t_hat).unwrap()
            ) < 1e-12
        );
    }

    #[test]
    fn persistence_in_core_space() {
        let c = |v: f64| DenseTensor::new(vec![2], vec![v, 2.0 * v]).unwrap();
        let cores = vec![c(1.0), c(3.0)];
        let coeffs = ArimaCoefficients {
            alpha: vec![1.0],
            beta: vec![],
        };
        assert_eq!(predict_core(&cores, &coeffs, &[]).unwrap(), cores[1]);
    }

    #[test]
    fn observe_matches_fitting_on_the_longer_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&mut rng, &[3, 25]);
        let cfg = ModelConfig::default();
        let short = fit(&x.truncate_last(24).unwrap(), &cfg).unwrap();
        let extended = short.observe(&x.slice_last(24).unwrap()).unwrap();
        let embedded = mdt::mdt_temporal(&x, cfg.tau).unwrap().slices_last();
        assert_eq!(extended.embedded(), embedded.as_slice());
        let diffed = diff::difference(&embedded, cfg.d).unwrap();
        assert_eq!(extended.diff_state(), &diffed);
        assert_eq!(extended.cores().len(), short.cores().len() + 1);
        assert_eq!(extended.meta().series_len, 25);
        assert!(short.observe(&DenseTensor::zeros(&[4]).unwrap()).is_err());
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut x = vec![1.0; 40];
        x[7] = f64::NAN;
        let x = DenseTensor::new(vec![2, 20], x).unwrap();
        assert!(fit(&x, &ModelConfig::default()).is_err());
    }

    #[test]
    fn autocovariance_of_final_cores_drives_the_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = rand_tensor(&mut rng, &[4, 30]);
        let cfg = ModelConfig {
            p: 1,
            q: 0,
            ..Default::default()
        };
        let model = fit(&x, &cfg).unwrap();
        let g = model.cores();
        let expected = autocovariance(g, 1).unwrap() / autocovariance(g, 0).unwrap();
        assert!((model.coefficients().alpha[0] - expected).abs() < 1e-12);
    }
}
