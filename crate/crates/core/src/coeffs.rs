//! AR and MA coefficient estimation on a sequence of tensors.
//!
//! Tensors are reduced to scalars through inner products of mean-centred
//! slices, so for scalar slices everything below is the classical sample
//! estimator. One set of coefficients is shared by every entry of the slices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{inner, DenseTensor};

/// MA coefficient used when the residuals carry no signal.
pub const MA_FALLBACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArimaCoefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ArimaCoefficients {
    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArEstimate {
    pub alpha: Vec<f64>,
    /// Set when the Yule-Walker system was singular and the random-walk
    /// prior `(1, 0, ..., 0)` was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaEstimate {
    pub beta: Vec<f64>,
    /// Set when the residuals were degenerate and every coefficient was
    /// replaced by [`MA_FALLBACK`].
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate {
    pub coeffs: ArimaCoefficients,
    pub ar_fallback: bool,
    pub ma_fallback: bool,
}

fn mean_slice(g: &[DenseTensor]) -> Result<DenseTensor> {
    let first = g
        .first()
        .ok_or_else(|| Error::InsufficientData("empty sequence".into()))?;
    let mut acc = DenseTensor::zeros(first.shape())?;
    for s in g {
        acc = acc.add(s)?;
    }
    Ok(acc.scale(1.0 / g.len() as f64))
}

fn centred(g: &[DenseTensor]) -> Result<Vec<DenseTensor>> {
    let mean = mean_slice(g)?;
    g.iter().map(|s| s.sub(&mean)).collect()
}

fn autocov_centred(c: &[DenseTensor], lag: usize) -> Result<f64> {
    let n = c.len();
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += inner(&c[t], &c[t + lag])?;
    }
    Ok(acc / (n - lag) as f64)
}

/// `gamma_lag = 1/(L - lag) * sum_t <g_t - mean, g_{t+lag} - mean>`.
pub fn autocovariance(g: &[DenseTensor], lag: usize) -> Result<f64> {
    if lag >= g.len() {
        return Err(Error::InsufficientData(format!(
            "lag {lag} needs more than {lag} slices, got {}",
            g.len()
        )));
    }
    autocov_centred(&centred(g)?, lag)
}

/// Yule-Walker AR(`p`) fit on the tensor sequence.
pub fn estimate_ar(g: &[DenseTensor], p: usize) -> Result<ArEstimate> {
    if p == 0 {
        return Ok(ArEstimate {
            alpha: Vec::new(),
            fallback: false,
        });
    }
    if g.len() <= p {
        return Err(Error::InsufficientData(format!(
            "AR({p}) needs more than {p} slices, got {}",
            g.len()
        )));
    }
    let c = centred(g)?;
    let gamma = (0..=p)
        .map(|lag| autocov_centred(&c, lag))
        .collect::<Result<Vec<_>>>()?;
    match linalg::solve_toeplitz(&gamma) {
        Ok(alpha) => Ok(ArEstimate {
            alpha,
            fallback: false,
        }),
        Err(Error::Singular(_)) => {
            let mut alpha = vec![0.0; p];
            alpha[0] = 1.0;
            Ok(ArEstimate {
                alpha,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// AR residuals `r_t = g_t - sum_i alpha_i g_{t-i}` for `t >= p`.
pub fn ar_residuals(g: &[DenseTensor], alpha: &[f64]) -> Result<Vec<DenseTensor>> {
    let p = alpha.len();
    (p..g.len())
        .map(|t| {
            alpha
                .iter()
                .enumerate()
                .try_fold(g[t].clone(), |acc, (i, a)| acc.axpy(-a, &g[t - 1 - i]))
        })
        .collect()
}

/// MA(`q`) coefficients by regressing the AR residuals on their own `q` lags.
pub fn estimate_ma(g: &[DenseTensor], alpha: &[f64], q: usize) -> Result<MaEstimate> {
    if q == 0 {
        return Ok(MaEstimate {
            beta: Vec::new(),
            fallback: false,
        });
    }
    let p = alpha.len();
    if g.len() <= p + q {
        return Err(Error::InsufficientData(format!(
            "ARMA({p},{q}) needs more than {} slices, got {}",
            p + q,
            g.len()
        )));
    }
    let fallback = || MaEstimate {
        beta: vec![MA_FALLBACK; q],
        fallback: true,
    };
    let res = ar_residuals(g, alpha)?;
    let energy: f64 = g.iter().map(|s| inner(s, s)).sum::<Result<f64>>()?;
    let res_energy: f64 = res.iter().map(|s| inner(s, s)).sum::<Result<f64>>()?;
    if !res_energy.is_finite() || res_energy <= 1e-24 * energy.max(f64::MIN_POSITIVE) {
        return Ok(fallback());
    }

    let size = res[0].len();
    let rows = res.len() - q;
    let mut design = DMatrix::zeros(rows * size, q);
    let mut target = DMatrix::zeros(rows * size, 1);
    for (k, t) in (q..res.len()).enumerate() {
        for (e, v) in res[t].data().iter().enumerate() {
            target[(k * size + e, 0)] = *v;
        }
        for j in 0..q {
            for (e, v) in res[t - 1 - j].data().iter().enumerate() {
                design[(k * size + e, j)] = *v;
            }
        }
    }
    if design.iter().all(|&v| v == 0.0) {
        return Ok(fallback());
    }
    let sol = linalg::lstsq(&design, &target)?;
    let beta: Vec<f64> = sol.column(0).iter().copied().collect();
    if beta.iter().any(|b| !b.is_finite()) {
        return Ok(fallback());
    }
    Ok(MaEstimate {
        beta,
        fallback: false,
    })
}

/// AR then MA estimation on the same sequence.
pub fn estimate(g: &[DenseTensor], p: usize, q: usize) -> Result<CoefficientEstimate> {
    let ar = estimate_ar(g, p)?;
    let ma = estimate_ma(g, &ar.alpha, q)?;
    Ok(CoefficientEstimate {
        coeffs: ArimaCoefficients {
            alpha: ar.alpha,
            beta: ma.beta,
        },
        ar_fallback: ar.fallback,
        ma_fallback: ma.fallback,
    })
}

/// Whether all roots of `1 - sum_i alpha_i z^i` lie outside the unit circle,
/// checked by stepping the coefficients down to reflection coefficients.
pub fn ar_is_stationary(alpha: &[f64]) -> bool {
    let mut a = alpha.to_vec();
    while let Some(&k) = a.last() {
        if k.is_nan() || k.abs() >= 1.0 {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        let prev: Vec<f64> = (0..m - 1)
            .map(|j| (a[j] + k * a[m - 2 - j]) / denom)
            .collect();
        a = prev;
    }
    true
}
