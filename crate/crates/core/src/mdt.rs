//! Multi-way delay embedding (block Hankelization) and its inverse.
//!
//! A length-`T` axis is replaced by a `tau x (T - tau + 1)` pair of axes whose
//! entry `(i, j)` is the source value at `i + j`. The duplication matrix that
//! does this is never materialized on the hot path: the forward map copies
//! sliding windows and the inverse averages each anti-diagonal, which is what
//! its pseudo-inverse does because `S^T S` is diagonal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Implicit 0/1 duplication matrix of shape `tau (len - tau + 1) x len`.
///
/// Row `i + tau * j` selects source position `i + j`, so folding `S x` into a
/// `tau x (len - tau + 1)` matrix gives the Hankel matrix of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DuplicationMatrix {
    tau: usize,
    len: usize,
}

impl DuplicationMatrix {
    pub fn new(tau: usize, len: usize) -> Result<Self> {
        if tau == 0 || tau > len {
            return Err(Error::Config(format!(
                "window tau = {tau} must lie in 1..={len}"
            )));
        }
        Ok(Self { tau, len })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of windows, `len - tau + 1`.
    pub fn windows(&self) -> usize {
        self.len - self.tau + 1
    }

    pub fn rows(&self) -> usize {
        self.tau * self.windows()
    }

    /// Source position selected by `row`.
    pub fn source_of(&self, row: usize) -> usize {
        row % self.tau + row / self.tau
    }

    /// How many windows cover each source position (the diagonal of `S^T S`).
    pub fn coverage(&self) -> Vec<usize> {
        let w = self.windows();
        (0..self.len)
            .map(|t| {
                let lo = t.saturating_sub(self.tau - 1);
                let hi = t.min(w - 1);
                hi + 1 - lo
            })
            .collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|r| x[self.source_of(r)]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.rows(), self.len);
        for r in 0..self.rows() {
            s[(r, self.source_of(r))] = 1.0;
        }
        s
    }
}

/// Delay embedding along the last (time) mode.
///
/// `I_1 x ... x I_N x T` becomes `I_1 x ... x I_N x tau x (T - tau + 1)`;
/// frontal slice `t` holds all series over the window `[t, t + tau - 1]`.
pub fn mdt_temporal(x: &DenseTensor, tau: usize) -> Result<DenseTensor> {
    let t_len = x.last_extent();
    let dup = DuplicationMatrix::new(tau, t_len)?;
    let inner: usize = x.len() / t_len;
    let windows = dup.windows();
    let mut shape = x.shape()[..x.order() - 1].to_vec();
    shape.push(tau);
    shape.push(windows);
    let src = x.data();
    let mut data = Vec::with_capacity(inner * tau * windows);
    for j in 0..windows {
        for i in 0..tau {
            let t = i + j;
            data.extend_from_slice(&src[t * inner..(t + 1) * inner]);
        }
    }
    DenseTensor::new(shape, data)
}

/// Inverse of [`mdt_temporal`]: averages every Hankel entry that maps to the
/// same source time index.
pub fn inverse_mdt_temporal(h: &DenseTensor, tau: usize) -> Result<DenseTensor> {
    let order = h.order();
    if order < 2 || h.shape()[order - 2] != tau {
        return Err(Error::InvalidShape(format!(
            "embedded tensor {:?} does not end in ({tau}, T_hat)",
            h.shape()
        )));
    }
    let windows = h.shape()[order - 1];
    let t_len = windows + tau - 1;
    let dup = DuplicationMatrix::new(tau, t_len)?;
    let inner: usize = h.len() / (tau * windows);
    let mut sums = vec![0.0; inner * t_len];
    let src = h.data();
    for j in 0..windows {
        for i in 0..tau {
            let t = i + j;
            let block = &src[(i + tau * j) * inner..(i + tau * j + 1) * inner];
            for (acc, v) in sums[t * inner..(t + 1) * inner].iter_mut().zip(block) {
                *acc += v;
            }
        }
    }
    for (t, count) in dup.coverage().into_iter().enumerate() {
        let c = count as f64;
        sums[t * inner..(t + 1) * inner]
            .iter_mut()
            .for_each(|v| *v /= c);
    }
    let mut shape = h.shape()[..order - 2].to_vec();
    shape.push(t_len);
    DenseTensor::new(shape, sums)
}

/// Delay embedding along every mode: `I_1 x ... x I_N` becomes
/// `tau_1 x (I_1 - tau_1 + 1) x ... x tau_N x (I_N - tau_N + 1)`.
pub fn mdt_general(x: &DenseTensor, taus: &[usize]) -> Result<DenseTensor> {
    if taus.len() != x.order() {
        return Err(Error::Config(format!(
            "{} windows given for an order-{} tensor",
            taus.len(),
            x.order()
        )));
    }
    let mut shape = Vec::with_capacity(2 * taus.len());
    for (&tau, &n) in taus.iter().zip(x.shape()) {
        let dup = DuplicationMatrix::new(tau, n)?;
        shape.push(tau);
        shape.push(dup.windows());
    }
    let mut src_idx = vec![0usize; taus.len()];
    DenseTensor::from_fn(&shape, |idx| {
        for (k, s) in src_idx.iter_mut().enumerate() {
            *s = idx[2 * k] + idx[2 * k + 1];
        }
        x.get(&src_idx)
    })
}
