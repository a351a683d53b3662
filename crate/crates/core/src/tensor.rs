//! Dense N-dimensional tensors and the multilinear operations on them.
//!
//! Storage is a flat `Vec<f64>` with the first index varying fastest, the same
//! column-major order nalgebra uses for matrices. Modes are 0-based. The mode-n
//! unfolding follows the Kolda convention: the row is `i_n`, the column is
//! `sum_{k != n} i_k * J_k` with `J_k` the product of the extents of the
//! earlier non-`n` modes. With that ordering a Tucker tensor satisfies
//! `X_(n) = U_n G_(n) (U_{N-1} ⊗ ... ⊗ U_{n+1} ⊗ U_{n-1} ⊗ ... ⊗ U_0)^T`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::InvalidShape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.iter_mut().for_each(|v| *v = value);
        Ok(t)
    }

    /// Builds a tensor by evaluating `f` at every 0-based multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat buffer offset of a 0-based multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.shape) {
            debug_assert!(i < n);
            off += i * stride;
            stride *= n;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + c * b)
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Number of slices along the last mode.
    pub fn last_extent(&self) -> usize {
        *self.shape.last().expect("order >= 1")
    }

    /// Slice `t` along the last mode, with that mode dropped.
    ///
    /// An order-1 tensor yields a one-element order-1 tensor.
    pub fn slice_last(&self, t: usize) -> Result<Self> {
        let n = self.last_extent();
        if t >= n {
            return Err(Error::DimensionMismatch(format!(
                "slice {t} out of range for last extent {n}"
            )));
        }
        let inner_shape = if self.order() == 1 {
            vec![1]
        } else {
            self.shape[..self.order() - 1].to_vec()
        };
        let size: usize = self.len() / n;
        Ok(Self {
            shape: inner_shape,
            data: self.data[t * size..(t + 1) * size].to_vec(),
        })
    }

    pub fn slices_last(&self) -> Vec<Self> {
        (0..self.last_extent())
            .map(|t| self.slice_last(t).expect("in range"))
            .collect()
    }

    /// Stacks equally shaped tensors along a new trailing mode.
    pub fn stack_last(slices: &[Self]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidShape("cannot stack zero slices".into()))?;
        let mut data = Vec::with_capacity(first.len() * slices.len());
        for s in slices {
            first.check_same_shape(s)?;
            data.extend_from_slice(&s.data);
        }
        let mut shape = first.shape.clone();
        shape.push(slices.len());
        Self::new(shape, data)
    }

    /// Copies the first `n` slices along the last mode.
    pub fn truncate_last(&self, n: usize) -> Result<Self> {
        let total = self.last_extent();
        if n == 0 || n > total {
            return Err(Error::DimensionMismatch(format!(
                "cannot keep {n} of {total} slices"
            )));
        }
        let size = self.len() / total;
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        Self::new(shape, self.data[..n * size].to_vec())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape(
            "tensor order must be at least 1".into(),
        ));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape(format!(
            "all extents must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

fn check_mode(t: &DenseTensor, mode: usize) -> Result<()> {
    if mode >= t.order() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: t.order(),
        });
    }
    Ok(())
}

/// (product of extents before `mode`, extent of `mode`, product after `mode`)
fn split_at_mode(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = shape[..mode].iter().product();
    let right = shape[mode + 1..].iter().product();
    (left, shape[mode], right)
}

/// Mode-`mode` unfolding into an `I_mode x prod_{k != mode} I_k` matrix.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    check_mode(t, mode)?;
    let (left, n, right) = split_at_mode(&t.shape, mode);
    let mut m = DMatrix::zeros(n, left * right);
    for r in 0..right {
        for i in 0..n {
            let base = left * (i + n * r);
            for l in 0..left {
                m[(i, l + left * r)] = t.data[base + l];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`unfold`].
pub fn fold(m: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    check_shape(shape)?;
    if mode >= shape.len() {
        return Err(Error::ModeOutOfRange {
            mode,
            order: shape.len(),
        });
    }
    let (left, n, right) = split_at_mode(shape, mode);
    if m.nrows() != n || m.ncols() != left * right {
        return Err(Error::DimensionMismatch(format!(
            "cannot fold a {}x{} matrix along mode {mode} into {shape:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut data = vec![0.0; n * left * right];
    for r in 0..right {
        for i in 0..n {
            let base = left * (i + n * r);
            for l in 0..left {
                data[base + l] = m[(i, l + left * r)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// Mode-`mode` product `t ×_mode m`, replacing extent `I_mode` by `rows(m)`.
pub fn mode_product(t: &DenseTensor, m: &DMatrix<f64>, mode: usize) -> Result<DenseTensor> {
    check_mode(t, mode)?;
    let (left, n, right) = split_at_mode(&t.shape, mode);
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "mode-{mode} product needs {n} matrix columns, got {}",
            m.ncols()
        )));
    }
    let rows = m.nrows();
    let mut shape = t.shape.clone();
    shape[mode] = rows;
    let mut data = vec![0.0; left * rows * right];
    for r in 0..right {
        for i in 0..n {
            let src = &t.data[left * (i + n * r)..left * (i + n * r + 1)];
            for j in 0..rows {
                let w = m[(j, i)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut data[left * (j + rows * r)..left * (j + rows * r + 1)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    DenseTensor::new(shape, data)
}

/// Applies `mats[k]` (or its transpose) along mode `k` for every `k` not in `skip`.
pub fn multi_mode_product(
    t: &DenseTensor,
    mats: &[DMatrix<f64>],
    transpose: bool,
    skip: Option<usize>,
) -> Result<DenseTensor> {
    if mats.len() != t.order() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices for an order-{} tensor",
            mats.len(),
            t.order()
        )));
    }
    let mut out = t.clone();
    for (k, m) in mats.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        out = if transpose {
            mode_product(&out, &m.transpose(), k)?
        } else {
            mode_product(&out, m, k)?
        };
    }
    Ok(out)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `mats[M-1] ⊗ ... ⊗ mats[0]` in descending order with `mats[skip]` left out.
pub fn kron_chain_skip(mats: &[DMatrix<f64>], skip: usize) -> Result<DMatrix<f64>> {
    if skip >= mats.len() {
        return Err(Error::ModeOutOfRange {
            mode: skip,
            order: mats.len(),
        });
    }
    let mut chain = mats
        .iter()
        .enumerate()
        .rev()
        .filter(|&(k, _)| k != skip)
        .map(|(_, m)| m);
    let first = chain
        .next()
        .ok_or_else(|| Error::DimensionMismatch("Kronecker chain is empty after skip".into()))?;
    Ok(chain.fold(first.clone(), |acc, m| kron(&acc, m)))
}

pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}
