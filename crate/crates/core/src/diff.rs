//! Order-`d` differencing of a slice sequence, with the state needed to undo it.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// The order-`d` differences of a sequence plus, for every level `k < d`,
/// its first slice (`heads`, for reconstructing the whole sequence) and its
/// most recent slice (`tails`, for integrating new predictions).
#[derive(Debug, Clone, PartialEq)]
pub struct DifferencedSeries {
    order: usize,
    slices: Vec<DenseTensor>,
    heads: Vec<DenseTensor>,
    tails: Vec<DenseTensor>,
}

/// Applies `s_t - s_{t-1}` elementwise `d` times.
pub fn difference(seq: &[DenseTensor], d: usize) -> Result<DifferencedSeries> {
    if seq.len() <= d {
        return Err(Error::InsufficientData(format!(
            "order-{d} differencing needs more than {d} slices, got {}",
            seq.len()
        )));
    }
    for s in &seq[1..] {
        seq[0].check_same_shape(s)?;
    }
    let mut level = seq.to_vec();
    let mut heads = Vec::with_capacity(d);
    let mut tails = Vec::with_capacity(d);
    for _ in 0..d {
        heads.push(level[0].clone());
        tails.push(level[level.len() - 1].clone());
        level = level
            .windows(2)
            .map(|w| w[1].sub(&w[0]))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(DifferencedSeries {
        order: d,
        slices: level,
        heads,
        tails,
    })
}

impl DifferencedSeries {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn slices(&self) -> &[DenseTensor] {
        &self.slices
    }

    pub fn heads(&self) -> &[DenseTensor] {
        &self.heads
    }

    pub fn tails(&self) -> &[DenseTensor] {
        &self.tails
    }

    /// Length of the undifferenced sequence.
    pub fn original_len(&self) -> usize {
        self.slices.len() + self.order
    }

    pub fn slice_shape(&self) -> &[usize] {
        self.slices[0].shape()
    }

    /// Integrates a predicted order-`d` difference into the next
    /// original-scale slice, without changing the state.
    pub fn invert_last(&self, predicted: &DenseTensor) -> Result<DenseTensor> {
        self.slices[0].check_same_shape(predicted)?;
        self.tails
            .iter()
            .rev()
            .try_fold(predicted.clone(), |acc, tail| tail.add(&acc))
    }

    /// Appends a new order-`d` difference, updating the running tails, and
    /// returns the integrated original-scale slice.
    pub fn push_difference(&mut self, predicted: DenseTensor) -> Result<DenseTensor> {
        self.slices[0].check_same_shape(&predicted)?;
        let mut acc = predicted.clone();
        for tail in self.tails.iter_mut().rev() {
            acc = tail.add(&acc)?;
            *tail = acc.clone();
        }
        self.slices.push(predicted);
        Ok(acc)
    }

    /// Appends a new original-scale slice, differencing it against the tails.
    /// Returns the new order-`d` difference.
    pub fn push_observation(&mut self, observed: &DenseTensor) -> Result<DenseTensor> {
        self.slices[0].check_same_shape(observed)?;
        let mut acc = observed.clone();
        for tail in self.tails.iter_mut() {
            let next = acc.sub(tail)?;
            *tail = acc;
            acc = next;
        }
        self.slices.push(acc.clone());
        Ok(acc)
    }

    /// Rebuilds the full original sequence from the heads and differences.
    pub fn reconstruct(&self) -> Result<Vec<DenseTensor>> {
        let mut level = self.slices.clone();
        for head in self.heads.iter().rev() {
            let mut next = Vec::with_capacity(level.len() + 1);
            next.push(head.clone());
            for delta in &level {
                let prev = next.last().expect("nonempty");
                next.push(prev.add(delta)?);
            }
            level = next;
        }
        Ok(level)
    }
}
