//! Forward kernels shared by the tape and by callers that only need values.

use rand::Rng;

use super::Tensor;
use crate::error::{DasError, Result};

/// `W·x + b` for a single vector.
pub fn affine(x: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    check_affine(&[1, x.len()], w.shape(), b.len())?;
    Ok(w
        .data()
        .chunks_exact(x.len())
        .zip(b)
        .map(|(row, bias)| dot(row, x) + bias)
        .collect())
}

pub(crate) fn check_affine(x: &[usize], w: &[usize], b_len: usize) -> Result<()> {
    let x_cols = x.last().copied().unwrap_or(1);
    if w.len() != 2 || w[1] != x_cols {
        return Err(DasError::Shape {
            op: "affine",
            left: w.to_vec(),
            right: x.to_vec(),
        });
    }
    if b_len != w[0] {
        return Err(DasError::Shape {
            op: "affine bias",
            left: w.to_vec(),
            right: vec![b_len],
        });
    }
    Ok(())
}

/// Row-wise `X·Wᵀ + b`.
pub(crate) fn affine_rows(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
    let mut y = x.view2().dot(&w.view2().t());
    for mut row in y.rows_mut() {
        for (v, bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
    Tensor::from_array2(y)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Max-shifted softmax of one row.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Column-wise maximum over the rows of `h`, with the winning row per column.
/// Ties go to the lowest row index.
pub fn max_over_time(h: &Tensor) -> Result<(Vec<f64>, Vec<usize>)> {
    if h.is_empty() {
        return Err(DasError::invalid("max_over_time on an empty matrix"));
    }
    Ok(segment_max(h, 0, h.rows()))
}

pub(crate) fn segment_max(h: &Tensor, start: usize, end: usize) -> (Vec<f64>, Vec<usize>) {
    let cols = h.cols();
    let mut best = h.row(start).to_vec();
    let mut arg = vec![start; cols];
    for r in start + 1..end {
        for (j, &v) in h.row(r).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = r;
            }
        }
    }
    (best, arg)
}

/// Inverted dropout mask: `None` means identity.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(
    len: usize,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(DasError::invalid(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok(Some(
        (0..len)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    ))
}

pub fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, training: bool, rng: &mut R) -> Result<Vec<f64>> {
    Ok(match dropout_mask(x.len(), rate, training, rng)? {
        None => x.to_vec(),
        Some(mask) => x.iter().zip(&mask).map(|(v, m)| v * m).collect(),
    })
}

/// `(v + eps) / Σ(v + eps)`; rejects negative entries.
pub fn l1_normalize(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| **x < 0.0 || x.is_nan()) {
        return Err(DasError::invalid(format!(
            "l1_normalize needs nonnegative input, entry {i} is {x}"
        )));
    }
    let total: f64 = v.iter().map(|x| x + eps).sum();
    if total <= 0.0 {
        return Err(DasError::Numerical(
            "l1_normalize of an all-zero vector without smoothing".into(),
        ));
    }
    Ok(v.iter().map(|x| (x + eps) / total).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
