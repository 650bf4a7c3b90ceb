//! Exponential moving average of per-epoch predictions and the one-hot
//! targets derived from it.

use std::path::Path;

use crate::error::{DasError, Result};
use crate::model::{argmax_rows, predict_proba, ModelParams};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    /// Accumulated predictions, `N × C`, zero at start.
    pub z: Tensor,
    /// One-hot targets derived from `z`.
    pub z_tilde: Tensor,
    pub alpha: f64,
    pub epoch_count: usize,
}

impl EnsembleState {
    pub fn new(n: usize, classes: usize, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(DasError::invalid(format!("ensemble momentum must lie in [0, 1), got {alpha}")));
        }
        if n == 0 || classes == 0 {
            return Err(DasError::invalid("ensemble needs at least one document and class"));
        }
        let z = Tensor::zeros(&[n, classes]);
        let z_tilde = to_targets(&z);
        Ok(EnsembleState {
            z,
            z_tilde,
            alpha,
            epoch_count: 0,
        })
    }

    /// `Z ← αZ + (1−α)Z′`, then refreshes the one-hot targets.
    pub fn update(&mut self, z_prime: &Tensor) -> Result<()> {
        update_ensemble(self, z_prime)?;
        self.z_tilde = to_targets(&self.z);
        Ok(())
    }

    /// Targets for the given global document indices.
    pub fn targets_for(&self, indices: &[usize]) -> Tensor {
        let c = self.z_tilde.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.z_tilde.row(i));
        }
        Tensor::matrix(indices.len(), c, data).expect("non-empty batch")
    }

    /// Writes `Z` as little-endian f64 values, row-major.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.z.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes).map_err(|e| DasError::io(path, e))
    }
}

/// Eval-mode predictions for every training document.
pub fn predict_all(params: &ModelParams, union_docs: &[Vec<usize>]) -> Result<Tensor> {
    predict_proba(params, union_docs)
}

/// Exponential moving average step without target refresh.
pub fn update_ensemble(state: &mut EnsembleState, z_prime: &Tensor) -> Result<()> {
    if z_prime.shape() != state.z.shape() {
        return Err(DasError::Shape {
            op: "update_ensemble",
            left: state.z.shape().to_vec(),
            right: z_prime.shape().to_vec(),
        });
    }
    let a = state.alpha;
    for (z, zp) in state.z.data_mut().iter_mut().zip(z_prime.data()) {
        *z = a * *z + (1.0 - a) * zp;
    }
    state.epoch_count += 1;
    Ok(())
}

/// Row-wise argmax as one-hot vectors; ties go to the lowest class.
pub fn to_targets(z: &Tensor) -> Tensor {
    let c = z.cols();
    let mut out = Tensor::zeros(z.shape());
    for (r, k) in argmax_rows(z).into_iter().enumerate() {
        out.data_mut()[r * c + k] = 1.0;
    }
    out
}
