use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};

/// Epoch means of the loss components plus the dev error at epoch end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l: f64,
    pub j: f64,
    pub gamma: f64,
    pub omega: f64,
    /// Bootstrapping weight actually applied (0 when skipped).
    pub w_t: f64,
    pub total: f64,
    pub dev_error: f64,
    pub seconds: f64,
    pub bootstrap_skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_error: f64,
}

pub const CSV_HEADER: &str = "epoch,L,J,Gamma,Omega,w_t,total,dev_error,seconds";

impl History {
    pub fn dev_errors(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.dev_error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch, e.l, e.j, e.gamma, e.omega, e.w_t, e.total, e.dev_error, e.seconds
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| DasError::io(path, e))
    }
}

/// 1-based epoch with the lowest dev error; ties go to the earliest.
pub fn select_best_epoch(dev_errors: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &e) in dev_errors.iter().enumerate() {
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((i + 1, e));
        }
    }
    best.map(|(i, _)| i)
}
