//! Central finite-difference check of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{DasError, Result};

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index)` of the coordinate with the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(loss_fn: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf_ref(p)).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(DasError::Numerical(format!("loss evaluated to {value}")));
    }
    Ok(value)
}

/// Loss value and reverse-mode gradients for every parameter.
pub fn analytic_gradients<F>(loss_fn: &F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf_ref(p)).collect();
    let out = loss_fn(&mut tape, &vars)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(DasError::Numerical(format!("loss evaluated to {value}")));
    }
    let mut grads = tape.backward(out)?;
    Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
}

/// Compares tape gradients of `loss_fn` against `(f(θ+h) − f(θ−h)) / 2h`
/// on every coordinate of every parameter.
pub fn grad_check<F>(loss_fn: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&loss_fn, params)?;
    grad_check_against(loss_fn, params, &analytic, h, tol)
}

/// Like [`grad_check`] but with caller-supplied analytic gradients.
pub fn grad_check_against<F>(
    loss_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(DasError::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    if analytic.len() != params.len() {
        return Err(DasError::invalid("one analytic gradient per parameter is required"));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol,
    };
    for p in 0..params.len() {
        if analytic[p].shape() != params[p].shape() {
            return Err(DasError::Shape {
                op: "grad_check",
                left: analytic[p].shape().to_vec(),
                right: params[p].shape().to_vec(),
            });
        }
        for k in 0..params[p].len() {
            let original = params[p].data()[k];
            work[p].data_mut()[k] = original + h;
            let plus = evaluate(&loss_fn, &work)?;
            work[p].data_mut()[k] = original - h;
            let minus = evaluate(&loss_fn, &work)?;
            work[p].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[p].data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((p, k));
            }
        }
    }
    Ok(report)
}
