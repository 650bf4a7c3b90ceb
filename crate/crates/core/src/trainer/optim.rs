use crate::error::{DasError, Result};
use crate::numerics::Tensor;

/// One RMSProp update, in place:
/// `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − lr·g / (√s + eps)`.
pub fn rmsprop_step(param: &mut [f64], grad: &[f64], state: &mut [f64], lr: f64, rho: f64, eps: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.len() {
        return Err(DasError::Shape {
            op: "rmsprop_step",
            left: vec![param.len()],
            right: vec![grad.len(), state.len()],
        });
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(DasError::Numerical(format!("non-finite gradient {g}")));
    }
    for ((p, g), s) in param.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = rho * *s + (1.0 - rho) * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

/// RMSProp accumulators for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    state: Vec<Tensor>,
}

impl RmsProp {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, lr: f64, rho: f64, eps: f64) -> Self {
        RmsProp {
            lr,
            rho,
            eps,
            state: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn state(&self) -> &[Tensor] {
        &self.state
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.state.len() || grads.len() != self.state.len() {
            return Err(DasError::invalid("optimizer parameter count changed"));
        }
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.state.iter_mut()) {
            rmsprop_step(p.data_mut(), g.data(), s.data_mut(), self.lr, self.rho, self.eps)?;
        }
        Ok(())
    }
}
