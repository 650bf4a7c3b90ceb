//! Dense tensors, a reverse-mode tape and a finite-difference gradient oracle.

mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradients, grad_check, grad_check_against, relative_error, GradCheckReport,
    REL_ERROR_FLOOR,
};
pub use ops::{affine, dropout, l1_normalize, max_over_time, relu, softmax};
pub use tape::{mmd_rbf_value, symmetric_kl_value, Gradients, Tape, Var};
pub use tensor::Tensor;
