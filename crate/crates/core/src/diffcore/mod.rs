//! Dense tensors and tape-based reverse-mode differentiation.

mod conv;
mod gaussian;
mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use conv::conv2d;
pub use gaussian::{
    kl_diag_gaussian, reparam_sample, DiagGaussian, GaussianVar, LOG_STD_MAX, LOG_STD_MIN,
};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use params::{Param, ParamStore};
pub use scalar::Real;
pub use tensor::{logsumexp, matmul, Tensor};
