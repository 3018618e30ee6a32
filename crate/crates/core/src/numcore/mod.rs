//! Dense tensors, the detector's differentiable operator set, momentum SGD
//! and a finite-difference gradient checker.

pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod optim;
mod scalar;
mod tensor;

pub use gradcheck::{check_tensor, GradCheckConfig, GradCheckReport, GradStat};
pub use loss::{smooth_l1, softmax, softmax_cross_entropy, softmax_in_place, LossGrad};
pub use ops::{
    conv2d, conv2d_backward, frozen_affine, frozen_affine_backward, linear, linear_backward,
    max_pool2d, max_pool2d_backward, relu, relu_backward, Pooled,
};
pub use optim::{sgd_step, Param, ParamStore};
pub use scalar::{gemm, MatRef, Scalar};
pub use tensor::Tensor;
