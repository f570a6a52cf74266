//! Dense tensors, differentiable operations with explicit backward passes,
//! the Adam optimizer and a finite-difference gradient checker.

mod activation;
mod adam;
mod conv;
mod gradcheck;
mod loss;
mod pool;
mod resize;
mod tensor;

pub use activation::{concat, concat_backward, crop_plane, pad_plane, relu, relu_backward};
pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use conv::{
    collapse_conv, collapse_conv_backward, conv2d, conv2d_backward, conv3d, conv3d_backward, ConvGrads,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use loss::{softmax, softmax_ce};
pub use pool::{pool2d, pool2d_backward, uni_pool_h, uni_pool_h_backward, upsample2d, upsample2d_backward, PoolMode};
pub use resize::{resize_h_linear, resize_h_linear_backward};
pub use tensor::{Param, Tensor, MAX_RANK};
