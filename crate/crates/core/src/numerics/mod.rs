//! Minimal reverse-mode autodiff over dense f32 tensors, plus the layer
//! set and optimizer used by the encoder, projection head, and policy.

pub mod kernels;
pub mod nn;
pub mod tensor;

pub use kernels::ConvGeom;
pub use nn::{
    build_encoder, clip_grad_norm, conv2d, dense, encode, global_avg_pool, group_norm, gru_cell,
    kaiming_uniform, max_pool2, orthogonal, zeros_param, AdamState, EncoderConfig, FrozenError,
    ParamSet,
};
pub use tensor::{backward, grad_enabled, no_grad, GraphError, ShapeError, Tensor};
