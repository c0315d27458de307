//! Minimal dense-tensor layer library with exact backpropagation.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod params;
pub mod pool;
pub mod tensor;

pub use activation::{activation_backward, activation_forward, sigmoid, softplus, Activation};
pub use conv::{
    conv2d_backward, conv2d_forward, transposed_conv2d_backward, transposed_conv2d_forward,
    ConvGrads, Padding,
};
pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, GradCheckReport, KINK_TOLERANCE};
pub use params::{
    checkpoint_bytes, read_checkpoint, sgd_step, write_checkpoint, LayerKind, LayerSpec,
    NetworkParams, ParamBlock,
};
pub use pool::{maxpool2, maxpool2_backward};
pub use tensor::{Real, Tensor};
