//! Tensors, the differentiable primitives the recolorization network is
//! built from, and the ADAM optimizer.

mod adam;
mod conv;
mod gemm;
mod ops;
mod tape;
mod tensor;

pub use adam::{AdamConfig, ParamTensor};
pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGrads, ConvSpec};
pub use ops::{
    add_elementwise, concat_channels, maxpool2d, maxpool2d_backward, mse_loss, mse_loss_backward, relu,
    relu_backward, slice_channels,
};
pub use tape::{Gradients, ParamKey, Tape, Var};
pub use tensor::Tensor;
