//! A small dense-tensor engine with exactly the forward/backward operations
//! the 3D ENet needs, the two training losses, and Adam.
//!
//! Tensors are row-major `(batch, channel, x, y, z)`. Convolutions are
//! cross-correlations (no kernel flip).

mod activation;
mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
mod layers;
mod loss;
mod pool;
mod real;
mod tensor;

pub use activation::{prelu_bwd, prelu_fwd};
pub use adam::{adam_step, AdamConfig, AdamState, Param};
pub use conv::{conv3d_bwd, conv3d_fwd, conv_transpose3d_bwd, conv_transpose3d_fwd, ConvGrads, ConvSpec};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{glorot_uniform, ChannelAffine, Conv3d, ConvTranspose3d, Ctx, Dropout, Layer, PRelu};
pub use loss::{masked_l2_loss, softmax_xent_loss};
pub use pool::{avg_pool3d_bwd, pool3d, unpool3d, unpool3d_bwd, PoolKind, Pooled};
pub use real::{gemm, Real, Strides};
pub use tensor::Tensor;
