//! CNN building blocks: tensors flow through pure forward/backward kernels.
//! No training logic lives here.

pub mod activation;
pub mod conv;
pub mod dense;
mod gemm;
pub mod loss;
pub mod lrn;
pub mod network;
pub mod pool;

pub use activation::{relu_backward, relu_forward, softmax};
pub use conv::{conv_backward, conv_forward, ConvGradients};
pub use dense::{dense_backward, dense_forward, DenseGradients};
pub use loss::{cross_entropy_loss, softmax_cross_entropy_grad, LossBatch};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use network::{LayerSpec, Mode, Network, NetworkSpec, ParamShape, Tape, CROP_SIZE};
pub use pool::{maxpool_backward, maxpool_forward};
