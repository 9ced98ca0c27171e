//! From-scratch inference kernels and the weight container.

pub mod conv;
pub mod gru;
pub mod store;
mod tensor;

pub use conv::{
    batch_norm_inference, conv1d_freq, fold_batch_norm, relu_inplace, transposed_conv1d_freq,
    BatchNorm, ConvMode, BN_EPS,
};
pub use gru::{bigru_sequence, gru_cell_step, GruCell, GruWeights};
pub use store::{DType, StoredTensor, TensorData, WeightStore};
pub use tensor::Tensor;

/// One entry of an encoder/decoder configuration: kernel, stride, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

impl LayerSpec {
    pub const fn new(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            kernel,
            stride,
            channels,
        }
    }
}
