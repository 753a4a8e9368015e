//! Dense tensors and layers with hand-written reverse-mode gradients.

pub mod attention;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tensor;
pub mod transformer;

pub use attention::{multi_head_attention, MultiHeadAttention};
pub use gradcheck::{grad_check, grad_check_detailed};
pub use layers::{gelu, layer_norm, linear_forward, softmax_row, Gelu, L2Normalize, Layer, LayerNorm, Linear, Mlp, Relu, Softmax};
pub use params::Parameterized;
pub use tensor::{dot, l2_norm, Tensor};
pub use transformer::{FeedForward, Stack, TransformerBlock};
