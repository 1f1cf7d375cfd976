//! Minimal neural-network toolkit on top of `candle-core` tensors.

mod adam;
mod attention;
mod layers;
mod ops;
mod params;
pub mod resample;

pub use adam::{Adam, AdamConfig};
pub use attention::{CrossAttentionBlock, MultiHeadAttention, SelfAttentionBlock};
pub use layers::{BatchNorm, Conv2d, LayerNorm, Linear, Mlp, Padding};
pub use ops::{l2_normalize_rows, log1p_exp_neg_abs, mean_tokens, sigmoid, softmax_last, Mode};
#[allow(unused_imports)]
pub(crate) use ops::{scalar_f64, to_vec_f64};
pub use params::{Init, ParamKind, ParamStore, Scope};
