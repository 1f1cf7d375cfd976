use candle_core::Tensor;

use super::layers::{LayerNorm, Linear, Mlp};
use super::ops::softmax_last;
use super::params::Scope;
use crate::{Error, Result};

/// Multi-head scaled dot-product attention. Queries come from a `(B, Lq, Cq)`
/// sequence, keys and values from a `(B, Lk, Ckv)` memory.
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(scope: &Scope, q_dim: usize, kv_dim: usize, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("attention width {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(&scope.pp("q"), q_dim, dim)?,
            k: Linear::new(&scope.pp("k"), kv_dim, dim)?,
            v: Linear::new(&scope.pp("v"), kv_dim, dim)?,
            o: Linear::new(&scope.pp("o"), dim, dim)?,
            heads,
            dim,
        })
    }

    pub fn forward(&self, query: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let (b, lq, _) = query.dims3()?;
        let (_, lk, _) = memory.dims3()?;
        let hd = self.dim / self.heads;
        let split = |t: Tensor, l: usize| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(query)?, lq)?;
        let k = split(self.k.forward(memory)?, lk)?;
        let v = split(self.v.forward(memory)?, lk)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (hd as f64).sqrt()))?;
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, self.dim))?;
        self.o.forward(&out)
    }
}

/// Pre-norm transformer encoder block: self-attention then feed-forward,
/// each with a residual connection.
pub struct SelfAttentionBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl SelfAttentionBlock {
    pub fn new(scope: &Scope, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&scope.pp("ln1"), dim)?,
            attn: MultiHeadAttention::new(&scope.pp("attn"), dim, dim, dim, heads)?,
            ln2: LayerNorm::new(&scope.pp("ln2"), dim)?,
            mlp: Mlp::new(&scope.pp("mlp"), dim, dim * mlp_ratio)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h)?)?;
        Ok((&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// Pre-norm cross-attention block: the query sequence attends to a fixed
/// memory, then passes through a feed-forward layer.
pub struct CrossAttentionBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl CrossAttentionBlock {
    pub fn new(scope: &Scope, dim: usize, memory_dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&scope.pp("ln1"), dim)?,
            attn: MultiHeadAttention::new(&scope.pp("attn"), dim, memory_dim, dim, heads)?,
            ln2: LayerNorm::new(&scope.pp("ln2"), dim)?,
            mlp: Mlp::new(&scope.pp("mlp"), dim, dim * mlp_ratio)?,
        })
    }

    pub fn forward(&self, x: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?, memory)?)?;
        Ok((&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?)
    }
}
