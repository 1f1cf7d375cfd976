//! Fixation prediction over the patch grid and its KL + correlation loss.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::backbone::MultiLevelFeatures;
use crate::nn::{softmax_last, Conv2d, CrossAttentionBlock, Init, LayerNorm, Linear, MultiHeadAttention, Padding, Scope};
use crate::{Error, Result};

/// Smoothing constant inside the logarithms of the KL term.
pub const KL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixationDecoderConfig {
    /// Number of cascaded decoder blocks (N).
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Side of the final convolution; replicate padding keeps the grid size.
    pub conv_kernel: usize,
}

impl Default for FixationDecoderConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            heads: 4,
            mlp_ratio: 2,
            conv_kernel: 3,
        }
    }
}

impl FixationDecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("fixation decoder needs at least one block".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("fixation convolution kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Predicted fixation logits `(B, rows, cols)`.
#[derive(Debug, Clone)]
pub struct FixationMap {
    pub logits: Tensor,
}

impl FixationMap {
    pub fn grid(&self) -> Result<(usize, usize)> {
        let (_, r, c) = self.logits.dims3()?;
        Ok((r, c))
    }

    /// Spatial softmax over each grid, `(B, rows, cols)`.
    pub fn prob(&self) -> Result<Tensor> {
        let (b, r, c) = self.logits.dims3()?;
        Ok(softmax_last(&self.logits.reshape((b, r * c))?)?.reshape((b, r, c))?)
    }
}

/// Cross-attention decoder: the deepest level queries the concatenation of
/// all three layer-normalised levels.
pub struct FixationDecoder {
    ln: [LayerNorm; 3],
    entry: MultiHeadAttention,
    pos: Tensor,
    blocks: Vec<CrossAttentionBlock>,
    head: Linear,
    conv: Conv2d,
    channels: usize,
    tokens: usize,
}

impl FixationDecoder {
    pub fn new(scope: &Scope, cfg: &FixationDecoderConfig, tokens: usize, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let ln = [0, 1, 2].map(|i| LayerNorm::new(&scope.pp(format!("ln{i}")), channels));
        let [a, b, c] = ln;
        Ok(Self {
            ln: [a?, b?, c?],
            entry: MultiHeadAttention::new(&scope.pp("entry"), channels, 3 * channels, channels, cfg.heads)?,
            pos: scope.param("pos", &[1, tokens, channels], Init::Normal(0.02))?,
            blocks: (0..cfg.blocks)
                .map(|i| CrossAttentionBlock::new(&scope.pp(format!("blocks.{i}")), channels, 3 * channels, cfg.heads, cfg.mlp_ratio))
                .collect::<Result<_>>()?,
            head: Linear::new(&scope.pp("head"), channels, 1)?,
            conv: Conv2d::new(&scope.pp("conv"), 1, 1, cfg.conv_kernel, Padding::Replicate, true)?,
            channels,
            tokens,
        })
    }

    pub fn forward(&self, feats: &MultiLevelFeatures) -> Result<FixationMap> {
        let (b, l, c) = feats.levels[2].dims3()?;
        if (l, c) != (self.tokens, self.channels) {
            return Err(Error::shape("fixation decoder input (tokens, channels)", (self.tokens, self.channels), (l, c)));
        }
        let normed: Vec<Tensor> = feats
            .levels
            .iter()
            .zip(&self.ln)
            .map(|(f, ln)| ln.forward(f))
            .collect::<Result<_>>()?;
        let memory = Tensor::cat(&normed, D::Minus1)?;
        let query = &feats.levels[2];
        let mut x = (self.entry.forward(query, &memory)? + &normed[2])?.broadcast_add(&self.pos)?;
        for block in &self.blocks {
            x = block.forward(&x, &memory)?;
        }
        let mut s = self.head.forward(&x)?.squeeze(D::Minus1)?;
        if feats.cls_present {
            s = s.narrow(1, 1, l - 1)?;
        }
        let (rows, cols) = feats.grid;
        let grid = s.reshape((b, 1, rows, cols))?;
        Ok(FixationMap {
            logits: self.conv.forward(&grid)?.reshape((b, rows, cols))?,
        })
    }
}

/// `KL(gt || pred) + (1 - CC(pred, gt))`, averaged over the batch.
///
/// `gt` is `(B, rows, cols)` with each grid summing to 1. Both maps are
/// smoothed as `(x + eps) / (1 + n eps)` before the KL term, which keeps
/// them distributions and the divergence nonnegative. CC is the Pearson
/// correlation of the flattened grids; two constant grids correlate
/// perfectly (1), a constant against a varying grid not at all (0).
pub fn fixation_loss(pred: &FixationMap, gt: &Tensor) -> Result<Tensor> {
    let (b, r, c) = pred.logits.dims3()?;
    if gt.dims() != [b, r, c] {
        return Err(Error::shape("fixation loss target", (b, r, c), gt.dims()));
    }
    let n = r * c;
    let p = softmax_last(&pred.logits.reshape((b, n))?)?;
    let g = gt.reshape((b, n))?.to_dtype(p.dtype())?;

    let z = 1.0 + n as f64 * KL_EPS;
    let ps = ((&p + KL_EPS)? / z)?;
    let gs = ((&g + KL_EPS)? / z)?;
    let kl = (&gs * (gs.log()? - ps.log()?)?)?.sum(1)?;

    let pc = p.broadcast_sub(&p.mean_keepdim(1)?)?;
    let gc = g.broadcast_sub(&g.mean_keepdim(1)?)?;
    let spp = pc.sqr()?.sum(1)?;
    let sgg = gc.sqr()?.sum(1)?;
    let spg = (&pc * &gc)?.sum(1)?;
    let cc = (spg / ((&spp * &sgg)? + 1e-30)?.sqrt()?)?;
    let flat_p = spp.le(1e-24)?;
    let flat_g = sgg.le(1e-24)?;
    let ones = cc.ones_like()?;
    let zeros = cc.zeros_like()?;
    let both = (flat_p.to_dtype(cc.dtype())? * flat_g.to_dtype(cc.dtype())?)?.ne(0.0)?;
    let either = (flat_p.to_dtype(cc.dtype())? + flat_g.to_dtype(cc.dtype())?)?.ne(0.0)?;
    let cc = both.where_cond(&ones, &either.where_cond(&zeros, &cc)?)?;

    Ok((kl + (1.0 - cc)?)?.mean_all()?)
}
