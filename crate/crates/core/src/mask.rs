//! Mask decoder and the boundary-weighted BCE + IoU loss.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::afe::FusedFeature;
use crate::nn::{log1p_exp_neg_abs, resample::resize_bilinear, sigmoid, BatchNorm, Conv2d, Mode, Padding, Scope, SelfAttentionBlock};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskDecoderConfig {
    /// Self-attention decoder iterations (M_dec).
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Width of the conv-BN-ReLU stage.
    pub conv_channels: usize,
}

impl Default for MaskDecoderConfig {
    fn default() -> Self {
        Self {
            blocks: 1,
            heads: 4,
            mlp_ratio: 2,
            conv_channels: 64,
        }
    }
}

/// Mask logits `(B, H, W)` at image resolution.
#[derive(Debug, Clone)]
pub struct MaskLogits {
    pub logits: Tensor,
}

impl MaskLogits {
    pub fn prob(&self) -> Result<Tensor> {
        sigmoid(&self.logits)
    }
}

pub struct MaskDecoder {
    blocks: Vec<SelfAttentionBlock>,
    conv1: Conv2d,
    bn: BatchNorm,
    conv2: Conv2d,
}

impl MaskDecoder {
    pub fn new(scope: &Scope, cfg: &MaskDecoderConfig, channels: usize) -> Result<Self> {
        if cfg.blocks == 0 {
            return Err(Error::Config("mask decoder needs at least one block".into()));
        }
        Ok(Self {
            blocks: (0..cfg.blocks)
                .map(|i| SelfAttentionBlock::new(&scope.pp(format!("blocks.{i}")), channels, cfg.heads, cfg.mlp_ratio))
                .collect::<Result<_>>()?,
            conv1: Conv2d::new(&scope.pp("cbr.conv"), channels, cfg.conv_channels, 3, Padding::Zeros, false)?,
            bn: BatchNorm::new(&scope.pp("cbr.bn"), cfg.conv_channels)?,
            conv2: Conv2d::new(&scope.pp("out"), cfg.conv_channels, 1, 3, Padding::Zeros, true)?,
        })
    }

    /// Decoder blocks over all tokens, then the grid tokens (class token
    /// dropped) go through conv-BN-ReLU, a x4 bilinear upsampling, a 1-channel
    /// convolution and a final bilinear resize to `image_size`.
    pub fn forward(&self, fused: &FusedFeature, grid: (usize, usize), cls_present: bool, image_size: usize, mode: &Mode) -> Result<MaskLogits> {
        let (b, l, c) = fused.tokens.dims3()?;
        let (rows, cols) = grid;
        let offset = usize::from(cls_present);
        if rows * cols + offset != l {
            return Err(Error::shape("mask decoder grid", rows * cols + offset, l));
        }
        let mut x = fused.tokens.clone();
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let x = x.narrow(1, offset, rows * cols)?.transpose(1, 2)?.contiguous()?.reshape((b, c, rows, cols))?;
        let x = self.bn.forward(&self.conv1.forward(&x)?, mode)?.relu()?;
        let x = resize_bilinear(&x, 4 * rows, 4 * cols)?;
        let x = self.conv2.forward(&x)?;
        let x = resize_bilinear(&x, image_size, image_size)?;
        Ok(MaskLogits {
            logits: x.reshape((b, image_size, image_size))?,
        })
    }
}

/// Pooling window of the boundary weights: 31 at 336 px, scaled with the
/// image side and kept odd, at least 3.
pub fn loss_kernel(image_size: usize) -> usize {
    let k = ((31.0 * image_size as f64 / 336.0).round() as usize).max(3);
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Pixel weights `1 + 5 |avgpool_k(gt) - gt|` for a `(B, H, W)` mask, with
/// zero padding counted in the average.
pub fn boundary_weights(gt: &Tensor, kernel: usize) -> Result<Tensor> {
    let (b, h, w) = gt.dims3()?;
    // Differencing the window sums before scaling keeps uniform binary
    // windows at exactly zero (scalar division multiplies by a reciprocal).
    let area = (kernel * kernel) as f64;
    let ones = Tensor::ones((1, 1, kernel, kernel), gt.dtype(), gt.device())?;
    let sums = gt.reshape((b, 1, h, w))?.conv2d(&ones, kernel / 2, 1, 1, 1)?.reshape((b, h, w))?;
    Ok((((sums - (gt * area)?)?.abs()? * (5.0 / area))? + 1.0)?)
}

/// Weighted BCE plus weighted IoU, averaged over the batch:
///
/// `sum(w * bce) / sum(w) + 1 - (sum(w p g) + 1) / (sum(w (p + g - p g)) + 1)`
pub fn mask_loss(pred: &MaskLogits, gt: &Tensor, kernel: usize) -> Result<Tensor> {
    let x = &pred.logits;
    if x.dims() != gt.dims() || x.rank() != 3 {
        return Err(Error::shape("mask loss target", x.dims(), gt.dims()));
    }
    let g = gt.to_dtype(x.dtype())?;
    let w = boundary_weights(&g, kernel)?.detach();
    let bce = ((x.relu()? - (x * &g)?)? + log1p_exp_neg_abs(x)?)?;
    let wsum = w.sum((1, 2))?;
    let wbce = ((&w * bce)?.sum((1, 2))? / &wsum)?;
    let p = sigmoid(x)?;
    let inter = (&w * (&p * &g)?)?.sum((1, 2))?;
    let union = (&w * ((&p + &g)? - (&p * &g)?)?)?.sum((1, 2))?;
    let wiou = (1.0 - ((inter + 1.0)? / (union + 1.0)?)?)?;
    Ok((wbce + wiou)?.mean_all()?)
}

/// `(B, H, W)` mask tensor from `{0, 1}` rasters.
pub fn mask_tensor(masks: &[&ndarray::Array2<u8>], dtype: DType) -> Result<Tensor> {
    let (h, w) = masks[0].dim();
    let data: Vec<f32> = masks.iter().flat_map(|m| m.iter().map(|&v| v as f32)).collect();
    Ok(Tensor::from_vec(data, (masks.len(), h, w), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}
