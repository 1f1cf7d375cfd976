//! Differentiable primitives composed from basic tensor ops.

use std::cell::RefCell;

use candle_core::{DType, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// `1 / (1 + exp(-x))`. Saturates to exactly 0 and 1 for large `|x|`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Softmax over the last dimension, max-shifted for stability.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Numerically stable `ln(1 + exp(-|x|))`.
pub fn log1p_exp_neg_abs(x: &Tensor) -> Result<Tensor> {
    Ok((x.abs()?.neg()?.exp()? + 1.0)?.log()?)
}

/// Row-wise L2 normalisation of a `(B, D)` tensor. Rows whose norm is zero
/// map to the first basis vector `e_1`.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let (b, d) = x.dims2()?;
    let sumsq = x.sqr()?.sum_keepdim(1)?;
    let zero_row = sumsq.eq(0.0)?;
    let norm = (sumsq + 1e-24)?.sqrt()?;
    let normalized = x.broadcast_div(&norm)?;
    let mut e1 = vec![0f64; d];
    e1[0] = 1.0;
    let e1 = Tensor::from_vec(e1, (1, d), x.device())?
        .to_dtype(x.dtype())?
        .broadcast_as((b, d))?;
    let mask = zero_row.broadcast_as((b, d))?;
    Ok(mask.where_cond(&e1, &normalized)?)
}

/// Mean over dimension 1 of a `(B, L, C)` tensor.
pub fn mean_tokens(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(1)?)
}

/// Train/eval switch plus the random stream used by dropout.
pub struct Mode {
    pub train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Mode {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Inverted dropout with keep-probability `1 - p`; identity in eval mode.
    pub fn dropout(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let n = x.elem_count();
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { (1.0 / keep) as f32 } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok((x * mask)?)
    }
}

pub(crate) fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub(crate) fn to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}
