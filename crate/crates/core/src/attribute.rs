//! Attribute-contribution head and its regression loss.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::backbone::MultiLevelFeatures;
use crate::nn::{to_vec_f64, BatchNorm, LayerNorm, Linear, Mode, Scope};
use crate::taxonomy::ATTRIBUTE_COUNT;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeHeadConfig {
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for AttributeHeadConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            dropout: 0.1,
        }
    }
}

/// Raw head output `(B, 17)`, the space the loss is computed in.
#[derive(Debug, Clone)]
pub struct AttributeScores {
    pub raw: Tensor,
}

impl AttributeScores {
    /// Reporting view of every row, see [`proportions`].
    pub fn proportions(&self) -> Result<Vec<Vec<f64>>> {
        let (b, k) = self.raw.dims2()?;
        let v = to_vec_f64(&self.raw)?;
        Ok((0..b).map(|i| proportions(&v[i * k..(i + 1) * k])).collect())
    }
}

/// Clamps at zero and rescales to unit sum; uniform when nothing is positive.
pub fn proportions(raw: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = raw.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let s: f64 = clamped.iter().sum();
    if s > 0.0 && s.is_finite() {
        clamped.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// `Linear(Dropout(ReLU(BN(Linear(mean_tokens(Cat[LN(F0), LN(F1), LN(F2)]))))))`.
pub struct AttributeHead {
    ln: [LayerNorm; 3],
    fc1: Linear,
    bn: BatchNorm,
    fc2: Linear,
    dropout: f64,
    channels: usize,
}

impl AttributeHead {
    pub fn new(scope: &Scope, cfg: &AttributeHeadConfig, channels: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", cfg.dropout)));
        }
        Ok(Self {
            ln: [
                LayerNorm::new(&scope.pp("ln0"), channels)?,
                LayerNorm::new(&scope.pp("ln1"), channels)?,
                LayerNorm::new(&scope.pp("ln2"), channels)?,
            ],
            fc1: Linear::new(&scope.pp("fc1"), 3 * channels, cfg.hidden)?,
            bn: BatchNorm::new(&scope.pp("bn"), cfg.hidden)?,
            fc2: Linear::new(&scope.pp("fc2"), cfg.hidden, ATTRIBUTE_COUNT)?,
            dropout: cfg.dropout,
            channels,
        })
    }

    pub fn forward(&self, feats: &MultiLevelFeatures, mode: &Mode) -> Result<AttributeScores> {
        if feats.channels() != self.channels {
            return Err(Error::shape("attribute head channels", self.channels, feats.channels()));
        }
        let normed: Vec<Tensor> = feats
            .levels
            .iter()
            .zip(&self.ln)
            .map(|(f, ln)| ln.forward(f))
            .collect::<Result<_>>()?;
        let pooled = Tensor::cat(&normed, D::Minus1)?.mean(1)?;
        let h = self.bn.forward(&self.fc1.forward(&pooled)?, mode)?.relu()?;
        let h = mode.dropout(&h, self.dropout)?;
        Ok(AttributeScores { raw: self.fc2.forward(&h)? })
    }
}

/// Mean squared error between raw scores and target proportions `(B, 17)`.
pub fn attribute_loss(pred: &AttributeScores, target: &Tensor) -> Result<Tensor> {
    let dims = pred.raw.dims();
    if dims.len() != 2 || dims[1] != ATTRIBUTE_COUNT || target.dims() != dims {
        return Err(Error::shape("attribute loss", pred.raw.dims(), target.dims()));
    }
    Ok((&pred.raw - target.to_dtype(pred.raw.dtype())?)?.sqr()?.mean_all()?)
}
