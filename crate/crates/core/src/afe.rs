//! Attribute- and fixation-conditioned fusion of the three feature levels.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::attribute::AttributeScores;
use crate::backbone::MultiLevelFeatures;
use crate::fixation::FixationMap;
use crate::nn::{sigmoid, LayerNorm, Linear, Scope};
use crate::taxonomy::ATTRIBUTE_COUNT;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfeConfig {
    /// Branch weights W_i, shallow to deep.
    pub weights: [f64; 3],
    /// Squeeze-and-excitation bottleneck reduction ratio.
    pub reduction: usize,
}

impl Default for AfeConfig {
    fn default() -> Self {
        Self {
            weights: [1.0, 2.0, 4.0],
            reduction: 4,
        }
    }
}

impl AfeConfig {
    /// Normalisation constant, the sum of the branch weights.
    pub fn m_norm(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("branch weights {:?} must be positive", self.weights)));
        }
        if self.reduction == 0 {
            return Err(Error::Config("SE reduction ratio must be at least 1".into()));
        }
        Ok(())
    }
}

/// Layer-normalised fused tokens `(B, L, C)`.
#[derive(Debug, Clone)]
pub struct FusedFeature {
    pub tokens: Tensor,
}

/// One level's path: projection, SE gate conditioned on the attribute
/// scores, and fixation attention.
struct Branch {
    proj: Linear,
    se_fc1: Linear,
    se_fc2: Linear,
    fix: Linear,
}

impl Branch {
    fn new(scope: &Scope, channels: usize, reduction: usize) -> Result<Self> {
        let hidden = (channels / reduction).max(1);
        Ok(Self {
            proj: Linear::new(&scope.pp("proj"), channels, channels)?,
            se_fc1: Linear::new(&scope.pp("se.fc1"), channels + ATTRIBUTE_COUNT, hidden)?,
            se_fc2: Linear::new(&scope.pp("se.fc2"), hidden, channels)?,
            fix: Linear::new(&scope.pp("fix"), 1, 1)?,
        })
    }

    /// `x * s + branch` with `x = proj(branch)` and channel scales
    /// `s = sigmoid(fc2(relu(fc1([mean_tokens(x), attrs]))))`.
    ///
    /// Concatenating the attribute scores to the squeezed descriptor is how
    /// attribute information reaches the excitation.
    fn gate(&self, branch: &Tensor, attrs: &Tensor) -> Result<Tensor> {
        let x = self.proj.forward(branch)?;
        let squeeze = Tensor::cat(&[&x.mean(1)?, &attrs.to_dtype(x.dtype())?], D::Minus1)?;
        let s = sigmoid(&self.se_fc2.forward(&self.se_fc1.forward(&squeeze)?.relu()?)?)?;
        Ok((x.broadcast_mul(&s.unsqueeze(1)?)? + branch)?)
    }

    fn attend(&self, branch: &Tensor, fix: &FixationMap, cls_present: bool) -> Result<Tensor> {
        let w = token_weights(&self.fix, fix, cls_present)?;
        let (_, l, _) = branch.dims3()?;
        if w.dims()[1] != l {
            return Err(Error::shape("fixation attention tokens", l, w.dims()[1]));
        }
        Ok(branch.broadcast_mul(&w.unsqueeze(2)?)?)
    }
}

/// Per-token multipliers `(B, L)`: a scalar affine map of each cell's
/// fixation value, softmax over the grid, scaled by the number of grid cells
/// so the weights average 1. A leading class token gets weight 1.
///
/// Fixation probabilities are multiplied by the cell count before the affine
/// map so its input is O(1) whatever the grid size. The softmax is written as
/// `e * (n / sum(e))` so that equal inputs give weights of exactly 1.
fn token_weights(lin: &Linear, fix: &FixationMap, cls_present: bool) -> Result<Tensor> {
    let (b, r, c) = fix.logits.dims3()?;
    let n = r * c;
    let v = (fix.prob()?.reshape((b, n, 1))? * n as f64)?;
    let a = lin.forward(&v)?.reshape((b, n))?;
    let e = a.broadcast_sub(&a.max_keepdim(1)?.detach())?.exp()?;
    let scale = Tensor::full(n as f64, (b, 1), a.device())?
        .to_dtype(a.dtype())?
        .broadcast_div(&e.sum_keepdim(1)?)?;
    let w = e.broadcast_mul(&scale)?;
    if cls_present {
        Ok(Tensor::cat(&[&w.ones_like()?.narrow(1, 0, 1)?, &w], 1)?)
    } else {
        Ok(w)
    }
}

pub struct Afe {
    cfg: AfeConfig,
    branches: [Branch; 3],
    ln: LayerNorm,
    channels: usize,
}

impl Afe {
    pub fn new(scope: &Scope, cfg: &AfeConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let b = |i: usize| Branch::new(&scope.pp(format!("branch{i}")), channels, cfg.reduction);
        Ok(Self {
            cfg: cfg.clone(),
            branches: [b(0)?, b(1)?, b(2)?],
            ln: LayerNorm::new(&scope.pp("ln"), channels)?,
            channels,
        })
    }

    fn check(&self, feats: &MultiLevelFeatures, attrs: &AttributeScores) -> Result<()> {
        if feats.channels() != self.channels {
            return Err(Error::shape("AFE channels", self.channels, feats.channels()));
        }
        let want = (feats.batch(), ATTRIBUTE_COUNT);
        if attrs.raw.dims2()? != want {
            return Err(Error::shape("AFE attribute scores", want, attrs.raw.dims()));
        }
        Ok(())
    }

    /// Attribute gate of branch `i` alone.
    pub fn attribute_gate(&self, i: usize, branch: &Tensor, attrs: &AttributeScores) -> Result<Tensor> {
        self.branches[i].gate(branch, &attrs.raw)
    }

    /// Fixation attention of branch `i` alone.
    pub fn fixation_attend(&self, i: usize, branch: &Tensor, fix: &FixationMap, cls_present: bool) -> Result<Tensor> {
        self.branches[i].attend(branch, fix, cls_present)
    }

    /// Gated and fixation-weighted branches, before combination.
    pub fn branch_outputs(&self, feats: &MultiLevelFeatures, attrs: &AttributeScores, fix: &FixationMap) -> Result<[Tensor; 3]> {
        self.check(feats, attrs)?;
        let out = |i: usize| -> Result<Tensor> {
            let g = self.branches[i].gate(&feats.levels[i], &attrs.raw)?;
            self.branches[i].attend(&g, fix, feats.cls_present)
        };
        Ok([out(0)?, out(1)?, out(2)?])
    }

    /// `(1 / M_norm) * sum_i W_i * b_i`, before layer normalisation.
    pub fn combine(&self, branches: &[Tensor; 3]) -> Result<Tensor> {
        combine_branches(branches, &self.cfg.weights)
    }

    pub fn forward(&self, feats: &MultiLevelFeatures, attrs: &AttributeScores, fix: &FixationMap) -> Result<FusedFeature> {
        let b = self.branch_outputs(feats, attrs, fix)?;
        Ok(FusedFeature {
            tokens: self.ln.forward(&self.combine(&b)?)?,
        })
    }
}

/// Weighted mean `sum_i W_i b_i / sum_i W_i`.
///
/// Evaluated as `b_0 + sum_{i>0} (W_i / M)(b_i - b_0)`, which is the same
/// affine combination but returns `b_0` bit for bit when all branches agree.
pub fn combine_branches(branches: &[Tensor; 3], weights: &[f64; 3]) -> Result<Tensor> {
    let m: f64 = weights.iter().sum();
    let mut acc = branches[0].clone();
    for i in 1..3 {
        acc = (acc + ((&branches[i] - &branches[0])? * (weights[i] / m))?)?;
    }
    Ok(acc)
}
