//! Shared-space projectors, the consistency loss and the weighted total.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::afe::FusedFeature;
use crate::nn::{l2_normalize_rows, to_vec_f64, Linear, Scope};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// The four loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mask: f64,
    pub fix: f64,
    pub attr: f64,
    pub consist: f64,
    pub total: f64,
}

/// `total = mask + alpha fix + beta attr + gamma consist`; errors name the
/// first non-finite term.
pub fn total_loss(parts: [f64; 4], w: &LossWeights) -> Result<LossBreakdown> {
    let [mask, fix, attr, consist] = parts;
    for (term, v) in [("mask", mask), ("fix", fix), ("attr", attr), ("consist", consist)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { term });
        }
    }
    Ok(LossBreakdown {
        mask,
        fix,
        attr,
        consist,
        total: mask + w.alpha * fix + w.beta * attr + w.gamma * consist,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Shared latent width D_s.
    pub shared_dim: usize,
    pub hidden: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            shared_dim: 256,
            hidden: 512,
        }
    }
}

/// `Linear -> ReLU -> Linear`, then row-wise L2 normalisation.
pub struct Projector {
    fc1: Linear,
    fc2: Linear,
}

impl Projector {
    pub fn new(scope: &Scope, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&scope.pp("fc1"), in_dim, hidden)?,
            fc2: Linear::new(&scope.pp("fc2"), hidden, out_dim)?,
        })
    }

    /// `(B, in) -> (B, D_s)` unit rows; an all-zero row maps to `e_1`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        l2_normalize_rows(&self.fc2.forward(&self.fc1.forward(x)?.relu()?)?)
    }

    /// Mean-pools fused tokens, then projects.
    pub fn project_visual(&self, fused: &FusedFeature) -> Result<Tensor> {
        self.forward(&fused.tokens.mean(1)?)
    }
}

/// `1 - <v, t>` per row, averaged over the batch. Inputs are `(B, D_s)`
/// unit rows.
pub fn consistency_loss(v: &Tensor, t: &Tensor) -> Result<Tensor> {
    if v.dims() != t.dims() || v.rank() != 2 {
        return Err(Error::shape("consistency loss", v.dims(), t.dims()));
    }
    for x in [v, t] {
        if to_vec_f64(x)?.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite { term: "consist" });
        }
    }
    let t = t.to_dtype(v.dtype())?;
    Ok((1.0 - (v * t)?.sum(1)?)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamStore};
    use candle_core::{DType, Device};

    #[test]
    fn breakdown_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(total_loss([1.0; 4], &w).unwrap().total, 4.0);
        let zero = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 };
        assert_eq!(total_loss([0.7, 5.0, 6.0, 7.0], &zero).unwrap().total, 0.7);
        let w = LossWeights { alpha: 1.0, beta: 2.0, gamma: 3.0 };
        assert!((total_loss([0.5, 0.2, 0.1, 0.3], &w).unwrap().total - 1.8).abs() < 1e-12);
        match total_loss([0.5, f64::NAN, 0.1, 0.3], &w) {
            Err(Error::NonFinite { term }) => assert_eq!(term, "fix"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn consistency_extremes() {
        let dev = Device::Cpu;
        let v = Tensor::new(&[[0.6f64, 0.8]], &dev).unwrap();
        let l = |a: &Tensor, b: &Tensor| consistency_loss(a, b).unwrap().to_scalar::<f64>().unwrap();
        assert!(l(&v, &v).abs() < 1e-15);
        assert!((l(&v, &v.neg().unwrap()) - 2.0).abs() < 1e-15);
        let bad = Tensor::new(&[[f64::NAN, 0.0]], &dev).unwrap();
        assert!(consistency_loss(&v, &bad).is_err());
    }

    #[test]
    fn zero_input_with_zero_biases_maps_to_first_axis() {
        let store = ParamStore::new(DType::F64, 0);
        let s = store.root();
        let p = Projector {
            fc1: Linear::with_init(&s.pp("fc1"), 4, 8, Init::Normal(1.0), Some(Init::Zeros)).unwrap(),
            fc2: Linear::with_init(&s.pp("fc2"), 8, 3, Init::Normal(1.0), Some(Init::Zeros)).unwrap(),
        };
        let out = p.forward(&Tensor::zeros((2, 4), DType::F64, &Device::Cpu).unwrap()).unwrap();
        assert_eq!(out.to_vec2::<f64>().unwrap(), vec![vec![1.0, 0.0, 0.0]; 2]);
    }
}
