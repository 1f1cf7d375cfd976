use candle_core::{Tensor, Var, D};

use super::ops::Mode;
use super::params::{Init, Scope};
use crate::{Error, Result};

/// Affine map over the last dimension. The weight is stored `(in, out)`.
#[derive(Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialisation for weight and bias.
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self::with_init(scope, in_dim, out_dim, Init::Uniform(bound), Some(Init::Uniform(bound)))
    }

    pub fn with_init(scope: &Scope, in_dim: usize, out_dim: usize, w: Init, b: Option<Init>) -> Result<Self> {
        let weight = scope.param("weight", &[in_dim, out_dim], w)?;
        let bias = match b {
            Some(init) => Some(scope.param("bias", &[out_dim], init)?),
            None => None,
        };
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| Error::shape("linear input", self.in_dim, "scalar"))?;
        if last != self.in_dim {
            return Err(Error::shape("linear input features", self.in_dim, last));
        }
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, self.in_dim))?.matmul(&self.weight)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out)?)
    }
}

/// Layer normalisation over the last dimension.
#[derive(Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.param("gamma", &[dim], Init::Ones)?,
            beta: scope.param("beta", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Batch normalisation over the channel axis (axis 1) of `(B, C)` or
/// `(B, C, H, W)` inputs, with running statistics for evaluation.
pub struct BatchNorm {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    channels: usize,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: scope.param("gamma", &[channels], Init::Ones)?,
            beta: scope.param("beta", &[channels], Init::Zeros)?,
            running_mean: scope.buffer("running_mean", &[channels], Init::Zeros)?,
            running_var: scope.buffer("running_var", &[channels], Init::Ones)?,
            channels,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &Mode) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        if dims.len() < 2 || dims[1] != self.channels {
            return Err(Error::shape("batch norm channels", self.channels, dims));
        }
        // Broadcast shape (1, C, 1, ...).
        let mut bshape = vec![1usize; dims.len()];
        bshape[1] = self.channels;
        let reduce: Vec<usize> = (0..dims.len()).filter(|&d| d != 1).collect();
        let (mean, var) = if mode.train {
            let n: usize = reduce.iter().map(|&d| dims[d]).product();
            if n < 2 {
                return Err(Error::Config("batch norm in training mode needs more than one value per channel".into()));
            }
            let mean = x.mean_keepdim(reduce.as_slice())?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(reduce.as_slice())?;
            let m = self.momentum;
            let unbiased = (var.detach().flatten_all()? * (n as f64 / (n - 1) as f64))?;
            let rm = ((self.running_mean.as_detached_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
            let rv = ((self.running_var.as_detached_tensor() * (1.0 - m))? + (unbiased * m)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_detached_tensor().reshape(bshape.as_slice())?,
                self.running_var.as_detached_tensor().reshape(bshape.as_slice())?,
            )
        };
        let xn = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let g = self.gamma.reshape(bshape.as_slice())?;
        let b = self.beta.reshape(bshape.as_slice())?;
        Ok(xn.broadcast_mul(&g)?.broadcast_add(&b)?)
    }
}

/// How a convolution treats pixels beyond the border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    /// Repeat the edge pixel; a constant input stays constant.
    Replicate,
}

/// Square-kernel, stride-1, same-size 2-D convolution on `(B, C, H, W)`.
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    kernel: usize,
    padding: Padding,
}

impl Conv2d {
    pub fn new(scope: &Scope, in_c: usize, out_c: usize, kernel: usize, padding: Padding, bias: bool) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("convolution kernel must be odd, got {kernel}")));
        }
        let bound = 1.0 / ((in_c * kernel * kernel) as f64).sqrt();
        let weight = scope.param("weight", &[out_c, in_c, kernel, kernel], Init::Uniform(bound))?;
        let bias = if bias {
            Some(scope.param("bias", &[out_c], Init::Uniform(bound))?)
        } else {
            None
        };
        Ok(Self { weight, bias, kernel, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.kernel / 2;
        let y = match self.padding {
            Padding::Zeros => x.conv2d(&self.weight, p, 1, 1, 1)?,
            Padding::Replicate if p > 0 => {
                let xp = x.pad_with_same(2, p, p)?.pad_with_same(3, p, p)?;
                xp.conv2d(&self.weight, 0, 1, 1, 1)?
            }
            Padding::Replicate => x.conv2d(&self.weight, 0, 1, 1, 1)?,
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Two-layer feed-forward block with GELU.
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(scope: &Scope, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(&scope.pp("fc1"), dim, hidden)?,
            fc2: Linear::new(&scope.pp("fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)
    }
}
