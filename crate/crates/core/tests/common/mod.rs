#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

pub fn tensor(v: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

/// Analytic gradient of `f` at `x` (shape `shape`) through candle autograd.
pub fn analytic_grad(x: &[f64], shape: &[usize], f: &dyn Fn(&Tensor) -> Tensor) -> Vec<f64> {
    let var = Var::from_tensor(&tensor(x, shape)).unwrap();
    let loss = f(var.as_tensor());
    let grads = loss.backward().unwrap();
    values(grads.get(var.as_tensor()).expect("gradient reaches the input"))
}

/// Central differences with step `h`.
pub fn numeric_grad(x: &[f64], shape: &[usize], h: f64, f: &dyn Fn(&Tensor) -> Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = scalar(&f(&tensor(&xp, shape)));
        xp[i] = orig - h;
        let fm = scalar(&f(&tensor(&xp, shape)));
        xp[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// `|a - n| / max(|a|, |n|)` over the whole gradient vector.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// A model small enough for tests that train: 32 px input on a 4x4 grid,
/// 32 channels, three encoder layers.
pub fn micro_config() -> camoseg::config::TrainConfig {
    let mut cfg = camoseg::config::TrainConfig::toy();
    cfg.epochs = 3;
    cfg.lr_decay_epoch = 2;
    cfg.batch_size = 4;
    let bb = &mut cfg.backbone;
    bb.image_size = 32;
    bb.channels = 32;
    bb.depth = 3;
    bb.heads = 2;
    bb.tap_layers = [1, 2, 3];
    bb.text_dim = 16;
    bb.vocab = 256;
    cfg.fixation.blocks = 1;
    cfg.fixation.heads = 2;
    cfg.mask.heads = 2;
    cfg.mask.conv_channels = 8;
    cfg.attribute.hidden = 16;
    cfg.objective.shared_dim = 8;
    cfg.objective.hidden = 16;
    cfg
}

/// `n` synthetic samples of side `canvas` under `dir`; returns the manifest.
pub fn synth(dir: &std::path::Path, n: usize, canvas: usize, seed: u64) -> camoseg::dataset::DatasetManifest {
    let cfg = camoseg::dataset::SynthConfig {
        canvas,
        ..Default::default()
    };
    camoseg::dataset::synth_generate(n, seed, &cfg, &camoseg::taxonomy::AttributeTaxonomy::default(), dir).unwrap()
}

/// A random axis-aligned rectangle mask on an `n x n` grid.
pub fn binary_blob(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let (r0, c0) = (rng.gen_range(0..n / 2), rng.gen_range(0..n / 2));
    let (h, w) = (rng.gen_range(2..=n / 2), rng.gen_range(2..=n / 2));
    (0..n * n)
        .map(|i| f64::from(u8::from((r0..r0 + h).contains(&(i / n)) && (c0..c0 + w).contains(&(i % n)))))
        .collect()
}

/// Random nonnegative values summing to 1.
pub fn fixation_target(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}
