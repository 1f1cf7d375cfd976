//! Visual and text encoders.
//!
//! The visual side produces three token grids tapped at increasing depths of
//! a transformer encoder. The bundled encoder is a small pre-norm ViT meant
//! to be trained from scratch; pretrained features can instead be supplied
//! as feature files (see [`FeatureFile`]).

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::container::{self, TensorRecord};
use crate::nn::{Init, Linear, Scope, SelfAttentionBlock};
use crate::text::{tokenize, DEFAULT_WORD_LIMIT};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub depth: usize,
    pub heads: usize,
    /// 1-based encoder layers whose outputs form the three levels.
    pub tap_layers: [usize; 3],
    pub cls_token: bool,
    pub mlp_ratio: usize,
    /// Visual encoder weights are not trained.
    pub frozen: bool,
    /// When set, visual features are read from feature files in this
    /// directory (one `<image stem>.feat` per image) instead of computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dir: Option<PathBuf>,
    pub text_dim: usize,
    pub vocab: usize,
    /// Maximum description length in word tokens (WL).
    pub word_limit: usize,
    /// Text embedding table is not trained.
    pub text_frozen: bool,
}

impl BackboneConfig {
    /// One-third, two-thirds and final layer of a `depth`-layer encoder.
    pub fn default_taps(depth: usize) -> [usize; 3] {
        [depth.div_ceil(3), (2 * depth).div_ceil(3), depth]
    }

    /// The large configuration: 336 px input, 14 px patches, 24 layers of
    /// width 1024, taps at layers 8, 16 and 24.
    pub fn full_scale() -> Self {
        Self {
            image_size: 336,
            patch_size: 14,
            channels: 1024,
            depth: 24,
            heads: 16,
            tap_layers: [8, 16, 24],
            cls_token: true,
            mlp_ratio: 4,
            frozen: true,
            feature_dir: None,
            text_dim: 768,
            vocab: 49408,
            word_limit: DEFAULT_WORD_LIMIT,
            text_frozen: true,
        }
    }

    pub fn toy() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels: 64,
            depth: 6,
            heads: 4,
            tap_layers: Self::default_taps(6),
            cls_token: false,
            mlp_ratio: 2,
            frozen: false,
            feature_dir: None,
            text_dim: 32,
            vocab: 4096,
            word_limit: DEFAULT_WORD_LIMIT,
            text_frozen: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        let [a, b, c] = self.tap_layers;
        if !(1 <= a && a < b && b < c && c <= self.depth) {
            return fail(format!(
                "tap layers {:?} must be strictly increasing within 1..={}",
                self.tap_layers, self.depth
            ));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return fail(format!("{} channels cannot be split into {} heads", self.channels, self.heads));
        }
        if self.vocab < 2 || self.text_dim == 0 || self.word_limit == 0 {
            return fail("text encoder needs vocab >= 2, text_dim >= 1 and word_limit >= 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        let g = self.image_size / self.patch_size;
        (g, g)
    }

    pub fn tokens(&self) -> usize {
        let (r, c) = self.grid();
        r * c + usize::from(self.cls_token)
    }
}

/// Three token grids `(B, L, C)` from shallow to deep layers.
#[derive(Debug, Clone)]
pub struct MultiLevelFeatures {
    pub levels: [Tensor; 3],
    pub grid: (usize, usize),
    pub cls_present: bool,
}

impl MultiLevelFeatures {
    pub fn new(levels: [Tensor; 3], grid: (usize, usize), cls_present: bool) -> Result<Self> {
        let f = Self { levels, grid, cls_present };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let d0 = self.levels[0].dims3()?;
        for l in &self.levels[1..] {
            if l.dims3()? != d0 {
                return Err(Error::shape("feature levels", d0, l.dims()));
            }
        }
        let want = self.grid.0 * self.grid.1 + usize::from(self.cls_present);
        if d0.1 != want {
            return Err(Error::shape("feature tokens", want, d0.1));
        }
        Ok(())
    }

    pub fn batch(&self) -> usize {
        self.levels[0].dims()[0]
    }

    pub fn tokens(&self) -> usize {
        self.levels[0].dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].dims()[2]
    }
}

/// `(3, H, W)` tensor with pixels mapped to `(v / 255 - 0.5) / 0.25`.
pub fn image_tensor(img: &RgbImage, dtype: DType) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * h * w + y as usize * w + x as usize] = (p[ch] as f32 / 255.0 - 0.5) / 0.25;
        }
    }
    Ok(Tensor::from_vec(data, (3, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Fixed 2-D sinusoidal position table `(rows * cols, dim)`: the first half
/// of the channels encodes the row, the second half the column.
pub fn sinusoidal_positions(rows: usize, cols: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0f32; rows * cols * dim];
    let encode = |pos: usize, slot: &mut [f32]| {
        let n = slot.len();
        for i in 0..n / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / n as f64);
            slot[2 * i] = (pos as f64 * freq).sin() as f32;
            slot[2 * i + 1] = (pos as f64 * freq).cos() as f32;
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let row = &mut out[(r * cols + c) * dim..(r * cols + c + 1) * dim];
            let (a, b) = row.split_at_mut(half);
            encode(r, a);
            encode(c, b);
        }
    }
    out
}

/// Patch embedding, optional class token, fixed sinusoidal positions and a
/// stack of pre-norm self-attention blocks.
pub struct VisualEncoder {
    cfg: BackboneConfig,
    patch: Linear,
    cls: Option<Tensor>,
    pos: Tensor,
    blocks: Vec<SelfAttentionBlock>,
}

impl VisualEncoder {
    pub fn new(scope: &Scope, cfg: &BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let scope = scope.clone().frozen(cfg.frozen);
        let p = cfg.patch_size;
        let c = cfg.channels;
        let (rows, cols) = cfg.grid();
        let patch = Linear::new(&scope.pp("patch"), 3 * p * p, c)?;
        let cls = if cfg.cls_token {
            Some(scope.param("cls", &[1, 1, c], Init::Normal(0.02))?)
        } else {
            None
        };
        let pos = Tensor::from_vec(sinusoidal_positions(rows, cols, c), (1, rows * cols, c), scope.device())?
            .to_dtype(scope.dtype())?;
        let blocks = (0..cfg.depth)
            .map(|i| SelfAttentionBlock::new(&scope.pp(format!("blocks.{i}")), c, cfg.heads, cfg.mlp_ratio))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            patch,
            cls,
            pos,
            blocks,
        })
    }

    /// Encodes a `(B, 3, H, W)` batch produced by [`image_tensor`].
    pub fn encode(&self, images: &Tensor) -> Result<MultiLevelFeatures> {
        let (b, ch, h, w) = images.dims4()?;
        let n = self.cfg.image_size;
        if (ch, h, w) != (3, n, n) {
            return Err(Error::shape("visual encoder input", (3, n, n), (ch, h, w)));
        }
        let p = self.cfg.patch_size;
        let (rows, cols) = self.cfg.grid();
        let patches = images
            .reshape((b, 3, rows, p, cols, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, rows * cols, 3 * p * p))?;
        let mut x = self.patch.forward(&patches)?.broadcast_add(&self.pos)?;
        if let Some(cls) = &self.cls {
            let c = cls.broadcast_as((b, 1, self.cfg.channels))?;
            x = Tensor::cat(&[&c, &x], 1)?;
        }
        let mut taps = Vec::with_capacity(3);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(&x)?;
            if self.cfg.tap_layers.contains(&(i + 1)) {
                taps.push(x.clone());
            }
        }
        let [a, b2, c]: [Tensor; 3] = taps.try_into().expect("three validated taps");
        MultiLevelFeatures::new([a, b2, c], (rows, cols), self.cfg.cls_token)
    }
}

/// Learned token embedding with mean pooling over the words present.
pub struct TextEncoder {
    embed: Tensor,
    vocab: usize,
    word_limit: usize,
    dim: usize,
}

impl TextEncoder {
    pub fn new(scope: &Scope, cfg: &BackboneConfig) -> Result<Self> {
        let scope = scope.clone().frozen(cfg.text_frozen);
        Ok(Self {
            embed: scope.param("embed", &[cfg.vocab, cfg.text_dim], Init::Normal(1.0))?,
            vocab: cfg.vocab,
            word_limit: cfg.word_limit,
            dim: cfg.text_dim,
        })
    }

    /// `(B, D_t)` sentence embeddings. Over-long descriptions are truncated
    /// to the word limit with a warning; empty ones embed to zeros.
    pub fn encode(&self, texts: &[&str]) -> Result<Tensor> {
        let b = texts.len();
        let wl = self.word_limit;
        let mut ids = vec![0u32; b * wl];
        let mut weights = vec![0f32; b * wl];
        for (i, t) in texts.iter().enumerate() {
            let tok = tokenize(t, wl, self.vocab);
            if tok.dropped > 0 {
                log::warn!("description truncated to {wl} words ({} dropped)", tok.dropped);
            }
            let n = tok.ids.len();
            for (j, id) in tok.ids.into_iter().enumerate() {
                ids[i * wl + j] = id;
                weights[i * wl + j] = 1.0 / n as f32;
            }
        }
        let dev = self.embed.device();
        let ids = Tensor::from_vec(ids, b * wl, dev)?;
        let weights = Tensor::from_vec(weights, (b, wl, 1), dev)?.to_dtype(self.embed.dtype())?;
        let e = self.embed.index_select(&ids, 0)?.reshape((b, wl, self.dim))?;
        Ok(e.broadcast_mul(&weights)?.sum(1)?)
    }
}

/// Precomputed features for one image, stored in the tensor container
/// with magic `CAMOFEAT`, tensors `level0..level2` of shape `(L, C)` and
/// metadata `{"grid": [rows, cols], "cls_present": bool}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub grid: (usize, usize),
    pub cls_present: bool,
    pub channels: usize,
    pub levels: [Vec<f32>; 3],
}

pub const FEATURE_MAGIC: &[u8; 8] = b"CAMOFEAT";

#[derive(Serialize, Deserialize)]
struct FeatureMeta {
    grid: (usize, usize),
    cls_present: bool,
}

impl FeatureFile {
    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1 + usize::from(self.cls_present)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let shape = vec![self.tokens(), self.channels];
        let tensors: Vec<TensorRecord> = (0..3)
            .map(|i| TensorRecord {
                name: format!("level{i}"),
                shape: shape.clone(),
                data: self.levels[i].clone(),
            })
            .collect();
        let meta = serde_json::to_value(FeatureMeta {
            grid: self.grid,
            cls_present: self.cls_present,
        })?;
        container::write_atomic(path, &container::encode(FEATURE_MAGIC, &meta, &tensors)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (meta, tensors) = container::read(path, FEATURE_MAGIC)?;
        let meta: FeatureMeta = serde_json::from_value(meta)?;
        let tokens = meta.grid.0 * meta.grid.1 + usize::from(meta.cls_present);
        let mut levels: [Vec<f32>; 3] = Default::default();
        let mut channels = None;
        for t in tensors {
            let idx = match t.name.as_str() {
                "level0" => 0,
                "level1" => 1,
                "level2" => 2,
                other => return Err(Error::Checkpoint(format!("{}: unexpected tensor `{other}`", path.display()))),
            };
            if t.shape.len() != 2 || t.shape[0] != tokens || channels.is_some_and(|c| c != t.shape[1]) {
                return Err(Error::shape("feature file level", (tokens, channels), t.shape));
            }
            channels = Some(t.shape[1]);
            levels[idx] = t.data;
        }
        let channels = channels.ok_or_else(|| Error::Checkpoint(format!("{}: no feature levels", path.display())))?;
        if levels.iter().any(Vec::is_empty) {
            return Err(Error::Checkpoint(format!("{}: missing feature level", path.display())));
        }
        Ok(Self {
            grid: meta.grid,
            cls_present: meta.cls_present,
            channels,
            levels,
        })
    }

    /// Path of the feature file for `image` inside `dir`.
    pub fn path_for(dir: &Path, image: &Path) -> PathBuf {
        let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        dir.join(format!("{stem}.feat"))
    }

    /// Stacks files into batched features, checking them against `cfg`.
    pub fn stack(files: &[FeatureFile], cfg: &BackboneConfig, dtype: DType) -> Result<MultiLevelFeatures> {
        let b = files.len();
        let want = (cfg.grid(), cfg.cls_token, cfg.channels);
        for f in files {
            if (f.grid, f.cls_present, f.channels) != want {
                return Err(Error::shape("feature file vs backbone config", want, (f.grid, f.cls_present, f.channels)));
            }
        }
        let (l, c) = (cfg.tokens(), cfg.channels);
        let level = |i: usize| -> Result<Tensor> {
            let data: Vec<f32> = files.iter().flat_map(|f| f.levels[i].iter().copied()).collect();
            Ok(Tensor::from_vec(data, (b, l, c), &Device::Cpu)?.to_dtype(dtype)?)
        };
        MultiLevelFeatures::new([level(0)?, level(1)?, level(2)?], cfg.grid(), cfg.cls_token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn default_taps_scale_with_depth() {
        assert_eq!(BackboneConfig::default_taps(24), [8, 16, 24]);
        assert_eq!(BackboneConfig::default_taps(6), [2, 4, 6]);
        assert_eq!(BackboneConfig::default_taps(4), [2, 3, 4]);
    }

    #[test]
    fn full_scale_geometry() {
        let cfg = BackboneConfig::full_scale();
        assert_eq!(cfg.grid(), (24, 24));
        assert_eq!(cfg.tokens(), 577);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = BackboneConfig::toy();
        c.tap_layers = [2, 2, 6];
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::toy();
        c.image_size = 60;
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::toy();
        c.tap_layers = [2, 4, 7];
        assert!(c.validate().is_err());
    }

    #[test]
    fn toy_encoder_shapes() {
        let store = ParamStore::new(DType::F32, 0);
        let cfg = BackboneConfig::toy();
        let enc = VisualEncoder::new(&store.root(), &cfg).unwrap();
        let x = Tensor::zeros((2, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        let f = enc.encode(&x).unwrap();
        for l in &f.levels {
            assert_eq!(l.dims(), &[2, 64, 64]);
        }
        let bad = Tensor::zeros((1, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert!(enc.encode(&bad).unwrap_err().to_string().contains("(3, 64, 64)"));
    }

    #[test]
    fn text_encoder_mean_pools_word_embeddings() {
        let store = ParamStore::new(DType::F64, 0);
        let cfg = BackboneConfig::toy();
        let enc = TextEncoder::new(&store.root(), &cfg).unwrap();
        let e = enc.encode(&["moth bark", "", "bark moth"]).unwrap().to_vec2::<f64>().unwrap();
        assert!(e[1].iter().all(|&v| v == 0.0));
        for (a, b) in e[0].iter().zip(&e[2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureFile {
            grid: (2, 2),
            cls_present: true,
            channels: 3,
            levels: [vec![0.5; 15], vec![1.5; 15], vec![-2.0; 15]],
        };
        let p = FeatureFile::path_for(dir.path(), Path::new("imgs/cat.jpg"));
        f.write(&p).unwrap();
        assert_eq!(FeatureFile::read(&p).unwrap(), f);
    }
}
