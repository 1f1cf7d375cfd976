//! Procedural camouflage scenes: a textured background and a blob filled
//! with a shifted, recoloured copy of the same texture.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::sample::FIXATION_SIGMA_FRACTION;
use crate::raster;
use crate::taxonomy::AttributeTaxonomy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Side of the square canvas in pixels.
    pub canvas: usize,
    /// Fixation blur as a fraction of the canvas side; 0 gives the
    /// normalised mask itself.
    pub fixation_sigma: f64,
    /// Range of the texture-similarity knob (1 = foreground texture is the
    /// background texture, only shifted).
    pub similarity: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas: 64,
            fixation_sigma: FIXATION_SIGMA_FRACTION,
            similarity: (0.55, 0.95),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Texture {
    Stripes,
    Checker,
    Spots,
    Noise,
}

impl Texture {
    fn name(self) -> &'static str {
        match self {
            Texture::Stripes => "striped",
            Texture::Checker => "checkered",
            Texture::Spots => "spotted",
            Texture::Noise => "mottled",
        }
    }

    fn complexity(self) -> f64 {
        match self {
            Texture::Stripes => 0.4,
            Texture::Checker => 0.3,
            Texture::Spots => 0.6,
            Texture::Noise => 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Ellipse,
    Superellipse,
    Blob,
    Box,
}

impl Shape {
    fn name(self) -> &'static str {
        match self {
            Shape::Ellipse => "oval",
            Shape::Superellipse => "rounded",
            Shape::Blob => "irregular",
            Shape::Box => "boxy",
        }
    }
}

/// Sampled generator knobs for one scene.
#[derive(Debug, Clone)]
struct Knobs {
    texture: Texture,
    period: f64,
    angle: f64,
    phase: f64,
    bg: [[f64; 3]; 2],
    fg: [[f64; 3]; 2],
    color_closeness: f64,
    similarity: f64,
    shift: (f64, f64),
    shape: Shape,
    center: (f64, f64),
    radii: (f64, f64),
    rotation: f64,
    lobes: f64,
    lobe_phase: f64,
    shading: f64,
    noise: f64,
    low_res: bool,
    lattice: Vec<f64>,
}

/// One generated scene held in memory.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: RgbImage,
    /// `{0, 1}` blob support.
    pub mask: Array2<u8>,
    /// Blurred mask, sums to 1.
    pub fixation: Array2<f64>,
    pub description: String,
    /// Proportions in taxonomy order, sum 1.
    pub attributes: Vec<f64>,
}

const LATTICE: usize = 16;

fn sample_knobs(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Knobs {
    let n = cfg.canvas as f64;
    let texture = [Texture::Stripes, Texture::Checker, Texture::Spots, Texture::Noise][rng.gen_range(0..4)];
    let color = |rng: &mut ChaCha8Rng| [rng.gen_range(20.0..235.0), rng.gen_range(20.0..235.0), rng.gen_range(20.0..235.0)];
    let bg = [color(rng), color(rng)];
    let similarity = rng.gen_range(cfg.similarity.0..=cfg.similarity.1);
    // Foreground colours drift away from the background as similarity drops.
    let other = [color(rng), color(rng)];
    let mix = |a: [f64; 3], b: [f64; 3]| [0, 1, 2].map(|i| similarity * a[i] + (1.0 - similarity) * b[i]);
    let fg = [mix(bg[0], other[0]), mix(bg[1], other[1])];
    let dist: f64 = (0..2)
        .map(|k| (0..3).map(|i| (fg[k][i] - bg[k][i]).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / 2.0;
    let color_closeness = (1.0 - dist / 200.0).clamp(0.0, 1.0);
    let shape = [Shape::Ellipse, Shape::Superellipse, Shape::Blob, Shape::Box][rng.gen_range(0..4)];
    let r = rng.gen_range(0.16..0.32) * n;
    let aspect = rng.gen_range(0.7..1.3);
    let margin = r * 1.1;
    Knobs {
        texture,
        period: rng.gen_range(0.12..0.3) * n,
        angle: rng.gen_range(0.0..PI),
        phase: rng.gen_range(0.0..2.0 * PI),
        bg,
        fg,
        color_closeness,
        similarity,
        shift: (rng.gen_range(-0.5..0.5) * n, rng.gen_range(-0.5..0.5) * n),
        shape,
        center: (rng.gen_range(margin..n - margin), rng.gen_range(margin..n - margin)),
        radii: (r * aspect, r / aspect),
        rotation: rng.gen_range(0.0..PI),
        lobes: rng.gen_range(3..6) as f64,
        lobe_phase: rng.gen_range(0.0..2.0 * PI),
        shading: if rng.gen_bool(0.5) { rng.gen_range(0.1..0.5) } else { 0.0 },
        noise: if rng.gen_bool(0.4) { rng.gen_range(0.02..0.1) } else { 0.0 },
        low_res: rng.gen_bool(0.25),
        lattice: (0..LATTICE * LATTICE).map(|_| rng.gen::<f64>()).collect(),
    }
}

fn texture_value(k: &Knobs, x: f64, y: f64, period: f64) -> f64 {
    match k.texture {
        Texture::Stripes => {
            let t = x * k.angle.cos() + y * k.angle.sin();
            0.5 + 0.5 * (2.0 * PI * t / period + k.phase).sin()
        }
        Texture::Checker => {
            let (a, b) = ((x / period).floor() as i64, (y / period).floor() as i64);
            ((a + b).rem_euclid(2)) as f64
        }
        Texture::Spots => {
            let v = (2.0 * PI * x / period + k.phase).sin() * (2.0 * PI * y / period).sin();
            if v > 0.3 {
                1.0
            } else {
                0.0
            }
        }
        Texture::Noise => {
            // Bilinear value noise on a wrapping lattice.
            let (u, v) = (x / period, y / period);
            let (i, j) = (u.floor(), v.floor());
            let (fu, fv) = (u - i, v - j);
            let at = |a: f64, b: f64| {
                let a = (a as i64).rem_euclid(LATTICE as i64) as usize;
                let b = (b as i64).rem_euclid(LATTICE as i64) as usize;
                k.lattice[b * LATTICE + a]
            };
            let top = at(i, j) * (1.0 - fu) + at(i + 1.0, j) * fu;
            let bot = at(i, j + 1.0) * (1.0 - fu) + at(i + 1.0, j + 1.0) * fu;
            top * (1.0 - fv) + bot * fv
        }
    }
}

fn inside(k: &Knobs, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - k.center.0, y - k.center.1);
    let (c, s) = (k.rotation.cos(), k.rotation.sin());
    let u = (dx * c + dy * s) / k.radii.0;
    let v = (-dx * s + dy * c) / k.radii.1;
    match k.shape {
        Shape::Ellipse => u * u + v * v <= 1.0,
        Shape::Superellipse => u.powi(4) + v.powi(4) <= 1.0,
        Shape::Box => u.powi(10) + v.powi(10) <= 1.0,
        Shape::Blob => {
            let rho = (u * u + v * v).sqrt();
            let theta = v.atan2(u);
            rho <= 1.0 + 0.25 * (k.lobes * theta + k.lobe_phase).sin()
        }
    }
}

fn attribute_vector(k: &Knobs, taxonomy: &AttributeTaxonomy, canvas: f64) -> Vec<f64> {
    let size = (k.radii.0 * k.radii.1).sqrt() / canvas;
    let shape_mimicry = match k.shape {
        Shape::Blob => 0.5,
        Shape::Ellipse => 0.2,
        Shape::Superellipse | Shape::Box => 0.1,
    };
    let disruptive = match k.texture {
        Texture::Checker | Texture::Stripes => 0.3,
        _ => 0.1,
    };
    let knob = |name: &str| -> f64 {
        match name {
            "environmental_pattern_matching" => k.similarity,
            "color_matching" => k.similarity * k.color_closeness,
            "environmental_shading" => k.shading,
            "environmental_textures" => k.texture.complexity() * k.similarity,
            "lighting_conditions" => 0.5 * k.shading,
            "shape_mimicry" => shape_mimicry,
            "disruptive_coloration" => disruptive,
            "countershading" => 0.3 * k.shading,
            "small_object_size" => ((0.32 - size) / 0.16).clamp(0.0, 1.0) * 0.4,
            "low_resolution" => if k.low_res { 0.4 } else { 0.0 },
            "image_noise" => 3.0 * k.noise,
            _ => 0.0,
        }
    };
    let mut v: Vec<f64> = taxonomy.names().iter().map(|n| knob(n)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / v.len() as f64;
        v.fill(u);
    }
    v
}

fn describe(k: &Knobs, canvas: f64) -> String {
    let size = (k.radii.0 * k.radii.1).sqrt() / canvas;
    let size_word = if size < 0.21 { "small" } else if size < 0.27 { "medium" } else { "large" };
    let mut s = format!(
        "A {size_word} {} object with a {} texture blends into a {} background",
        k.shape.name(),
        k.texture.name(),
        k.texture.name()
    );
    if k.shading > 0.0 {
        s.push_str(" under uneven shading");
    }
    if k.low_res {
        s.push_str(", captured at low resolution");
    }
    if k.noise > 0.0 {
        s.push_str(" with visible sensor noise");
    }
    s.push('.');
    s
}

/// Renders scene `index` of the stream defined by `seed`. Each scene depends
/// only on `(seed, index, cfg)`.
pub fn render_scene(seed: u64, index: u64, cfg: &SynthConfig, taxonomy: &AttributeTaxonomy) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let k = sample_knobs(&mut rng, cfg);
    let n = cfg.canvas;
    let nf = n as f64;

    let mask = Array2::from_shape_fn((n, n), |(r, c)| u8::from(inside(&k, c as f64 + 0.5, r as f64 + 0.5)));
    let fg_period = k.period * (1.0 + 0.4 * (1.0 - k.similarity));
    let mut planes: Vec<Array2<f64>> = (0..3)
        .map(|ch| {
            Array2::from_shape_fn((n, n), |(r, c)| {
                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                if mask[[r, c]] == 1 {
                    let t = texture_value(&k, x + k.shift.0, y + k.shift.1, fg_period);
                    let u = (x - k.center.0) / (2.0 * k.radii.0) + 0.5;
                    let shade = 1.0 - k.shading * u.clamp(0.0, 1.0);
                    ((1.0 - t) * k.fg[0][ch] + t * k.fg[1][ch]) * shade
                } else {
                    let t = texture_value(&k, x, y, k.period);
                    (1.0 - t) * k.bg[0][ch] + t * k.bg[1][ch]
                }
            })
        })
        .collect();
    if k.low_res {
        for p in planes.iter_mut() {
            *p = raster::resize_bilinear(&raster::resize_bilinear(p, n / 2, n / 2), n, n);
        }
    }
    if k.noise > 0.0 {
        let dist = Normal::new(0.0, k.noise * 255.0).expect("positive std");
        for p in planes.iter_mut() {
            p.mapv_inplace(|v| v + dist.sample(&mut rng));
        }
    }
    let image: RgbImage = ImageBuffer::from_fn(n as u32, n as u32, |x, y| {
        let px = |ch: usize| planes[ch][[y as usize, x as usize]].round().clamp(0.0, 255.0) as u8;
        Rgb([px(0), px(1), px(2)])
    });

    let mut fixation = raster::gaussian_blur(&mask.mapv(f64::from), cfg.fixation_sigma * nf);
    raster::normalize_sum(&mut fixation);
    SynthScene {
        image,
        mask,
        fixation,
        description: describe(&k, nf),
        attributes: attribute_vector(&k, taxonomy, nf),
    }
}

/// Writes `n` scenes under `out` (`images/`, `masks/`, `fixations/`) plus
/// `manifest.jsonl`, and returns the manifest.
pub fn synth_generate(n: usize, seed: u64, cfg: &SynthConfig, taxonomy: &AttributeTaxonomy, out: &Path) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset size must be at least 1".into()));
    }
    if cfg.canvas < 16 {
        return Err(Error::Config(format!("canvas {} is too small (minimum 16)", cfg.canvas)));
    }
    for sub in ["images", "masks", "fixations"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let scene = render_scene(seed, i as u64, cfg, taxonomy);
        let stem = format!("{i:05}.png");
        let (img, msk, fix) = (
            PathBuf::from("images").join(&stem),
            PathBuf::from("masks").join(&stem),
            PathBuf::from("fixations").join(&stem),
        );
        raster::write_rgb(&out.join(&img), &scene.image)?;
        raster::write_gray8(&out.join(&msk), &scene.mask.mapv(f64::from))?;
        // Stored peak-normalised for dynamic range; loaders renormalise to unit sum.
        let peak = scene.fixation.iter().copied().fold(0.0, f64::max);
        raster::write_gray16(&out.join(&fix), &scene.fixation.mapv(|v| v / peak))?;
        entries.push(ManifestEntry {
            image: img,
            mask: msk,
            fixation: Some(fix),
            description: scene.description,
            attributes: scene.attributes,
        });
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        split: Split::Train,
        entries,
    };
    manifest.write(&out.join("manifest.jsonl"), taxonomy)?;
    Ok(manifest)
}
