//! Raster I/O and resampling on `ndarray` grids.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::Array2;

use crate::nn::resample::bilinear_taps;
use crate::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    image::open(path).map_err(|e| Error::Raster {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(open(path)?.to_rgb8())
}

/// Reads a grayscale raster scaled to `[0, 1]`. 16-bit files keep their
/// precision; colour files are converted to luma.
pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        other => other.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    Ok(Array2::from_shape_vec((h, w), values).expect("buffer matches dimensions"))
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Raster {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Writes `[0, 1]` values as an 8-bit PNG (`round(v * 255)`).
pub fn write_gray8(path: &Path, values: &Array2<f64>) -> Result<()> {
    save(DynamicImage::ImageLuma8(to_gray8(values)), path)
}

pub fn to_gray8(values: &Array2<f64>) -> GrayImage {
    let (h, w) = values.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(values[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Writes `[0, 1]` values as a 16-bit PNG.
pub fn write_gray16(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(values[[y as usize, x as usize]].clamp(0.0, 1.0) * 65535.0).round() as u16])
    });
    save(DynamicImage::ImageLuma16(img), path)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    save(DynamicImage::ImageRgb8(img.clone()), path)
}

/// Separable bilinear resize with half-pixel centres.
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut tmp = Array2::zeros((h, out_w));
    for r in 0..h {
        for (c, &(i0, i1, a)) in tx.iter().enumerate() {
            tmp[[r, c]] = (1.0 - a) * src[[r, i0]] + a * src[[r, i1]];
        }
    }
    let mut out = Array2::zeros((out_h, out_w));
    for (r, &(i0, i1, a)) in ty.iter().enumerate() {
        for c in 0..out_w {
            out[[r, c]] = (1.0 - a) * tmp[[i0, c]] + a * tmp[[i1, c]];
        }
    }
    out
}

/// Nearest-neighbour resize sampling each output pixel's centre.
pub fn resize_nearest<T: Clone>(src: &Array2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (h, w) = src.dim();
    let pick = |o: usize, dst: usize, n: usize| (((o as f64 + 0.5) * n as f64 / dst as f64).floor() as usize).min(n - 1);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| src[[pick(r, out_h, h), pick(c, out_w, w)]].clone())
}

/// Bilinear resize of an RGB image, rounding back to 8 bits.
pub fn resize_rgb(img: &RgbImage, out_h: usize, out_w: usize) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let planes: Vec<Array2<f64>> = (0..3)
        .map(|ch| {
            let p = Array2::from_shape_fn((h, w), |(r, c)| img.get_pixel(c as u32, r as u32)[ch] as f64);
            resize_bilinear(&p, out_h, out_w)
        })
        .collect();
    ImageBuffer::from_fn(out_w as u32, out_h as u32, |x, y| {
        let px = |ch: usize| planes[ch][[y as usize, x as usize]].round().clamp(0.0, 255.0) as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

/// Separable Gaussian blur, zero outside the raster, kernel radius
/// `ceil(3 sigma)`. `sigma <= 0` returns the input unchanged.
pub fn gaussian_blur(src: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (h, w) = src.dim();
    let pass = |input: &Array2<f64>, along_rows: bool| {
        Array2::from_shape_fn((h, w), |(r, c)| {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                let off = j as isize - radius;
                let (rr, cc) = if along_rows { (r as isize + off, c as isize) } else { (r as isize, c as isize + off) };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += kv * input[[rr as usize, cc as usize]];
                }
            }
            acc
        })
    };
    pass(&pass(src, false), true)
}

/// Scales to unit sum. A raster with no mass becomes uniform; returns
/// `false` in that case.
pub fn normalize_sum(a: &mut Array2<f64>) -> bool {
    let s: f64 = a.sum();
    if s > 0.0 && s.is_finite() {
        a.mapv_inplace(|v| v / s);
        true
    } else {
        let u = 1.0 / a.len() as f64;
        a.fill(u);
        false
    }
}

/// Mass-preserving reduction of a density raster to a `rows x cols` grid.
/// Exact box sums when the size divides evenly; otherwise a bilinear resize
/// rescaled to the original mass.
pub fn area_downsample(src: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if h % rows == 0 && w % cols == 0 {
        let (fy, fx) = (h / rows, w / cols);
        let mut out = Array2::zeros((rows, cols));
        for ((r, c), &v) in src.indexed_iter() {
            out[[r / fy, c / fx]] += v;
        }
        out
    } else {
        let mut out = resize_bilinear(src, rows, cols);
        let (s0, s1) = (src.sum(), out.sum());
        if s1 > 0.0 {
            out.mapv_inplace(|v| v * s0 / s1);
        }
        out
    }
}
