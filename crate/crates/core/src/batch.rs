//! Turns manifest entries into model inputs and supervision tensors.

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array2};

use crate::backbone::{image_tensor, FeatureFile, MultiLevelFeatures};
use crate::dataset::{CamouflageSample, DatasetManifest, ManifestEntry, SampleLoader};
use crate::mask::mask_tensor;
use crate::model::{CamoModel, Targets};
use crate::raster::{area_downsample, normalize_sum};
use crate::{Error, Result};

/// Mirrors image, mask and fixation left to right.
pub fn flip_sample(s: &mut CamouflageSample) {
    image::imageops::flip_horizontal_in_place(&mut s.image);
    s.gt_mask = s.gt_mask.slice(s![.., ..;-1]).to_owned();
    s.gt_fixation = s.gt_fixation.slice(s![.., ..;-1]).to_owned();
}

/// Pixel-level fixation pooled onto the patch grid, renormalised.
pub fn grid_fixation(fix: &Array2<f64>, grid: (usize, usize)) -> Array2<f64> {
    let mut g = area_downsample(fix, grid.0, grid.1);
    normalize_sum(&mut g);
    g
}

fn stack_f64(arrays: &[Array2<f64>], dtype: DType) -> Result<Tensor> {
    let (h, w) = arrays[0].dim();
    let data: Vec<f64> = arrays.iter().flat_map(|a| a.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (arrays.len(), h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Loads samples at the model's resolution, optionally flipped.
pub fn load_samples(model: &CamoModel, manifest: &DatasetManifest, entries: &[&ManifestEntry], flips: &[bool]) -> Result<Vec<CamouflageSample>> {
    let bb = &model.config().backbone;
    let loader = SampleLoader::new(bb.image_size, bb.word_limit);
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut s = loader.load(manifest, e)?;
            if flips.get(i).copied().unwrap_or(false) {
                flip_sample(&mut s);
            }
            Ok(s)
        })
        .collect()
}

/// Visual features for a batch: encoded images, or stacked feature files
/// when the model reads precomputed features.
pub fn features(model: &CamoModel, manifest: &DatasetManifest, entries: &[&ManifestEntry], samples: &[CamouflageSample], dtype: DType) -> Result<MultiLevelFeatures> {
    let bb = &model.config().backbone;
    match &bb.feature_dir {
        Some(dir) => {
            let dir = manifest.resolve(dir);
            let files = entries
                .iter()
                .map(|e| FeatureFile::read(&FeatureFile::path_for(&dir, &e.image)))
                .collect::<Result<Vec<_>>>()?;
            FeatureFile::stack(&files, bb, dtype)
        }
        None => {
            let images = samples.iter().map(|s| image_tensor(&s.image, dtype)).collect::<Result<Vec<_>>>()?;
            model.encode_images(&Tensor::stack(&images, 0)?)
        }
    }
}

pub fn targets(samples: &[CamouflageSample], grid: (usize, usize), dtype: DType) -> Result<Targets> {
    if samples.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let masks: Vec<&Array2<u8>> = samples.iter().map(|s| &s.gt_mask).collect();
    let fix: Vec<Array2<f64>> = samples.iter().map(|s| grid_fixation(&s.gt_fixation, grid)).collect();
    let attrs: Vec<f64> = samples.iter().flat_map(|s| s.attr_gt.iter().copied()).collect();
    let k = samples[0].attr_gt.len();
    Ok(Targets {
        mask: mask_tensor(&masks, dtype)?,
        fixation: stack_f64(&fix, dtype)?,
        attributes: Tensor::from_vec(attrs, (samples.len(), k), &Device::Cpu)?.to_dtype(dtype)?,
        descriptions: samples.iter().map(|s| s.description.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn grid_fixation_keeps_unit_mass() {
        let mut f = Array2::from_elem((8, 8), 0.0);
        f[[1, 6]] = 0.7;
        f[[5, 2]] = 0.3;
        let g = grid_fixation(&f, (2, 2));
        assert!((g.sum() - 1.0).abs() < 1e-12);
        assert!((g[[0, 1]] - 0.7).abs() < 1e-12);
        assert!((g[[1, 0]] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn flipping_mirrors_every_raster() {
        let mut s = CamouflageSample {
            image: image::RgbImage::from_fn(2, 1, |x, _| image::Rgb([x as u8, 0, 0])),
            gt_mask: array![[1u8, 0]],
            gt_fixation: array![[0.25, 0.75]],
            description: String::new(),
            attr_gt: vec![],
            warnings: vec![],
        };
        flip_sample(&mut s);
        assert_eq!(s.gt_mask, array![[0u8, 1]]);
        assert_eq!(s.gt_fixation, array![[0.75, 0.25]]);
        assert_eq!(s.image.get_pixel(0, 0)[0], 1);
    }
}
