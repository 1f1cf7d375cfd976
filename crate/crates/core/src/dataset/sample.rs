use image::RgbImage;
use ndarray::Array2;

use super::manifest::{DatasetManifest, ManifestEntry};
use crate::raster;
use crate::text::truncate_words;
use crate::Result;

/// Blur width of the surrogate fixation map, as a fraction of the raster side.
pub const FIXATION_SIGMA_FRACTION: f64 = 0.06;

/// Non-fatal conditions noticed while loading a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleWarning {
    /// The ground-truth mask has no foreground pixel.
    EmptyMask,
    /// No fixation raster was listed; a blurred mask stands in for it.
    SurrogateFixation,
    /// The fixation raster had no mass; it was replaced by a uniform map.
    EmptyFixation,
    /// The description exceeded the word limit and was truncated.
    DescriptionTruncated,
}

/// One annotated sample at training resolution.
#[derive(Debug, Clone)]
pub struct CamouflageSample {
    pub image: RgbImage,
    /// Values in `{0, 1}`.
    pub gt_mask: Array2<u8>,
    /// Nonnegative, sums to 1.
    pub gt_fixation: Array2<f64>,
    pub description: String,
    /// Proportions in taxonomy order, sum 1.
    pub attr_gt: Vec<f64>,
    pub warnings: Vec<SampleWarning>,
}

/// Loads manifest entries at a fixed square resolution.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoader {
    pub target_size: usize,
    pub word_limit: usize,
}

impl SampleLoader {
    pub fn new(target_size: usize, word_limit: usize) -> Self {
        Self { target_size, word_limit }
    }

    pub fn load(&self, manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<CamouflageSample> {
        let n = self.target_size;
        let mut warnings = Vec::new();

        let image = raster::resize_rgb(&raster::read_rgb(&manifest.resolve(&entry.image))?, n, n);
        let mask_src = raster::read_gray(&manifest.resolve(&entry.mask))?;
        let gt_mask = binarize(&raster::resize_nearest(&mask_src, n, n));
        if gt_mask.iter().all(|&v| v == 0) {
            warnings.push(SampleWarning::EmptyMask);
        }

        let mut gt_fixation = match &entry.fixation {
            Some(p) => raster::resize_bilinear(&raster::read_gray(&manifest.resolve(p))?, n, n).mapv(|v| v.max(0.0)),
            None => {
                warnings.push(SampleWarning::SurrogateFixation);
                surrogate_fixation(&gt_mask)
            }
        };
        if !raster::normalize_sum(&mut gt_fixation) {
            warnings.push(SampleWarning::EmptyFixation);
        }

        let (description, cut) = truncate_words(&entry.description, self.word_limit);
        if cut {
            warnings.push(SampleWarning::DescriptionTruncated);
        }
        Ok(CamouflageSample {
            image,
            gt_mask,
            gt_fixation,
            description,
            attr_gt: entry.attributes.clone(),
            warnings,
        })
    }
}

/// `1` where the value is at least 0.5.
pub fn binarize(a: &Array2<f64>) -> Array2<u8> {
    a.mapv(|v| u8::from(v >= 0.5))
}

/// Gaussian-blurred mask, the stand-in for human fixation data (not yet
/// normalised).
pub fn surrogate_fixation(mask: &Array2<u8>) -> Array2<f64> {
    let side = mask.nrows().max(mask.ncols()) as f64;
    raster::gaussian_blur(&mask.mapv(f64::from), side * FIXATION_SIGMA_FRACTION)
}
