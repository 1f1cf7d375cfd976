//! Visual-only inference from a checkpoint.

use std::path::Path;

use candle_core::{DType, Tensor};
use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbone::{image_tensor, MultiLevelFeatures};
use crate::batch;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::model::CamoModel;
use crate::nn::{to_vec_f64, Mode, ParamStore};
use crate::raster::{self, resize_bilinear};
use crate::taxonomy::AttributeTaxonomy;
use crate::{Error, Result};

pub const MASK_FILE: &str = "mask.png";
pub const FIXATION_FILE: &str = "fixation.png";
pub const ATTRIBUTES_FILE: &str = "attributes.json";

/// Model outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Mask probabilities at the model's input resolution.
    pub mask: Array2<f64>,
    /// Fixation distribution over the patch grid.
    pub fixation: Array2<f64>,
    /// Attribute proportions in taxonomy order, summing to 1.
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub name: String,
    pub category: String,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub image: String,
    pub attributes: Vec<AttributeEntry>,
}

/// A model restored for inference. It is built without the text branch, so
/// no text input is ever needed.
pub struct Predictor {
    _store: ParamStore,
    model: CamoModel,
    config: TrainConfig,
    taxonomy: AttributeTaxonomy,
    dtype: DType,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let dtype = DType::F32;
        let store = ParamStore::new(dtype, ckpt.config.seed);
        let model = CamoModel::new(&store, &ckpt.config.model(), false)?;
        ckpt.restore_params(&store)?;
        Ok(Self {
            _store: store,
            model,
            config: ckpt.config.clone(),
            taxonomy: ckpt.taxonomy.clone(),
            dtype,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &AttributeTaxonomy {
        &self.taxonomy
    }

    pub fn model(&self) -> &CamoModel {
        &self.model
    }

    /// Runs the visual branch in evaluation mode.
    pub fn predict_features(&self, feats: MultiLevelFeatures) -> Result<Vec<Prediction>> {
        let out = self.model.forward_visual(feats, &Mode::eval())?;
        let masks = out.mask.prob()?;
        let fix = out.fixation.prob()?;
        let attrs = out.attributes.proportions()?;
        let (b, h, w) = masks.dims3()?;
        let (_, r, c) = fix.dims3()?;
        let mv = to_vec_f64(&masks)?;
        let fv = to_vec_f64(&fix)?;
        Ok((0..b)
            .zip(attrs)
            .map(|(i, attributes)| Prediction {
                mask: Array2::from_shape_vec((h, w), mv[i * h * w..(i + 1) * h * w].to_vec()).expect("mask shape"),
                fixation: Array2::from_shape_vec((r, c), fv[i * r * c..(i + 1) * r * c].to_vec()).expect("fixation shape"),
                attributes,
            })
            .collect())
    }

    /// Images of any size are resized to the model's input resolution.
    pub fn predict_images(&self, images: &[&RgbImage]) -> Result<Vec<Prediction>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.config.backbone.image_size;
        let tensors = images
            .iter()
            .map(|img| {
                if (img.width() as usize, img.height() as usize) == (n, n) {
                    image_tensor(img, self.dtype)
                } else {
                    image_tensor(&raster::resize_rgb(img, n, n), self.dtype)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let feats = self.model.encode_images(&Tensor::stack(&tensors, 0)?)?;
        self.predict_features(feats)
    }

    /// Predicts manifest entries, reading feature files when the model
    /// was trained on them. Masks and descriptions are not read.
    pub fn predict_entries(&self, manifest: &DatasetManifest, entries: &[&ManifestEntry]) -> Result<Vec<Prediction>> {
        if self.model.uses_feature_files() {
            let feats = batch::features(&self.model, manifest, entries, &[], self.dtype)?;
            return self.predict_features(feats);
        }
        let images = entries
            .iter()
            .map(|e| raster::read_rgb(&manifest.resolve(&e.image)))
            .collect::<Result<Vec<_>>>()?;
        self.predict_images(&images.iter().collect::<Vec<_>>())
    }

    pub fn attribute_record(&self, image: &str, p: &Prediction) -> AttributeRecord {
        AttributeRecord {
            image: image.to_string(),
            attributes: self
                .taxonomy
                .names()
                .iter()
                .zip(self.taxonomy.categories())
                .zip(&p.attributes)
                .map(|((name, cat), &proportion)| AttributeEntry {
                    name: name.clone(),
                    category: cat.to_string(),
                    proportion,
                })
                .collect(),
        }
    }
}

/// Min-max stretch to `[0, 1]`; a constant map becomes all zeros.
pub fn stretch(a: &Array2<f64>) -> Array2<f64> {
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        a.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::zeros(a.dim())
    }
}

/// Writes `mask.png` and `fixation.png` at `size` (rows, cols), plus
/// `attributes.json`, into `dir`.
pub fn write_outputs(dir: &Path, size: (usize, usize), p: &Prediction, record: &AttributeRecord) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mask = if p.mask.dim() == size {
        p.mask.clone()
    } else {
        resize_bilinear(&p.mask, size.0, size.1)
    };
    raster::write_gray8(&dir.join(MASK_FILE), &mask)?;
    let fix = stretch(&resize_bilinear(&p.fixation, size.0, size.1));
    raster::write_gray8(&dir.join(FIXATION_FILE), &fix)?;
    let path = dir.join(ATTRIBUTES_FILE);
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Predicts one image file and writes its outputs at the image's own size.
pub fn infer_image(predictor: &Predictor, image_path: &Path, out_dir: &Path) -> Result<Prediction> {
    if predictor.model.uses_feature_files() {
        return Err(Error::Config("checkpoint was trained on precomputed features; it cannot encode images".into()));
    }
    let img = raster::read_rgb(image_path)?;
    let size = (img.height() as usize, img.width() as usize);
    let p = predictor.predict_images(&[&img])?.pop().expect("one prediction");
    let name = image_path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    write_outputs(out_dir, size, &p, &predictor.attribute_record(&name, &p))?;
    Ok(p)
}
