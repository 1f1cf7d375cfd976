//! The assembled network: visual branch, optional text branch, and the
//! per-batch objective.

use candle_core::Tensor;

use crate::afe::{Afe, FusedFeature};
use crate::attribute::{attribute_loss, AttributeHead, AttributeScores};
use crate::backbone::{MultiLevelFeatures, TextEncoder, VisualEncoder};
use crate::config::ModelConfig;
use crate::fixation::{fixation_loss, FixationDecoder, FixationMap};
use crate::mask::{loss_kernel, mask_loss, MaskDecoder, MaskLogits};
use crate::nn::{scalar_f64, Mode, ParamStore};
use crate::objective::{consistency_loss, total_loss, LossBreakdown, LossWeights, Projector};
use crate::{Error, Result};

/// Parameter-name prefixes that belong to the text side only.
pub const TEXT_PREFIXES: [&str; 2] = ["text.", "objective.text_proj."];

pub fn is_text_param(name: &str) -> bool {
    TEXT_PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Everything the visual branch produces for a batch.
pub struct VisualOutputs {
    pub features: MultiLevelFeatures,
    pub fixation: FixationMap,
    pub attributes: AttributeScores,
    pub fused: FusedFeature,
    pub mask: MaskLogits,
}

/// Batched supervision.
pub struct Targets {
    /// `(B, H, W)` binary masks at image resolution.
    pub mask: Tensor,
    /// `(B, rows, cols)` fixation distributions on the patch grid.
    pub fixation: Tensor,
    /// `(B, 17)` attribute proportions.
    pub attributes: Tensor,
    pub descriptions: Vec<String>,
}

pub struct StepLosses {
    /// Differentiable weighted sum.
    pub total: Tensor,
    pub breakdown: LossBreakdown,
}

struct TextBranch {
    encoder: TextEncoder,
    proj: Projector,
}

pub struct CamoModel {
    cfg: ModelConfig,
    encoder: Option<VisualEncoder>,
    fixation: FixationDecoder,
    attribute: AttributeHead,
    afe: Afe,
    mask: MaskDecoder,
    visual_proj: Projector,
    text: Option<TextBranch>,
}

impl CamoModel {
    /// Registers every parameter in `store`. Without `with_text` the text
    /// encoder and its projector are never created. When the backbone reads
    /// precomputed features there is no visual encoder either.
    pub fn new(store: &ParamStore, cfg: &ModelConfig, with_text: bool) -> Result<Self> {
        cfg.validate()?;
        let root = store.root();
        let bb = &cfg.backbone;
        let (tokens, channels) = (bb.tokens(), bb.channels);
        let encoder = match bb.feature_dir {
            None => Some(VisualEncoder::new(&root.pp("encoder"), bb)?),
            Some(_) => None,
        };
        let fixation = FixationDecoder::new(&root.pp("fixation"), &cfg.fixation, tokens, channels)?;
        let attribute = AttributeHead::new(&root.pp("attribute"), &cfg.attribute, channels)?;
        let afe = Afe::new(&root.pp("afe"), &cfg.afe, channels)?;
        let mask = MaskDecoder::new(&root.pp("mask"), &cfg.mask, channels)?;
        let obj = &cfg.objective;
        let visual_proj = Projector::new(&root.pp("objective.visual_proj"), channels, obj.hidden, obj.shared_dim)?;
        let text = if with_text {
            Some(TextBranch {
                encoder: TextEncoder::new(&root.pp("text.encoder"), bb)?,
                proj: Projector::new(&root.pp("objective.text_proj"), bb.text_dim, bb.text_dim, obj.shared_dim)?,
            })
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            fixation,
            attribute,
            afe,
            mask,
            visual_proj,
            text,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn has_text(&self) -> bool {
        self.text.is_some()
    }

    pub fn uses_feature_files(&self) -> bool {
        self.encoder.is_none()
    }

    /// Runs the visual encoder on a `(B, 3, H, W)` batch.
    pub fn encode_images(&self, images: &Tensor) -> Result<MultiLevelFeatures> {
        match &self.encoder {
            Some(e) => e.encode(images),
            None => Err(Error::Config("this model reads precomputed features; it has no image encoder".into())),
        }
    }

    pub fn forward_visual(&self, features: MultiLevelFeatures, mode: &Mode) -> Result<VisualOutputs> {
        features.validate()?;
        let fixation = self.fixation.forward(&features)?;
        let attributes = self.attribute.forward(&features, mode)?;
        let fused = self.afe.forward(&features, &attributes, &fixation)?;
        let bb = &self.cfg.backbone;
        let mask = self.mask.forward(&fused, features.grid, features.cls_present, bb.image_size, mode)?;
        Ok(VisualOutputs {
            features,
            fixation,
            attributes,
            fused,
            mask,
        })
    }

    pub fn project_visual(&self, fused: &FusedFeature) -> Result<Tensor> {
        self.visual_proj.project_visual(fused)
    }

    /// `(B, D_s)` unit rows for the descriptions.
    pub fn project_text(&self, descriptions: &[&str]) -> Result<Tensor> {
        let text = self
            .text
            .as_ref()
            .ok_or_else(|| Error::Config("model was built without the text branch".into()))?;
        text.proj.forward(&text.encoder.encode(descriptions)?)
    }

    /// The four losses and their weighted sum.
    ///
    /// With `gamma = 0` the consistency term is still evaluated for the log,
    /// but detached, so nothing on the text side receives a gradient. A
    /// model without a text branch reports it as 0.
    pub fn losses(&self, out: &VisualOutputs, targets: &Targets, w: &LossWeights) -> Result<StepLosses> {
        let kernel = loss_kernel(self.cfg.backbone.image_size);
        let l_mask = mask_loss(&out.mask, &targets.mask, kernel)?;
        let l_fix = fixation_loss(&out.fixation, &targets.fixation)?;
        let l_attr = attribute_loss(&out.attributes, &targets.attributes)?;
        let l_cons = if self.text.is_some() {
            let texts: Vec<&str> = targets.descriptions.iter().map(String::as_str).collect();
            let c = consistency_loss(&self.project_visual(&out.fused)?, &self.project_text(&texts)?)?;
            Some(if w.gamma == 0.0 { c.detach() } else { c })
        } else if w.gamma != 0.0 {
            return Err(Error::Config("gamma > 0 needs the text branch".into()));
        } else {
            None
        };

        let mut total = ((&l_mask + (&l_fix * w.alpha)?)? + (&l_attr * w.beta)?)?;
        if w.gamma != 0.0 {
            if let Some(c) = &l_cons {
                total = (total + (c * w.gamma)?)?;
            }
        }
        let consist = match &l_cons {
            Some(c) => scalar_f64(c)?,
            None => 0.0,
        };
        let breakdown = total_loss([scalar_f64(&l_mask)?, scalar_f64(&l_fix)?, scalar_f64(&l_attr)?, consist], w)?;
        Ok(StepLosses { total, breakdown })
    }
}
