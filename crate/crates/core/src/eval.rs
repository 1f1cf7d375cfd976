//! Dataset evaluation: per-image scores and dataset means.

use std::io::Write;
use std::path::Path;

use cos_metrics::{ScoreAccumulator, Scores};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::infer::{stretch, AttributeRecord, Predictor};
use crate::raster::{self, resize_bilinear};
use crate::{Error, Result};

pub const SCORES_FILE: &str = "scores.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ATTRIBUTES_FILE: &str = "attributes.jsonl";
pub const FIXATION_DIR: &str = "fixations";

/// One segmenter output. The mask holds probabilities in `[0, 1]` at any
/// size; it is resized to the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Array2<f64>,
    pub fixation: Option<Array2<f64>>,
    pub attributes: Option<AttributeRecord>,
}

/// Anything that maps manifest entries to masks.
pub trait Segmenter {
    fn segment(&self, manifest: &DatasetManifest, entries: &[&ManifestEntry]) -> Result<Vec<Segmentation>>;
}

impl Segmenter for Predictor {
    fn segment(&self, manifest: &DatasetManifest, entries: &[&ManifestEntry]) -> Result<Vec<Segmentation>> {
        let preds = self.predict_entries(manifest, entries)?;
        Ok(preds
            .into_iter()
            .zip(entries)
            .map(|(p, e)| {
                let attributes = Some(self.attribute_record(&manifest.resolve(&e.image).display().to_string(), &p));
                Segmentation {
                    mask: p.mask,
                    fixation: Some(p.fixation),
                    attributes,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub image: String,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_beta_w: f64,
    pub mae: f64,
    /// File name of the fixation heatmap under `fixations/`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub evaluated: usize,
    /// Entries without a readable ground-truth mask.
    pub skipped: usize,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_beta_w: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<ImageScore>,
    pub summary: EvalSummary,
    pub attributes: Vec<AttributeRecord>,
    /// Stretched heatmaps at ground-truth size, by file name.
    pub fixations: Vec<(String, Array2<f64>)>,
}

/// Scores every entry whose mask file exists. Masks are compared at their
/// stored resolution, binarised at 0.5.
pub fn evaluate(seg: &dyn Segmenter, manifest: &DatasetManifest, batch_size: usize) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Empty("evaluation manifest"));
    }
    let mut present = Vec::new();
    let mut skipped = 0;
    for e in &manifest.entries {
        let p = manifest.resolve(&e.mask);
        if p.is_file() {
            present.push(e);
        } else {
            log::warn!("skipping {}: ground-truth mask {} not found", e.image.display(), p.display());
            skipped += 1;
        }
    }
    let mut acc = ScoreAccumulator::new();
    let mut scores = Vec::with_capacity(present.len());
    let mut attributes = Vec::new();
    let mut fixations = Vec::new();
    for chunk in present.chunks(batch_size.max(1)) {
        let preds = seg.segment(manifest, chunk)?;
        if preds.len() != chunk.len() {
            return Err(Error::shape("segmenter output count", chunk.len(), preds.len()));
        }
        for (e, seg) in chunk.iter().zip(preds) {
            let gt = raster::read_gray(&manifest.resolve(&e.mask))?.mapv(|v| v >= 0.5);
            let pred = if seg.mask.dim() == gt.dim() {
                seg.mask
            } else {
                resize_bilinear(&seg.mask, gt.nrows(), gt.ncols())
            };
            let fixation = seg.fixation.map(|f| {
                let stem = e.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let name = format!("{:05}_{stem}.png", scores.len());
                fixations.push((name.clone(), stretch(&resize_bilinear(&f, gt.nrows(), gt.ncols()))));
                name
            });
            attributes.extend(seg.attributes);
            let pred = pred.mapv(|v| v.clamp(0.0, 1.0));
            let s = Scores::compute(pred.view(), gt.view())?;
            acc.push(&s);
            scores.push(ImageScore {
                image: manifest.resolve(&e.image).display().to_string(),
                s_alpha: s.s_alpha,
                e_phi: s.e_phi,
                f_beta_w: s.f_beta_w,
                mae: s.mae,
                fixation,
            });
        }
    }
    let mean = acc.mean().ok_or(Error::Empty("evaluation manifest with ground-truth masks"))?;
    Ok(EvalReport {
        scores,
        summary: EvalSummary {
            evaluated: acc.count(),
            skipped,
            s_alpha: mean.s_alpha,
            e_phi: mean.e_phi,
            f_beta_w: mean.f_beta_w,
            mae: mean.mae,
        },
        attributes,
        fixations,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Writes `scores.jsonl` and `summary.json` into `dir`, plus
/// `attributes.jsonl` and `fixations/*.png` when the segmenter produced them.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(SCORES_FILE), &report.scores)?;
    if !report.attributes.is_empty() {
        write_jsonl(&dir.join(ATTRIBUTES_FILE), &report.attributes)?;
    }
    for (name, f) in &report.fixations {
        raster::write_gray8(&dir.join(FIXATION_DIR).join(name), f)?;
    }
    let path = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&report.summary)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
