//! Evaluation measures for binary foreground-map segmentation.
//!
//! The four measures used by the camouflaged object segmentation protocol:
//!
//! - [`mae`]: mean absolute error.
//! - [`s_measure`]: structure measure, object-aware plus region-aware
//!   structural similarity with trade-off `alpha = 0.5`.
//! - [`e_measure`]: mean enhanced-alignment measure over a 256-level
//!   threshold sweep.
//! - [`weighted_f_measure`]: weighted F-measure with `beta^2 = 1`.
//!
//! Internals follow the widely used reference implementations bit-for-bit
//! where it matters (threshold quantisation, centroid rounding, Euclidean
//! feature-transform tie breaking), so scores can be compared with numbers
//! produced by the standard evaluation toolboxes.
//!
//! Predictions are real rasters in `[0, 1]`; ground truth is boolean. No
//! min-max normalisation is applied to the prediction here; callers who
//! want the toolbox behaviour for 8-bit maps can use [`normalize_min_max`].

mod edt;
mod enhanced;
mod mae;
mod structure;
mod weighted_f;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use edt::{feature_transform, FeatureTransform};
pub use enhanced::{e_measure, e_measure_curve};
pub use mae::mae;
pub use structure::s_measure;
pub use weighted_f::weighted_f_measure;

/// Machine epsilon as used by the reference implementations (`eps` / `np.spacing(1)`).
pub(crate) const EPS: f64 = f64::EPSILON;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: prediction is {pred:?}, ground truth is {gt:?}")]
    ShapeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("empty raster")]
    Empty,
    #[error("prediction value {value} at ({row}, {col}) is outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Scores of one prediction against one ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_alpha: f64,
    pub e_phi: f64,
    pub f_beta_w: f64,
    pub mae: f64,
}

impl Scores {
    /// Computes all four measures.
    pub fn compute(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<Self> {
        Ok(Self {
            s_alpha: s_measure(pred, gt)?,
            e_phi: e_measure(pred, gt)?,
            f_beta_w: weighted_f_measure(pred, gt)?,
            mae: mae(pred, gt)?,
        })
    }
}

/// Running dataset-level mean of [`Scores`].
///
/// Sums are kept in `f64` and the mean is a plain division, so the result
/// does not depend on the order in which images are added beyond ordinary
/// floating-point reassociation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreAccumulator {
    count: usize,
    sum: [f64; 4],
}

impl ScoreAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: &Scores) {
        self.count += 1;
        self.sum[0] += s.s_alpha;
        self.sum[1] += s.e_phi;
        self.sum[2] += s.f_beta_w;
        self.sum[3] += s.mae;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<Scores> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        Some(Scores {
            s_alpha: self.sum[0] / n,
            e_phi: self.sum[1] / n,
            f_beta_w: self.sum[2] / n,
            mae: self.sum[3] / n,
        })
    }
}

/// Min-max rescales a map to `[0, 1]`, leaving constant maps untouched
/// (the toolbox `mapminmax(im2double(..))` convention).
pub fn normalize_min_max(pred: ArrayView2<f64>) -> Array2<f64> {
    let (lo, hi) = pred
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo || !hi.is_finite() {
        return pred.to_owned();
    }
    pred.mapv(|v| (v - lo) / (hi - lo))
}

pub(crate) fn check_inputs(pred: &ArrayView2<f64>, gt: &ArrayView2<bool>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(MetricError::ShapeMismatch { pred: pred.dim(), gt: gt.dim() });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    for ((row, col), &value) in pred.indexed_iter() {
        if !(0.0..=1.0).contains(&value) {
            return Err(MetricError::OutOfRange { row, col, value });
        }
    }
    Ok(())
}
