use ndarray::ArrayView2;

use crate::{check_inputs, Result, EPS};

/// Number of binarisation thresholds in the sweep.
pub const LEVELS: usize = 256;

/// Mean enhanced-alignment measure: the average of [`e_measure_curve`].
pub fn e_measure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    let curve = e_measure_curve(pred, gt)?;
    Ok(curve.iter().sum::<f64>() / LEVELS as f64)
}

/// Enhanced-alignment score at each of the 256 thresholds, highest threshold
/// first (entry `k` binarises at `pred * 255 >= 255 - k`).
///
/// The prediction is quantised to 8 bits by truncation before thresholding,
/// and the sum of the enhanced alignment matrix is divided by `N - 1`; both
/// match the reference toolbox.
pub fn e_measure_curve(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<Vec<f64>> {
    check_inputs(&pred, &gt)?;
    let size = gt.len();
    let gt_fg = gt.iter().filter(|&&g| g).count();

    let mut fg_hist = [0usize; LEVELS];
    let mut bg_hist = [0usize; LEVELS];
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let level = (p * 255.0) as u8 as usize;
        if g {
            fg_hist[level] += 1;
        } else {
            bg_hist[level] += 1;
        }
    }

    let size_f = size as f64;
    let mut curve = Vec::with_capacity(LEVELS);
    let (mut fg_fg, mut fg_bg) = (0usize, 0usize);
    for level in (0..LEVELS).rev() {
        fg_fg += fg_hist[level];
        fg_bg += bg_hist[level];
        let pred_fg = fg_fg + fg_bg;
        let pred_bg = size - pred_fg;

        let enhanced_sum = if gt_fg == 0 {
            pred_bg as f64
        } else if gt_fg == size {
            pred_fg as f64
        } else {
            let bg_fg = gt_fg - fg_fg;
            let bg_bg = pred_bg - bg_fg;
            let mean_pred = pred_fg as f64 / size_f;
            let mean_gt = gt_fg as f64 / size_f;
            let parts = [
                (fg_fg, 1.0 - mean_pred, 1.0 - mean_gt),
                (fg_bg, 1.0 - mean_pred, 0.0 - mean_gt),
                (bg_fg, 0.0 - mean_pred, 1.0 - mean_gt),
                (bg_bg, 0.0 - mean_pred, 0.0 - mean_gt),
            ];
            parts
                .iter()
                .map(|&(count, a, b)| {
                    let align = 2.0 * (a * b) / (a * a + b * b + EPS);
                    let enhanced = (align + 1.0) * (align + 1.0) / 4.0;
                    enhanced * count as f64
                })
                .sum()
        };
        curve.push(enhanced_sum / (size_f - 1.0 + EPS));
    }
    Ok(curve)
}
