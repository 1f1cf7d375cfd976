use ndarray::{s, ArrayView2};

use crate::{check_inputs, Result, EPS};

const ALPHA: f64 = 0.5;

/// Structure measure `S_alpha` with `alpha = 0.5`.
///
/// Ground truth that is entirely background scores `1 - mean(pred)`,
/// entirely foreground scores `mean(pred)`.
pub fn s_measure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    check_inputs(&pred, &gt)?;
    let fg = gt.iter().filter(|&&g| g).count();
    let n = gt.len();
    let y = fg as f64 / n as f64;
    if fg == 0 {
        return Ok(1.0 - mean(pred.iter().copied()));
    }
    if fg == n {
        return Ok(mean(pred.iter().copied()));
    }
    let object_score = object(&pred, &gt, y) * ALPHA;
    let region_score = region(&pred, &gt) * (1.0 - ALPHA);
    Ok((object_score + region_score).max(0.0))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn s_object(values: &[f64]) -> f64 {
    let m = mean(values.iter().copied());
    let std = if values.len() > 1 {
        let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * m / (m * m + 1.0 + std + EPS)
}

fn object(pred: &ArrayView2<f64>, gt: &ArrayView2<bool>, gt_mean: f64) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        if g {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    s_object(&fg) * gt_mean + s_object(&bg) * (1.0 - gt_mean)
}

fn region(pred: &ArrayView2<f64>, gt: &ArrayView2<bool>) -> f64 {
    let (h, w) = gt.dim();
    let area = (h * w) as f64;

    // Centroid of the foreground, rounded half-to-even and shifted by one so
    // that the split point is inclusive the way `1:X` is in the original code.
    let (mut sum_r, mut sum_c, mut count) = (0.0, 0.0, 0usize);
    for ((r, c), &g) in gt.indexed_iter() {
        if g {
            sum_r += r as f64;
            sum_c += c as f64;
            count += 1;
        }
    }
    let (cy, cx) = if count == 0 {
        ((h as f64 / 2.0).round_ties_even(), (w as f64 / 2.0).round_ties_even())
    } else {
        ((sum_r / count as f64).round_ties_even(), (sum_c / count as f64).round_ties_even())
    };
    let cy = cy as usize + 1;
    let cx = cx as usize + 1;

    let w_lt = (cx * cy) as f64 / area;
    let w_rt = (cy * (w - cx)) as f64 / area;
    let w_lb = ((h - cy) * cx) as f64 / area;
    let w_rb = 1.0 - w_lt - w_rt - w_lb;

    let quad = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        ssim(
            &pred.slice(s![rows.clone(), cols.clone()]),
            &gt.slice(s![rows, cols]),
        )
    };
    quad(0..cy, 0..cx) * w_lt
        + quad(0..cy, cx..w) * w_rt
        + quad(cy..h, 0..cx) * w_lb
        + quad(cy..h, cx..w) * w_rb
}

fn ssim(pred: &ArrayView2<f64>, gt: &ArrayView2<bool>) -> f64 {
    let n = pred.len();
    // An empty quadrant has zero weight; the reference propagates a NaN here.
    if n == 0 {
        return 0.0;
    }
    let x = mean(pred.iter().copied());
    let y = mean(gt.iter().map(|&g| if g { 1.0 } else { 0.0 }));
    let denom = (n - 1) as f64 + EPS;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let dx = p - x;
        let dy = if g { 1.0 } else { 0.0 } - y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sigma_x, sigma_y, sigma_xy) = (sxx / denom, syy / denom, sxy / denom);

    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x + sigma_y);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn square(n: usize) -> Array2<bool> {
        Array2::from_shape_fn((n, n), |(r, c)| (n / 4..3 * n / 4).contains(&r) && (n / 4..3 * n / 4).contains(&c))
    }

    #[test]
    fn degenerate_ground_truth() {
        let gt = Array2::from_elem((4, 4), false);
        let pred = Array2::from_elem((4, 4), 0.25);
        assert_eq!(s_measure(pred.view(), gt.view()).unwrap(), 0.75);
        let gt = Array2::from_elem((4, 4), true);
        assert_eq!(s_measure(pred.view(), gt.view()).unwrap(), 0.25);
    }

    #[test]
    fn identity_scores_one() {
        let gt = square(64);
        let pred = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        let s = s_measure(pred.view(), gt.view()).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn complement_is_low() {
        let gt = square(64);
        let pred = gt.mapv(|g| if g { 0.0 } else { 1.0 });
        assert!(s_measure(pred.view(), gt.view()).unwrap() <= 0.25);
    }

    #[test]
    fn foreground_in_last_column_does_not_produce_nan() {
        let mut gt = Array2::from_elem((6, 6), false);
        for r in 0..6 {
            gt[[r, 5]] = true;
        }
        let pred = Array2::from_elem((6, 6), 0.3);
        assert!(s_measure(pred.view(), gt.view()).unwrap().is_finite());
    }
}
