use ndarray::{Array2, ArrayView2};

use crate::{check_inputs, feature_transform, Result, EPS};

const BETA: f64 = 1.0;

/// Weighted F-measure `F_beta^w` with `beta^2 = 1`.
///
/// Returns 0 for an all-background ground truth, as the reference does.
pub fn weighted_f_measure(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    check_inputs(&pred, &gt)?;
    if !gt.iter().any(|&g| g) {
        return Ok(0.0);
    }
    let (h, w) = gt.dim();
    let ft = feature_transform(gt);

    let gt_f = |r: usize, c: usize| if gt[[r, c]] { 1.0 } else { 0.0 };
    let err = Array2::from_shape_fn((h, w), |(r, c)| (pred[[r, c]] - gt_f(r, c)).abs());

    // Pixel dependency: background pixels take the error at their nearest
    // foreground pixel before smoothing.
    let err_t = Array2::from_shape_fn((h, w), |(r, c)| {
        if gt[[r, c]] {
            err[[r, c]]
        } else {
            let (nr, nc) = ft.nearest[[r, c]].expect("ground truth has foreground");
            err[[nr, nc]]
        }
    });
    let kernel = gaussian_kernel(7, 5.0);
    let err_a = convolve_zero(&err_t, &kernel);

    let ln_half_over_5 = 0.5f64.ln() / 5.0;
    let (mut sum_ew_fg, mut sum_ew_bg, mut n_fg) = (0.0, 0.0, 0usize);
    for r in 0..h {
        for c in 0..w {
            let e = err[[r, c]];
            if gt[[r, c]] {
                let min_e = if err_a[[r, c]] < e { err_a[[r, c]] } else { e };
                sum_ew_fg += min_e;
                n_fg += 1;
            } else {
                // Pixel importance grows with distance from the foreground.
                let b = 2.0 - (ln_half_over_5 * ft.distance[[r, c]]).exp();
                sum_ew_bg += e * b;
            }
        }
    }

    let tp_w = n_fg as f64 - sum_ew_fg;
    let fp_w = sum_ew_bg;
    let recall = 1.0 - sum_ew_fg / n_fg as f64;
    let precision = tp_w / (tp_w + fp_w + EPS);
    Ok((1.0 + BETA) * recall * precision / (recall + BETA * precision + EPS))
}

/// Normalised square Gaussian kernel, truncating taps below `eps * max`
/// (the `fspecial('gaussian', ..)` convention).
fn gaussian_kernel(size: usize, sigma: f64) -> Array2<f64> {
    let m = (size as f64 - 1.0) / 2.0;
    let mut k = Array2::from_shape_fn((size, size), |(r, c)| {
        let y = r as f64 - m;
        let x = c as f64 - m;
        (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
    });
    let max = k.iter().copied().fold(0.0, f64::max);
    k.mapv_inplace(|v| if v < f64::EPSILON * max { 0.0 } else { v });
    let sum = k.sum();
    if sum != 0.0 {
        k /= sum;
    }
    k
}

/// Same-size 2-D convolution with zero padding outside the image.
fn convolve_zero(img: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (kh, kw) = kernel.dim();
    let (oy, ox) = ((kh / 2) as isize, (kw / 2) as isize);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..kh {
            let rr = r as isize + oy - i as isize;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for j in 0..kw {
                let cc = c as isize + ox - j as isize;
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                acc += kernel[[i, j]] * img[[rr as usize, cc as usize]];
            }
        }
        acc
    })
}
