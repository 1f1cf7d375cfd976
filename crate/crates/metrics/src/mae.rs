use ndarray::ArrayView2;

use crate::{check_inputs, Result};

/// Mean absolute error between a prediction and a binary mask.
///
/// The sum is taken pairwise in row-major order, blocked the way numpy
/// reduces contiguous float arrays, so the result matches `np.mean` bit for
/// bit.
pub fn mae(pred: ArrayView2<f64>, gt: ArrayView2<bool>) -> Result<f64> {
    check_inputs(&pred, &gt)?;
    let diff: Vec<f64> = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .collect();
    Ok(pairwise_sum(&diff) / diff.len() as f64)
}

const BLOCK: usize = 128;

fn pairwise_sum(a: &[f64]) -> f64 {
    let n = a.len();
    if n < 8 {
        a.iter().fold(0.0, |s, &v| s + v)
    } else if n <= BLOCK {
        let mut r = [0.0; 8];
        r.copy_from_slice(&a[..8]);
        let whole = n - n % 8;
        for chunk in a[8..whole].chunks_exact(8) {
            for (acc, &v) in r.iter_mut().zip(chunk) {
                *acc += v;
            }
        }
        let mut s = ((r[0] + r[1]) + (r[2] + r[3])) + ((r[4] + r[5]) + (r[6] + r[7]));
        for &v in &a[whole..] {
            s += v;
        }
        s
    } else {
        let mut half = n / 2;
        half -= half % 8;
        pairwise_sum(&a[..half]) + pairwise_sum(&a[half..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn identity_and_complement() {
        let gt = array![[true, false], [false, true]];
        let exact = gt.mapv(|g| if g { 1.0 } else { 0.0 });
        assert_eq!(mae(exact.view(), gt.view()).unwrap(), 0.0);
        let comp = exact.mapv(|v| 1.0 - v);
        assert_eq!(mae(comp.view(), gt.view()).unwrap(), 1.0);
    }

    #[test]
    fn random_4x4_matches_direct_sum() {
        let pred = array![
            [0.11, 0.92, 0.35, 0.0],
            [0.5, 0.25, 0.75, 1.0],
            [0.33, 0.66, 0.01, 0.99],
            [0.2, 0.4, 0.6, 0.8]
        ];
        let gt = array![
            [false, true, false, false],
            [true, true, false, true],
            [false, false, false, true],
            [false, true, true, false]
        ];
        let mut oracle = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                let g = if gt[[r, c]] { 1.0 } else { 0.0 };
                oracle += (pred[[r, c]] - g as f64).abs();
            }
        }
        oracle /= 16.0;
        assert!((mae(pred.view(), gt.view()).unwrap() - oracle).abs() < 1e-12);
    }

    fn mean_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    proptest! {
        // MAE on [0,1] maps is an L1 metric: d(x, z) <= d(x, y) + d(y, z).
        // Binary points go through `mae`; the general triple through the same formula.
        #[test]
        fn triangle_inequality(
            x in proptest::collection::vec(0.0f64..=1.0, 25),
            y in proptest::collection::vec(0.0f64..=1.0, 25),
            z in proptest::collection::vec(any::<bool>(), 25),
        ) {
            let x = Array2::from_shape_vec((5, 5), x).unwrap();
            let y = Array2::from_shape_vec((5, 5), y).unwrap();
            let zb = Array2::from_shape_vec((5, 5), z).unwrap();
            let zf = zb.mapv(|b| if b { 1.0 } else { 0.0 });
            let d_xz = mae(x.view(), zb.view()).unwrap();
            let d_yz = mae(y.view(), zb.view()).unwrap();
            let d_xy = mean_abs(&x, &y);
            prop_assert!(d_xz <= d_xy + d_yz + 1e-12);
            prop_assert!((d_xz - mean_abs(&x, &zf)).abs() < 1e-12);
            prop_assert!(d_xy <= d_xz + d_yz + 1e-12);
        }
    }
}
