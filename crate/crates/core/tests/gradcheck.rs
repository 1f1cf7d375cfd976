//! Autograd gradients of the four losses against central differences, and
//! the losses themselves against direct-summation oracles.

mod common;

use std::time::Instant;

use camoseg::attribute::{attribute_loss, AttributeScores};
use camoseg::fixation::{fixation_loss, FixationMap, KL_EPS};
use camoseg::mask::{loss_kernel, mask_loss, MaskLogits};
use camoseg::nn::l2_normalize_rows;
use camoseg::objective::consistency_loss;
use candle_core::Tensor;
use common::*;

const INSTANCES: u64 = 20;
const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

#[test]
fn fixation_loss_gradient() {
    let start = Instant::now();
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let x = randn(&mut r, 64, 2.0);
        let gt = tensor(&fixation_target(&mut r, 64), &[1, 8, 8]);
        let f = |t: &Tensor| fixation_loss(&FixationMap { logits: t.clone() }, &gt).unwrap();
        let a = analytic_grad(&x, &[1, 8, 8], &f);
        let n = numeric_grad(&x, &[1, 8, 8], H, &f);
        let e = relative_error(&a, &n);
        assert!(e < TOL, "instance {seed}: relative error {e:e}");
    }
    assert!(start.elapsed().as_secs() < 120);
}

#[test]
fn attribute_loss_gradient() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let x = randn(&mut r, 2 * 17, 0.5);
        let target = tensor(&[fixation_target(&mut r, 17), fixation_target(&mut r, 17)].concat(), &[2, 17]);
        let f = |t: &Tensor| attribute_loss(&AttributeScores { raw: t.clone() }, &target).unwrap();
        let e = relative_error(&analytic_grad(&x, &[2, 17], &f), &numeric_grad(&x, &[2, 17], H, &f));
        assert!(e < TOL, "instance {seed}: relative error {e:e}");
    }
}

#[test]
fn mask_loss_gradient() {
    let k = loss_kernel(8);
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let x = randn(&mut r, 64, 3.0);
        let gt = tensor(&binary_blob(&mut r, 8), &[1, 8, 8]);
        let f = |t: &Tensor| mask_loss(&MaskLogits { logits: t.clone() }, &gt, k).unwrap();
        let e = relative_error(&analytic_grad(&x, &[1, 8, 8], &f), &numeric_grad(&x, &[1, 8, 8], H, &f));
        assert!(e < TOL, "instance {seed}: relative error {e:e}");
    }
}

#[test]
fn consistency_loss_gradient_through_normalisation() {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let a = randn(&mut r, 2 * 17, 1.0);
        let b = tensor(&randn(&mut r, 2 * 17, 1.0), &[2, 17]);
        let bn = l2_normalize_rows(&b).unwrap();
        let f = |t: &Tensor| consistency_loss(&l2_normalize_rows(t).unwrap(), &bn).unwrap();
        let e = relative_error(&analytic_grad(&a, &[2, 17], &f), &numeric_grad(&a, &[2, 17], H, &f));
        assert!(e < TOL, "instance {seed}: relative error {e:e}");
        // And with respect to the second argument.
        let an = l2_normalize_rows(&tensor(&a, &[2, 17])).unwrap();
        let b_raw = values(&b);
        let g = |t: &Tensor| consistency_loss(&an, &l2_normalize_rows(t).unwrap()).unwrap();
        let e = relative_error(&analytic_grad(&b_raw, &[2, 17], &g), &numeric_grad(&b_raw, &[2, 17], H, &g));
        assert!(e < TOL, "instance {seed}: relative error {e:e}");
    }
}

/// Direct double-loop evaluation of the boundary-weighted BCE + IoU.
fn mask_loss_oracle(x: &[f64], g: &[f64], n: usize, k: usize) -> f64 {
    let half = (k / 2) as isize;
    let mut wsum = 0.0;
    let mut wbce = 0.0;
    let mut inter = 0.0;
    let mut union = 0.0;
    for r in 0..n as isize {
        for c in 0..n as isize {
            let mut pool = 0.0;
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && rr < n as isize && cc < n as isize {
                        pool += g[(rr * n as isize + cc) as usize];
                    }
                }
            }
            let i = (r * n as isize + c) as usize;
            let w = 1.0 + 5.0 * (pool / (k * k) as f64 - g[i]).abs();
            let p = 1.0 / (1.0 + (-x[i]).exp());
            let bce = -(g[i] * p.ln() + (1.0 - g[i]) * (1.0 - p).ln());
            wsum += w;
            wbce += w * bce;
            inter += w * p * g[i];
            union += w * (p + g[i] - p * g[i]);
        }
    }
    wbce / wsum + 1.0 - (inter + 1.0) / (union + 1.0)
}

#[test]
fn mask_loss_matches_direct_summation() {
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let x = randn(&mut r, 64, 3.0);
        let g = binary_blob(&mut r, 8);
        let got = scalar(&mask_loss(&MaskLogits { logits: tensor(&x, &[1, 8, 8]) }, &tensor(&g, &[1, 8, 8]), 3).unwrap());
        let want = mask_loss_oracle(&x, &g, 8, 3);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn fixation_loss_matches_direct_summation() {
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let x = randn(&mut r, 64, 2.0);
        let g = fixation_target(&mut r, 64);
        let got = scalar(&fixation_loss(&FixationMap { logits: tensor(&x, &[1, 8, 8]) }, &tensor(&g, &[1, 8, 8])).unwrap());

        let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        let z = 1.0 + 64.0 * KL_EPS;
        let kl: f64 = p
            .iter()
            .zip(&g)
            .map(|(&pi, &gi)| {
                let (ps, gs) = ((pi + KL_EPS) / z, (gi + KL_EPS) / z);
                gs * (gs / ps).ln()
            })
            .sum();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mp, mg) = (mean(&p), mean(&g));
        let cov: f64 = p.iter().zip(&g).map(|(a, b)| (a - mp) * (b - mg)).sum();
        let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum();
        let vg: f64 = g.iter().map(|b| (b - mg).powi(2)).sum();
        let want = kl + 1.0 - cov / (vp * vg).sqrt();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn consistency_matches_dot_product() {
    for seed in 0..INSTANCES {
        let mut r = rng(600 + seed);
        let a = l2_normalize_rows(&tensor(&randn(&mut r, 16, 1.0), &[1, 16])).unwrap();
        let b = l2_normalize_rows(&tensor(&randn(&mut r, 16, 1.0), &[1, 16])).unwrap();
        let dot: f64 = values(&a).iter().zip(values(&b)).map(|(x, y)| x * y).sum();
        let got = scalar(&consistency_loss(&a, &b).unwrap());
        assert!((got - (1.0 - dot)).abs() < 1e-12);
        let back = scalar(&consistency_loss(&b, &a).unwrap());
        assert!((got - back).abs() < 1e-15 && (0.0..=2.0).contains(&got));
    }
}
