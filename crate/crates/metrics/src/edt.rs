//! Exact Euclidean feature transform on a 2-D grid.
//!
//! Separable lower-envelope (Voronoi) construction, first along rows for
//! every column, then along columns for every row. Ties are resolved exactly
//! as the widely used N-D image-processing implementation does (the earlier
//! site wins), which matters for the weighted F-measure: background pixels
//! copy the error of their nearest foreground pixel, and equidistant
//! candidates can carry different errors.

use ndarray::{Array2, ArrayView2};

/// Nearest feature pixel and distance to it, for every pixel of the grid.
#[derive(Debug, Clone)]
pub struct FeatureTransform {
    /// Euclidean distance to the nearest feature pixel.
    pub distance: Array2<f64>,
    /// `(row, col)` of that feature pixel; `None` when the grid has no feature.
    pub nearest: Array2<Option<(usize, usize)>>,
}

type Site = [i64; 2];
const NONE: i64 = -1;

/// Computes the feature transform where `features[r, c] == true` marks a
/// feature (distance-zero) pixel.
pub fn feature_transform(features: ArrayView2<bool>) -> FeatureTransform {
    let (h, w) = features.dim();
    let mut ft = Array2::from_elem((h, w), [NONE, NONE]);
    let mut line: Vec<Site> = Vec::with_capacity(h.max(w));
    let mut scratch = Vec::with_capacity(h.max(w));

    // Pass 1: along axis 0 (down each column).
    for c in 0..w {
        line.clear();
        for r in 0..h {
            line.push(if features[[r, c]] { [r as i64, c as i64] } else { [NONE, NONE] });
        }
        voronoi_line(&mut line, [0, c as i64], 0, &mut scratch);
        for r in 0..h {
            ft[[r, c]] = line[r];
        }
    }
    // Pass 2: along axis 1 (across each row).
    for r in 0..h {
        line.clear();
        line.extend((0..w).map(|c| ft[[r, c]]));
        voronoi_line(&mut line, [r as i64, 0], 1, &mut scratch);
        for c in 0..w {
            ft[[r, c]] = line[c];
        }
    }

    let mut distance = Array2::zeros((h, w));
    let mut nearest = Array2::from_elem((h, w), None);
    for ((r, c), site) in ft.indexed_iter() {
        if site[0] >= 0 {
            let dr = (site[0] - r as i64) as f64;
            let dc = (site[1] - c as i64) as f64;
            distance[[r, c]] = (dr * dr + dc * dc).sqrt();
            nearest[[r, c]] = Some((site[0] as usize, site[1] as usize));
        } else {
            distance[[r, c]] = f64::INFINITY;
        }
    }
    FeatureTransform { distance, nearest }
}

/// One 1-D pass along axis `d` of the line at fixed coordinate `coor` on the
/// other axis. Entries with `site[0] < 0` carry no feature yet.
fn voronoi_line(line: &mut [Site], coor: [i64; 2], d: usize, g: &mut Vec<usize>) {
    let other = 1 - d;
    let f: Vec<Site> = line.to_vec();
    let off = |site: &Site| {
        let t = (site[other] - coor[other]) as f64;
        t * t
    };

    g.clear();
    for (ii, site) in f.iter().enumerate() {
        if site[0] < 0 {
            continue;
        }
        let fd = site[d] as f64;
        let w_r = off(site);
        while g.len() >= 2 {
            let idx1 = g[g.len() - 1];
            let idx2 = g[g.len() - 2];
            let f1 = f[idx1][d] as f64;
            let a = f1 - f[idx2][d] as f64;
            let b = fd - f1;
            let c = a + b;
            let u_r = off(&f[idx2]);
            let v_r = off(&f[idx1]);
            if c * v_r - b * u_r - a * w_r - a * b * c <= 0.0 {
                break;
            }
            g.pop();
        }
        g.push(ii);
    }
    if g.is_empty() {
        return;
    }

    let dist = |site: &Site, ii: usize| {
        let t = (site[d] - ii as i64) as f64;
        t * t + off(site)
    };
    let mut l = 0usize;
    for (ii, out) in line.iter_mut().enumerate() {
        let mut delta1 = dist(&f[g[l]], ii);
        while l + 1 < g.len() {
            let delta2 = dist(&f[g[l + 1]], ii);
            if delta1 <= delta2 {
                break;
            }
            delta1 = delta2;
            l += 1;
        }
        *out = f[g[l]];
    }
}
