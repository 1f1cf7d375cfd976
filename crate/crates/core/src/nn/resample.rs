//! Bilinear resampling (`align_corners = false`) expressed as two matrix
//! products, so it is differentiable with respect to its input.

use candle_core::Tensor;

use crate::Result;

/// Source taps `(i0, i1, w1)` for each output index: the output samples
/// `(1 - w1) * src[i0] + w1 * src[i1]`. Half-pixel centres, clamped at the
/// borders.
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (x.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let w1 = if i1 == i0 { 0.0 } else { x - i0 as f64 };
            (i0, i1, w1)
        })
        .collect()
}

/// `(dst, src)` interpolation matrix.
pub fn bilinear_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    for (o, (i0, i1, w1)) in bilinear_taps(src, dst).into_iter().enumerate() {
        m[o * src + i0] += 1.0 - w1;
        m[o * src + i1] += w1;
    }
    m
}

/// Resizes the two trailing axes of a `(B, C, H, W)` tensor.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let dev = x.device();
    let mh = Tensor::from_vec(bilinear_matrix(h, out_h), (out_h, h), dev)?.to_dtype(x.dtype())?;
    let mw_t = Tensor::from_vec(bilinear_matrix(w, out_w), (out_w, w), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    // Columns: (B*C*H, W) x (W, W') ; rows: (H', H) x (H, W') per image.
    let cols = x.reshape((b * c * h, w))?.matmul(&mw_t)?.reshape((b * c, h, out_w))?;
    let rows = mh.broadcast_left(b * c)?.contiguous()?.matmul(&cols)?;
    Ok(rows.reshape((b, c, out_h, out_w))?)
}
