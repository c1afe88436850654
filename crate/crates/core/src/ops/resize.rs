use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

/// Source taps along one axis: `(lower, upper, fraction)`.
fn taps(input: usize, out: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers and edge clamping.
///
/// Resizing to the current size returns an exact copy. Interpolation uses
/// the `a + t·(b − a)` form so constant regions stay exactly constant.
pub fn bilinear_resize(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("bilinear_resize", "output extents must be >= 1"));
    }
    if (oh, ow) == (h, w) {
        return Ok(x.clone());
    }
    flops::record(OpKind::Resize, (n * c * oh * ow) as u64 * cost::BILINEAR_PER_ELEM);
    let (ty, tx) = (taps(h, oh), taps(w, ow));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                let (cc, d) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                let top = a + fx * (b - a);
                let bot = cc + fx * (d - cc);
                out.push(top + fy * (bot - top));
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

pub fn bilinear_resize_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::mismatch("bilinear_resize_backward", "rank", 4, input_shape.len())),
    };
    let (gn, gc, oh, ow) = grad_out.dims4()?;
    if (gn, gc) != (n, c) {
        return Err(Error::invalid("bilinear_resize_backward", "upstream gradient shape mismatch"));
    }
    if (oh, ow) == (h, w) {
        return Ok(grad_out.clone());
    }
    let (ty, tx) = (taps(h, oh), taps(w, ow));
    let mut gx = vec![0.0f32; n * c * h * w];
    for (dst, go) in gx.chunks_mut(h * w).zip(grad_out.data().chunks(oh * ow)) {
        for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = go[i * ow + j];
                dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                dst[y1 * w + x0] += g * fy * (1.0 - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    Tensor::new(input_shape, gx)
}
