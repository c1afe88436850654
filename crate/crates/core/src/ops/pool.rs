use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    H,
    W,
}

/// Half-open input windows along one axis.
pub(crate) type Windows = Vec<(usize, usize)>;

pub(crate) fn fixed_windows(input: usize, kernel: usize, stride: usize) -> Option<Windows> {
    if kernel == 0 || stride == 0 || kernel > input {
        return None;
    }
    let out = (input - kernel) / stride + 1;
    Some((0..out).map(|i| (i * stride, i * stride + kernel)).collect())
}

/// `start = floor(i·n/out)`, `end = ceil((i+1)·n/out)`.
pub(crate) fn adaptive_windows(input: usize, out: usize) -> Windows {
    (0..out)
        .map(|i| ((i * input) / out, ((i + 1) * input).div_ceil(out)))
        .collect()
}

fn pool(x: &Tensor, rows: &Windows, cols: &Windows) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (rows.len(), cols.len());
    let window_sum: usize = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |c| (r.1 - r.0) * (c.1 - c.0)))
        .sum();
    flops::record(OpKind::Pool, cost::pool(n * c, window_sum, oh * ow));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for &(r0, r1) in rows {
            for &(c0, c1) in cols {
                let mut s = 0.0f32;
                for y in r0..r1 {
                    for v in &plane[y * w + c0..y * w + c1] {
                        s += v;
                    }
                }
                out.push(s / ((r1 - r0) * (c1 - c0)) as f32);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

fn pool_backward(input_shape: &[usize], rows: &Windows, cols: &Windows, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::mismatch("pool_backward", "rank", 4, input_shape.len())),
    };
    if grad_out.shape() != [n, c, rows.len(), cols.len()] {
        return Err(Error::invalid("pool_backward", "upstream gradient shape mismatch"));
    }
    let mut gx = vec![0.0f32; n * c * h * w];
    let per_plane = rows.len() * cols.len();
    for (plane, dst) in gx.chunks_mut(h * w).enumerate() {
        let go = &grad_out.data()[plane * per_plane..][..per_plane];
        for (i, &(r0, r1)) in rows.iter().enumerate() {
            for (j, &(c0, c1)) in cols.iter().enumerate() {
                let share = go[i * cols.len() + j] / ((r1 - r0) * (c1 - c0)) as f32;
                for y in r0..r1 {
                    for v in &mut dst[y * w + c0..y * w + c1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, gx)
}

fn fixed(x: &Tensor, kernel: usize, stride: usize) -> Result<(Windows, Windows)> {
    let (_, _, h, w) = x.dims4()?;
    let rows = fixed_windows(h, kernel, stride)
        .ok_or_else(|| Error::invalid("avg_pool2d", format!("kernel {kernel} / stride {stride} invalid for height {h}")))?;
    let cols = fixed_windows(w, kernel, stride)
        .ok_or_else(|| Error::invalid("avg_pool2d", format!("kernel {kernel} / stride {stride} invalid for width {w}")))?;
    Ok((rows, cols))
}

fn adaptive(x: &Tensor, oh: usize, ow: usize) -> Result<(Windows, Windows)> {
    let (_, _, h, w) = x.dims4()?;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("adaptive_avg_pool2d", "output extents must be >= 1"));
    }
    if oh > h || ow > w {
        return Err(Error::invalid(
            "adaptive_avg_pool2d",
            format!("requested {oh}x{ow} exceeds input {h}x{w}"),
        ));
    }
    Ok((adaptive_windows(h, oh), adaptive_windows(w, ow)))
}

/// Square-window average pooling without padding.
pub fn avg_pool2d(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (rows, cols) = fixed(x, kernel, stride)?;
    pool(x, &rows, &cols)
}

pub fn avg_pool2d_backward(x: &Tensor, kernel: usize, stride: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (rows, cols) = fixed(x, kernel, stride)?;
    pool_backward(x.shape(), &rows, &cols, grad_out)
}

/// Average pooling to a fixed output size. Windows may be unequal and may
/// overlap when the ratio is not integral.
pub fn adaptive_avg_pool2d(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (rows, cols) = adaptive(x, oh, ow)?;
    pool(x, &rows, &cols)
}

pub fn adaptive_avg_pool2d_backward(x: &Tensor, oh: usize, ow: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (rows, cols) = adaptive(x, oh, ow)?;
    pool_backward(x.shape(), &rows, &cols, grad_out)
}

/// Mean along one spatial axis; that axis collapses to extent 1.
pub fn directional_avg_pool(x: &Tensor, axis: Axis) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    match axis {
        Axis::H => adaptive_avg_pool2d(x, 1, w),
        Axis::W => adaptive_avg_pool2d(x, h, 1),
    }
}

pub fn directional_avg_pool_backward(x: &Tensor, axis: Axis, grad_out: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    match axis {
        Axis::H => adaptive_avg_pool2d_backward(x, 1, w, grad_out),
        Axis::W => adaptive_avg_pool2d_backward(x, h, 1, grad_out),
    }
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    adaptive_avg_pool2d(x, 1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::full(&[1, 2, 6, 6], 2.5);
        let y = adaptive_avg_pool2d(&x, 4, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
        let y = avg_pool2d(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn adaptive_to_same_size_is_identity() {
        let x = Lcg::new(5).normal_tensor(&[1, 2, 5, 3], 1.0);
        assert!(adaptive_avg_pool2d(&x, 5, 3).unwrap().bit_eq(&x));
    }

    #[test]
    fn adaptive_matches_window_oracle() {
        let x = Lcg::new(6).normal_tensor(&[1, 1, 6, 6], 1.0);
        let y = adaptive_avg_pool2d(&x, 4, 4).unwrap();
        // windows for 6 -> 4: [0,2) [1,3) [3,5) [4,6)
        let bounds = [(0, 2), (1, 3), (3, 5), (4, 6)];
        for (i, &(r0, r1)) in bounds.iter().enumerate() {
            for (j, &(c0, c1)) in bounds.iter().enumerate() {
                let mut s = 0.0f64;
                for r in r0..r1 {
                    for c in c0..c1 {
                        s += x.data()[r * 6 + c] as f64;
                    }
                }
                let m = s / ((r1 - r0) * (c1 - c0)) as f64;
                assert!((y.data()[i * 4 + j] as f64 - m).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn directional_composes_to_global_mean() {
        let x = Lcg::new(7).normal_tensor(&[2, 3, 4, 5], 1.0);
        let hw = directional_avg_pool(&directional_avg_pool(&x, Axis::H).unwrap(), Axis::W).unwrap();
        let g = global_avg_pool(&x).unwrap();
        assert_eq!(hw.shape(), &[2, 3, 1, 1]);
        assert!(hw.max_abs_diff(&g) < 1e-6);
    }

    #[test]
    fn directional_matches_row_means() {
        let x = Lcg::new(8).normal_tensor(&[1, 1, 3, 4], 1.0);
        let rows = directional_avg_pool(&x, Axis::W).unwrap();
        assert_eq!(rows.shape(), &[1, 1, 3, 1]);
        for r in 0..3 {
            let m: f64 = (0..4).map(|c| x.data()[r * 4 + c] as f64).sum::<f64>() / 4.0;
            assert!((rows.data()[r] as f64 - m).abs() < 1e-6);
        }
    }

    #[test]
    fn adaptive_rejects_upsampling() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(adaptive_avg_pool2d(&x, 3, 2).is_err());
        assert!(avg_pool2d(&x, 3, 1).is_err());
    }
}
