use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    /// Zero padding applied to all four sides.
    pub pad: usize,
    pub groups: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, pad: usize, groups: usize) -> Self {
        Self { stride, pad, groups }
    }

    /// Stride 1, "same" padding for an odd kernel, one group.
    pub fn same(kernel: usize) -> Self {
        Self::new(1, kernel / 2, 1)
    }
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub cin_g: usize,
    pub cout_g: usize,
}

pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) fn geometry(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: Conv2dParams,
) -> Result<ConvGeom> {
    const OP: &str = "conv2d";
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, wcin, kh, kw) = w.dims4()?;
    if p.groups == 0 || p.stride == 0 {
        return Err(Error::invalid(OP, "stride and groups must be >= 1"));
    }
    if cin % p.groups != 0 {
        return Err(Error::invalid(
            OP,
            format!("input channels {cin} not divisible by groups {}", p.groups),
        ));
    }
    if cout % p.groups != 0 {
        return Err(Error::invalid(
            OP,
            format!("output channels {cout} not divisible by groups {}", p.groups),
        ));
    }
    if wcin != cin / p.groups {
        return Err(Error::mismatch(OP, "weight input-channel axis", cin / p.groups, wcin));
    }
    if let Some(b) = b {
        if b.numel() != cout {
            return Err(Error::mismatch(OP, "bias length", cout, b.numel()));
        }
    }
    let oh = conv_out_extent(h, kh, p.stride, p.pad)
        .ok_or_else(|| Error::invalid(OP, format!("kernel height {kh} exceeds padded input height")))?;
    let ow = conv_out_extent(wd, kw, p.stride, p.pad)
        .ok_or_else(|| Error::invalid(OP, format!("kernel width {kw} exceeds padded input width")))?;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        oh,
        ow,
        cin_g: cin / p.groups,
        cout_g: cout / p.groups,
    })
}

/// Output indices `o` in `[lo, hi)` for which `o * stride + k - pad` falls inside `[0, input)`.
fn valid_range(out: usize, input: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let mut lo = 0;
    while lo < out && lo * stride + k < pad {
        lo += 1;
    }
    let mut hi = out;
    while hi > lo && (hi - 1) * stride + k >= pad + input {
        hi -= 1;
    }
    (lo, hi)
}

/// 2-D convolution with zero padding.
///
/// Each output element is accumulated over input channel, then kernel row,
/// then kernel column, in ascending order; the bias is added last.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
    conv2d_as(OpKind::Conv, x, w, b, p)
}

/// [`conv2d`] with an explicit FLOP category.
pub fn conv2d_as(
    kind: OpKind,
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    p: Conv2dParams,
) -> Result<Tensor> {
    let g = geometry(x, w, b, p)?;
    flops::record(
        kind,
        cost::conv2d(g.n, g.cin_g, g.cout, g.kh, g.kw, g.oh, g.ow, b.is_some()),
    );

    let (xd, wdata) = (x.data(), w.data());
    let bias = b.map(|b| b.data());
    let plane_out = g.oh * g.ow;
    let plane_in = g.h * g.w;
    let rows: Vec<_> = (0..g.kh)
        .map(|k| valid_range(g.oh, g.h, k, p.stride, p.pad))
        .collect();
    let cols: Vec<_> = (0..g.kw)
        .map(|k| valid_range(g.ow, g.w, k, p.stride, p.pad))
        .collect();

    let mut out = vec![0.0f32; g.n * g.cout * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, acc)| {
        let (ni, co) = (idx / g.cout, idx % g.cout);
        let group = co / g.cout_g;
        for ci in 0..g.cin_g {
            let cin_abs = group * g.cin_g + ci;
            let xp = &xd[(ni * g.cin + cin_abs) * plane_in..][..plane_in];
            let wbase = ((co * g.cin_g) + ci) * g.kh * g.kw;
            for ky in 0..g.kh {
                let (ylo, yhi) = rows[ky];
                for kx in 0..g.kw {
                    let (xlo, xhi) = cols[kx];
                    let wv = wdata[wbase + ky * g.kw + kx];
                    for oy in ylo..yhi {
                        let iy = oy * p.stride + ky - p.pad;
                        let xrow = &xp[iy * g.w..][..g.w];
                        let arow = &mut acc[oy * g.ow..][..g.ow];
                        for ox in xlo..xhi {
                            arow[ox] += wv * xrow[ox * p.stride + kx - p.pad];
                        }
                    }
                }
            }
        }
        if let Some(bias) = bias {
            let bv = bias[co];
            acc.iter_mut().for_each(|v| *v += bv);
        }
    });
    Tensor::new(&[g.n, g.cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and (when present) bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    grad_out: &Tensor,
    p: Conv2dParams,
) -> Result<(Tensor, Tensor, Option<Tensor>)> {
    let g = geometry(x, w, None, p)?;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::invalid("conv2d_backward", "upstream gradient shape mismatch"));
    }
    let (xd, wdata, god) = (x.data(), w.data(), grad_out.data());
    let plane_out = g.oh * g.ow;
    let plane_in = g.h * g.w;
    let kk = g.kh * g.kw;
    let rows: Vec<_> = (0..g.kh)
        .map(|k| valid_range(g.oh, g.h, k, p.stride, p.pad))
        .collect();
    let cols: Vec<_> = (0..g.kw)
        .map(|k| valid_range(g.ow, g.w, k, p.stride, p.pad))
        .collect();

    let mut gx = vec![0.0f32; x.numel()];
    gx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, gxp)| {
        let (ni, ci) = (idx / g.cin, idx % g.cin);
        let group = ci / g.cin_g;
        let cil = ci % g.cin_g;
        for co in group * g.cout_g..(group + 1) * g.cout_g {
            let gop = &god[(ni * g.cout + co) * plane_out..][..plane_out];
            let wbase = (co * g.cin_g + cil) * kk;
            for ky in 0..g.kh {
                let (ylo, yhi) = rows[ky];
                for kx in 0..g.kw {
                    let (xlo, xhi) = cols[kx];
                    let wv = wdata[wbase + ky * g.kw + kx];
                    for oy in ylo..yhi {
                        let iy = oy * p.stride + ky - p.pad;
                        for ox in xlo..xhi {
                            gxp[iy * g.w + ox * p.stride + kx - p.pad] += wv * gop[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    });

    let mut gw = vec![0.0f32; w.numel()];
    gw.par_chunks_mut(g.cin_g * kk).enumerate().for_each(|(co, gwc)| {
        let group = co / g.cout_g;
        for ni in 0..g.n {
            let gop = &god[(ni * g.cout + co) * plane_out..][..plane_out];
            for ci in 0..g.cin_g {
                let xp = &xd[(ni * g.cin + group * g.cin_g + ci) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (ylo, yhi) = rows[ky];
                    for kx in 0..g.kw {
                        let (xlo, xhi) = cols[kx];
                        let mut s = 0.0f32;
                        for oy in ylo..yhi {
                            let iy = oy * p.stride + ky - p.pad;
                            for ox in xlo..xhi {
                                s += gop[oy * g.ow + ox] * xp[iy * g.w + ox * p.stride + kx - p.pad];
                            }
                        }
                        gwc[ci * kk + ky * g.kw + kx] += s;
                    }
                }
            }
        }
    });

    let gb = has_bias.then(|| {
        let mut gb = vec![0.0f32; g.cout];
        for ni in 0..g.n {
            for (co, slot) in gb.iter_mut().enumerate() {
                *slot += god[(ni * g.cout + co) * plane_out..][..plane_out].iter().sum::<f32>();
            }
        }
        Tensor::new(&[g.cout], gb)
    });

    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(w.shape(), gw)?,
        gb.transpose()?,
    ))
}

/// Pads the two spatial axes by repeating the edge rows and columns.
pub fn pad_replicate(x: &Tensor, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; n * c * ph * pw];
    for (plane, dst) in out.chunks_mut(ph * pw).enumerate() {
        let src = &x.data()[plane * h * w..][..h * w];
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            for xx in 0..pw {
                let sx = xx.saturating_sub(pad).min(w - 1);
                dst[y * pw + xx] = src[sy * w + sx];
            }
        }
    }
    Tensor::new(&[n, c, ph, pw], out)
}

pub fn pad_replicate_backward(input_shape: &[usize], pad: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::mismatch("pad_replicate_backward", "rank", 4, input_shape.len())),
    };
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if grad_out.shape() != [n, c, ph, pw] {
        return Err(Error::invalid("pad_replicate_backward", "upstream gradient shape mismatch"));
    }
    let mut gx = vec![0.0f32; n * c * h * w];
    for (plane, dst) in gx.chunks_mut(h * w).enumerate() {
        let src = &grad_out.data()[plane * ph * pw..][..ph * pw];
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            for xx in 0..pw {
                let sx = xx.saturating_sub(pad).min(w - 1);
                dst[sy * w + sx] += src[y * pw + xx];
            }
        }
    }
    Tensor::new(input_shape, gx)
}
