//! Parameter and FLOP analysis.
//!
//! FLOPs are obtained two ways. [`Analytic`] walks the module tree with
//! shapes only, applying the [`crate::flops::cost`] formulas; the measured
//! route runs a real forward pass under [`crate::flops::measure`]. The two
//! must agree exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flops::{cost, FlopTally, OpKind};
use crate::model::Model;
use crate::nn::Module;
use crate::ops::{adaptive_windows, conv_out_extent, Conv2dParams};
use crate::tensor::Tensor;

/// Shape-only mirror of the kernels' FLOP reporting.
#[derive(Debug, Default)]
pub struct Analytic {
    pub tally: FlopTally,
}

fn dims4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::mismatch(op, "rank", 4, s.len())),
    }
}

fn numel(s: &[usize]) -> u64 {
    s.iter().product::<usize>() as u64
}

impl Analytic {
    pub fn new() -> Self {
        Self::default()
    }

    /// `w` is `[cout, cin/groups, kh, kw]`.
    pub fn conv(&mut self, kind: OpKind, x: &[usize], w: &[usize], bias: bool, p: Conv2dParams) -> Result<Vec<usize>> {
        let (n, c, h, wd) = dims4("conv2d", x)?;
        let (cout, cin_g, kh, kw) = dims4("conv2d", w)?;
        if cin_g * p.groups != c {
            return Err(Error::mismatch("conv2d", "input channels", cin_g * p.groups, c));
        }
        let oh = conv_out_extent(h, kh, p.stride, p.pad)
            .ok_or_else(|| Error::invalid("conv2d", "kernel larger than padded input"))?;
        let ow = conv_out_extent(wd, kw, p.stride, p.pad)
            .ok_or_else(|| Error::invalid("conv2d", "kernel larger than padded input"))?;
        self.tally.add(kind, cost::conv2d(n, cin_g, cout, kh, kw, oh, ow, bias));
        Ok(vec![n, cout, oh, ow])
    }

    pub fn elementwise(&mut self, shape: &[usize], per_elem: u64) {
        self.tally.add(OpKind::Elementwise, numel(shape) * per_elem);
    }

    pub fn norm(&mut self, shape: &[usize], per_elem: u64) {
        self.tally.add(OpKind::Norm, numel(shape) * per_elem);
    }

    pub fn softmax(&mut self, shape: &[usize]) {
        self.tally.add(OpKind::Softmax, numel(shape) * cost::SOFTMAX_PER_ELEM);
    }

    pub fn matmul(&mut self, m: usize, k: usize, n: usize) {
        self.tally.add(OpKind::Matmul, cost::matmul(m, k, n));
    }

    pub fn adaptive_pool(&mut self, x: &[usize], oh: usize, ow: usize) -> Result<Vec<usize>> {
        let (n, c, h, w) = dims4("adaptive_avg_pool2d", x)?;
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return Err(Error::invalid("adaptive_avg_pool2d", format!("cannot pool {h}x{w} to {oh}x{ow}")));
        }
        let rows: usize = adaptive_windows(h, oh).iter().map(|r| r.1 - r.0).sum();
        let cols: usize = adaptive_windows(w, ow).iter().map(|r| r.1 - r.0).sum();
        self.tally.add(OpKind::Pool, cost::pool(n * c, rows * cols, oh * ow));
        Ok(vec![n, c, oh, ow])
    }

    pub fn resize(&mut self, x: &[usize], oh: usize, ow: usize) -> Result<Vec<usize>> {
        let (n, c, h, w) = dims4("bilinear_resize", x)?;
        if (oh, ow) != (h, w) {
            self.tally.add(OpKind::Resize, (n * c * oh * ow) as u64 * cost::BILINEAR_PER_ELEM);
        }
        Ok(vec![n, c, oh, ow])
    }
}

/// Parameters and analytic FLOPs of one part of the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModuleStats {
    pub name: &'static str,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub params: u64,
    pub flops: u64,
    /// FLOPs of convolutions over 2-D feature maps.
    pub conv_flops: u64,
    pub modules: Vec<ModuleStats>,
    pub by_kind: FlopTally,
}

/// Element count of every stored parameter tensor.
pub fn count_params(model: &Model) -> u64 {
    model.param_count()
}

fn count(visit: impl FnOnce(&mut dyn FnMut(&str, &Tensor))) -> u64 {
    let mut n = 0u64;
    visit(&mut |_, t| n += t.numel() as u64);
    n
}

/// Analytic parameter and FLOP breakdown for one forward at the configured
/// resolution and batch size 1.
pub fn count_flops(model: &Model) -> Result<ModelStats> {
    let cfg = &model.cfg;
    let s = cfg.input_side;
    let bb = &model.backbone;
    let mut parts: Vec<(&'static str, Analytic)> = [
        "backbone.ir",
        "backbone.rgb",
        "fuse",
        "ema",
        "neck.low",
        "neck.high",
        "neck.inject",
        "head",
    ]
    .into_iter()
    .map(|n| (n, Analytic::new()))
    .collect();
    let [ir, rgb, fuse, ema, low, high, inject, head] = &mut parts[..] else {
        unreachable!()
    };

    let pyr = bb.ir.analyze(&mut ir.1, &[1, cfg.ir_channels, s, s])?;
    bb.rgb.analyze(&mut rgb.1, &[1, cfg.rgb_channels, s, s])?;
    for ((l, conv), e) in pyr.iter().zip(&bb.fuse).zip(&bb.ema) {
        let cat = [l[0], 2 * l[1], l[2], l[3]];
        let y = conv.analyze(&mut fuse.1, &cat)?;
        e.analyze(&mut ema.1, &y)?;
    }
    let heads = model.neck.analyze(&mut low.1, &mut high.1, &mut inject.1, &pyr)?;
    model.head.analyze(&mut head.1, &heads)?;

    let (mut p_low, mut p_high, mut p_inj) = (0u64, 0u64, 0u64);
    model.neck.visit_parts(
        &mut |_, t| p_low += t.numel() as u64,
        &mut |_, t| p_high += t.numel() as u64,
        &mut |_, t| p_inj += t.numel() as u64,
    );
    let params = [
        bb.ir.param_count(),
        bb.rgb.param_count(),
        count(|f| bb.fuse.visit(f)),
        count(|f| bb.ema.visit(f)),
        p_low,
        p_high,
        p_inj,
        model.head.param_count(),
    ];

    let mut by_kind = FlopTally::default();
    let modules = parts
        .iter()
        .zip(params)
        .map(|((name, a), params)| {
            by_kind.merge(&a.tally);
            ModuleStats {
                name,
                params,
                flops: a.tally.total(),
            }
        })
        .collect::<Vec<_>>();
    Ok(ModelStats {
        params: modules.iter().map(|m| m.params).sum(),
        flops: modules.iter().map(|m| m.flops).sum(),
        conv_flops: by_kind.get(OpKind::Conv),
        modules,
        by_kind,
    })
}

/// FLOPs reported by the kernels during a real forward pass on zero images.
pub fn measure_flops(model: &Model) -> Result<FlopTally> {
    let cfg = &model.cfg;
    let s = cfg.input_side;
    let ir = Tensor::zeros(&[1, cfg.ir_channels, s, s]);
    let rgb = Tensor::zeros(&[1, cfg.rgb_channels, s, s]);
    let (out, tally) = crate::flops::measure(|| model.forward(&ir, &rgb));
    out?;
    Ok(tally)
}
