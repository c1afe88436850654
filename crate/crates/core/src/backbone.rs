//! Dual-branch feature extraction, per-level fusion and EMA attention.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::nn::{Act, C2f, ConvBnAct, Module};
use crate::ops::{self, Axis, Conv2dParams};
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::{Init, ParamSource};

/// Four levels at strides 4, 8, 16, 32 (B2..B5).
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 4],
}

impl FeaturePyramid {
    pub fn shapes(&self) -> [Vec<usize>; 4] {
        self.levels.clone().map(|t| t.shape().to_vec())
    }
}

/// One modality's trunk: a stride-2 stem conv, a stride-1 stem conv, then
/// four stages of (stride-2 conv, C2f) tapped after each stage.
///
/// Paths: `{p}.stem.{0,1}`, `{p}.stage{2..5}.down`, `{p}.stage{2..5}.c2f`.
#[derive(Clone, Debug)]
pub struct Branch {
    pub stem: [ConvBnAct; 2],
    pub stages: Vec<(ConvBnAct, C2f)>,
}

impl Branch {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cin: usize, cfg: &ModelConfig) -> Result<Self> {
        let s = cfg.stem_channels;
        let stem = [
            ConvBnAct::new(src, &format!("{prefix}.stem.0"), cin, s, 3, 2, Act::Silu)?,
            ConvBnAct::new(src, &format!("{prefix}.stem.1"), s, s, 3, 1, Act::Silu)?,
        ];
        let mut prev = s;
        let mut stages = Vec::with_capacity(4);
        for (i, (&c, &depth)) in cfg.channels.iter().zip(&cfg.c2f_depths).enumerate() {
            let p = format!("{prefix}.stage{}", i + 2);
            let down = ConvBnAct::new(src, &format!("{p}.down"), prev, c, 3, 2, Act::Silu)?;
            let c2f = C2f::new(src, &format!("{p}.c2f"), c, c, depth)?;
            stages.push((down, c2f));
            prev = c;
        }
        Ok(Self { stem, stages })
    }

    pub fn forward(&self, image: &Tensor) -> Result<FeaturePyramid> {
        let (_, _, h, w) = image.dims4()?;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::invalid("branch_forward", format!("input {h}x{w} is not divisible by 32")));
        }
        let mut x = self.stem[1].forward(&self.stem[0].forward(image)?)?;
        let mut levels = Vec::with_capacity(4);
        for (down, c2f) in &self.stages {
            x = c2f.forward(&down.forward(&x)?)?;
            levels.push(x.clone());
        }
        Ok(FeaturePyramid {
            levels: levels.try_into().expect("four stages"),
        })
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, image: &[usize]) -> Result<Vec<Vec<usize>>> {
        let s = self.stem[0].analyze(a, image)?;
        let mut x = self.stem[1].analyze(a, &s)?;
        let mut out = Vec::new();
        for (down, c2f) in &self.stages {
            let d = down.analyze(a, &x)?;
            x = c2f.analyze(a, &d)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

impl Module for Branch {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit(f);
        for (down, c2f) in &self.stages {
            down.visit(f);
            c2f.visit(f);
        }
    }
}

/// Efficient multi-scale attention over `G` channel groups.
///
/// Paths: `{p}.conv1x1.{weight,bias}`, `{p}.conv3x3.{weight,bias}`,
/// `{p}.gn.{weight,bias}`. The 3×3 path pads by edge replication so that a
/// spatially constant input yields a spatially constant attention map.
#[derive(Clone, Debug)]
pub struct Ema {
    prefix: String,
    pub groups: usize,
    pub conv1x1_w: Tensor,
    pub conv1x1_b: Tensor,
    pub conv3x3_w: Tensor,
    pub conv3x3_b: Tensor,
    pub gn_gamma: Tensor,
    pub gn_beta: Tensor,
}

impl Ema {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::invalid(
                "ema",
                format!("{groups} groups do not divide {channels} channels"),
            ));
        }
        let cg = channels / groups;
        Ok(Self {
            prefix: prefix.to_string(),
            groups,
            conv1x1_w: src.tensor(&format!("{prefix}.conv1x1.weight"), &[cg, cg, 1, 1], Init::HeNormal { fan_in: cg })?,
            conv1x1_b: src.tensor(&format!("{prefix}.conv1x1.bias"), &[cg], Init::Zeros)?,
            conv3x3_w: src.tensor(
                &format!("{prefix}.conv3x3.weight"),
                &[cg, cg, 3, 3],
                Init::HeNormal { fan_in: cg * 9 },
            )?,
            conv3x3_b: src.tensor(&format!("{prefix}.conv3x3.bias"), &[cg], Init::Zeros)?,
            gn_gamma: src.tensor(&format!("{prefix}.gn.weight"), &[cg], Init::Ones)?,
            gn_beta: src.tensor(&format!("{prefix}.gn.bias"), &[cg], Init::Zeros)?,
        })
    }

    fn group_channels(&self) -> usize {
        self.gn_gamma.numel()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_attention(x)?.0)
    }

    /// Output and the `[N·G, 1, H, W]` spatial attention map.
    pub fn forward_with_attention(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (n, c, h, w) = x.dims4()?;
        let cg = self.group_channels();
        if c != cg * self.groups {
            return Err(Error::mismatch("ema", "channel axis", cg * self.groups, c));
        }
        let b = n * self.groups;
        let xg = x.reshape(&[b, cg, h, w])?;

        // [b, cg, 1, w] and [b, cg, w, 1] share a layout, so the width
        // descriptor is stacked under the height descriptor without a copy.
        let along_h = ops::directional_avg_pool(&xg, Axis::W)?;
        let along_w = ops::directional_avg_pool(&xg, Axis::H)?.into_reshaped(&[b, cg, w, 1])?;
        let desc = ops::concat(&[&along_h, &along_w], 2)?;
        let desc = ops::conv2d_as(
            OpKind::DescriptorConv,
            &desc,
            &self.conv1x1_w,
            Some(&self.conv1x1_b),
            Conv2dParams::default(),
        )?;
        let gates = ops::split(&desc, &[h, w], 2)?;
        let gate_h = ops::sigmoid(&gates[0]);
        let gate_w = ops::sigmoid(&gates[1]).into_reshaped(&[b, cg, 1, w])?;
        let gated = ops::mul(&ops::mul(&xg, &gate_h)?, &gate_w)?;
        let x1 = ops::group_norm(&gated, cg, &self.gn_gamma, &self.gn_beta)?;

        let x2 = ops::conv2d(
            &ops::pad_replicate(&xg, 1)?,
            &self.conv3x3_w,
            Some(&self.conv3x3_b),
            Conv2dParams::default(),
        )?;

        let d1 = ops::softmax(&ops::global_avg_pool(&x1)?.into_reshaped(&[b, cg])?, 1)?;
        let d2 = ops::softmax(&ops::global_avg_pool(&x2)?.into_reshaped(&[b, cg])?, 1)?;
        let mut maps = Vec::with_capacity(b);
        for i in 0..b {
            let row = |d: &Tensor| ops::narrow(d, 0, i, 1);
            let plane = |t: &Tensor| -> Result<Tensor> { ops::narrow(t, 0, i, 1)?.into_reshaped(&[cg, h * w]) };
            let w1 = ops::matmul(&row(&d1)?, &plane(&x2)?)?;
            let w2 = ops::matmul(&row(&d2)?, &plane(&x1)?)?;
            maps.push(ops::add(&w1, &w2)?);
        }
        let refs: Vec<&Tensor> = maps.iter().collect();
        let att = ops::sigmoid(&ops::concat(&refs, 0)?.into_reshaped(&[b, 1, h, w])?);
        let out = ops::mul(&xg, &att)?.into_reshaped(&[n, c, h, w])?;
        Ok((out, att))
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, x: &[usize]) -> Result<Vec<usize>> {
        let (n, h, w) = (x[0], x[2], x[3]);
        let cg = self.group_channels();
        let b = n * self.groups;
        let xg = [b, cg, h, w];
        a.adaptive_pool(&xg, h, 1)?;
        a.adaptive_pool(&xg, 1, w)?;
        a.conv(
            OpKind::DescriptorConv,
            &[b, cg, h + w, 1],
            self.conv1x1_w.shape(),
            true,
            Conv2dParams::default(),
        )?;
        a.elementwise(&[b, cg, h, 1], cost::SIGMOID_PER_ELEM);
        a.elementwise(&[b, cg, w, 1], cost::SIGMOID_PER_ELEM);
        a.elementwise(&xg, cost::BINARY_PER_ELEM);
        a.elementwise(&xg, cost::BINARY_PER_ELEM);
        a.norm(&xg, cost::GROUP_NORM_PER_ELEM);
        a.conv(OpKind::Conv, &[b, cg, h + 2, w + 2], self.conv3x3_w.shape(), true, Conv2dParams::default())?;
        for _ in 0..2 {
            a.adaptive_pool(&xg, 1, 1)?;
            a.softmax(&[b, cg]);
        }
        for _ in 0..b {
            a.matmul(1, cg, h * w);
            a.matmul(1, cg, h * w);
            a.elementwise(&[1, h * w], cost::BINARY_PER_ELEM);
        }
        a.elementwise(&[b, 1, h, w], cost::SIGMOID_PER_ELEM);
        a.elementwise(&xg, cost::BINARY_PER_ELEM);
        Ok(x.to_vec())
    }
}

impl Module for Ema {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let p = &self.prefix;
        f(&format!("{p}.conv1x1.weight"), &self.conv1x1_w);
        f(&format!("{p}.conv1x1.bias"), &self.conv1x1_b);
        f(&format!("{p}.conv3x3.weight"), &self.conv3x3_w);
        f(&format!("{p}.conv3x3.bias"), &self.conv3x3_b);
        f(&format!("{p}.gn.weight"), &self.gn_gamma);
        f(&format!("{p}.gn.bias"), &self.gn_beta);
    }
}

/// Both branches, the per-level fusion convs `fuse.l{2..5}` and the
/// per-level attention `ema.l{2..5}`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub ir: Branch,
    pub rgb: Branch,
    pub fuse: Vec<ConvBnAct>,
    pub ema: Vec<Ema>,
}

/// Intermediate pyramids of one backbone pass.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub ir: FeaturePyramid,
    pub rgb: FeaturePyramid,
    pub fused: FeaturePyramid,
    pub attended: FeaturePyramid,
}

impl Backbone {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let ir = Branch::new(src, "backbone.ir", cfg.ir_channels, cfg)?;
        let rgb = Branch::new(src, "backbone.rgb", cfg.rgb_channels, cfg)?;
        let fuse = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvBnAct::new(src, &format!("fuse.l{}", i + 2), 2 * c, c, 1, 1, Act::Silu))
            .collect::<Result<_>>()?;
        let ema = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Ema::new(src, &format!("ema.l{}", i + 2), c, cfg.ema_groups))
            .collect::<Result<_>>()?;
        Ok(Self { ir, rgb, fuse, ema })
    }

    /// Per level: concat (IR first) then the 1×1 fusion conv.
    pub fn fuse_levels(&self, pa: &FeaturePyramid, pb: &FeaturePyramid) -> Result<FeaturePyramid> {
        let mut out = Vec::with_capacity(4);
        for ((a, b), conv) in pa.levels.iter().zip(&pb.levels).zip(&self.fuse) {
            if a.shape() != b.shape() {
                return Err(Error::invalid(
                    "fuse_levels",
                    format!("branch shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            out.push(conv.forward(&ops::concat(&[a, b], 1)?)?);
        }
        Ok(FeaturePyramid {
            levels: out.try_into().expect("four levels"),
        })
    }

    pub fn forward(&self, ir: &Tensor, rgb: &Tensor) -> Result<FeaturePyramid> {
        Ok(self.forward_detailed(ir, rgb)?.attended)
    }

    pub fn forward_detailed(&self, ir: &Tensor, rgb: &Tensor) -> Result<BackboneOutput> {
        let (ni, _, hi, wi) = ir.dims4()?;
        let (nr, _, hr, wr) = rgb.dims4()?;
        if (ni, hi, wi) != (nr, hr, wr) {
            return Err(Error::invalid(
                "backbone_forward",
                format!("IR is {ni}x{hi}x{wi} but RGB is {nr}x{hr}x{wr} (N x H x W)"),
            ));
        }
        let (pa, pb) = flops::join(|| self.ir.forward(ir), || self.rgb.forward(rgb));
        let (pa, pb) = (pa?, pb?);
        let fused = self.fuse_levels(&pa, &pb)?;
        let attended = fused
            .levels
            .iter()
            .zip(&self.ema)
            .map(|(x, e)| e.forward(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackboneOutput {
            ir: pa,
            rgb: pb,
            fused,
            attended: FeaturePyramid {
                levels: attended.try_into().expect("four levels"),
            },
        })
    }
}

impl Module for Backbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ir.visit(f);
        self.rgb.visit(f);
        self.fuse.visit(f);
        self.ema.visit(f);
    }
}
