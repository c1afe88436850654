//! Gather-and-distribute neck.
//!
//! The low stage aligns B2..B5 to the B4 grid, fuses them and injects the
//! result into B3 and B4; B5 becomes P5 through a 1×1 conv. The high stage
//! aligns P3..P5 to the P5 grid, runs the transformer fusion and injects
//! into P4 and P5.

use crate::backbone::FeaturePyramid;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::flops::cost;
use crate::nn::{Act, ConvBnAct, Module, RepBlock, TransformerBlock};
use crate::ops;
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

/// Resize to `(oh, ow)`: identity when equal, adaptive average pooling when
/// neither axis grows, bilinear otherwise.
pub fn align(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (oh, ow) {
        Ok(x.clone())
    } else if oh <= h && ow <= w {
        ops::adaptive_avg_pool2d(x, oh, ow)
    } else {
        ops::bilinear_resize(x, oh, ow)
    }
}

fn analyze_align(a: &mut Analytic, x: &[usize], oh: usize, ow: usize) -> Result<Vec<usize>> {
    let (h, w) = (x[2], x[3]);
    if (h, w) == (oh, ow) {
        Ok(x.to_vec())
    } else if oh <= h && ow <= w {
        a.adaptive_pool(x, oh, ow)
    } else {
        a.resize(x, oh, ow)
    }
}

fn spatial(x: &Tensor) -> Result<(usize, usize)> {
    let (_, _, h, w) = x.dims4()?;
    Ok((h, w))
}

fn concat_channels(xs: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = xs.iter().collect();
    ops::concat(&refs, 1)
}

/// Injects global features `F_i` into a local level `F_l`.
///
/// `act`, `g_embed` and `l_embed` are 1×1 conv-norm layers without
/// activation. Paths: `{p}.act`, `{p}.g_embed`, `{p}.l_embed`, `{p}.rep`.
#[derive(Clone, Debug)]
pub struct Inject {
    pub act: ConvBnAct,
    pub g_embed: ConvBnAct,
    pub l_embed: ConvBnAct,
    pub rep: RepBlock,
}

impl Inject {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, c_global: usize, c_local: usize, depth: usize) -> Result<Self> {
        Ok(Self {
            act: ConvBnAct::new(src, &format!("{prefix}.act"), c_global, c_local, 1, 1, Act::Identity)?,
            g_embed: ConvBnAct::new(src, &format!("{prefix}.g_embed"), c_global, c_local, 1, 1, Act::Identity)?,
            l_embed: ConvBnAct::new(src, &format!("{prefix}.l_embed"), c_local, c_local, 1, 1, Act::Identity)?,
            rep: RepBlock::new(src, &format!("{prefix}.rep"), c_local, c_local, depth)?,
        })
    }

    /// `rep(l_embed(F_l) ⊙ resize(σ(act(F_i))) + resize(g_embed(F_i)))`, at `F_l`'s size.
    pub fn forward(&self, f_l: &Tensor, f_i: &Tensor) -> Result<Tensor> {
        let (h, w) = spatial(f_l)?;
        let g_act = align(&ops::sigmoid(&self.act.forward(f_i)?), h, w)?;
        let g_embed = align(&self.g_embed.forward(f_i)?, h, w)?;
        let local = self.l_embed.forward(f_l)?;
        if local.shape() != g_act.shape() {
            return Err(Error::invalid(
                "inject",
                format!("local {:?} and global {:?} embeddings differ", local.shape(), g_act.shape()),
            ));
        }
        let fused = ops::add(&ops::mul(&local, &g_act)?, &g_embed)?;
        self.rep.forward(&fused)
    }

    fn analyze(&self, a: &mut Analytic, f_l: &[usize], f_i: &[usize]) -> Result<Vec<usize>> {
        let (h, w) = (f_l[2], f_l[3]);
        let act = self.act.analyze(a, f_i)?;
        a.elementwise(&act, cost::SIGMOID_PER_ELEM);
        analyze_align(a, &act, h, w)?;
        let g = self.g_embed.analyze(a, f_i)?;
        analyze_align(a, &g, h, w)?;
        let local = self.l_embed.analyze(a, f_l)?;
        a.elementwise(&local, cost::BINARY_PER_ELEM);
        a.elementwise(&local, cost::BINARY_PER_ELEM);
        self.rep.analyze(a, &local)
    }
}

impl Module for Inject {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.act.visit(f);
        self.g_embed.visit(f);
        self.l_embed.visit(f);
        self.rep.visit(f);
    }
}

/// Low-stage fusion: `neck.low.reduce` then `neck.low.rep`, split into (C3, C4).
#[derive(Clone, Debug)]
pub struct LowIfm {
    pub reduce: ConvBnAct,
    pub rep: RepBlock,
    pub splits: [usize; 2],
}

/// Transformer fusion: optional `neck.high.proj`, `neck.high.tf.{i}`,
/// then `neck.high.reduce`, split into (C4, C5).
#[derive(Clone, Debug)]
pub struct HighIfm {
    pub proj: Option<ConvBnAct>,
    pub blocks: Vec<TransformerBlock>,
    pub reduce: ConvBnAct,
    pub splits: [usize; 2],
}

impl HighIfm {
    /// Runs the transformer stack over the `H·W` tokens of each sample.
    fn tokens(&self, x: &Tensor) -> Result<Tensor> {
        if self.blocks.is_empty() {
            return Ok(x.clone());
        }
        let (n, c, h, w) = x.dims4()?;
        let mut outs = Vec::with_capacity(n);
        for i in 0..n {
            let plane = ops::narrow(x, 0, i, 1)?.into_reshaped(&[c, h * w])?;
            let mut t = ops::transpose2d(&plane)?;
            for b in &self.blocks {
                t = b.forward(&t)?;
            }
            outs.push(ops::transpose2d(&t)?.into_reshaped(&[1, c, h, w])?);
        }
        ops::concat(&outs.iter().collect::<Vec<_>>(), 0)
    }

    pub fn forward(&self, f: &Tensor) -> Result<[Tensor; 2]> {
        let x = match &self.proj {
            Some(p) => p.forward(f)?,
            None => f.clone(),
        };
        let fused = self.reduce.forward(&self.tokens(&x)?)?;
        Ok(ops::split(&fused, &self.splits, 1)?.try_into().expect("two splits"))
    }

    fn analyze(&self, a: &mut Analytic, f: &[usize]) -> Result<()> {
        let x = match &self.proj {
            Some(p) => p.analyze(a, f)?,
            None => f.to_vec(),
        };
        let (n, d, t) = (x[0], x[1], x[2] * x[3]);
        for _ in 0..n {
            for b in &self.blocks {
                b.analyze(a, t, d);
            }
        }
        self.reduce.analyze(a, &x)?;
        Ok(())
    }
}

impl Module for HighIfm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(p) = &self.proj {
            p.visit(f);
        }
        self.blocks.visit(f);
        self.reduce.visit(f);
    }
}

/// Every tensor the neck produces on the way to `(P3, N4, N5)`.
#[derive(Clone, Debug)]
pub struct NeckOutput {
    pub low_aligned: Tensor,
    pub low_fuse: Tensor,
    pub low_splits: [Tensor; 2],
    pub p3: Tensor,
    pub p4: Tensor,
    pub p5: Tensor,
    pub high_aligned: Tensor,
    pub high_splits: [Tensor; 2],
    pub n4: Tensor,
    pub n5: Tensor,
}

impl NeckOutput {
    pub fn head_inputs(&self) -> [&Tensor; 3] {
        [&self.p3, &self.n4, &self.n5]
    }
}

#[derive(Clone, Debug)]
pub struct GdNeck {
    pub low: LowIfm,
    pub p5: ConvBnAct,
    pub high: HighIfm,
    pub inject_p3: Inject,
    pub inject_p4: Inject,
    pub inject_n4: Inject,
    pub inject_n5: Inject,
}

impl GdNeck {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let [c2, c3, c4, c5] = cfg.channels;
        let low = LowIfm {
            reduce: ConvBnAct::new(src, "neck.low.reduce", c2 + c3 + c4 + c5, c3 + c4, 1, 1, Act::Silu)?,
            rep: RepBlock::new(src, "neck.low.rep", c3 + c4, c3 + c4, cfg.low_ifm_depth)?,
            splits: [c3, c4],
        };
        let p5 = ConvBnAct::new(src, "neck.low.p5", c5, c5, 1, 1, Act::Silu)?;
        let cat = c3 + c4 + c5;
        let dim = cfg.token_dim();
        let proj = if dim != cat {
            Some(ConvBnAct::new(src, "neck.high.proj", cat, dim, 1, 1, Act::Silu)?)
        } else {
            None
        };
        let blocks = (0..cfg.high_ifm_depth)
            .map(|i| TransformerBlock::new(src, &format!("neck.high.tf.{i}"), dim, cfg.high_ifm_heads))
            .collect::<Result<_>>()?;
        let high = HighIfm {
            proj,
            blocks,
            reduce: ConvBnAct::new(src, "neck.high.reduce", dim, c4 + c5, 1, 1, Act::Silu)?,
            splits: [c4, c5],
        };
        let d = cfg.inject_depth;
        Ok(Self {
            low,
            p5,
            high,
            inject_p3: Inject::new(src, "neck.inject.p3", c3, c3, d)?,
            inject_p4: Inject::new(src, "neck.inject.p4", c4, c4, d)?,
            inject_n4: Inject::new(src, "neck.inject.n4", c4, c4, d)?,
            inject_n5: Inject::new(src, "neck.inject.n5", c5, c5, d)?,
        })
    }

    /// B2, B3 pooled and B5 upsampled onto B4's grid, concatenated in level order.
    pub fn low_fam(&self, pyr: &FeaturePyramid) -> Result<Tensor> {
        let (h, w) = spatial(&pyr.levels[2])?;
        let aligned = pyr.levels.iter().map(|l| align(l, h, w)).collect::<Result<Vec<_>>>()?;
        concat_channels(&aligned)
    }

    /// Returns `(F_low_fuse, [F_i_P3, F_i_P4])`.
    pub fn low_ifm(&self, f: &Tensor) -> Result<(Tensor, [Tensor; 2])> {
        let fuse = self.low.rep.forward(&self.low.reduce.forward(f)?)?;
        let splits = ops::split(&fuse, &self.low.splits, 1)?;
        Ok((fuse, splits.try_into().expect("two splits")))
    }

    /// P3 and P4 pooled onto P5's grid, concatenated.
    pub fn high_fam(&self, p3: &Tensor, p4: &Tensor, p5: &Tensor) -> Result<Tensor> {
        let (h, w) = spatial(p5)?;
        concat_channels(&[ops::adaptive_avg_pool2d(p3, h, w)?, ops::adaptive_avg_pool2d(p4, h, w)?, p5.clone()])
    }

    pub fn high_ifm(&self, f: &Tensor) -> Result<[Tensor; 2]> {
        self.high.forward(f)
    }

    pub fn forward(&self, pyr: &FeaturePyramid) -> Result<NeckOutput> {
        let [_, b3, b4, b5] = &pyr.levels;
        let low_aligned = self.low_fam(pyr)?;
        let (low_fuse, [i1, i2]) = self.low_ifm(&low_aligned)?;
        let p3 = self.inject_p3.forward(b3, &i1)?;
        let p4 = self.inject_p4.forward(b4, &i2)?;
        let p5 = self.p5.forward(b5)?;
        let high_aligned = self.high_fam(&p3, &p4, &p5)?;
        let [j1, j2] = self.high_ifm(&high_aligned)?;
        let n4 = self.inject_n4.forward(&p4, &j1)?;
        let n5 = self.inject_n5.forward(&p5, &j2)?;
        Ok(NeckOutput {
            low_aligned,
            low_fuse,
            low_splits: [i1, i2],
            p3,
            p4,
            p5,
            high_aligned,
            high_splits: [j1, j2],
            n4,
            n5,
        })
    }

    /// Returns the shapes of `(P3, N4, N5)`.
    pub(crate) fn analyze(&self, low: &mut Analytic, high: &mut Analytic, inject: &mut Analytic, pyr: &[Vec<usize>]) -> Result<[Vec<usize>; 3]> {
        let (h4, w4) = (pyr[2][2], pyr[2][3]);
        let mut cat = pyr[2].clone();
        cat[1] = 0;
        for l in pyr {
            analyze_align(low, l, h4, w4)?;
            cat[1] += l[1];
        }
        let r = self.low.reduce.analyze(low, &cat)?;
        let fuse = self.low.rep.analyze(low, &r)?;
        let mut i1 = fuse.clone();
        i1[1] = self.low.splits[0];
        let mut i2 = fuse;
        i2[1] = self.low.splits[1];
        let p3 = self.inject_p3.analyze(inject, &pyr[1], &i1)?;
        let p4 = self.inject_p4.analyze(inject, &pyr[2], &i2)?;
        let p5 = self.p5.analyze(low, &pyr[3])?;

        let (h5, w5) = (p5[2], p5[3]);
        high.adaptive_pool(&p3, h5, w5)?;
        high.adaptive_pool(&p4, h5, w5)?;
        let cat = vec![p5[0], p3[1] + p4[1] + p5[1], h5, w5];
        self.high.analyze(high, &cat)?;
        let mut j1 = p5.clone();
        j1[1] = self.high.splits[0];
        let mut j2 = p5.clone();
        j2[1] = self.high.splits[1];
        let n4 = self.inject_n4.analyze(inject, &p4, &j1)?;
        let n5 = self.inject_n5.analyze(inject, &p5, &j2)?;
        Ok([p3, n4, n5])
    }
}

impl GdNeck {
    pub fn fuse(&mut self) {
        self.low.rep.fuse();
        for inj in [&mut self.inject_p3, &mut self.inject_p4, &mut self.inject_n4, &mut self.inject_n5] {
            inj.rep.fuse();
        }
    }

    /// Parameters of the low stage, the high stage and the four injections.
    pub(crate) fn visit_parts(&self, low: &mut dyn FnMut(&str, &Tensor), high: &mut dyn FnMut(&str, &Tensor), inject: &mut dyn FnMut(&str, &Tensor)) {
        self.low.reduce.visit(low);
        self.low.rep.visit(low);
        self.p5.visit(low);
        self.high.visit(high);
        for inj in [&self.inject_p3, &self.inject_p4, &self.inject_n4, &self.inject_n5] {
            inj.visit(inject);
        }
    }
}

impl Module for GdNeck {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let f = std::cell::RefCell::new(f);
        self.visit_parts(
            &mut |n, t| (f.borrow_mut())(n, t),
            &mut |n, t| (f.borrow_mut())(n, t),
            &mut |n, t| (f.borrow_mut())(n, t),
        );
    }
}
