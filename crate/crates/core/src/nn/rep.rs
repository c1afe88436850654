use crate::error::{Error, Result};
use crate::flops::{cost, OpKind};
use crate::ops::{self, BatchNormStats, Conv2dParams};
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

use super::conv::{batch_norm_affine, batch_norm_params, visit_batch_norm};
use super::{Act, ConvBnAct, Module};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepMode {
    MultiBranch,
    Fused,
}

/// One re-parameterizable layer: 3×3 and 1×1 conv-norm branches, plus a
/// norm-only identity branch when `cin == cout`, summed and then activated.
///
/// Paths: `{p}.dense`, `{p}.pointwise`, `{p}.identity`. The fused kernel is
/// derived, never stored.
#[derive(Clone, Debug)]
pub struct RepLayer {
    prefix: String,
    pub dense: ConvBnAct,
    pub pointwise: ConvBnAct,
    pub identity: Option<BatchNormStats>,
    fused: Option<(Tensor, Tensor)>,
}

impl RepLayer {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cin: usize, cout: usize) -> Result<Self> {
        let dense = ConvBnAct::new(src, &format!("{prefix}.dense"), cin, cout, 3, 1, Act::Identity)?;
        let pointwise = ConvBnAct::new(src, &format!("{prefix}.pointwise"), cin, cout, 1, 1, Act::Identity)?;
        let identity = if cin == cout {
            Some(batch_norm_params(src, &format!("{prefix}.identity"), cout)?)
        } else {
            None
        };
        Ok(Self {
            prefix: prefix.to_string(),
            dense,
            pointwise,
            identity,
            fused: None,
        })
    }

    pub fn cout(&self) -> usize {
        self.dense.cout()
    }

    /// Fused 3×3 `(weight, bias)`, present after [`RepLayer::fuse`].
    pub fn fused(&self) -> Option<&(Tensor, Tensor)> {
        self.fused.as_ref()
    }

    /// Merges the branches into one 3×3 convolution with bias.
    pub fn fuse(&mut self) {
        let (mut w, mut b) = self.dense.fold();
        let (wp, bp) = self.pointwise.fold();
        let (cout, cin) = (self.dense.cout(), self.dense.cin());
        let wd = w.data_mut();
        for o in 0..cout {
            for i in 0..cin {
                wd[(o * cin + i) * 9 + 4] += wp.data()[o * cin + i];
            }
        }
        b.data_mut().iter_mut().zip(bp.data()).for_each(|(a, v)| *a += v);
        if let Some(id) = &self.identity {
            let (scale, shift) = batch_norm_affine(id);
            for o in 0..cout {
                wd[(o * cin + o) * 9 + 4] += scale[o];
            }
            b.data_mut().iter_mut().zip(&shift).for_each(|(a, v)| *a += v);
        }
        self.fused = Some((w, b));
    }

    pub fn forward(&self, x: &Tensor, mode: RepMode) -> Result<Tensor> {
        let y = match mode {
            RepMode::MultiBranch => {
                let mut y = ops::add(&self.dense.forward(x)?, &self.pointwise.forward(x)?)?;
                if let Some(id) = &self.identity {
                    y = ops::add(&y, &ops::batch_norm(x, id)?)?;
                }
                y
            }
            RepMode::Fused => {
                let (w, b) = self.fused.as_ref().ok_or_else(|| {
                    Error::invalid("rep_block", format!("`{}` has no fused weights", self.prefix))
                })?;
                ops::conv2d(x, w, Some(b), Conv2dParams::same(3))?
            }
        };
        Ok(ops::silu(&y))
    }

    fn analyze(&self, a: &mut Analytic, x: &[usize], mode: RepMode) -> Result<Vec<usize>> {
        let y = match mode {
            RepMode::MultiBranch => {
                let y = self.dense.analyze(a, x)?;
                self.pointwise.analyze(a, x)?;
                a.elementwise(&y, cost::BINARY_PER_ELEM);
                if self.identity.is_some() {
                    a.norm(x, cost::BATCH_NORM_PER_ELEM);
                    a.elementwise(&y, cost::BINARY_PER_ELEM);
                }
                y
            }
            RepMode::Fused => a.conv(OpKind::Conv, x, self.dense.weight.shape(), true, Conv2dParams::same(3))?,
        };
        a.elementwise(&y, cost::SILU_PER_ELEM);
        Ok(y)
    }
}

impl Module for RepLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.dense.visit(f);
        self.pointwise.visit(f);
        if let Some(id) = &self.identity {
            visit_batch_norm(&format!("{}.identity", self.prefix), id, f);
        }
    }
}

/// A stack of [`RepLayer`]s; layer `i` lives at `{p}.{i}`. Depth 0 is the identity.
#[derive(Clone, Debug)]
pub struct RepBlock {
    pub layers: Vec<RepLayer>,
}

impl RepBlock {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cin: usize, cout: usize, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| RepLayer::new(src, &format!("{prefix}.{i}"), if i == 0 { cin } else { cout }, cout))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn fuse(&mut self) {
        self.layers.iter_mut().for_each(RepLayer::fuse);
    }

    pub fn is_fused(&self) -> bool {
        self.layers.iter().all(|l| l.fused.is_some())
    }

    /// Fused mode when every layer has been fused, multi-branch otherwise.
    pub fn default_mode(&self) -> RepMode {
        if self.is_fused() {
            RepMode::Fused
        } else {
            RepMode::MultiBranch
        }
    }

    pub fn forward_mode(&self, x: &Tensor, mode: RepMode) -> Result<Tensor> {
        let mut y = x.clone();
        for l in &self.layers {
            y = l.forward(&y, mode)?;
        }
        Ok(y)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_mode(x, self.default_mode())
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, x: &[usize]) -> Result<Vec<usize>> {
        let mode = self.default_mode();
        let mut s = x.to_vec();
        for l in &self.layers {
            s = l.analyze(a, &s, mode)?;
        }
        Ok(s)
    }
}

impl Module for RepBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.layers.visit(f)
    }
}
