use crate::error::Result;
use crate::flops::{cost, OpKind};
use crate::ops::{self, BatchNormStats, Conv2dParams};
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::{Init, ParamSource};

use super::Module;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Silu,
    Identity,
}

impl Act {
    pub fn apply(self, x: Tensor) -> Tensor {
        match self {
            Act::Silu => ops::silu(&x),
            Act::Identity => x,
        }
    }

    pub(crate) fn analyze(self, a: &mut Analytic, shape: &[usize]) {
        if self == Act::Silu {
            a.elementwise(shape, cost::SILU_PER_ELEM);
        }
    }
}

/// `{p}.weight`, `{p}.bias`, `{p}.running_mean`, `{p}.running_var`.
pub(crate) fn batch_norm_params(src: &mut dyn ParamSource, prefix: &str, c: usize) -> Result<BatchNormStats> {
    Ok(BatchNormStats {
        gamma: src.tensor(&format!("{prefix}.weight"), &[c], Init::Ones)?,
        beta: src.tensor(&format!("{prefix}.bias"), &[c], Init::Zeros)?,
        mean: src.tensor(&format!("{prefix}.running_mean"), &[c], Init::Zeros)?,
        var: src.tensor(&format!("{prefix}.running_var"), &[c], Init::Ones)?,
    })
}

pub(crate) fn visit_batch_norm(prefix: &str, bn: &BatchNormStats, f: &mut dyn FnMut(&str, &Tensor)) {
    f(&format!("{prefix}.weight"), &bn.gamma);
    f(&format!("{prefix}.bias"), &bn.beta);
    f(&format!("{prefix}.running_mean"), &bn.mean);
    f(&format!("{prefix}.running_var"), &bn.var);
}

/// Per-channel `(scale, shift)` such that `bn(y) = scale·y + shift`.
pub(crate) fn batch_norm_affine(bn: &BatchNormStats) -> (Vec<f32>, Vec<f32>) {
    let scale: Vec<f32> = bn.rstd().iter().zip(bn.gamma.data()).map(|(r, g)| r * g).collect();
    let shift = scale
        .iter()
        .zip(bn.mean.data().iter().zip(bn.beta.data()))
        .map(|(s, (m, b))| b - m * s)
        .collect();
    (scale, shift)
}

/// Bias-free convolution, inference batch norm, activation.
///
/// Paths: `{p}.conv.weight` and the batch-norm tensors under `{p}.bn`.
#[derive(Clone, Debug)]
pub struct ConvBnAct {
    prefix: String,
    pub weight: Tensor,
    pub bn: BatchNormStats,
    pub conv: Conv2dParams,
    pub act: Act,
}

impl ConvBnAct {
    /// Square kernel `k` with `k/2` zero padding.
    pub fn new(
        src: &mut dyn ParamSource,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        act: Act,
    ) -> Result<Self> {
        let weight = src.tensor(
            &format!("{prefix}.conv.weight"),
            &[cout, cin, k, k],
            Init::HeNormal { fan_in: cin * k * k },
        )?;
        let bn = batch_norm_params(src, &format!("{prefix}.bn"), cout)?;
        Ok(Self {
            prefix: prefix.to_string(),
            weight,
            bn,
            conv: Conv2dParams::new(stride, k / 2, 1),
            act,
        })
    }

    pub fn cin(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = ops::conv2d(x, &self.weight, None, self.conv)?;
        Ok(self.act.apply(ops::batch_norm(&y, &self.bn)?))
    }

    /// The convolution with the batch norm folded in, as `(weight, bias)`.
    pub fn fold(&self) -> (Tensor, Tensor) {
        let (scale, shift) = batch_norm_affine(&self.bn);
        let per_out = self.weight.numel() / self.cout();
        let mut w = self.weight.clone();
        for (o, chunk) in w.data_mut().chunks_mut(per_out).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= scale[o]);
        }
        let b = Tensor::new(&[self.cout()], shift).expect("one shift per output channel");
        (w, b)
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, x: &[usize]) -> Result<Vec<usize>> {
        let y = a.conv(OpKind::Conv, x, self.weight.shape(), false, self.conv)?;
        a.norm(&y, cost::BATCH_NORM_PER_ELEM);
        self.act.analyze(a, &y);
        Ok(y)
    }
}

impl Module for ConvBnAct {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.conv.weight", self.prefix), &self.weight);
        visit_batch_norm(&format!("{}.bn", self.prefix), &self.bn, f);
    }
}

/// Plain square-kernel convolution with bias and `k/2` padding:
/// `{p}.weight`, `{p}.bias`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    prefix: String,
    pub weight: Tensor,
    pub bias: Tensor,
    pub conv: Conv2dParams,
}

impl Conv2d {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            weight: src.tensor(
                &format!("{prefix}.weight"),
                &[cout, cin, k, k],
                Init::HeNormal { fan_in: cin * k * k },
            )?,
            bias: src.tensor(&format!("{prefix}.bias"), &[cout], Init::Zeros)?,
            conv: Conv2dParams::same(k),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, &self.weight, Some(&self.bias), self.conv)
    }

    pub fn analyze(&self, a: &mut Analytic, x: &[usize]) -> Result<Vec<usize>> {
        a.conv(OpKind::Conv, x, self.weight.shape(), true, self.conv)
    }
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.prefix), &self.weight);
        f(&format!("{}.bias", self.prefix), &self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;
    use crate::weights::{Initializer, RandomSource};

    #[test]
    fn identity_conv_and_norm_is_identity() {
        let mut src = Initializer::new(0);
        let mut m = ConvBnAct::new(&mut src, "c", 3, 3, 1, 1, Act::Identity).unwrap();
        m.weight = Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let x = Lcg::new(1).normal_tensor(&[2, 3, 4, 5], 1.0);
        assert!(m.forward(&x).unwrap().bit_eq(&x));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut src = Initializer::new(3);
        let m = ConvBnAct::new(&mut src, "c", 4, 6, 3, 2, Act::Silu).unwrap();
        let y = m.forward(&Tensor::zeros(&[1, 4, 8, 8])).unwrap();
        assert_eq!(y.shape(), [1, 6, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_three_step_composition() {
        let mut src = RandomSource::new(5);
        let m = ConvBnAct::new(&mut src, "c", 3, 5, 3, 1, Act::Silu).unwrap();
        let x = Lcg::new(6).normal_tensor(&[1, 3, 6, 6], 1.0);
        let conv = ops::conv2d(&x, &m.weight, None, Conv2dParams::same(3)).unwrap();
        let mut expect = conv.clone();
        let c = m.bn.gamma.data();
        for (i, v) in expect.data_mut().iter_mut().enumerate() {
            let ch = (i / 36) % 5;
            let (mean, var, beta) = (m.bn.mean.data()[ch], m.bn.var.data()[ch], m.bn.beta.data()[ch]);
            let bn = (*v as f64 - mean as f64) / (var as f64).sqrt() * c[ch] as f64 + beta as f64;
            *v = (bn / (1.0 + (-bn).exp())) as f32;
        }
        assert!(m.forward(&x).unwrap().max_abs_diff(&expect) < 1e-5);
    }

    #[test]
    fn fold_matches_unfolded() {
        let mut src = RandomSource::new(9);
        let m = ConvBnAct::new(&mut src, "c", 4, 3, 3, 1, Act::Identity).unwrap();
        let x = Lcg::new(2).normal_tensor(&[1, 4, 5, 5], 1.0);
        let (w, b) = m.fold();
        let folded = ops::conv2d(&x, &w, Some(&b), m.conv).unwrap();
        assert!(folded.max_abs_diff(&m.forward(&x).unwrap()) < 1e-5);
    }

    #[test]
    fn visit_reproduces_store_order() {
        let mut src = Initializer::new(0);
        let m = ConvBnAct::new(&mut src, "blk", 2, 4, 3, 1, Act::Silu).unwrap();
        let store = src.into_store();
        let mut names = Vec::new();
        m.visit(&mut |n, _| names.push(n.to_string()));
        assert_eq!(names, store.names().collect::<Vec<_>>());
        assert_eq!(m.param_count(), store.total_elements());
    }
}
