use crate::error::{Error, Result};
use crate::flops::cost;
use crate::ops;
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::{Init, ParamSource};

use super::Module;

/// `y = x·W + b` on `[T, din]` tokens; `W` is `[din, dout]`.
#[derive(Clone, Debug)]
pub struct Linear {
    prefix: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, din: usize, dout: usize) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            weight: src.tensor(&format!("{prefix}.weight"), &[din, dout], Init::HeNormal { fan_in: din })?,
            bias: src.tensor(&format!("{prefix}.bias"), &[dout], Init::Zeros)?,
        })
    }

    pub fn dout(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = self.bias.reshape(&[1, self.dout()])?;
        ops::add(&ops::matmul(x, &self.weight)?, &b)
    }

    fn analyze(&self, a: &mut Analytic, t: usize) {
        let (din, dout) = (self.weight.shape()[0], self.dout());
        a.matmul(t, din, dout);
        a.elementwise(&[t, dout], cost::BINARY_PER_ELEM);
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.prefix), &self.weight);
        f(&format!("{}.bias", self.prefix), &self.bias);
    }
}

/// Per-token normalization over the feature axis with affine `{p}.weight`, `{p}.bias`.
#[derive(Clone, Debug)]
pub struct TokenNorm {
    prefix: String,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl TokenNorm {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            gamma: src.tensor(&format!("{prefix}.weight"), &[dim], Init::Ones)?,
            beta: src.tensor(&format!("{prefix}.bias"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (t, d) = x.dims2()?;
        let y = ops::group_norm(&x.reshape(&[t, d, 1, 1])?, 1, &self.gamma, &self.beta)?;
        y.into_reshaped(&[t, d])
    }
}

impl Module for TokenNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.weight", self.prefix), &self.gamma);
        f(&format!("{}.bias", self.prefix), &self.beta);
    }
}

/// Multi-head scaled dot-product self-attention over `[T, D]` tokens.
///
/// Paths: `{p}.q`, `{p}.k`, `{p}.v`, `{p}.out`.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Mhsa {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid("mhsa", format!("{heads} heads do not divide width {dim}")));
        }
        Ok(Self {
            heads,
            q: Linear::new(src, &format!("{prefix}.q"), dim, dim)?,
            k: Linear::new(src, &format!("{prefix}.k"), dim, dim)?,
            v: Linear::new(src, &format!("{prefix}.v"), dim, dim)?,
            out: Linear::new(src, &format!("{prefix}.out"), dim, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_attention(x)?.0)
    }

    /// Output and one `[T, T]` row-stochastic attention matrix per head.
    pub fn forward_with_attention(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (_, d) = x.dims2()?;
        let dh = d / self.heads;
        let (q, k, v) = (self.q.forward(x)?, self.k.forward(x)?, self.v.forward(x)?);
        let inv = 1.0 / (dh as f32).sqrt();
        let mut maps = Vec::with_capacity(self.heads);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ops::narrow(&q, 1, h * dh, dh)?;
            let kh = ops::narrow(&k, 1, h * dh, dh)?;
            let vh = ops::narrow(&v, 1, h * dh, dh)?;
            let scores = ops::scale(&ops::matmul(&qh, &ops::transpose2d(&kh)?)?, inv);
            let a = ops::softmax(&scores, 1)?;
            outs.push(ops::matmul(&a, &vh)?);
            maps.push(a);
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        Ok((self.out.forward(&ops::concat(&refs, 1)?)?, maps))
    }

    fn analyze(&self, a: &mut Analytic, t: usize, d: usize) {
        let dh = d / self.heads;
        for l in [&self.q, &self.k, &self.v] {
            l.analyze(a, t);
        }
        for _ in 0..self.heads {
            a.matmul(t, dh, t);
            a.elementwise(&[t, t], cost::BINARY_PER_ELEM);
            a.softmax(&[t, t]);
            a.matmul(t, t, dh);
        }
        self.out.analyze(a, t);
    }
}

impl Module for Mhsa {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for l in [&self.q, &self.k, &self.v, &self.out] {
            l.visit(f);
        }
    }
}

/// Pre-norm transformer block with a 2× SiLU MLP:
/// `x + attn(norm1(x))`, then `+ fc2(silu(fc1(norm2(·))))`.
///
/// Paths: `{p}.norm1`, `{p}.attn`, `{p}.norm2`, `{p}.mlp.fc1`, `{p}.mlp.fc2`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: TokenNorm,
    pub attn: Mhsa,
    pub norm2: TokenNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(src: &mut dyn ParamSource, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: TokenNorm::new(src, &format!("{prefix}.norm1"), dim)?,
            attn: Mhsa::new(src, &format!("{prefix}.attn"), dim, heads)?,
            norm2: TokenNorm::new(src, &format!("{prefix}.norm2"), dim)?,
            fc1: Linear::new(src, &format!("{prefix}.mlp.fc1"), dim, 2 * dim)?,
            fc2: Linear::new(src, &format!("{prefix}.mlp.fc2"), 2 * dim, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = ops::add(x, &self.attn.forward(&self.norm1.forward(x)?)?)?;
        let m = self.fc2.forward(&ops::silu(&self.fc1.forward(&self.norm2.forward(&x)?)?))?;
        ops::add(&x, &m)
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, t: usize, d: usize) {
        a.norm(&[t, d], cost::GROUP_NORM_PER_ELEM);
        self.attn.analyze(a, t, d);
        a.elementwise(&[t, d], cost::BINARY_PER_ELEM);
        a.norm(&[t, d], cost::GROUP_NORM_PER_ELEM);
        self.fc1.analyze(a, t);
        a.elementwise(&[t, 2 * d], cost::SILU_PER_ELEM);
        self.fc2.analyze(a, t);
        a.elementwise(&[t, d], cost::BINARY_PER_ELEM);
    }
}

impl Module for TransformerBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm1.visit(f);
        self.attn.visit(f);
        self.norm2.visit(f);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;
    use crate::weights::{Initializer, RandomSource};

    fn zero_linear(l: &mut Linear) {
        l.weight = Tensor::zeros(l.weight.shape());
        l.bias = Tensor::zeros(l.bias.shape());
    }

    #[test]
    fn single_token_attends_to_itself() {
        let m = Mhsa::new(&mut RandomSource::new(1), "a", 8, 2).unwrap();
        let x = Lcg::new(2).normal_tensor(&[1, 8], 1.0);
        let (y, maps) = m.forward_with_attention(&x).unwrap();
        assert!(maps.iter().all(|a| a.data() == [1.0]));
        let expect = m.out.forward(&m.v.forward(&x).unwrap()).unwrap();
        assert!(y.bit_eq(&expect));
    }

    #[test]
    fn equal_tokens_attend_uniformly() {
        let m = Mhsa::new(&mut RandomSource::new(3), "a", 6, 3).unwrap();
        let row = Lcg::new(4).normal_tensor(&[6], 1.0);
        let x = Tensor::from_fn(&[5, 6], |i| row.data()[i % 6]);
        let (_, maps) = m.forward_with_attention(&x).unwrap();
        for a in maps {
            assert!(a.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
        }
    }

    #[test]
    fn matches_per_head_loop_oracle() {
        let (t, d, heads) = (4, 8, 2);
        let m = Mhsa::new(&mut RandomSource::new(5), "a", d, heads).unwrap();
        let x = Lcg::new(6).normal_tensor(&[t, d], 1.0);
        let lin = |l: &Linear, x: &[f64], din: usize, dout: usize| -> Vec<f64> {
            let mut y = vec![0.0; t * dout];
            for i in 0..t {
                for o in 0..dout {
                    let mut s = l.bias.data()[o] as f64;
                    for k in 0..din {
                        s += x[i * din + k] * l.weight.data()[k * dout + o] as f64;
                    }
                    y[i * dout + o] = s;
                }
            }
            y
        };
        let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let (q, k, v) = (lin(&m.q, &x64, d, d), lin(&m.k, &x64, d, d), lin(&m.v, &x64, d, d));
        let dh = d / heads;
        let mut cat = vec![0.0; t * d];
        for h in 0..heads {
            for i in 0..t {
                let s: Vec<f64> = (0..t)
                    .map(|j| (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..dh {
                    cat[i * d + h * dh + c] = (0..t).map(|j| e[j] / z * v[j * d + h * dh + c]).sum();
                }
            }
        }
        let expect = lin(&m.out, &cat, d, d);
        let got = m.forward(&x).unwrap();
        for (g, e) in got.data().iter().zip(&expect) {
            assert!((*g as f64 - e).abs() < 1e-4, "{g} vs {e}");
        }
    }

    #[test]
    fn zero_weights_make_the_block_an_identity() {
        let mut b = TransformerBlock::new(&mut RandomSource::new(7), "t", 8, 4).unwrap();
        for l in [&mut b.attn.out, &mut b.fc2] {
            zero_linear(l);
        }
        let x = Lcg::new(8).normal_tensor(&[6, 8], 1.0);
        assert!(b.forward(&x).unwrap().bit_eq(&x));
    }

    #[test]
    fn block_matches_scripted_composition() {
        let b = TransformerBlock::new(&mut RandomSource::new(9), "t", 8, 2).unwrap();
        let x = Lcg::new(10).normal_tensor(&[5, 8], 1.0);
        let a = ops::add(&x, &b.attn.forward(&b.norm1.forward(&x).unwrap()).unwrap()).unwrap();
        let h = ops::silu(&b.fc1.forward(&b.norm2.forward(&a).unwrap()).unwrap());
        let expect = ops::add(&a, &b.fc2.forward(&h).unwrap()).unwrap();
        let y = b.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.bit_eq(&expect));
    }

    #[test]
    fn visit_matches_initializer() {
        let mut src = Initializer::new(0);
        let b = TransformerBlock::new(&mut src, "t", 4, 2).unwrap();
        let store = src.into_store();
        let mut names = Vec::new();
        b.visit(&mut |n, _| names.push(n.to_string()));
        assert_eq!(names, store.names().collect::<Vec<_>>());
    }
}
