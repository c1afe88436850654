use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

pub const GROUP_NORM_EPS: f32 = 1e-5;

/// Per-channel statistics and affine of an inference-mode batch norm.
///
/// The stored variance is used as-is (no epsilon is added), so it must be
/// strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNormStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, t) in [("mean", &self.mean), ("var", &self.var), ("beta", &self.beta)] {
            if t.numel() != c {
                return Err(Error::mismatch("batch_norm", format!("{name} length"), c, t.numel()));
            }
        }
        if let Some(i) = self.var.data().iter().position(|&v| v.is_nan() || v <= 0.0) {
            return Err(Error::invalid("batch_norm", format!("variance of channel {i} must be > 0")));
        }
        Ok(())
    }

    /// `1 / sqrt(var)` per channel.
    pub fn rstd(&self) -> Vec<f32> {
        self.var.data().iter().map(|v| 1.0 / v.sqrt()).collect()
    }
}

/// `y = (x − mean)·rstd·γ + β` per channel of a rank-4 tensor.
pub fn batch_norm(x: &Tensor, s: &BatchNormStats) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    s.validate()?;
    if s.channels() != c {
        return Err(Error::mismatch("batch_norm", "channel axis", s.channels(), c));
    }
    flops::record(OpKind::Norm, x.numel() as u64 * cost::BATCH_NORM_PER_ELEM);
    let rstd = s.rstd();
    let (mean, gamma, beta) = (s.mean.data(), s.gamma.data(), s.beta.data());
    let mut out = x.data().to_vec();
    for (plane, chunk) in out.chunks_mut(h * w).enumerate() {
        let ci = plane % c;
        for v in chunk {
            *v = (*v - mean[ci]) * rstd[ci] * gamma[ci] + beta[ci];
        }
    }
    Tensor::new(x.shape(), out)
}

/// Gradients with respect to input, γ and β.
pub fn batch_norm_backward(x: &Tensor, s: &BatchNormStats, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, c, h, w) = x.dims4()?;
    if grad_out.shape() != x.shape() {
        return Err(Error::invalid("batch_norm_backward", "upstream gradient shape mismatch"));
    }
    let rstd = s.rstd();
    let (mean, gamma) = (s.mean.data(), s.gamma.data());
    let mut gx = vec![0.0f32; x.numel()];
    let (mut gg, mut gb) = (vec![0.0f32; c], vec![0.0f32; c]);
    for (plane, ((dst, xs), gs)) in gx
        .chunks_mut(h * w)
        .zip(x.data().chunks(h * w))
        .zip(grad_out.data().chunks(h * w))
        .enumerate()
    {
        let ci = plane % c;
        for ((d, &xv), &g) in dst.iter_mut().zip(xs).zip(gs) {
            *d = g * rstd[ci] * gamma[ci];
            gg[ci] += g * (xv - mean[ci]) * rstd[ci];
            gb[ci] += g;
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(&[c], gg)?,
        Tensor::new(&[c], gb)?,
    ))
}

fn group_check(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::invalid(
            "group_norm",
            format!("channels {c} not divisible by group count {groups}"),
        ));
    }
    if gamma.numel() != c {
        return Err(Error::mismatch("group_norm", "gamma length", c, gamma.numel()));
    }
    if beta.numel() != c {
        return Err(Error::mismatch("group_norm", "beta length", c, beta.numel()));
    }
    Ok((n, c, h, w))
}

/// Per (sample, group) mean and `1/sqrt(var + eps)` with biased variance.
fn group_stats(chunk: &[f32]) -> (f32, f32) {
    let len = chunk.len() as f32;
    let mean = chunk.iter().sum::<f32>() / len;
    let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / len;
    (mean, 1.0 / (var + GROUP_NORM_EPS).sqrt())
}

/// Normalizes each (sample, group) block to zero mean and unit variance,
/// then applies the per-channel affine.
pub fn group_norm(x: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = group_check(x, groups, gamma, beta)?;
    flops::record(OpKind::Norm, x.numel() as u64 * cost::GROUP_NORM_PER_ELEM);
    let block = (c / groups) * h * w;
    let (gm, bt) = (gamma.data(), beta.data());
    let mut out = x.data().to_vec();
    for (gi, chunk) in out.chunks_mut(block).enumerate() {
        let (mean, rstd) = group_stats(chunk);
        let c0 = (gi % groups) * (c / groups);
        for (j, v) in chunk.iter_mut().enumerate() {
            let ci = c0 + j / (h * w);
            *v = (*v - mean) * rstd * gm[ci] + bt[ci];
        }
    }
    Tensor::new(x.shape(), out)
}

/// Gradients with respect to input, γ and β.
pub fn group_norm_backward(
    x: &Tensor,
    groups: usize,
    gamma: &Tensor,
    beta: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, c, h, w) = group_check(x, groups, gamma, beta)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::invalid("group_norm_backward", "upstream gradient shape mismatch"));
    }
    let hw = h * w;
    let block = (c / groups) * hw;
    let gm = gamma.data();
    let mut gx = vec![0.0f32; x.numel()];
    let (mut gg, mut gb) = (vec![0.0f32; c], vec![0.0f32; c]);
    for (gi, ((dst, xs), gs)) in gx
        .chunks_mut(block)
        .zip(x.data().chunks(block))
        .zip(grad_out.data().chunks(block))
        .enumerate()
    {
        let (mean, rstd) = group_stats(xs);
        let c0 = (gi % groups) * (c / groups);
        let m = block as f32;
        // dxhat = g·γ; dx = rstd/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
        let mut sum_d = 0.0f32;
        let mut sum_dx = 0.0f32;
        for (j, (&xv, &g)) in xs.iter().zip(gs).enumerate() {
            let ci = c0 + j / hw;
            let xhat = (xv - mean) * rstd;
            let d = g * gm[ci];
            sum_d += d;
            sum_dx += d * xhat;
            gg[ci] += g * xhat;
            gb[ci] += g;
        }
        for (j, (out, (&xv, &g))) in dst.iter_mut().zip(xs.iter().zip(gs)).enumerate() {
            let ci = c0 + j / hw;
            let xhat = (xv - mean) * rstd;
            *out = rstd / m * (m * g * gm[ci] - sum_d - xhat * sum_dx);
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(&[c], gg)?,
        Tensor::new(&[c], gb)?,
    ))
}
