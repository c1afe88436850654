//! Reproducible pseudo-random numbers for weight initialization and tests.
//!
//! The generator is a 64-bit linear congruential generator
//! `s ← s · 6364136223846793005 + 1442695040888963407 (mod 2⁶⁴)`, seeded
//! with `s₀ = seed`. Each draw advances the state once and returns the new
//! state. Uniform samples are `((s >> 11) + 0.5) · 2⁻⁵³`, strictly inside
//! (0, 1). Normal samples use one Box–Muller pair per value: with two
//! consecutive uniforms `u₁, u₂`, `z = sqrt(−2 ln u₁) · cos(2π u₂)` in `f64`,
//! then rounded to `f32`. The sine half is discarded.

use crate::tensor::Tensor;

const MULTIPLIER: u64 = 6364136223846793005;
const INCREMENT: u64 = 1442695040888963407;

#[derive(Clone, Debug)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        self.state
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: f64) -> Tensor {
        Tensor::from_fn(shape, |_| (self.normal() * std) as f32)
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(shape, |_| self.uniform_range(lo, hi) as f32)
    }
}
