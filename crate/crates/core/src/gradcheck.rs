//! Finite-difference verification of the reverse-mode adjoints.
//!
//! Each check builds a small random instance of one operation on a
//! [`GradTape`], backpropagates a random seed `r`, and compares the resulting
//! input gradients with central differences of `L = Σ r ⊙ f(x)`. The
//! differences are taken on naive `f64` re-implementations of the ops that
//! share no code with the kernels.

use crate::autograd::{GradTape, Var};
use crate::error::{Error, Result};
use crate::ops::{Axis, Conv2dParams};
use crate::rng::Lcg;
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-3;
/// Pass threshold on the per-coordinate relative error.
pub const TOLERANCE: f64 = 1e-3;
/// Relative error is `|a − n| / max(|a|, |n|, ERROR_FLOOR)`.
pub const ERROR_FLOOR: f64 = 1e-2;
/// Coordinates sampled per trial.
pub const COORDS_PER_TRIAL: usize = 50;

pub const OPS: &[&str] = &[
    "conv2d",
    "pad_replicate",
    "avg_pool2d",
    "adaptive_avg_pool2d",
    "directional_pool",
    "bilinear_resize",
    "matmul",
    "transpose2d",
    "add",
    "mul",
    "scale",
    "sigmoid",
    "silu",
    "softmax",
    "batch_norm",
    "group_norm",
    "concat",
    "narrow",
    "reshape",
    "composite",
];

#[derive(Clone, Debug, serde::Serialize)]
pub struct OpReport {
    pub op: String,
    pub trials: usize,
    pub coords: usize,
    pub max_rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Runs `trials` random instances of every op in `ops`.
pub fn run(ops: &[&str], trials: usize, seed: u64) -> Result<Vec<OpReport>> {
    if let Some(bad) = ops.iter().find(|o| !OPS.contains(o)) {
        return Err(Error::invalid("gradcheck", format!("unknown op `{bad}`")));
    }
    ops.iter().map(|op| check_op(op, trials, seed)).collect()
}

pub fn check_op(op: &str, trials: usize, seed: u64) -> Result<OpReport> {
    let mut rng = Lcg::new(seed ^ fnv(op));
    let mut report = OpReport {
        op: op.to_string(),
        trials,
        coords: 0,
        max_rel_err: 0.0,
    };
    for trial in 0..trials {
        let case = build_case(op, trial, &mut rng)?;
        let (coords, err) = case.check(&mut rng)?;
        report.coords += coords;
        report.max_rel_err = report.max_rel_err.max(err);
    }
    Ok(report)
}

fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

type Build = Box<dyn Fn(&mut GradTape, &[Var]) -> Result<Var>>;
type Reference = Box<dyn Fn(&[R64]) -> R64>;

struct Case {
    inputs: Vec<Tensor>,
    build: Build,
    reference: Reference,
}

impl Case {
    fn check(&self, rng: &mut Lcg) -> Result<(usize, f64)> {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        let seed = rng.uniform_tensor(tape.value(out).shape(), -1.0, 1.0);
        let grads = tape.backward(out, &seed)?;

        let r: Vec<f64> = seed.data().iter().map(|&v| v as f64).collect();
        let base: Vec<R64> = self.inputs.iter().map(R64::from).collect();
        let loss = |xs: &[R64]| -> f64 {
            let y = (self.reference)(xs);
            y.data.iter().zip(&r).map(|(a, b)| a * b).sum()
        };

        let picks: Vec<(usize, usize)> = (0..COORDS_PER_TRIAL)
            .map(|s| {
                let i = s % self.inputs.len();
                (i, rng.below(self.inputs[i].numel()))
            })
            .collect();

        let mut worst = 0.0f64;
        for &(i, k) in &picks {
            let mut xs = base.clone();
            xs[i].data[k] = base[i].data[k] + STEP;
            let plus = loss(&xs);
            xs[i].data[k] = base[i].data[k] - STEP;
            let minus = loss(&xs);
            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[k] as f64);
            worst = worst.max(relative_error(analytic, numeric));
        }
        Ok((picks.len(), worst))
    }
}

fn build_case(op: &str, trial: usize, rng: &mut Lcg) -> Result<Case> {
    let n = |rng: &mut Lcg, shape: &[usize]| rng.normal_tensor(shape, 1.0);
    let case = |inputs: Vec<Tensor>, build: Build, reference: Reference| Case {
        inputs,
        build,
        reference,
    };
    Ok(match op {
        "conv2d" => {
            let (stride, pad, groups) = [(1, 1, 1), (2, 1, 2), (1, 0, 4)][trial % 3];
            let p = Conv2dParams::new(stride, pad, groups);
            let inputs = vec![n(rng, &[2, 4, 5, 5]), n(rng, &[4, 4 / groups, 3, 3]), n(rng, &[4])];
            case(
                inputs,
                Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), p)),
                Box::new(move |x| reference::conv2d(&x[0], &x[1], Some(&x[2]), stride, pad, groups)),
            )
        }
        "pad_replicate" => case(
            vec![n(rng, &[2, 2, 3, 5])],
            Box::new(|t, v| t.pad_replicate(v[0], 2)),
            Box::new(|x| reference::pad_replicate(&x[0], 2)),
        ),
        "avg_pool2d" => {
            let (k, s) = [(2, 2), (3, 1)][trial % 2];
            case(
                vec![n(rng, &[1, 2, 6, 6])],
                Box::new(move |t, v| t.avg_pool2d(v[0], k, s)),
                Box::new(move |x| reference::avg_pool(&x[0], k, s)),
            )
        }
        "adaptive_avg_pool2d" => case(
            vec![n(rng, &[1, 2, 7, 5])],
            Box::new(|t, v| t.adaptive_avg_pool2d(v[0], 3, 2)),
            Box::new(|x| reference::adaptive_pool(&x[0], 3, 2)),
        ),
        "directional_pool" => {
            let axis = [Axis::H, Axis::W][trial % 2];
            case(
                vec![n(rng, &[2, 2, 4, 5])],
                Box::new(move |t, v| t.directional_pool(v[0], axis)),
                Box::new(move |x| match axis {
                    Axis::H => reference::adaptive_pool(&x[0], 1, 5),
                    Axis::W => reference::adaptive_pool(&x[0], 4, 1),
                }),
            )
        }
        "bilinear_resize" => {
            let (oh, ow) = [(5, 7), (2, 2), (4, 3)][trial % 3];
            case(
                vec![n(rng, &[2, 3, 3, 3])],
                Box::new(move |t, v| t.bilinear_resize(v[0], oh, ow)),
                Box::new(move |x| reference::bilinear(&x[0], oh, ow)),
            )
        }
        "matmul" => case(
            vec![n(rng, &[4, 6]), n(rng, &[6, 5])],
            Box::new(|t, v| t.matmul(v[0], v[1])),
            Box::new(|x| reference::matmul(&x[0], &x[1])),
        ),
        "transpose2d" => case(
            vec![n(rng, &[6, 9])],
            Box::new(|t, v| t.transpose2d(v[0])),
            Box::new(|x| reference::transpose(&x[0])),
        ),
        "add" | "mul" => {
            let is_add = op == "add";
            let shapes: [&[usize]; 2] = [&[2, 1, 4, 4], &[1, 3, 1, 4]];
            let inputs = vec![n(rng, &[2, 3, 4, 4]), n(rng, shapes[trial % 2])];
            case(
                inputs,
                Box::new(move |t, v| if is_add { t.add(v[0], v[1]) } else { t.mul(v[0], v[1]) }),
                Box::new(move |x| reference::binary(&x[0], &x[1], is_add)),
            )
        }
        "scale" => case(
            vec![n(rng, &[3, 4, 5])],
            Box::new(|t, v| t.scale(v[0], 1.7)),
            Box::new(|x| x[0].map(|v| v * 1.7f32 as f64)),
        ),
        "sigmoid" => case(
            vec![n(rng, &[2, 3, 4, 4])],
            Box::new(|t, v| t.sigmoid(v[0])),
            Box::new(|x| x[0].map(reference::sigmoid)),
        ),
        "silu" => case(
            vec![n(rng, &[2, 3, 4, 4])],
            Box::new(|t, v| t.silu(v[0])),
            Box::new(|x| x[0].map(|v| v * reference::sigmoid(v))),
        ),
        "softmax" => {
            let (shape, axis): (&[usize], usize) = [(&[6usize, 9][..], 1), (&[3, 4, 5][..], 1), (&[9, 6][..], 0)][trial % 3];
            case(
                vec![n(rng, shape)],
                Box::new(move |t, v| t.softmax(v[0], axis)),
                Box::new(move |x| reference::softmax(&x[0], axis)),
            )
        }
        "batch_norm" => {
            let mean = rng.normal_tensor(&[3], 0.5);
            let var = rng.uniform_tensor(&[3], 0.5, 2.0);
            let (m2, v2) = (R64::from(&mean), R64::from(&var));
            case(
                vec![n(rng, &[2, 3, 4, 4]), rng.uniform_tensor(&[3], 0.5, 1.5), n(rng, &[3])],
                Box::new(move |t, v| t.batch_norm(v[0], v[1], v[2], mean.clone(), var.clone())),
                Box::new(move |x| reference::batch_norm(&x[0], &m2, &v2, &x[1], &x[2])),
            )
        }
        "group_norm" => {
            let groups = [3, 1, 6][trial % 3];
            case(
                vec![n(rng, &[2, 6, 3, 3]), rng.uniform_tensor(&[6], 0.5, 1.5), n(rng, &[6])],
                Box::new(move |t, v| t.group_norm(v[0], groups, v[1], v[2])),
                Box::new(move |x| reference::group_norm(&x[0], groups, &x[1], &x[2])),
            )
        }
        "concat" => {
            let axis = [1, 2, 3][trial % 3];
            let mut shapes = [[2usize, 2, 3, 3], [2, 2, 3, 3], [2, 2, 3, 3]];
            for (i, s) in shapes.iter_mut().enumerate() {
                s[axis] = i + 1;
            }
            case(
                shapes.iter().map(|s| n(rng, s)).collect(),
                Box::new(move |t, v| t.concat(v, axis)),
                Box::new(move |x| reference::concat(x, axis)),
            )
        }
        "narrow" => case(
            vec![n(rng, &[2, 5, 3, 3])],
            Box::new(|t, v| t.narrow(v[0], 1, 1, 3)),
            Box::new(|x| reference::narrow(&x[0], 1, 1, 3)),
        ),
        "reshape" => case(
            vec![n(rng, &[3, 4, 5])],
            Box::new(|t, v| t.reshape(v[0], &[12, 5])),
            Box::new(|x| R64 {
                shape: vec![12, 5],
                data: x[0].data.clone(),
            }),
        ),
        "composite" => case(
            vec![n(rng, &[1, 2, 6, 6]), n(rng, &[3, 2, 3, 3]), n(rng, &[4, 3])],
            Box::new(|t, v| {
                let y = t.conv2d(v[0], v[1], None, Conv2dParams::same(3))?;
                let y = t.sigmoid(y)?;
                let y = t.adaptive_avg_pool2d(y, 4, 4)?;
                let y = t.bilinear_resize(y, 3, 4)?;
                let y = t.reshape(y, &[9, 4])?;
                let y = t.matmul(y, v[2])?;
                t.softmax(y, 1)
            }),
            Box::new(|x| {
                let y = reference::conv2d(&x[0], &x[1], None, 1, 1, 1).map(reference::sigmoid);
                let y = reference::adaptive_pool(&y, 4, 4);
                let mut y = reference::bilinear(&y, 3, 4);
                y.shape = vec![9, 4];
                reference::softmax(&reference::matmul(&y, &x[2]), 1)
            }),
        ),
        other => return Err(Error::invalid("gradcheck", format!("unknown op `{other}`"))),
    })
}

/// `f64` tensor used by the reference implementations.
#[derive(Clone, Debug)]
pub struct R64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Tensor> for R64 {
    fn from(t: &Tensor) -> Self {
        R64 {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

impl R64 {
    fn map(&self, f: impl Fn(f64) -> f64) -> R64 {
        R64 {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn d4(&self) -> (usize, usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }
}

/// Naive `f64` kernels.
pub mod reference {
    use super::R64;

    pub fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    pub fn conv2d(x: &R64, w: &R64, b: Option<&R64>, stride: usize, pad: usize, groups: usize) -> R64 {
        let (n, cin, h, wd) = x.d4();
        let (cout, cig, kh, kw) = w.d4();
        let cog = cout / groups;
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut data = vec![0.0; n * cout * oh * ow];
        for ni in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = b.map_or(0.0, |b| b.data[co]);
                        for ci in 0..cig {
                            let c = (co / cog) * cig + ci;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.data[((ni * cin + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data[((co * cig + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        data[((ni * cout + co) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        R64 { shape: vec![n, cout, oh, ow], data }
    }

    pub fn pad_replicate(x: &R64, pad: usize) -> R64 {
        let (n, c, h, w) = x.d4();
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut data = Vec::new();
        for p in 0..n * c {
            for y in 0..ph {
                for xx in 0..pw {
                    let sy = (y as isize - pad as isize).clamp(0, h as isize - 1) as usize;
                    let sx = (xx as isize - pad as isize).clamp(0, w as isize - 1) as usize;
                    data.push(x.data[(p * h + sy) * w + sx]);
                }
            }
        }
        R64 { shape: vec![n, c, ph, pw], data }
    }

    fn window_mean(x: &R64, plane: usize, r: (usize, usize), c: (usize, usize)) -> f64 {
        let (_, _, h, w) = x.d4();
        let mut s = 0.0;
        for y in r.0..r.1 {
            for xx in c.0..c.1 {
                s += x.data[(plane * h + y) * w + xx];
            }
        }
        s / ((r.1 - r.0) * (c.1 - c.0)) as f64
    }

    fn pool_with(x: &R64, rows: Vec<(usize, usize)>, cols: Vec<(usize, usize)>) -> R64 {
        let (n, c, _, _) = x.d4();
        let mut data = Vec::new();
        for p in 0..n * c {
            for &r in &rows {
                for &cc in &cols {
                    data.push(window_mean(x, p, r, cc));
                }
            }
        }
        R64 { shape: vec![n, c, rows.len(), cols.len()], data }
    }

    pub fn avg_pool(x: &R64, k: usize, s: usize) -> R64 {
        let (_, _, h, w) = x.d4();
        let rows = (0..(h - k) / s + 1).map(|i| (i * s, i * s + k)).collect();
        let cols = (0..(w - k) / s + 1).map(|i| (i * s, i * s + k)).collect();
        pool_with(x, rows, cols)
    }

    pub fn adaptive_pool(x: &R64, oh: usize, ow: usize) -> R64 {
        let (_, _, h, w) = x.d4();
        let win = |len: usize, out: usize| -> Vec<(usize, usize)> {
            (0..out)
                .map(|i| {
                    let lo = (i as f64 * len as f64 / out as f64).floor() as usize;
                    let hi = ((i + 1) as f64 * len as f64 / out as f64).ceil() as usize;
                    (lo, hi)
                })
                .collect()
        };
        pool_with(x, win(h, oh), win(w, ow))
    }

    pub fn bilinear(x: &R64, oh: usize, ow: usize) -> R64 {
        let (n, c, h, w) = x.d4();
        let coord = |i: usize, len: usize, out: usize| -> (usize, usize, f64) {
            let src = ((i as f64 + 0.5) * len as f64 / out as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            (lo, (lo + 1).min(len - 1), src - lo as f64)
        };
        let mut data = Vec::new();
        for p in 0..n * c {
            let at = |y: usize, xx: usize| x.data[(p * h + y) * w + xx];
            for i in 0..oh {
                let (y0, y1, fy) = coord(i, h, oh);
                for j in 0..ow {
                    let (x0, x1, fx) = coord(j, w, ow);
                    data.push(
                        (1.0 - fy) * (1.0 - fx) * at(y0, x0)
                            + (1.0 - fy) * fx * at(y0, x1)
                            + fy * (1.0 - fx) * at(y1, x0)
                            + fy * fx * at(y1, x1),
                    );
                }
            }
        }
        R64 { shape: vec![n, c, oh, ow], data }
    }

    pub fn matmul(a: &R64, b: &R64) -> R64 {
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = (0..k).map(|t| a.data[i * k + t] * b.data[t * n + j]).sum();
            }
        }
        R64 { shape: vec![m, n], data }
    }

    pub fn transpose(a: &R64) -> R64 {
        let (m, n) = (a.shape[0], a.shape[1]);
        let data = (0..n * m).map(|i| a.data[(i % m) * n + i / m]).collect();
        R64 { shape: vec![n, m], data }
    }

    pub fn binary(a: &R64, b: &R64, add: bool) -> R64 {
        let shape: Vec<usize> = a.shape.iter().zip(&b.shape).map(|(&x, &y)| x.max(y)).collect();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let get = |t: &R64, i: [usize; 4]| {
            let idx: Vec<usize> = i.iter().zip(&t.shape).map(|(&v, &e)| if e == 1 { 0 } else { v }).collect();
            t.data[((idx[0] * t.shape[1] + idx[1]) * t.shape[2] + idx[2]) * t.shape[3] + idx[3]]
        };
        let mut data = Vec::new();
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let (p, q) = (get(a, [ni, ci, y, x]), get(b, [ni, ci, y, x]));
                        data.push(if add { p + q } else { p * q });
                    }
                }
            }
        }
        R64 { shape, data }
    }

    pub fn softmax(x: &R64, axis: usize) -> R64 {
        let outer: usize = x.shape[..axis].iter().product();
        let len = x.shape[axis];
        let inner: usize = x.shape[axis + 1..].iter().product();
        let mut data = x.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let s: f64 = (0..len).map(|k| x.data[idx(k)].exp()).sum();
                for k in 0..len {
                    data[idx(k)] = x.data[idx(k)].exp() / s;
                }
            }
        }
        R64 { shape: x.shape.clone(), data }
    }

    pub fn batch_norm(x: &R64, mean: &R64, var: &R64, gamma: &R64, beta: &R64) -> R64 {
        let (_, c, h, w) = x.d4();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / (h * w)) % c;
                (v - mean.data[ch]) / var.data[ch].sqrt() * gamma.data[ch] + beta.data[ch]
            })
            .collect();
        R64 { shape: x.shape.clone(), data }
    }

    pub fn group_norm(x: &R64, groups: usize, gamma: &R64, beta: &R64) -> R64 {
        let (n, c, h, w) = x.d4();
        let per = c / groups * h * w;
        let mut data = x.data.clone();
        for ni in 0..n {
            for g in 0..groups {
                let start = (ni * groups + g) * per;
                let block = &x.data[start..start + per];
                let mean = block.iter().sum::<f64>() / per as f64;
                let var = block.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
                for j in 0..per {
                    let ch = g * (c / groups) + j / (h * w);
                    data[start + j] = (block[j] - mean) / (var + 1e-5f32 as f64).sqrt() * gamma.data[ch] + beta.data[ch];
                }
            }
        }
        R64 { shape: x.shape.clone(), data }
    }

    pub fn concat(xs: &[R64], axis: usize) -> R64 {
        let mut shape = xs[0].shape.clone();
        shape[axis] = xs.iter().map(|t| t.shape[axis]).sum();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::new();
        for o in 0..outer {
            for t in xs {
                let run = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * run..(o + 1) * run]);
            }
        }
        R64 { shape, data }
    }

    pub fn narrow(x: &R64, axis: usize, start: usize, len: usize) -> R64 {
        let outer: usize = x.shape[..axis].iter().product();
        let inner: usize = x.shape[axis + 1..].iter().product();
        let extent = x.shape[axis];
        let mut shape = x.shape.clone();
        shape[axis] = len;
        let mut data = Vec::new();
        for o in 0..outer {
            for k in start..start + len {
                data.extend_from_slice(&x.data[(o * extent + k) * inner..(o * extent + k + 1) * inner]);
            }
        }
        R64 { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_one_trial() {
        for op in OPS {
            let r = check_op(op, 1, 7).unwrap();
            assert!(r.passed(), "{op}: {}", r.max_rel_err);
            assert!(r.coords >= COORDS_PER_TRIAL, "{op}: {} coords", r.coords);
        }
    }

    #[test]
    fn unknown_op_rejected() {
        assert!(run(&["conv3d"], 1, 0).is_err());
    }
}
