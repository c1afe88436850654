use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

/// `(outer, len, inner)` factorization of `shape` around `axis`.
pub(crate) fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`: the lane maximum is subtracted first.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::invalid("softmax", format!("axis {axis} out of range for rank {}", x.rank())));
    }
    flops::record(OpKind::Softmax, x.numel() as u64 * cost::SOFTMAX_PER_ELEM);
    let (outer, len, inner) = lanes(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0f32; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| d[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for k in 0..len {
                let e = (d[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..len {
                out[at(k)] /= sum;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// `dx = y ⊙ (g − Σ g⊙y)` per lane.
pub fn softmax_backward(y: &Tensor, axis: usize, grad_out: &Tensor) -> Result<Tensor> {
    if y.shape() != grad_out.shape() || axis >= y.rank() {
        return Err(Error::invalid("softmax_backward", "upstream gradient shape mismatch"));
    }
    let (outer, len, inner) = lanes(y.shape(), axis);
    let (yd, gd) = (y.data(), grad_out.data());
    let mut gx = vec![0.0f32; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: f32 = (0..len).map(|k| gd[at(k)] * yd[at(k)]).sum();
            for k in 0..len {
                gx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
            }
        }
    }
    Tensor::new(y.shape(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;

    #[test]
    fn uniform_input() {
        let y = softmax(&Tensor::full(&[1, 4], 3.0), 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn shift_invariant() {
        let x = Lcg::new(14).normal_tensor(&[3, 5], 1.0);
        let shifted = Tensor::new(&[3, 5], x.data().iter().map(|v| v + 100.0).collect()).unwrap();
        let (a, b) = (softmax(&x, 1).unwrap(), softmax(&shifted, 1).unwrap());
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn matches_f64_oracle() {
        let x = Lcg::new(15).normal_tensor(&[5], 2.0);
        let y = softmax(&x, 0).unwrap();
        let ex: Vec<f64> = x.data().iter().map(|&v| (v as f64).exp()).collect();
        let s: f64 = ex.iter().sum();
        for (a, e) in y.data().iter().zip(&ex) {
            assert!((*a as f64 - e / s).abs() < 1e-6);
        }
        let total: f32 = y.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn middle_axis() {
        let x = Lcg::new(16).normal_tensor(&[2, 3, 4], 1.0);
        let y = softmax(&x, 1).unwrap();
        for o in 0..2 {
            for i in 0..4 {
                let s: f32 = (0..3).map(|k| y.data()[(o * 3 + k) * 4 + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert!(softmax(&x, 3).is_err());
    }
}
