use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

/// `[M, K] × [K, N]`, each output accumulated over `k` in ascending order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if k != kb {
        return Err(Error::mismatch("matmul", "inner axis", k, kb));
    }
    flops::record(OpKind::Matmul, cost::matmul(m, k, n));
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (kk, &av) in ad[i * k..(i + 1) * k].iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    Tensor::new(&[m, n], out)
}

pub fn transpose2d(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    let d = x.data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

/// Returns `(dA, dB)` for `C = A·B` given `dC`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(grad_out, &transpose2d(b)?)?;
    let gb = matmul(&transpose2d(a)?, grad_out)?;
    Ok((ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;

    #[test]
    fn identity_and_zero() {
        let a = Lcg::new(10).normal_tensor(&[3, 3], 1.0);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert!(matmul(&a, &eye).unwrap().bit_eq(&a));
        assert!(matmul(&eye, &a).unwrap().bit_eq(&a));
        let z = matmul(&a, &Tensor::zeros(&[3, 2])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_triple_loop() {
        let mut r = Lcg::new(11);
        let a = r.normal_tensor(&[3, 4], 1.0);
        let b = r.normal_tensor(&[4, 2], 1.0);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let s: f64 = (0..4).map(|k| a.data()[i * 4 + k] as f64 * b.data()[k * 2 + j] as f64).sum();
                assert!((c.data()[i * 2 + j] as f64 - s).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn inner_mismatch_rejected() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2])).unwrap_err();
        assert!(err.to_string().contains("inner axis"));
    }
}
