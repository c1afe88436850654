use crate::error::{Error, Result};
use crate::ops::softmax::lanes;
use crate::tensor::Tensor;

/// Joins tensors along `axis`; every other extent must agree.
pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {rank}")));
    }
    for t in &xs[1..] {
        if t.rank() != rank {
            return Err(Error::mismatch("concat", "rank", rank, t.rank()));
        }
        for ax in (0..rank).filter(|&a| a != axis) {
            if t.shape()[ax] != first.shape()[ax] {
                return Err(Error::mismatch("concat", format!("axis {ax}"), first.shape()[ax], t.shape()[ax]));
            }
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|t| t.shape()[axis]).sum();
    let (outer, _, inner) = lanes(first.shape(), axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in xs {
            let run = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * run..(o + 1) * run]);
        }
    }
    Tensor::new(&shape, out)
}

/// Slice `[start, start + len)` of `axis`.
pub fn narrow(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::invalid("narrow", format!("axis {axis} out of range for rank {}", x.rank())));
    }
    let extent = x.shape()[axis];
    if len == 0 || start + len > extent {
        return Err(Error::invalid("narrow", format!("range {start}..{} outside extent {extent}", start + len)));
    }
    let (outer, _, inner) = lanes(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::new(&shape, out)
}

/// Scatters the gradient of a [`narrow`] back into a zero tensor of `input_shape`.
pub fn narrow_backward(input_shape: &[usize], axis: usize, start: usize, grad_out: &Tensor) -> Result<Tensor> {
    let len = grad_out.shape()[axis];
    let (outer, extent, inner) = lanes(input_shape, axis);
    let mut gx = vec![0.0f32; input_shape.iter().product()];
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        gx[base..base + len * inner].copy_from_slice(&grad_out.data()[o * len * inner..(o + 1) * len * inner]);
    }
    Tensor::new(input_shape, gx)
}

/// Splits `axis` into consecutive pieces of the given sizes.
pub fn split(x: &Tensor, sizes: &[usize], axis: usize) -> Result<Vec<Tensor>> {
    if axis >= x.rank() {
        return Err(Error::invalid("split", format!("axis {axis} out of range for rank {}", x.rank())));
    }
    let total: usize = sizes.iter().sum();
    if total != x.shape()[axis] {
        return Err(Error::mismatch("split", format!("axis {axis} (sum of sizes)"), x.shape()[axis], total));
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&len| {
            let piece = narrow(x, axis, start, len);
            start += len;
            piece
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;

    #[test]
    fn round_trip_every_axis() {
        let x = Lcg::new(19).normal_tensor(&[2, 5, 3, 4], 1.0);
        for axis in 0..4 {
            let e = x.shape()[axis];
            let sizes = [1, e - 1];
            let parts = split(&x, &sizes, axis).unwrap();
            let refs: Vec<&Tensor> = parts.iter().collect();
            assert!(concat(&refs, axis).unwrap().bit_eq(&x));
        }
    }

    #[test]
    fn single_concat_is_identity() {
        let x = Lcg::new(20).normal_tensor(&[1, 3, 2, 2], 1.0);
        assert!(concat(&[&x], 1).unwrap().bit_eq(&x));
    }

    #[test]
    fn channel_concat_index_arithmetic() {
        let mut r = Lcg::new(21);
        let a = r.normal_tensor(&[2, 1, 2, 3], 1.0);
        let b = r.normal_tensor(&[2, 2, 2, 3], 1.0);
        let c = r.normal_tensor(&[2, 3, 2, 3], 1.0);
        let y = concat(&[&a, &b, &c], 1).unwrap();
        assert_eq!(y.shape(), &[2, 6, 2, 3]);
        for n in 0..2 {
            for ch in 0..6 {
                for p in 0..6 {
                    let expect = match ch {
                        0 => a.data()[n * 6 + p],
                        1 | 2 => b.data()[(n * 2 + ch - 1) * 6 + p],
                        _ => c.data()[(n * 3 + ch - 3) * 6 + p],
                    };
                    assert_eq!(y.data()[(n * 6 + ch) * 6 + p], expect);
                }
            }
        }
    }

    #[test]
    fn size_mismatches_rejected() {
        let x = Tensor::zeros(&[1, 4, 2, 2]);
        assert!(split(&x, &[1, 2], 1).is_err());
        assert!(concat(&[&x, &Tensor::zeros(&[1, 4, 3, 2])], 1).is_err());
    }
}
