use crate::error::{Error, Result};
use crate::flops::{self, cost, OpKind};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

/// Output shape of a same-rank broadcast: every axis must agree or be 1 on one side.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::mismatch("broadcast", "rank", a.len(), b.len()));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(axis, (&x, &y))| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::mismatch("broadcast", format!("axis {axis}"), x, y)),
        })
        .collect()
}

/// Flat source offsets into `shape` for every element of `out_shape`.
fn broadcast_index(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for ax in (0..rank).rev() {
        strides[ax] = if shape[ax] == 1 { 0 } else { s };
        s *= shape[ax];
    }
    let total: usize = out_shape.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut pos = vec![0usize; rank];
    for _ in 0..total {
        idx.push(pos.iter().zip(&strides).map(|(p, s)| p * s).sum());
        for ax in (0..rank).rev() {
            pos[ax] += 1;
            if pos[ax] < out_shape[ax] {
                break;
            }
            pos[ax] = 0;
        }
    }
    idx
}

pub fn binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let f = match op {
        BinaryOp::Add => |x: f32, y: f32| x + y,
        BinaryOp::Mul => |x: f32, y: f32| x * y,
    };
    if a.shape() == b.shape() {
        flops::record(OpKind::Elementwise, a.numel() as u64 * cost::BINARY_PER_ELEM);
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape(), data);
    }
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let (ia, ib) = (broadcast_index(a.shape(), &shape), broadcast_index(b.shape(), &shape));
    flops::record(OpKind::Elementwise, ia.len() as u64 * cost::BINARY_PER_ELEM);
    let data = ia
        .iter()
        .zip(&ib)
        .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
        .collect();
    Tensor::new(&shape, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(BinaryOp::Add, a, b)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary(BinaryOp::Mul, a, b)
}

/// Sums a broadcast gradient back onto `shape`, in ascending output order.
pub fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let idx = broadcast_index(shape, grad.shape());
    let mut out = vec![0.0f32; shape.iter().product()];
    for (&i, &g) in idx.iter().zip(grad.data()) {
        out[i] += g;
    }
    Tensor::new(shape, out)
}

pub fn binary_backward(op: BinaryOp, a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    match op {
        BinaryOp::Add => Ok((
            reduce_to_shape(grad_out, a.shape())?,
            reduce_to_shape(grad_out, b.shape())?,
        )),
        BinaryOp::Mul => {
            let ga = reduce_to_shape(&mul(grad_out, b)?, a.shape())?;
            let gb = reduce_to_shape(&mul(grad_out, a)?, b.shape())?;
            Ok((ga, gb))
        }
    }
}

pub fn scale(x: &Tensor, s: f32) -> Tensor {
    flops::record(OpKind::Elementwise, x.numel() as u64 * cost::BINARY_PER_ELEM);
    let mut y = x.clone();
    y.clear_grad();
    y.data_mut().iter_mut().for_each(|v| *v *= s);
    y
}

/// Largest `f32` strictly below one.
const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// Logistic function, clamped so the result always lies strictly inside (0, 1).
#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    (1.0 / (1.0 + (-x).exp())).clamp(f32::MIN_POSITIVE, BELOW_ONE)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    flops::record(OpKind::Elementwise, x.numel() as u64 * cost::SIGMOID_PER_ELEM);
    map(x, sigmoid_scalar)
}

/// `x · sigmoid(x)`.
pub fn silu(x: &Tensor) -> Tensor {
    flops::record(OpKind::Elementwise, x.numel() as u64 * cost::SILU_PER_ELEM);
    map(x, |v| v * sigmoid_scalar(v))
}

pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    zip_map(y, grad_out, |s, g| g * s * (1.0 - s))
}

pub fn silu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    zip_map(x, grad_out, |v, g| {
        let s = sigmoid_scalar(v);
        g * (s + v * s * (1.0 - s))
    })
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip_map(x: &Tensor, g: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if x.shape() != g.shape() {
        return Err(Error::invalid("elementwise_backward", "upstream gradient shape mismatch"));
    }
    Tensor::new(x.shape(), x.data().iter().zip(g.data()).map(|(&a, &b)| f(a, b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;

    #[test]
    fn sigmoid_fixed_point_and_range() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        for x in [-1000.0, -90.0, -20.0, 20.0, 90.0, 1000.0] {
            let s = sigmoid_scalar(x);
            assert!(s > 0.0 && s < 1.0, "{x} -> {s}");
        }
        assert_eq!(silu(&Tensor::zeros(&[3])).data(), &[0.0; 3]);
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let x = Lcg::new(12).normal_tensor(&[2, 3, 4, 4], 1.0);
        assert!(mul(&x, &Tensor::ones(&[2, 3, 4, 4])).unwrap().bit_eq(&x));
    }

    #[test]
    fn broadcast_mul_matches_tiling() {
        let mut r = Lcg::new(13);
        let x = r.normal_tensor(&[2, 3, 4, 5], 1.0);
        let m = r.normal_tensor(&[2, 1, 4, 5], 1.0);
        let y = mul(&x, &m).unwrap();
        let mut tiled = Vec::new();
        for n in 0..2 {
            for _c in 0..3 {
                tiled.extend_from_slice(&m.data()[n * 20..(n + 1) * 20]);
            }
        }
        let tiled = Tensor::new(&[2, 3, 4, 5], tiled).unwrap();
        assert!(y.bit_eq(&mul(&x, &tiled).unwrap()));
    }

    #[test]
    fn non_broadcastable_rejected() {
        let err = add(&Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[1, 3, 3, 3])).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
    }
}
