//! Composite blocks built from tensor-core kernels.
//!
//! Blocks take their tensors from a [`ParamSource`](crate::weights::ParamSource)
//! at construction and are immutable afterwards. Every block knows its own
//! parameter path prefix; [`Module::visit`] yields `(path, tensor)` in the
//! same order the tensors were requested, which is also the weight file order.

mod attention;
mod c2f;
mod conv;
mod rep;

pub use attention::{Linear, Mhsa, TokenNorm, TransformerBlock};
pub use c2f::C2f;
pub use conv::{Act, Conv2d, ConvBnAct};
pub use rep::{RepBlock, RepLayer, RepMode};

use crate::tensor::Tensor;

pub trait Module {
    /// Calls `f` for every stored parameter, in declaration order.
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));

    fn param_count(&self) -> u64 {
        let mut n = 0u64;
        self.visit(&mut |_, t| n += t.numel() as u64);
        n
    }
}

impl<M: Module> Module for [M] {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.iter().for_each(|m| m.visit(f));
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.as_slice().visit(f)
    }
}
