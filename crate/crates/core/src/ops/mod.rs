//! Deterministic tensor kernels.
//!
//! Every kernel is a pure function of its inputs. Where work is spread over
//! threads, each output element is still produced by exactly one sequential
//! accumulation in a fixed order, so results do not depend on the schedule.

mod conv;
mod elementwise;
mod layout;
mod matmul;
mod norm;
mod pool;
mod resize;
mod softmax;

pub use conv::{conv2d, conv2d_as, conv2d_backward, pad_replicate, pad_replicate_backward, Conv2dParams};
pub(crate) use conv::conv_out_extent;
pub use elementwise::{
    add, binary, binary_backward, broadcast_shape, mul, reduce_to_shape, scale, sigmoid, sigmoid_backward,
    sigmoid_scalar, silu, silu_backward, BinaryOp,
};
pub use layout::{concat, narrow, narrow_backward, split};
pub use matmul::{matmul, matmul_backward, transpose2d};
pub use norm::{batch_norm, batch_norm_backward, group_norm, group_norm_backward, BatchNormStats, GROUP_NORM_EPS};
pub use pool::{
    adaptive_avg_pool2d, adaptive_avg_pool2d_backward, avg_pool2d, avg_pool2d_backward, directional_avg_pool,
    directional_avg_pool_backward, global_avg_pool, Axis,
};
pub(crate) use pool::adaptive_windows;
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use softmax::{softmax, softmax_backward};
