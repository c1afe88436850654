//! FLOP cost model and an execution-side recorder.
//!
//! One multiply-accumulate counts as 2 FLOPs. Per-element constants for the
//! cheap ops are listed in [`cost`]. Kernels report their cost to a
//! thread-local recorder while [`measure`] is active; the analytic walker in
//! [`crate::stats`] computes the same totals from shapes alone.

use std::cell::RefCell;
use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// Convolution over a 2-D feature map.
    Conv,
    /// Convolution over a pooled 1-D descriptor strip (EMA's shared 1×1 conv).
    /// Its extent grows linearly with the input side, so it is tallied apart
    /// from [`OpKind::Conv`].
    DescriptorConv,
    Matmul,
    Elementwise,
    Norm,
    Pool,
    Resize,
    Softmax,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopTally {
    by_kind: BTreeMap<OpKind, u64>,
}

impl FlopTally {
    pub fn add(&mut self, kind: OpKind, flops: u64) {
        *self.by_kind.entry(kind).or_default() += flops;
    }

    pub fn merge(&mut self, other: &FlopTally) {
        for (&k, &v) in &other.by_kind {
            self.add(k, v);
        }
    }

    pub fn get(&self, kind: OpKind) -> u64 {
        self.by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.by_kind.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpKind, u64)> + '_ {
        self.by_kind.iter().map(|(&k, &v)| (k, v))
    }
}

thread_local! {
    static RECORDER: RefCell<Option<FlopTally>> = const { RefCell::new(None) };
}

pub(crate) fn record(kind: OpKind, flops: u64) {
    RECORDER.with(|r| {
        if let Some(t) = r.borrow_mut().as_mut() {
            t.add(kind, flops);
        }
    });
}

pub fn is_recording() -> bool {
    RECORDER.with(|r| r.borrow().is_some())
}

/// Runs `f` and returns the FLOPs its kernels reported on this thread.
///
/// Model code runs its parallel sections sequentially while recording, so
/// the tally covers the full forward pass.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, FlopTally) {
    let outer = RECORDER.with(|r| r.borrow_mut().replace(FlopTally::default()));
    let out = f();
    let tally = RECORDER.with(|r| {
        let mut slot = r.borrow_mut();
        let tally = slot.take().unwrap_or_default();
        *slot = outer;
        if let Some(o) = slot.as_mut() {
            o.merge(&tally);
        }
        tally
    });
    (out, tally)
}

/// `rayon::join` unless a FLOP measurement is active on this thread.
pub(crate) fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    if is_recording() {
        (a(), b())
    } else {
        rayon::join(a, b)
    }
}

/// Per-op cost formulas shared by the kernels and the analytic walker.
pub mod cost {
    /// Add, multiply, scale: one FLOP per output element.
    pub const BINARY_PER_ELEM: u64 = 1;
    /// negate, exp, add, divide
    pub const SIGMOID_PER_ELEM: u64 = 4;
    /// sigmoid plus one multiply
    pub const SILU_PER_ELEM: u64 = 5;
    /// subtract max, exp, accumulate, divide
    pub const SOFTMAX_PER_ELEM: u64 = 4;
    /// subtract mean, multiply rstd, multiply gamma, add beta
    pub const BATCH_NORM_PER_ELEM: u64 = 4;
    /// sum, square-sum, then the four batch-norm steps
    pub const GROUP_NORM_PER_ELEM: u64 = 7;
    /// three lerps of subtract, multiply, add
    pub const BILINEAR_PER_ELEM: u64 = 9;

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        n: usize,
        cin_per_group: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        oh: usize,
        ow: usize,
        bias: bool,
    ) -> u64 {
        let outputs = (n * cout * oh * ow) as u64;
        let macs = (kh * kw * cin_per_group) as u64 * outputs;
        2 * macs + if bias { outputs } else { 0 }
    }

    pub fn matmul(m: usize, k: usize, n: usize) -> u64 {
        2 * (m * k * n) as u64
    }

    /// Every window element is added once, then one divide per output.
    pub fn pool(planes: usize, window_sum: usize, outputs_per_plane: usize) -> u64 {
        (planes * (window_sum + outputs_per_plane)) as u64
    }
}
