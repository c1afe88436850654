//! Built-in consistency suites run by `dge selftest`.

use crate::backbone::Ema;
use crate::error::Result;
use crate::head::{iou, nms, rank, Detection};
use crate::model::Model;
use crate::nn::{RepBlock, RepMode};
use crate::rng::Lcg;
use crate::tensor::Tensor;
use crate::weights::RandomSource;

pub const SUITES: &[&str] = &["rep-fusion", "ema-contract", "neck-shapes", "nms-oracle"];

#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn report(name: &'static str, failure: Option<String>, ok: String) -> SuiteReport {
    SuiteReport {
        name,
        passed: failure.is_none(),
        detail: failure.unwrap_or(ok),
    }
}

/// Fused and multi-branch RepBlock outputs agree within 1e-4.
pub fn rep_fusion(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = Lcg::new(seed);
    let mut worst = 0.0f32;
    for i in 0..cases {
        let (cin, cout, depth) = (1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(3));
        let mut b = RepBlock::new(&mut RandomSource::new(rng.next_u64()), "r", cin, cout, depth)?;
        b.fuse();
        let (h, w) = (1 + rng.below(8), 1 + rng.below(8));
        let n = 1 + rng.below(2);
        let x = rng.normal_tensor(&[n, cin, h, w], 1.0);
        let d = b
            .forward_mode(&x, RepMode::MultiBranch)?
            .max_abs_diff(&b.forward_mode(&x, RepMode::Fused)?);
        worst = worst.max(d);
        if d.is_nan() || d >= 1e-4 {
            return Ok(report("rep-fusion", Some(format!("case {i}: max diff {d:e}")), String::new()));
        }
    }
    Ok(report("rep-fusion", None, format!("{cases} cases, max diff {worst:.2e}")))
}

/// Shape preservation, attention range and spatial constancy of EMA.
pub fn ema_contract(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = Lcg::new(seed);
    for i in 0..cases {
        let g = 1 + rng.below(4);
        let c = g * (1 + rng.below(4));
        let (n, h, w) = (1 + rng.below(2), 1 + rng.below(9), 1 + rng.below(9));
        let ema = Ema::new(&mut RandomSource::new(rng.next_u64()), "e", c, g)?;
        let x = rng.normal_tensor(&[n, c, h, w], 1.0);
        let (y, att) = ema.forward_with_attention(&x)?;
        if y.shape() != x.shape() {
            return Ok(report("ema-contract", Some(format!("case {i}: shape {:?} -> {:?}", x.shape(), y.shape())), String::new()));
        }
        if let Some(v) = att.data().iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Ok(report("ema-contract", Some(format!("case {i}: attention value {v}")), String::new()));
        }
        let per_channel = rng.normal_tensor(&[n * c], 1.0);
        let flat = Tensor::from_fn(&[n, c, h, w], |j| per_channel.data()[j / (h * w)]);
        let (_, att) = ema.forward_with_attention(&flat)?;
        if att.data().chunks(h * w).any(|p| p.iter().any(|v| v.to_bits() != p[0].to_bits())) {
            return Ok(report("ema-contract", Some(format!("case {i}: constant input gave a varying map")), String::new()));
        }
    }
    Ok(report("ema-contract", None, format!("{cases} configurations")))
}

/// Aggregation sides and head strides of `model`.
pub fn neck_shapes(model: &Model) -> Result<SuiteReport> {
    let cfg = &model.cfg;
    let s = cfg.input_side;
    let ir = Tensor::zeros(&[1, cfg.ir_channels, s, s]);
    let rgb = Tensor::zeros(&[1, cfg.rgb_channels, s, s]);
    let out = model.forward(&ir, &rgb)?;
    let r = out.backbone.attended.levels[0].shape()[2];
    let side = |t: &Tensor| t.shape()[2];
    let mut problems = Vec::new();
    if side(&out.neck.low_aligned) != r / 4 {
        problems.push(format!("low aggregate side {} != {}", side(&out.neck.low_aligned), r / 4));
    }
    if side(&out.neck.high_aligned) != r / 8 {
        problems.push(format!("high aggregate side {} != {}", side(&out.neck.high_aligned), r / 8));
    }
    for ((t, stride), c) in out.neck.head_inputs().iter().zip([8, 16, 32]).zip(&cfg.channels[1..]) {
        if t.shape() != [1, *c, s / stride, s / stride] {
            problems.push(format!("stride-{stride} output has shape {:?}", t.shape()));
        }
    }
    Ok(report(
        "neck-shapes",
        (!problems.is_empty()).then(|| problems.join("; ")),
        format!("R = {r}, aggregates at {} and {}", r / 4, r / 8),
    ))
}

/// Reference suppression: repeatedly take the best remaining candidate and
/// drop everything of its class that overlaps it too much.
pub fn reference_nms(dets: &[Detection], iou_thresh: f32) -> Vec<Detection> {
    let mut pool = dets.to_vec();
    let mut out = Vec::new();
    while !pool.is_empty() {
        let best = (1..pool.len()).fold(0, |b, i| if rank(&pool[i], &pool[b]).is_lt() { i } else { b });
        let keep = pool.swap_remove(best);
        pool.retain(|d| d.class_id != keep.class_id || iou(&d.bbox, &keep.bbox) <= iou_thresh);
        out.push(keep);
    }
    out
}

/// Random candidate set on a coarse grid so that ties and duplicates occur.
pub fn random_detections(rng: &mut Lcg, max: usize, classes: usize) -> Vec<Detection> {
    (0..rng.below(max + 1))
        .map(|_| {
            let x1 = rng.below(16) as f32;
            let y1 = rng.below(16) as f32;
            Detection {
                class_id: rng.below(classes),
                score: (1 + rng.below(8)) as f32 / 8.0,
                bbox: [x1, y1, x1 + (1 + rng.below(8)) as f32, y1 + (1 + rng.below(8)) as f32],
            }
        })
        .collect()
}

pub fn nms_oracle(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = Lcg::new(seed);
    for i in 0..cases {
        let dets = random_detections(&mut rng, 50, 3);
        let t = rng.uniform_range(0.1, 0.9) as f32;
        if nms(&dets, t) != reference_nms(&dets, t) {
            return Ok(report("nms-oracle", Some(format!("case {i} differs")), String::new()));
        }
    }
    Ok(report("nms-oracle", None, format!("{cases} random sets")))
}

/// Runs every suite; `model` is used by the shape suite.
pub fn run_all(model: &Model) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        rep_fusion(200, 1)?,
        ema_contract(50, 2)?,
        neck_shapes(model)?,
        nms_oracle(1000, 3)?,
    ])
}

