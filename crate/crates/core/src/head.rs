//! Anchor-free prediction head, box decoding and non-maximum suppression.

use std::cmp::Ordering;

use serde::Serialize;

use crate::config::{ModelConfig, HEAD_STRIDES};
use crate::error::{Error, Result};
use crate::nn::{Act, ConvBnAct, Conv2d, Module};
use crate::ops::sigmoid_scalar;
use crate::stats::Analytic;
use crate::tensor::Tensor;
use crate::weights::ParamSource;

/// Class logits `[N, K, H, W]` and box offsets `[N, 4, H, W]` for one level.
#[derive(Clone, Debug)]
pub struct LevelPrediction {
    pub stride: usize,
    pub cls: Tensor,
    pub boxes: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    /// `[x1, y1, x2, y2]` in input pixels.
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
}

/// Two conv towers per level ending in 1×1 class and box convs.
///
/// Paths: `head.l{3,4,5}.cls.{0,1}`, `.cls_out`, `.box.{0,1}`, `.box_out`.
#[derive(Clone, Debug)]
pub struct HeadLevel {
    pub cls_tower: [ConvBnAct; 2],
    pub cls_out: Conv2d,
    pub box_tower: [ConvBnAct; 2],
    pub box_out: Conv2d,
}

impl HeadLevel {
    fn new(src: &mut dyn ParamSource, prefix: &str, cin: usize, width: usize, classes: usize) -> Result<Self> {
        let tower = |src: &mut dyn ParamSource, name: &str| -> Result<[ConvBnAct; 2]> {
            Ok([
                ConvBnAct::new(src, &format!("{prefix}.{name}.0"), cin, width, 3, 1, Act::Silu)?,
                ConvBnAct::new(src, &format!("{prefix}.{name}.1"), width, width, 3, 1, Act::Silu)?,
            ])
        };
        let cls_tower = tower(src, "cls")?;
        let cls_out = Conv2d::new(src, &format!("{prefix}.cls_out"), width, classes, 1)?;
        let box_tower = tower(src, "box")?;
        let box_out = Conv2d::new(src, &format!("{prefix}.box_out"), width, 4, 1)?;
        Ok(Self {
            cls_tower,
            cls_out,
            box_tower,
            box_out,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = self.cls_tower[1].forward(&self.cls_tower[0].forward(x)?)?;
        let b = self.box_tower[1].forward(&self.box_tower[0].forward(x)?)?;
        Ok((self.cls_out.forward(&c)?, self.box_out.forward(&b)?))
    }

    fn analyze(&self, a: &mut Analytic, x: &[usize]) -> Result<()> {
        for (tower, out) in [(&self.cls_tower, &self.cls_out), (&self.box_tower, &self.box_out)] {
            let t = tower[0].analyze(a, x)?;
            let t = tower[1].analyze(a, &t)?;
            out.analyze(a, &t)?;
        }
        Ok(())
    }
}

impl Module for HeadLevel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.cls_tower.visit(f);
        self.cls_out.visit(f);
        self.box_tower.visit(f);
        self.box_out.visit(f);
    }
}

#[derive(Clone, Debug)]
pub struct Head {
    pub levels: Vec<HeadLevel>,
}

impl Head {
    pub fn new(src: &mut dyn ParamSource, cfg: &ModelConfig) -> Result<Self> {
        let ins = [cfg.channels[1], cfg.channels[2], cfg.channels[3]];
        let levels = ins
            .iter()
            .enumerate()
            .map(|(i, &c)| HeadLevel::new(src, &format!("head.l{}", i + 3), c, cfg.head_width, cfg.num_classes))
            .collect::<Result<_>>()?;
        Ok(Self { levels })
    }

    pub fn forward(&self, inputs: [&Tensor; 3]) -> Result<Vec<LevelPrediction>> {
        self.levels
            .iter()
            .zip(inputs)
            .zip(HEAD_STRIDES)
            .map(|((l, x), stride)| {
                let (cls, boxes) = l.forward(x)?;
                Ok(LevelPrediction { stride, cls, boxes })
            })
            .collect()
    }

    pub(crate) fn analyze(&self, a: &mut Analytic, inputs: &[Vec<usize>; 3]) -> Result<()> {
        for (l, x) in self.levels.iter().zip(inputs) {
            l.analyze(a, x)?;
        }
        Ok(())
    }
}

impl Module for Head {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.levels.visit(f)
    }
}

/// Decoding parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeParams {
    pub score_thresh: f32,
    /// Upper clamp applied to the log-size offsets before `exp`.
    pub box_clamp: f32,
    /// Clip region `(width, height)` in input pixels.
    pub image: (f32, f32),
}

impl DecodeParams {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        let s = cfg.input_side as f32;
        Self {
            score_thresh: cfg.score_thresh,
            box_clamp: cfg.box_clamp,
            image: (s, s),
        }
    }
}

/// Candidate detections for every batch item, one per cell whose best class
/// scores above the threshold, in level then row-major cell order.
///
/// The best class is the lowest index among the maximal logits. Boxes that
/// clip to zero width or height are dropped.
pub fn decode(preds: &[LevelPrediction], p: &DecodeParams) -> Result<Vec<Vec<Detection>>> {
    let n = preds.first().map_or(0, |l| l.cls.shape()[0]);
    let mut out = vec![Vec::new(); n];
    for lvl in preds {
        let (ln, k, h, w) = lvl.cls.dims4()?;
        if lvl.boxes.shape() != [ln, 4, h, w] || ln != n {
            return Err(Error::invalid(
                "decode",
                format!("box map {:?} does not match class map {:?}", lvl.boxes.shape(), lvl.cls.shape()),
            ));
        }
        let (cls, bx) = (lvl.cls.data(), lvl.boxes.data());
        let s = lvl.stride as f32;
        let plane = h * w;
        for (b, dets) in out.iter_mut().enumerate() {
            for cell in 0..plane {
                let (y, x) = (cell / w, cell % w);
                let logit = |c: usize| cls[(b * k + c) * plane + cell];
                let best = (1..k).fold(0, |m, c| if logit(c) > logit(m) { c } else { m });
                let score = sigmoid_scalar(logit(best));
                if score <= p.score_thresh {
                    continue;
                }
                let t = |j: usize| bx[(b * 4 + j) * plane + cell];
                let cx = (x as f32 + sigmoid_scalar(t(0))) * s;
                let cy = (y as f32 + sigmoid_scalar(t(1))) * s;
                let bw = t(2).min(p.box_clamp).exp() * s;
                let bh = t(3).min(p.box_clamp).exp() * s;
                let x1 = (cx - bw / 2.0).clamp(0.0, p.image.0);
                let y1 = (cy - bh / 2.0).clamp(0.0, p.image.1);
                let x2 = (cx + bw / 2.0).clamp(0.0, p.image.0);
                let y2 = (cy + bh / 2.0).clamp(0.0, p.image.1);
                if x1 < x2 && y1 < y2 {
                    dets.push(Detection {
                        class_id: best,
                        score,
                        bbox: [x1, y1, x2, y2],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Intersection over union; 0 when either box is empty or they are disjoint.
pub fn iou(a: &[f32; 4], b: &[f32; 4]) -> f32 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f32; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Total order used by [`nms`]: score descending, then `x1, y1, x2, y2`
/// and class ascending.
pub fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bbox[0].total_cmp(&b.bbox[0]))
        .then_with(|| a.bbox[1].total_cmp(&b.bbox[1]))
        .then_with(|| a.bbox[2].total_cmp(&b.bbox[2]))
        .then_with(|| a.bbox[3].total_cmp(&b.bbox[3]))
        .then_with(|| a.class_id.cmp(&b.class_id))
}

/// Greedy per-class suppression of boxes overlapping a kept box by more
/// than `iou_thresh`. Survivors are returned in [`rank`] order.
pub fn nms(dets: &[Detection], iou_thresh: f32) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if !kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_thresh)
        {
            kept.push(d);
        }
    }
    kept
}
