//! Model assembly and the end-to-end forward pass.

use crate::backbone::{Backbone, BackboneOutput};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::head::{decode, nms, DecodeParams, Detection, Head, LevelPrediction};
use crate::neck::{GdNeck, NeckOutput};
use crate::nn::Module;
use crate::tensor::Tensor;
use crate::weights::{Initializer, ParamSource, StoreReader, WeightStore};

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub neck: GdNeck,
    pub head: Head,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub backbone: BackboneOutput,
    pub neck: NeckOutput,
    pub preds: Vec<LevelPrediction>,
}

impl ForwardOutput {
    /// Named stage outputs in execution order.
    pub fn features(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        let stages = [
            ("backbone.ir", &self.backbone.ir),
            ("backbone.rgb", &self.backbone.rgb),
            ("fuse", &self.backbone.fused),
            ("ema", &self.backbone.attended),
        ];
        for (name, pyr) in stages {
            for (i, t) in pyr.levels.iter().enumerate() {
                out.push((format!("{name}.b{}", i + 2), t));
            }
        }
        let n = &self.neck;
        let neck = [
            ("neck.low.aligned", &n.low_aligned),
            ("neck.low.fuse", &n.low_fuse),
            ("neck.low.p3_global", &n.low_splits[0]),
            ("neck.low.p4_global", &n.low_splits[1]),
            ("neck.p3", &n.p3),
            ("neck.p4", &n.p4),
            ("neck.p5", &n.p5),
            ("neck.high.aligned", &n.high_aligned),
            ("neck.high.n4_global", &n.high_splits[0]),
            ("neck.high.n5_global", &n.high_splits[1]),
            ("neck.n4", &n.n4),
            ("neck.n5", &n.n5),
        ];
        out.extend(neck.into_iter().map(|(k, t)| (k.to_string(), t)));
        for (i, p) in self.preds.iter().enumerate() {
            out.push((format!("head.l{}.cls", i + 3), &p.cls));
            out.push((format!("head.l{}.box", i + 3), &p.boxes));
        }
        out
    }

    /// The feature dump as a weight-format store.
    pub fn to_store(&self) -> Result<WeightStore> {
        let mut s = WeightStore::new();
        for (name, t) in self.features() {
            s.insert(name, t.clone())?;
        }
        Ok(s)
    }
}

impl Model {
    /// Builds every block from `src` and fuses the re-parameterizable ones.
    pub fn build(cfg: &ModelConfig, src: &mut dyn ParamSource) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::new(src, cfg)?;
        let mut neck = GdNeck::new(src, cfg)?;
        let head = Head::new(src, cfg)?;
        neck.fuse();
        Ok(Self {
            cfg: cfg.clone(),
            backbone,
            neck,
            head,
        })
    }

    /// Builds from a store that must hold exactly the model's parameters.
    pub fn from_store(cfg: &ModelConfig, store: &WeightStore) -> Result<Self> {
        let mut reader = StoreReader::new(store);
        let m = Self::build(cfg, &mut reader)?;
        reader.finish()?;
        Ok(m)
    }

    /// Seeded initial weights: He-normal convs and linears, unit norms, zero biases.
    pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
        let mut init = Initializer::new(seed);
        Self::build(cfg, &mut init)?;
        Ok(init.into_store())
    }

    /// Shorthand for `from_store(cfg, init_weights(cfg, cfg.seed))`.
    pub fn seeded(cfg: &ModelConfig) -> Result<Self> {
        Self::from_store(cfg, &Self::init_weights(cfg, cfg.seed)?)
    }

    fn check_input(&self, name: &str, x: &Tensor, channels: usize) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.cfg.input_side;
        if (c, h, w) != (channels, s, s) {
            return Err(Error::invalid(
                "full_forward",
                format!("{name} input is {c}x{h}x{w}, model expects {channels}x{s}x{s}"),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, ir: &Tensor, rgb: &Tensor) -> Result<ForwardOutput> {
        self.check_input("IR", ir, self.cfg.ir_channels)?;
        self.check_input("RGB", rgb, self.cfg.rgb_channels)?;
        let backbone = self.backbone.forward_detailed(ir, rgb)?;
        let neck = self.neck.forward(&backbone.attended)?;
        let preds = self.head.forward(neck.head_inputs())?;
        Ok(ForwardOutput { backbone, neck, preds })
    }

    /// Decoded and suppressed detections per batch item.
    pub fn postprocess(&self, preds: &[LevelPrediction]) -> Result<Vec<Vec<Detection>>> {
        let cands = decode(preds, &DecodeParams::from_config(&self.cfg))?;
        Ok(cands.iter().map(|d| nms(d, self.cfg.iou_thresh)).collect())
    }

    /// Detections for every batch item plus all intermediates.
    pub fn full_forward(&self, ir: &Tensor, rgb: &Tensor) -> Result<(Vec<Vec<Detection>>, ForwardOutput)> {
        let out = self.forward(ir, rgb)?;
        Ok((self.postprocess(&out.preds)?, out))
    }
}

impl Module for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.backbone.visit(f);
        self.neck.visit(f);
        self.head.visit(f);
    }
}
