//! Model configuration and its `key = value` text form.
//!
//! One assignment per line; `#` starts a comment. Lists are comma separated.
//! Recognised keys and defaults:
//!
//! | key              | default                           | meaning |
//! |------------------|-----------------------------------|---------|
//! | `input_side`     | 64                                | square input side, multiple of 32 |
//! | `ir_channels`    | 3                                 | infrared branch input channels |
//! | `rgb_channels`   | 3                                 | visible branch input channels |
//! | `stem_channels`  | 8                                 | width of the stride-2 stem |
//! | `channels`       | 16,32,64,128                      | C2..C5, even and strictly increasing |
//! | `c2f_depths`     | 1,1,1,1                           | bottlenecks per backbone stage |
//! | `ema_groups`     | 4                                 | EMA channel groups, divides every C_i |
//! | `low_ifm_depth`  | 2                                 | RepBlock layers in the low-stage fusion |
//! | `inject_depth`   | 1                                 | RepBlock layers after each injection |
//! | `high_ifm_depth` | 1                                 | transformer blocks in the high-stage fusion |
//! | `high_ifm_heads` | 4                                 | attention heads |
//! | `high_ifm_dim`   | 0                                 | token width; 0 means C3+C4+C5 |
//! | `num_classes`    | 5                                 | K |
//! | `class_names`    | car,truck,freight car,bus,van     | K names |
//! | `head_width`     | 32                                | head tower channels |
//! | `score_thresh`   | 0.25                              | decode threshold, in (0,1) |
//! | `iou_thresh`     | 0.45                              | NMS threshold, in (0,1) |
//! | `box_clamp`      | 4                                 | upper clamp on log box size |
//! | `seed`           | 0                                 | weight initialization seed |

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_CLASS_NAMES: [&str; 5] = ["car", "truck", "freight car", "bus", "van"];

/// Level strides of the fused backbone pyramid B2..B5.
pub const BACKBONE_STRIDES: [usize; 4] = [4, 8, 16, 32];
/// Level strides of the head inputs P3, N4, N5.
pub const HEAD_STRIDES: [usize; 3] = [8, 16, 32];

const KEYS: &[&str] = &[
    "input_side",
    "ir_channels",
    "rgb_channels",
    "stem_channels",
    "channels",
    "c2f_depths",
    "ema_groups",
    "low_ifm_depth",
    "inject_depth",
    "high_ifm_depth",
    "high_ifm_heads",
    "high_ifm_dim",
    "num_classes",
    "class_names",
    "head_width",
    "score_thresh",
    "iou_thresh",
    "box_clamp",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_side: usize,
    pub ir_channels: usize,
    pub rgb_channels: usize,
    pub stem_channels: usize,
    pub channels: [usize; 4],
    pub c2f_depths: [usize; 4],
    pub ema_groups: usize,
    pub low_ifm_depth: usize,
    pub inject_depth: usize,
    pub high_ifm_depth: usize,
    pub high_ifm_heads: usize,
    pub high_ifm_dim: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub head_width: usize,
    pub score_thresh: f32,
    pub iou_thresh: f32,
    pub box_clamp: f32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            ir_channels: 3,
            rgb_channels: 3,
            stem_channels: 8,
            channels: [16, 32, 64, 128],
            c2f_depths: [1, 1, 1, 1],
            ema_groups: 4,
            low_ifm_depth: 2,
            inject_depth: 1,
            high_ifm_depth: 1,
            high_ifm_heads: 4,
            high_ifm_dim: 0,
            num_classes: 5,
            class_names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            head_width: 32,
            score_thresh: 0.25,
            iou_thresh: 0.45,
            box_clamp: 4.0,
            seed: 0,
        }
    }
}

fn err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| err(key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
}

fn list4(key: &str, v: &str) -> Result<[usize; 4]> {
    let items: Vec<usize> = v
        .split(',')
        .map(|s| scalar(key, s.trim()))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|items: Vec<usize>| err(key, format!("expected 4 comma-separated values, got {}", items.len())))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Parses a config document; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        let mut names_given = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                err(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| err(key, "unknown key"))?;
            if seen.contains(known) {
                return Err(err(key, "given more than once"));
            }
            seen.push(known);
            match key {
                "input_side" => cfg.input_side = scalar(key, value)?,
                "ir_channels" => cfg.ir_channels = scalar(key, value)?,
                "rgb_channels" => cfg.rgb_channels = scalar(key, value)?,
                "stem_channels" => cfg.stem_channels = scalar(key, value)?,
                "channels" => cfg.channels = list4(key, value)?,
                "c2f_depths" => cfg.c2f_depths = list4(key, value)?,
                "ema_groups" => cfg.ema_groups = scalar(key, value)?,
                "low_ifm_depth" => cfg.low_ifm_depth = scalar(key, value)?,
                "inject_depth" => cfg.inject_depth = scalar(key, value)?,
                "high_ifm_depth" => cfg.high_ifm_depth = scalar(key, value)?,
                "high_ifm_heads" => cfg.high_ifm_heads = scalar(key, value)?,
                "high_ifm_dim" => cfg.high_ifm_dim = scalar(key, value)?,
                "num_classes" => cfg.num_classes = scalar(key, value)?,
                "class_names" => {
                    names_given = true;
                    cfg.class_names = value.split(',').map(|s| s.trim().to_string()).collect();
                }
                "head_width" => cfg.head_width = scalar(key, value)?,
                "score_thresh" => cfg.score_thresh = scalar(key, value)?,
                "iou_thresh" => cfg.iou_thresh = scalar(key, value)?,
                "box_clamp" => cfg.box_clamp = scalar(key, value)?,
                "seed" => cfg.seed = scalar(key, value)?,
                _ => unreachable!(),
            }
        }
        if !names_given && cfg.num_classes != DEFAULT_CLASS_NAMES.len() {
            cfg.class_names = (0..cfg.num_classes).map(|i| format!("class_{i}")).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its current value; [`ModelConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("input_side", self.input_side.to_string());
        kv("ir_channels", self.ir_channels.to_string());
        kv("rgb_channels", self.rgb_channels.to_string());
        kv("stem_channels", self.stem_channels.to_string());
        kv("channels", join(&self.channels));
        kv("c2f_depths", join(&self.c2f_depths));
        kv("ema_groups", self.ema_groups.to_string());
        kv("low_ifm_depth", self.low_ifm_depth.to_string());
        kv("inject_depth", self.inject_depth.to_string());
        kv("high_ifm_depth", self.high_ifm_depth.to_string());
        kv("high_ifm_heads", self.high_ifm_heads.to_string());
        kv("high_ifm_dim", self.high_ifm_dim.to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("class_names", self.class_names.join(","));
        kv("head_width", self.head_width.to_string());
        kv("score_thresh", self.score_thresh.to_string());
        kv("iou_thresh", self.iou_thresh.to_string());
        kv("box_clamp", self.box_clamp.to_string());
        kv("seed", self.seed.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || !self.input_side.is_multiple_of(32) {
            return Err(err("input_side", format!("{} is not a positive multiple of 32", self.input_side)));
        }
        for (key, v) in [
            ("ir_channels", self.ir_channels),
            ("rgb_channels", self.rgb_channels),
            ("stem_channels", self.stem_channels),
            ("ema_groups", self.ema_groups),
            ("high_ifm_heads", self.high_ifm_heads),
            ("num_classes", self.num_classes),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return Err(err(key, "must be >= 1"));
            }
        }
        let c = self.channels;
        if c.iter().any(|&v| v < 2 || v % 2 != 0) {
            return Err(err("channels", "every level width must be even and >= 2"));
        }
        if c.windows(2).any(|w| w[0] >= w[1]) {
            return Err(err("channels", "level widths must be strictly increasing"));
        }
        if let Some(bad) = c.iter().find(|&&v| v % self.ema_groups != 0) {
            return Err(err("ema_groups", format!("{} does not divide level width {bad}", self.ema_groups)));
        }
        let dim = self.token_dim();
        if !dim.is_multiple_of(self.high_ifm_heads) {
            return Err(err(
                "high_ifm_heads",
                format!("{} does not divide token width {dim}", self.high_ifm_heads),
            ));
        }
        if self.class_names.len() != self.num_classes {
            return Err(err(
                "class_names",
                format!("{} names for {} classes", self.class_names.len(), self.num_classes),
            ));
        }
        for (key, v) in [("score_thresh", self.score_thresh), ("iou_thresh", self.iou_thresh)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(err(key, format!("{v} is outside (0, 1)")));
            }
        }
        if !(self.box_clamp > 0.0 && self.box_clamp.is_finite()) {
            return Err(err("box_clamp", "must be positive and finite"));
        }
        Ok(())
    }

    /// Token width of the high-stage transformer.
    pub fn token_dim(&self) -> usize {
        if self.high_ifm_dim == 0 {
            self.channels[1] + self.channels[2] + self.channels[3]
        } else {
            self.high_ifm_dim
        }
    }

    /// Spatial side of backbone level `i` (0 = B2 .. 3 = B5).
    pub fn level_side(&self, i: usize) -> usize {
        self.input_side / BACKBONE_STRIDES[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ModelConfig::parse("").unwrap(), ModelConfig::default());
        assert_eq!(ModelConfig::parse("# only a comment\n\n").unwrap(), ModelConfig::default());
    }

    #[test]
    fn side_must_be_multiple_of_32() {
        let e = ModelConfig::parse("input_side = 48").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "input_side"), "{e}");
    }

    #[test]
    fn round_trip() {
        let cfg = ModelConfig::default();
        assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let cfg = ModelConfig::parse("score_thresh = 0.3\nchannels = 8, 16, 24, 48 # narrow\nnum_classes = 2").unwrap();
        assert_eq!(cfg.class_names, ["class_0", "class_1"]);
        assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejections_name_the_key() {
        for (doc, key) in [
            ("colour = red", "colour"),
            ("ema_groups = 3", "ema_groups"),
            ("channels = 16,16,32,64", "channels"),
            ("channels = 16,32,64", "channels"),
            ("high_ifm_heads = 5", "high_ifm_heads"),
            ("iou_thresh = 1.0", "iou_thresh"),
            ("num_classes = 3\nclass_names = a,b", "class_names"),
            ("seed = 1\nseed = 2", "seed"),
        ] {
            match ModelConfig::parse(doc) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }
}
