//! Traces the Gather-and-Distribute neck on a random pyramid and prints the
//! shape of every intermediate.

use dge_yolo::backbone::FeaturePyramid;
use dge_yolo::config::ModelConfig;
use dge_yolo::neck::GdNeck;
use dge_yolo::rng::Lcg;
use dge_yolo::weights::Initializer;

fn main() -> dge_yolo::Result<()> {
    let cfg = ModelConfig::default();
    let mut neck = GdNeck::new(&mut Initializer::new(cfg.seed), &cfg)?;
    neck.fuse();
    let mut rng = Lcg::new(1);
    let r = cfg.level_side(0);
    let pyr = FeaturePyramid {
        levels: std::array::from_fn(|i| rng.normal_tensor(&[1, cfg.channels[i], r >> i, r >> i], 1.0)),
    };
    let out = neck.forward(&pyr)?;
    let rows = [
        ("low aligned", &out.low_aligned),
        ("low fuse", &out.low_fuse),
        ("P3", &out.p3),
        ("P4", &out.p4),
        ("P5", &out.p5),
        ("high aligned", &out.high_aligned),
        ("N4", &out.n4),
        ("N5", &out.n5),
    ];
    for (name, t) in rows {
        println!("{name:<13} {:?}", t.shape());
    }
    for (i, s) in out.low_splits.iter().chain(&out.high_splits).enumerate() {
        println!("split {i:<7} {:?}", s.shape());
    }
    Ok(())
}
