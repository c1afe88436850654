//! Detects objects in an RGB/IR pair with freshly initialized weights.
//!
//! `cargo run --example detect_pair -- rgb.ppm ir.pgm`
//! Without arguments the bundled test fixtures are used.

use std::path::PathBuf;

use dge_yolo::config::ModelConfig;
use dge_yolo::image::{preprocess, ImageBuffer};
use dge_yolo::model::Model;

fn main() -> dge_yolo::Result<()> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let rgb_path = args.next().unwrap_or_else(|| fixtures.join("pair_rgb.ppm"));
    let ir_path = args.next().unwrap_or_else(|| fixtures.join("pair_ir.pgm"));

    let cfg = ModelConfig::parse("score_thresh = 0.3")?;
    let model = Model::seeded(&cfg)?;
    let rgb_img = ImageBuffer::load(&rgb_path)?;
    let rgb = preprocess(&rgb_img, cfg.input_side, cfg.rgb_channels)?;
    let ir = preprocess(&ImageBuffer::load(&ir_path)?, cfg.input_side, cfg.ir_channels)?;
    let (dets, _) = model.full_forward(&ir, &rgb)?;
    println!("{} detection(s) on {}x{}", dets[0].len(), rgb_img.width, rgb_img.height);
    for d in dets[0].iter().take(10) {
        let [x1, y1, x2, y2] = d.bbox;
        println!(
            "  {:<10} {:.3}  [{x1:.1}, {y1:.1}, {x2:.1}, {y2:.1}]",
            cfg.class_names[d.class_id], d.score
        );
    }
    Ok(())
}
