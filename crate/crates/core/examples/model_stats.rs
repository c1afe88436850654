//! Parameter and FLOP breakdown, computed analytically and by measuring a
//! real forward pass.

use dge_yolo::config::ModelConfig;
use dge_yolo::model::Model;
use dge_yolo::stats::{count_flops, measure_flops};

fn main() -> dge_yolo::Result<()> {
    for text in ["", "input_side = 320\nchannels = 32,64,128,256"] {
        let cfg = ModelConfig::parse(text)?;
        let model = Model::seeded(&cfg)?;
        let s = count_flops(&model)?;
        println!("input {0}x{0}", cfg.input_side);
        for m in &s.modules {
            println!("  {:<13} {:>10} params {:>14} flops", m.name, m.params, m.flops);
        }
        let measured = measure_flops(&model)?;
        println!("  total {} params, {} flops (measured {})", s.params, s.flops, measured.total());
        for (kind, f) in s.by_kind.iter() {
            println!("    {kind:?}: {f}");
        }
    }
    Ok(())
}
