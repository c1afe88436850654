//! Collapses a multi-branch RepBlock into single 3×3 convolutions and
//! compares both forms on the same input.

use dge_yolo::nn::{RepBlock, RepMode};
use dge_yolo::rng::Lcg;
use dge_yolo::weights::RandomSource;

fn main() -> dge_yolo::Result<()> {
    let mut block = RepBlock::new(&mut RandomSource::new(3), "rep", 16, 16, 3)?;
    let x = Lcg::new(4).normal_tensor(&[1, 16, 20, 20], 1.0);
    let branches = block.forward_mode(&x, RepMode::MultiBranch)?;
    block.fuse();
    let fused = block.forward_mode(&x, RepMode::Fused)?;
    println!("layers: {}", block.layers.len());
    for (i, l) in block.layers.iter().enumerate() {
        let (w, _) = l.fused().expect("fused");
        println!("  layer {i}: identity branch {}, fused kernel {:?}", l.identity.is_some(), w.shape());
    }
    println!("max |multi-branch - fused| = {:.3e}", branches.max_abs_diff(&fused));
    Ok(())
}
