//! Runs one EMA attention block and summarizes the spatial attention map.

use dge_yolo::backbone::Ema;
use dge_yolo::rng::Lcg;
use dge_yolo::weights::RandomSource;

fn main() -> dge_yolo::Result<()> {
    let (c, groups, side) = (32, 4, 12);
    let ema = Ema::new(&mut RandomSource::new(11), "ema", c, groups)?;
    let x = Lcg::new(12).normal_tensor(&[2, c, side, side], 1.0);
    let (y, att) = ema.forward_with_attention(&x)?;
    let (lo, hi) = att.data().iter().fold((1f32, 0f32), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    println!("input {:?} -> output {:?}", x.shape(), y.shape());
    println!("attention {:?}, values in [{lo:.4}, {hi:.4}]", att.shape());
    for (g, plane) in att.data().chunks(side * side).take(groups).enumerate() {
        let mean = plane.iter().sum::<f32>() / plane.len() as f32;
        println!("  sample 0 group {g}: mean attention {mean:.4}");
    }
    Ok(())
}
