//! Writes initial weights to disk, reloads them and checks the reloaded
//! model reproduces the original outputs bit for bit.

use dge_yolo::config::ModelConfig;
use dge_yolo::model::Model;
use dge_yolo::rng::Lcg;
use dge_yolo::weights::WeightStore;

fn main() -> dge_yolo::Result<()> {
    let cfg = ModelConfig::default();
    let store = Model::init_weights(&cfg, 42)?;
    let path = std::env::temp_dir().join("dge_weights_io.dgew");
    store.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();
    println!("{} tensors, {} values, {bytes} bytes at {}", store.len(), store.total_elements(), path.display());

    let a = Model::from_store(&cfg, &store)?;
    let b = Model::from_store(&cfg, &WeightStore::load(&path)?)?;
    let mut rng = Lcg::new(0);
    let s = cfg.input_side;
    let ir = rng.uniform_tensor(&[1, cfg.ir_channels, s, s], 0.0, 1.0);
    let rgb = rng.uniform_tensor(&[1, cfg.rgb_channels, s, s], 0.0, 1.0);
    let (fa, fb) = (a.forward(&ir, &rgb)?, b.forward(&ir, &rgb)?);
    let same = fa.features().iter().zip(fb.features()).all(|((_, x), (_, y))| x.bit_eq(y));
    println!("reloaded model identical: {same}");
    std::fs::remove_file(&path)?;
    Ok(())
}
