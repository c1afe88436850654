use std::path::{Path, PathBuf};

use dge_yolo::cli::{self, EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_USAGE};
use dge_yolo::config::ModelConfig;
use dge_yolo::image::{preprocess, ImageBuffer};
use dge_yolo::model::Model;
use dge_yolo::selftest::SUITES;
use dge_yolo::stats::{count_flops, count_params};
use dge_yolo::weights::WeightStore;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(std::iter::once("dge").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes seeded weights for the fixture config into `dir`.
fn weights(dir: &Path) -> PathBuf {
    let w = dir.join("model.dgew");
    let (code, _, err) = run(&["init", "--config", p(&fixture("default.cfg")), "--out", p(&w)]);
    assert_eq!(code, EXIT_OK, "{err}");
    w
}

#[test]
fn missing_required_flag_is_usage_error() {
    let (code, _, err) = run(&["infer", "--rgb", "a.ppm"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("--ir"), "{err}");
    assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
}

#[test]
fn unknown_gradcheck_op_lists_known_ops() {
    let (code, _, err) = run(&["gradcheck", "--ops", "conv2d,warp"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("warp") && err.contains("conv2d"), "{err}");
}

#[test]
fn gradcheck_subset_passes() {
    let (code, out, _) = run(&["gradcheck", "--ops", "conv2d,sigmoid", "--trials", "1"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().all(|l| l.ends_with("ok")), "{out}");
}

#[test]
fn selftest_list_names_every_suite() {
    let (code, out, _) = run(&["selftest", "--list"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().collect::<Vec<_>>(), SUITES);
}

#[test]
fn selftest_rejects_corrupt_weights() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path());
    let mut bytes = std::fs::read(&w).unwrap();
    bytes.truncate(bytes.len() - 7);
    std::fs::write(&w, bytes).unwrap();
    let (code, _, err) = run(&["selftest", "--config", p(&fixture("default.cfg")), "--weights", p(&w)]);
    assert_eq!(code, EXIT_INVALID, "{err}");
}

#[test]
fn weights_for_another_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path());
    let cfg = dir.path().join("wide.cfg");
    std::fs::write(&cfg, "channels = 8,16,32,64\n").unwrap();
    let (code, _, err) = run(&["selftest", "--config", p(&cfg), "--weights", p(&w)]);
    assert_eq!(code, EXIT_INVALID);
    assert!(!err.is_empty());
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "input_side = 128\nwidth_mult = 2\n").unwrap();
    let (code, _, err) = run(&["stats", "--config", p(&cfg)]);
    assert_eq!(code, EXIT_INVALID);
    assert!(err.contains("width_mult"), "{err}");
}

#[test]
fn stats_json_matches_library_counts() {
    let (code, out, _) = run(&["stats", "--json"]);
    assert_eq!(code, EXIT_OK);
    let v: Value = serde_json::from_str(&out).unwrap();
    let model = Model::seeded(&ModelConfig::default()).unwrap();
    let s = count_flops(&model).unwrap();
    assert_eq!(v["params"].as_u64(), Some(count_params(&model)));
    assert_eq!(v["flops"].as_u64(), Some(s.flops));
    let module_sum: u64 = v["modules"].as_array().unwrap().iter().map(|m| m["params"].as_u64().unwrap()).sum();
    assert_eq!(module_sum, s.params);
}

#[test]
fn stats_table_ends_with_totals() {
    let (code, out, _) = run(&["stats"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.lines().any(|l| l.starts_with("total")));
    assert!(out.lines().last().unwrap().starts_with("conv flops:"));
}

#[test]
fn infer_matches_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path());
    let out = dir.path().join("dets.json");
    let feats = dir.path().join("feats");
    let (rgb, ir) = (fixture("pair_rgb.ppm"), fixture("pair_ir.pgm"));
    let (code, _, err) = run(&[
        "infer", "--rgb", p(&rgb), "--ir", p(&ir), "--config", p(&fixture("default.cfg")),
        "--weights", p(&w), "--out", p(&out), "--dump-features", p(&feats),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();

    let cfg = ModelConfig::load(fixture("default.cfg")).unwrap();
    let model = Model::from_store(&cfg, &WeightStore::load(&w).unwrap()).unwrap();
    let (rgb_img, ir_img) = (ImageBuffer::load(&rgb).unwrap(), ImageBuffer::load(&ir).unwrap());
    let rgb_t = preprocess(&rgb_img, cfg.input_side, cfg.rgb_channels).unwrap();
    let ir_t = preprocess(&ir_img, cfg.input_side, cfg.ir_channels).unwrap();
    let (dets, fwd) = model.full_forward(&ir_t, &rgb_t).unwrap();

    assert_eq!(v["image"]["width"].as_u64(), Some(rgb_img.width as u64));
    assert_eq!(v["model"]["params"].as_u64(), Some(count_params(&model)));
    let got = v["detections"].as_array().unwrap();
    assert_eq!(got.len(), dets[0].len());
    for (j, d) in got.iter().zip(&dets[0]) {
        assert_eq!(j["class_id"].as_u64(), Some(d.class_id as u64));
        assert_eq!(j["class_name"].as_str(), Some(cfg.class_names[d.class_id].as_str()));
        assert_eq!(j["score"].as_f64().unwrap() as f32, d.score);
        let b = cli::to_image_coords(d, cfg.input_side, rgb_img.width, rgb_img.height);
        for (x, y) in j["box"].as_array().unwrap().iter().zip(b) {
            assert_eq!(x.as_f64().unwrap() as f32, y);
        }
    }

    let dumped = WeightStore::load(feats.join("features.dgew")).unwrap();
    let expect = fwd.to_store().unwrap();
    assert_eq!(dumped.names().collect::<Vec<_>>(), expect.names().collect::<Vec<_>>());
    for ((_, a), (_, b)) in dumped.iter().zip(expect.iter()) {
        assert!(a.bit_eq(b));
    }
}

#[test]
fn infer_missing_image_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path());
    let (code, _, err) = run(&[
        "infer", "--rgb", p(&dir.path().join("nope.ppm")), "--ir", p(&fixture("pair_ir.pgm")),
        "--config", p(&fixture("default.cfg")), "--weights", p(&w), "--out", p(&dir.path().join("o.json")),
    ]);
    assert_eq!(code, EXIT_IO);
    assert!(err.contains("nope.ppm"), "{err}");
}

#[test]
fn infer_rejects_non_netpbm_image() {
    let dir = tempfile::tempdir().unwrap();
    let w = weights(dir.path());
    let png = dir.path().join("x.png");
    std::fs::write(&png, b"\x89PNG\r\n\x1a\n0000").unwrap();
    let (code, _, _) = run(&[
        "infer", "--rgb", p(&png), "--ir", p(&fixture("pair_ir.pgm")),
        "--config", p(&fixture("default.cfg")), "--weights", p(&w), "--out", p(&dir.path().join("o.json")),
    ]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn init_seed_controls_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = |s: &str| dir.path().join(s);
    for (name, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        assert_eq!(run(&["init", "--out", p(&path(name)), "--seed", seed]).0, EXIT_OK);
    }
    let read = |s: &str| std::fs::read(path(s)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}
