use dge_yolo::config::ModelConfig;
use dge_yolo::model::Model;
use dge_yolo::nn::Module;
use dge_yolo::rng::Lcg;
use dge_yolo::stats::{count_flops, count_params, measure_flops};
use dge_yolo::Tensor;

fn images(cfg: &ModelConfig, seed: u64) -> (Tensor, Tensor) {
    let mut rng = Lcg::new(seed);
    let s = cfg.input_side;
    (
        rng.uniform_tensor(&[1, cfg.ir_channels, s, s], 0.0, 1.0),
        rng.uniform_tensor(&[1, cfg.rgb_channels, s, s], 0.0, 1.0),
    )
}

#[test]
fn params_equal_store_sum() {
    let cfg = ModelConfig::default();
    let store = Model::init_weights(&cfg, 0).unwrap();
    let model = Model::from_store(&cfg, &store).unwrap();
    assert_eq!(count_params(&model), store.total_elements());
    let mut names = Vec::new();
    model.visit(&mut |n, _| names.push(n.to_string()));
    assert_eq!(names, store.names().collect::<Vec<_>>());
}

#[test]
fn analytic_flops_equal_measured() {
    for cfg in [
        ModelConfig::default(),
        ModelConfig::parse("input_side = 96\nhigh_ifm_dim = 64\nc2f_depths = 0,1,2,1\nlow_ifm_depth = 0").unwrap(),
    ] {
        let model = Model::seeded(&cfg).unwrap();
        let stats = count_flops(&model).unwrap();
        let measured = measure_flops(&model).unwrap();
        assert_eq!(stats.by_kind, measured);
        assert_eq!(stats.flops, measured.total());
        assert_eq!(stats.params, count_params(&model));
        assert_eq!(stats.flops, stats.modules.iter().map(|m| m.flops).sum::<u64>());
    }
}

#[test]
fn conv_flops_scale_with_area() {
    let small = Model::seeded(&ModelConfig::default()).unwrap();
    let big = Model::seeded(&ModelConfig::parse("input_side = 128").unwrap()).unwrap();
    let (a, b) = (count_flops(&small).unwrap(), count_flops(&big).unwrap());
    assert_eq!(b.conv_flops, 4 * a.conv_flops);
}

#[test]
fn forward_is_deterministic_and_shaped() {
    let cfg = ModelConfig::default();
    let model = Model::seeded(&cfg).unwrap();
    let (ir, rgb) = images(&cfg, 1);
    let (d1, o1) = model.full_forward(&ir, &rgb).unwrap();
    let (d2, o2) = model.full_forward(&ir, &rgb).unwrap();
    assert_eq!(d1, d2);
    for ((n1, t1), (_, t2)) in o1.features().iter().zip(o2.features()) {
        assert!(t1.bit_eq(t2), "{n1}");
    }
    let [p3, n4, n5] = o1.neck.head_inputs();
    assert_eq!(p3.shape(), [1, 32, 8, 8]);
    assert_eq!(n4.shape(), [1, 64, 4, 4]);
    assert_eq!(n5.shape(), [1, 128, 2, 2]);
    assert_eq!(o1.preds[0].cls.shape(), [1, 5, 8, 8]);
}

#[test]
fn zero_images_give_one_candidate_per_cell() {
    let cfg = ModelConfig::default();
    let model = Model::seeded(&cfg).unwrap();
    let s = cfg.input_side;
    let out = model
        .forward(&Tensor::zeros(&[1, 3, s, s]), &Tensor::zeros(&[1, 3, s, s]))
        .unwrap();
    for p in &out.preds {
        assert!(p.cls.data().iter().all(|&v| v == 0.0));
    }
    let cands = dge_yolo::head::decode(&out.preds, &dge_yolo::head::DecodeParams::from_config(&cfg)).unwrap();
    assert_eq!(cands[0].len(), 8 * 8 + 4 * 4 + 2 * 2);
    assert!(cands[0].iter().all(|d| d.score == 0.5));
}

#[test]
fn batch_items_are_independent() {
    let cfg = ModelConfig::default();
    let model = Model::seeded(&cfg).unwrap();
    let (ir_a, rgb_a) = images(&cfg, 2);
    let (ir_b, rgb_b) = images(&cfg, 3);
    let cat = |a: &Tensor, b: &Tensor| dge_yolo::ops::concat(&[a, b], 0).unwrap();
    let (both, _) = model.full_forward(&cat(&ir_a, &ir_b), &cat(&rgb_a, &rgb_b)).unwrap();
    let (a, _) = model.full_forward(&ir_a, &rgb_a).unwrap();
    let (b, _) = model.full_forward(&ir_b, &rgb_b).unwrap();
    assert_eq!(both, vec![a[0].clone(), b[0].clone()]);
}
