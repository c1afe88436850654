//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::process::Command;
use std::time::{Duration, Instant};

use dge_yolo::backbone::{Ema, FeaturePyramid};
use dge_yolo::config::ModelConfig;
use dge_yolo::flops::{self, OpKind};
use dge_yolo::gradcheck;
use dge_yolo::head::{nms, Detection};
use dge_yolo::image::ImageBuffer;
use dge_yolo::model::Model;
use dge_yolo::neck::Inject;
use dge_yolo::nn::{Conv2d, ConvBnAct, Module, RepBlock, RepMode};
use dge_yolo::ops::{self, Conv2dParams};
use dge_yolo::rng::Lcg;
use dge_yolo::stats::{count_flops, count_params, measure_flops, Analytic};
use dge_yolo::weights::{Initializer, RandomSource, WeightStore};
use dge_yolo::Tensor;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1 ------------------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let reports = gradcheck::run(gradcheck::OPS, 3, 2024).map_err(e2s)?;
    let secs = t.elapsed().as_secs_f64();
    let mut worst = (String::new(), 0.0f64);
    for r in &reports {
        ensure(r.coords >= gradcheck::COORDS_PER_TRIAL, || format!("{}: only {} coordinates", r.op, r.coords))?;
        ensure(r.max_rel_err < 1e-3, || format!("{}: rel err {:.3e}", r.op, r.max_rel_err))?;
        if r.max_rel_err >= worst.1 {
            worst = (r.op.clone(), r.max_rel_err);
        }
    }
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} ops, worst {} at {:.2e}, {secs:.2} s",
        reports.len(),
        worst.0,
        worst.1
    ))
}

// 2 ------------------------------------------------------------------------

/// Direct summation in the contract's order: input channel, kernel row,
/// kernel column, bias last, one f32 accumulator per output.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f32],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f32],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f32>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let (cig, cog) = (cin / groups, cout / groups);
    let mut out = vec![0.0f32; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            let g = o / cog;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = 0.0f32;
                    for ci in 0..cig {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let c = g * cig + ci;
                                let xv = x[((b * cin + c) * h + iy as usize) * w + ix as usize];
                                let wv = wt[((o * cig + ci) * kh + ky) * kw + kx];
                                s += xv * wv;
                            }
                        }
                    }
                    if let Some(bb) = bias {
                        s += bb[o];
                    }
                    out[((b * cout + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    (out, oh, ow)
}

fn conv_sweep() -> Outcome {
    let t = Instant::now();
    // (cin, cout, groups): dense, grouped, depthwise, channel-expanding and -reducing.
    let channels = [(1, 1, 1), (2, 3, 1), (3, 2, 1), (4, 4, 2), (4, 4, 4), (6, 3, 3), (8, 8, 1), (8, 4, 2), (8, 8, 8)];
    let mut rng = Lcg::new(77);
    let (mut cases, mut worst) = (0usize, 0.0f64);
    for &(cin, cout, groups) in &channels {
        for h in 1..=8 {
            for w in 1..=8 {
                for stride in 1..=2 {
                    for pad in 0..=1 {
                        for kh in 1..=(h + 2 * pad).min(8) {
                            for kw in 1..=(w + 2 * pad).min(8) {
                                let n = 1 + (cases % 2);
                                let x = rng.normal_tensor(&[n, cin, h, w], 1.0);
                                let wt = rng.normal_tensor(&[cout, cin / groups, kh, kw], 1.0);
                                let b = (cases % 3 != 0).then(|| rng.normal_tensor(&[cout], 1.0));
                                let p = Conv2dParams::new(stride, pad, groups);
                                let y = ops::conv2d(&x, &wt, b.as_ref(), p).map_err(e2s)?;
                                let (expect, oh, ow) = naive_conv(
                                    x.data(),
                                    (n, cin, h, w),
                                    wt.data(),
                                    (cout, kh, kw),
                                    b.as_ref().map(|b| b.data()),
                                    stride,
                                    pad,
                                    groups,
                                );
                                ensure(y.shape() == [n, cout, oh, ow], || {
                                    format!("shape {:?} for h={h} w={w} k={kh}x{kw}", y.shape())
                                })?;
                                for (a, e) in y.data().iter().zip(&expect) {
                                    worst = worst.max((a - e).abs() as f64);
                                }
                                ensure(worst < 1e-5, || {
                                    format!("diff {worst:e} at cin={cin} cout={cout} g={groups} h={h} w={w} k={kh}x{kw} s={stride} p={pad}")
                                })?;
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{cases} shapes, max abs diff {worst:.2e}, {secs:.2} s"))
}

// 3 ------------------------------------------------------------------------

fn rep_fusion() -> Outcome {
    let mut rng = Lcg::new(3);
    let mut worst = 0.0f32;
    for i in 0..200 {
        let (cin, cout, depth) = (1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(3));
        let mut block = RepBlock::new(&mut RandomSource::new(1000 + i), "rep", cin, cout, depth).map_err(e2s)?;
        block.fuse();
        let (n, h, w) = (1 + rng.below(2), 1 + rng.below(10), 1 + rng.below(10));
        let x = rng.normal_tensor(&[n, cin, h, w], 1.0);
        let multi = block.forward_mode(&x, RepMode::MultiBranch).map_err(e2s)?;
        let fused = block.forward_mode(&x, RepMode::Fused).map_err(e2s)?;
        let d = multi.max_abs_diff(&fused);
        worst = worst.max(d);
        ensure(d < 1e-4, || format!("parameterization {i}: |diff| = {d:e}"))?;
    }
    Ok(format!("200 parameterizations, max |diff| {worst:.2e}"))
}

// 4 ------------------------------------------------------------------------

fn ema_contract() -> Outcome {
    let mut rng = Lcg::new(4);
    let (mut lo, mut hi) = (1.0f32, 0.0f32);
    for i in 0..50 {
        let g = 1 + rng.below(8);
        let c = g * (1 + rng.below(4));
        let (n, h, w) = (1 + rng.below(3), 1 + rng.below(12), 1 + rng.below(12));
        let ema = Ema::new(&mut RandomSource::new(500 + i), "ema", c, g).map_err(e2s)?;
        let x = rng.normal_tensor(&[n, c, h, w], 2.0);
        let (y, att) = ema.forward_with_attention(&x).map_err(e2s)?;
        ensure(y.shape() == x.shape(), || format!("case {i}: {:?} -> {:?}", x.shape(), y.shape()))?;
        for &v in att.data() {
            ensure(v > 0.0 && v < 1.0, || format!("case {i}: attention weight {v}"))?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let levels = rng.normal_tensor(&[n * c], 1.0);
        let flat = Tensor::from_fn(&[n, c, h, w], |j| levels.data()[j / (h * w)]);
        let (_, att) = ema.forward_with_attention(&flat).map_err(e2s)?;
        for plane in att.data().chunks(h * w) {
            ensure(plane.iter().all(|v| v.to_bits() == plane[0].to_bits()), || {
                format!("case {i}: constant input, varying attention map")
            })?;
        }
    }
    Ok(format!("50 configurations, attention range [{lo:.3e}, {hi:.6}]"))
}

// 5 ------------------------------------------------------------------------

fn gd_resolution() -> Outcome {
    let mut checked = 0;
    for side in (32..=256).step_by(32) {
        for channels in ["8,16,24,32", "16,32,64,128"] {
            if side > 128 && channels.starts_with("16") {
                continue;
            }
            let doc = format!("input_side = {side}\nchannels = {channels}\nhigh_ifm_heads = 2\nhead_width = 8");
            let cfg = ModelConfig::parse(&doc).map_err(e2s)?;
            let model = Model::seeded(&cfg).map_err(e2s)?;
            let out = model
                .forward(&Tensor::zeros(&[1, 3, side, side]), &Tensor::zeros(&[1, 3, side, side]))
                .map_err(e2s)?;
            let r = out.backbone.attended.levels[0].shape()[2];
            let b4 = out.backbone.attended.levels[2].shape()[2];
            let b5 = out.backbone.attended.levels[3].shape()[2];
            let low = out.neck.low_aligned.shape();
            let high = out.neck.high_aligned.shape();
            ensure(r == side / 4, || format!("side {side}: B2 side {r}"))?;
            ensure(low[2] == r / 4 && low[3] == r / 4 && b4 == r / 4, || {
                format!("side {side}: low aggregate {low:?}, R = {r}")
            })?;
            ensure(high[2] == r / 8 && high[3] == r / 8 && b5 == r / 8, || {
                format!("side {side}: high aggregate {high:?}, R = {r}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} configurations, sides 32..256"))
}

// 6 ------------------------------------------------------------------------

/// 1×1 conv-norm without activation, evaluated per pixel in f64.
fn pointwise_f64(m: &ConvBnAct, x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
    let co = m.cout();
    let hw = h * w;
    let bn = &m.bn;
    let mut out = vec![0.0; n * co * hw];
    for b in 0..n {
        for o in 0..co {
            let scale = bn.gamma.data()[o] as f64 / (bn.var.data()[o] as f64).sqrt();
            for p in 0..hw {
                let mut s = 0.0;
                for i in 0..c {
                    s += m.weight.data()[o * c + i] as f64 * x[(b * c + i) * hw + p];
                }
                out[(b * co + o) * hw + p] = (s - bn.mean.data()[o] as f64) * scale + bn.beta.data()[o] as f64;
            }
        }
    }
    out
}

/// Resize of `(n·c)` planes: bilinear with half-pixel centers when growing,
/// window means when shrinking.
fn resize_f64(x: &[f64], planes: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return x.to_vec();
    }
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let v = if oh <= h && ow <= w {
                    let (r0, r1) = (i * h / oh, ((i + 1) * h).div_ceil(oh));
                    let (c0, c1) = (j * w / ow, ((j + 1) * w).div_ceil(ow));
                    let mut s = 0.0;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            s += src[y * w + xx];
                        }
                    }
                    s / ((r1 - r0) * (c1 - c0)) as f64
                } else {
                    let coord = |o: usize, n_in: usize, n_out: usize| {
                        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
                        let lo = s.floor() as usize;
                        (lo, (lo + 1).min(n_in - 1), s - lo as f64)
                    };
                    let (y0, y1, ty) = coord(i, h, oh);
                    let (x0, x1, tx) = coord(j, w, ow);
                    let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
                    let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
                    top * (1.0 - ty) + bot * ty
                };
                out.push(v);
            }
        }
    }
    out
}

fn inject_fidelity() -> Outcome {
    let mut rng = Lcg::new(6);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (cg, cl) = (1 + rng.below(8), 1 + rng.below(8));
        let n = 1 + rng.below(2);
        let (lh, lw) = (1 + rng.below(8), 1 + rng.below(8));
        let (gh, gw) = match i % 3 {
            0 => (lh, lw),
            1 => (1 + rng.below(lh), 1 + rng.below(lw)),
            _ => (lh + rng.below(4), lw + rng.below(4)),
        };
        let inj = Inject::new(&mut RandomSource::new(900 + i), "inj", cg, cl, 1 + rng.below(2)).map_err(e2s)?;
        let mut inj = inj;
        inj.rep.fuse();
        let f_l = rng.normal_tensor(&[n, cl, lh, lw], 1.0);
        let f_i = rng.normal_tensor(&[n, cg, gh, gw], 1.0);
        let got = inj.forward(&f_l, &f_i).map_err(e2s)?;

        let xl: Vec<f64> = f_l.data().iter().map(|&v| v as f64).collect();
        let xi: Vec<f64> = f_i.data().iter().map(|&v| v as f64).collect();
        let act: Vec<f64> = pointwise_f64(&inj.act, &xi, (n, cg, gh, gw))
            .into_iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let g_act = resize_f64(&act, n * cl, (gh, gw), (lh, lw));
        let g_embed = resize_f64(&pointwise_f64(&inj.g_embed, &xi, (n, cg, gh, gw)), n * cl, (gh, gw), (lh, lw));
        let local = pointwise_f64(&inj.l_embed, &xl, (n, cl, lh, lw));
        let fused: Vec<f32> = local
            .iter()
            .zip(&g_act)
            .zip(&g_embed)
            .map(|((l, a), e)| (l * a + e) as f32)
            .collect();
        let fused = Tensor::new(&[n, cl, lh, lw], fused).map_err(e2s)?;
        let expect = inj.rep.forward_mode(&fused, RepMode::Fused).map_err(e2s)?;
        ensure(got.shape() == f_l.shape(), || format!("case {i}: shape {:?}", got.shape()))?;
        let d = got.max_abs_diff(&expect) as f64;
        worst = worst.max(d);
        ensure(d < 1e-5, || format!("case {i}: max abs diff {d:e}"))?;
    }
    Ok(format!("100 cases, max abs diff {worst:.2e}"))
}

// 7 ------------------------------------------------------------------------

fn global_influence() -> Outcome {
    let cfg = ModelConfig::default();
    for seed in 0..10u64 {
        let model = Model::from_store(&cfg, &Model::init_weights(&cfg, seed).map_err(e2s)?).map_err(e2s)?;
        let mut rng = Lcg::new(100 + seed);
        let pyr = FeaturePyramid {
            levels: std::array::from_fn(|i| rng.normal_tensor(&[1, cfg.channels[i], 16 >> i, 16 >> i], 1.0)),
        };
        let base = model.neck.forward(&pyr).map_err(e2s)?;
        for level in 0..4 {
            let mut moved = pyr.clone();
            let t = &mut moved.levels[level];
            let k = rng.below(t.numel());
            t.data_mut()[k] += 1.0;
            let out = model.neck.forward(&moved).map_err(e2s)?;
            for (name, a, b) in [("P3", &base.p3, &out.p3), ("N4", &base.n4, &out.n4), ("N5", &base.n5, &out.n5)] {
                ensure(a.max_abs_diff(b) > 0.0, || format!("seed {seed}: B{} does not reach {name}", level + 2))?;
            }
        }
    }
    Ok("10 seeds x 4 levels, every head input moved".into())
}

// 8 ------------------------------------------------------------------------

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_dge");
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let dir = tempfile::tempdir().map_err(e2s)?;
    let cfg = format!("{fixtures}/default.cfg");
    let weights = dir.path().join("w.dgew");
    let status = Command::new(bin)
        .args(["init", "--config", &cfg, "--out"])
        .arg(&weights)
        .status()
        .map_err(e2s)?;
    ensure(status.success(), || "init failed".into())?;
    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for (i, threads) in ["0", "0", "0", "0", "0", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}.json"));
        let t = Instant::now();
        let st = Command::new(bin)
            .env("DGE_THREADS", threads)
            .args(["infer", "--rgb", &format!("{fixtures}/pair_rgb.ppm"), "--ir", &format!("{fixtures}/pair_ir.pgm")])
            .args(["--config", &cfg, "--weights"])
            .arg(&weights)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(e2s)?;
        slowest = slowest.max(t.elapsed());
        ensure(st.success(), || format!("run {i} exited with {st}"))?;
        outputs.push(std::fs::read(&out).map_err(e2s)?);
    }
    ensure(outputs.windows(2).all(|w| w[0] == w[1]), || "JSON differs between runs".into())?;
    let doc: serde_json::Value = serde_json::from_slice(&outputs[0]).map_err(e2s)?;
    let n = doc["detections"].as_array().map_or(0, Vec::len);
    ensure(slowest < Duration::from_secs(2), || format!("slowest run {slowest:?}"))?;
    Ok(format!(
        "7 runs (5 default, DGE_THREADS 1 and 4) identical, {n} detections, slowest {:.0} ms",
        slowest.as_secs_f64() * 1e3
    ))
}

// 9 ------------------------------------------------------------------------

fn analyzer() -> Outcome {
    let cfg = ModelConfig::default();
    let store = Model::init_weights(&cfg, 0).map_err(e2s)?;
    let brute: u64 = store.iter().map(|(_, t)| t.shape().iter().product::<usize>() as u64).sum();
    let model = Model::from_store(&cfg, &store).map_err(e2s)?;
    let params = count_params(&model);
    ensure(params == brute, || format!("count_params {params} != store sum {brute}"))?;

    let small = count_flops(&model).map_err(e2s)?;
    ensure(small.flops == measure_flops(&model).map_err(e2s)?.total(), || "analytic and measured totals differ".into())?;
    let big_cfg = ModelConfig::parse("input_side = 128").map_err(e2s)?;
    let big = count_flops(&Model::seeded(&big_cfg).map_err(e2s)?).map_err(e2s)?;
    ensure(big.conv_flops == 4 * small.conv_flops, || {
        format!("conv flops {} -> {} is not x4", small.conv_flops, big.conv_flops)
    })?;

    let conv = Conv2d::new(&mut Initializer::new(0), "conv", 2, 4, 3).map_err(e2s)?;
    let p = conv.param_count();
    ensure(p == 76, || format!("single conv has {p} params"))?;
    let mut a = Analytic::new();
    conv.analyze(&mut a, &[1, 2, 8, 8]).map_err(e2s)?;
    let (_, measured) = flops::measure(|| conv.forward(&Tensor::zeros(&[1, 2, 8, 8])));
    ensure(a.tally.get(OpKind::Conv) == 9472 && measured.total() == 9472, || {
        format!("single conv flops analytic {} measured {}", a.tally.total(), measured.total())
    })?;
    Ok(format!(
        "params {params}, conv flops {} -> {} (x4), single conv 76 / 9472",
        small.conv_flops, big.conv_flops
    ))
}

// 10 -----------------------------------------------------------------------

fn iou64(a: &[f32; 4], b: &[f32; 4]) -> f64 {
    let f = |v: f32| v as f64;
    let iw = (f(a[2]).min(f(b[2])) - f(a[0]).max(f(b[0]))).max(0.0);
    let ih = (f(a[3]).min(f(b[3])) - f(a[1]).max(f(b[1]))).max(0.0);
    let area = |r: &[f32; 4]| (f(r[2]) - f(r[0])) * (f(r[3]) - f(r[1]));
    let inter = iw * ih;
    inter / (area(a) + area(b) - inter)
}

/// Quadratic reference: per class, order by the tie-break key, then mark
/// every box suppressed by an earlier survivor.
fn reference_nms(dets: &[Detection], thresh: f32) -> Vec<Detection> {
    let key = |d: &Detection| (std::cmp::Reverse(d.score.to_bits()), d.bbox.map(f32::to_bits), d.class_id);
    let mut survivors = Vec::new();
    let classes: std::collections::BTreeSet<usize> = dets.iter().map(|d| d.class_id).collect();
    for c in classes {
        let mut group: Vec<Detection> = dets.iter().filter(|d| d.class_id == c).copied().collect();
        group.sort_by_key(key);
        let mut alive = vec![true; group.len()];
        for i in 0..group.len() {
            if !alive[i] {
                continue;
            }
            for j in i + 1..group.len() {
                if iou64(&group[i].bbox, &group[j].bbox) as f32 > thresh {
                    alive[j] = false;
                }
            }
        }
        survivors.extend(group.into_iter().zip(alive).filter(|(_, a)| *a).map(|(d, _)| d));
    }
    survivors.sort_by_key(key);
    survivors
}

fn nms_oracle() -> Outcome {
    let mut rng = Lcg::new(10);
    let mut total = 0;
    for i in 0..1000 {
        let count = rng.below(60);
        let dets: Vec<Detection> = (0..count)
            .map(|_| {
                let (x, y) = (rng.below(20) as f32, rng.below(20) as f32);
                Detection {
                    class_id: rng.below(4),
                    score: (1 + rng.below(10)) as f32 / 10.0,
                    bbox: [x, y, x + (1 + rng.below(10)) as f32, y + (1 + rng.below(10)) as f32],
                }
            })
            .collect();
        let t = [0.3f32, 0.45, 0.5, 0.7][i % 4];
        let got = nms(&dets, t);
        let expect = reference_nms(&dets, t);
        ensure(got == expect, || format!("set {i}: {} survivors vs reference {}", got.len(), expect.len()))?;
        total += got.len();
    }
    Ok(format!("1000 sets, {total} survivors in total"))
}

// 11 -----------------------------------------------------------------------

fn round_trips() -> Outcome {
    let cfg = ModelConfig::default();
    let store = Model::init_weights(&cfg, 11).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let path = dir.path().join("w.dgew");
    store.save(&path).map_err(e2s)?;
    let back = WeightStore::load(&path).map_err(e2s)?;
    ensure(back.names().eq(store.names()), || "weight names or order changed".into())?;
    ensure(back.iter().zip(store.iter()).all(|((_, a), (_, b))| a.bit_eq(b)), || "weights changed".into())?;
    ensure(std::fs::read(&path).map_err(e2s)? == back.to_bytes().map_err(e2s)?, || "re-encoding differs".into())?;

    let mut rng = Lcg::new(12);
    for channels in [1, 3, 1, 3] {
        let (w, h) = (1 + rng.below(40), 1 + rng.below(40));
        let samples: Vec<u8> = (0..w * h * channels).map(|_| rng.below(256) as u8).collect();
        let img = ImageBuffer::new(w, h, channels, samples).map_err(e2s)?;
        ensure(ImageBuffer::decode(&img.encode()).map_err(e2s)? == img, || format!("{w}x{h}x{channels} image changed"))?;
    }

    for doc in ["", "input_side = 96\nnum_classes = 3\nscore_thresh = 0.4\nchannels = 8,16,32,64"] {
        let c = ModelConfig::parse(doc).map_err(e2s)?;
        ensure(ModelConfig::parse(&c.to_text()).map_err(e2s)? == c, || "config changed on reload".into())?;
    }
    Ok(format!("{} weight tensors, 4 images, 2 configs", store.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("convolution oracle sweep", conv_sweep),
        ("RepBlock re-parameterization", rep_fusion),
        ("EMA contract", ema_contract),
        ("GD resolution contract", gd_resolution),
        ("injection equation fidelity", inject_fidelity),
        ("global influence", global_influence),
        ("end-to-end determinism", cli_determinism),
        ("analyzer consistency", analyzer),
        ("NMS oracle", nms_oracle),
        ("file-format round-trips", round_trips),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
