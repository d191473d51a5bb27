//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them). The desk-scale training
//! criteria (5 and 6) dominate the runtime; everything else finishes in
//! minutes.

use ndarray::{Array3, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::process::Command;
use stvsr::data::{synthesize_clip, DegradationSpec, SyntheticSpec};
use stvsr::eval::{clips_from_frames, evaluate_dataset, EvalReport, Scorer};
use stvsr::gradcheck::{central_diff, rel_err};
use stvsr::graph::{Graph, Var};
use stvsr::loss::LossWeights;
use stvsr::model::{count_parameters, Model, ModelConfig, Variant};
use stvsr::nn::{Conv2d, Init, OffsetPredictor, ParamSet, ResBlock};
use stvsr::train::{cosine_lr, TrainConfig, Trainer};

struct Criterion {
    index: usize,
    name: &'static str,
    failures: Vec<String>,
}

impl Criterion {
    fn new(index: usize, name: &'static str) -> Self {
        Criterion {
            index,
            name,
            failures: Vec::new(),
        }
    }
    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        if !ok {
            self.failures.push(detail.into());
        }
    }
    fn finish(self) {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "[acceptance] criterion {} ({}): {verdict}",
            self.index, self.name
        );
        assert!(
            self.failures.is_empty(),
            "criterion {} failed:\n  {}",
            self.index,
            self.failures.join("\n  ")
        );
    }
}

fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ArrayD<f64> {
    Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0)).into_dyn()
}

// ---------------------------------------------------------------------------
// 1. Parameter-count reproduction
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_parameter_count() {
    let mut c = Criterion::new(1, "parameter count within 15% of 11.10M");
    let cfg = ModelConfig::paper();
    assert_eq!(
        (cfg.variant, cfg.k1, cfg.k2, cfg.channels, cfg.pcd_levels),
        (Variant::Guided, 5, 40, 64, 3)
    );
    let total = count_parameters(&cfg).unwrap() as f64;
    let target = 11.10e6;
    let rel = (total - target).abs() / target;
    c.check(
        rel <= 0.15,
        format!("count {total} deviates {:.1}% from {target}", rel * 100.0),
    );

    // The inspect command prints the per-module breakdown.
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("paper.bin");
    let model = Model::<f32>::new(cfg, 0).unwrap();
    stvsr::checkpoint::save(&ckpt, &model, 0, &[]).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stvsr"))
        .args(["inspect", ckpt.to_str().unwrap()])
        .output()
        .unwrap();
    c.check(out.status.success(), "inspect exited nonzero");
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for module in ["extract", "interp", "lstm", "recon", "lr_synth"] {
        c.check(text.contains(module), format!("breakdown misses `{module}`"));
    }
    c.check(
        text.contains(&format!("total parameters: {}", total as usize)),
        "inspect total differs from library count",
    );
    c.finish();
}

// ---------------------------------------------------------------------------
// 2. Deformable-convolution oracle
// ---------------------------------------------------------------------------

/// Naive per-pixel loop oracle with its own four-corner interpolation,
/// independent of the im2col production path.
fn deform_oracle(
    x: &ArrayD<f64>,
    off: &ArrayD<f64>,
    w: &ArrayD<f64>,
    bias: Option<&[f64]>,
    groups: usize,
) -> ArrayD<f64> {
    let (b, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let k = kh * kw;
    let per = ci / groups;
    let mut out = Array4::<f64>::zeros((b, co, h, wd));
    for bi in 0..b {
        for oc in 0..co {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = bias.map(|bv| bv[oc]).unwrap_or(0.0);
                    for ic in 0..ci {
                        let g = ic / per;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let tap = ki * kw + kj;
                                let dy = off[[bi, (g * k + tap) * 2, y, xx]];
                                let dx = off[[bi, (g * k + tap) * 2 + 1, y, xx]];
                                let py = y as f64 + ki as f64 - (kh / 2) as f64 + dy;
                                let px = xx as f64 + kj as f64 - (kw / 2) as f64 + dx;
                                let (y0, x0) = (py.floor(), px.floor());
                                let (fy, fx) = (py - y0, px - x0);
                                let mut v = 0.0;
                                for (yy, wy) in [(y0 as i64, 1.0 - fy), (y0 as i64 + 1, fy)] {
                                    if yy < 0 || yy >= h as i64 {
                                        continue;
                                    }
                                    for (xc, wx) in [(x0 as i64, 1.0 - fx), (x0 as i64 + 1, fx)] {
                                        if xc < 0 || xc >= wd as i64 {
                                            continue;
                                        }
                                        v += wy * wx * x[[bi, ic, yy as usize, xc as usize]];
                                    }
                                }
                                acc += w[[oc, ic, ki, kj]] * v;
                            }
                        }
                    }
                    out[[bi, oc, y, xx]] = acc;
                }
            }
        }
    }
    out.into_dyn()
}

fn max_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_2_deformable_oracle() {
    let mut c = Criterion::new(2, "deformable conv matches the loop oracle");
    let mut rng = ChaCha8Rng::seed_from_u64(0xD3F0);
    let mut worst_oracle = 0.0f64;
    let mut worst_zero = 0.0f64;
    for i in 0..100 {
        let b = rng.gen_range(1..=2usize);
        let ci = *[1usize, 2, 4].iter().filter(|c| **c <= 4).nth(rng.gen_range(0..3)).unwrap();
        let h = rng.gen_range(3..=8usize);
        let wd = rng.gen_range(3..=8usize);
        let co = rng.gen_range(1..=4usize);
        let kernel = if rng.gen::<bool>() { 3usize } else { 1 };
        let divisors: Vec<usize> = (1..=ci).filter(|g| ci % g == 0).collect();
        let groups = divisors[rng.gen_range(0..divisors.len())];
        let k = kernel * kernel;
        let x = rand4(&mut rng, (b, ci, h, wd));
        let off = Array4::from_shape_fn((b, 2 * k * groups, h, wd), |_| rng.gen_range(-3.0..3.0))
            .into_dyn();
        let w = rand4(&mut rng, (co, ci, kernel, kernel));
        let bias: Option<ndarray::Array1<f64>> = rng
            .gen::<bool>()
            .then(|| ndarray::Array1::from_shape_fn(co, |_| rng.gen_range(-1.0..1.0)));

        let x4 = x.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let o4 = off.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let w4 = w.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let got = stvsr::ops::deformable_conv2d(&x4, &o4, &w4, bias.as_ref(), groups)
            .unwrap()
            .into_dyn();
        let expect = deform_oracle(
            &x,
            &off,
            &w,
            bias.as_ref().map(|b| b.as_slice().unwrap()),
            groups,
        );
        worst_oracle = worst_oracle.max(max_abs_diff(&got, &expect));

        // Zero offsets recover the standard convolution.
        let zero = ArrayD::<f64>::zeros(off.raw_dim());
        let z4 = zero.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let dz = stvsr::ops::deformable_conv2d(&x4, &z4, &w4, bias.as_ref(), groups)
            .unwrap()
            .into_dyn();
        let sc = stvsr::ops::conv2d(&x4, &w4, bias.as_ref(), 1, (kernel / 2, kernel / 2))
            .unwrap()
            .into_dyn();
        worst_zero = worst_zero.max(max_abs_diff(&dz, &sc));
        if i == 99 {
            c.check(
                worst_oracle < 1e-6,
                format!("loop-oracle max diff {worst_oracle:.3e} over 100 inputs"),
            );
            c.check(
                worst_zero < 1e-10,
                format!("zero-offset max diff {worst_zero:.3e}"),
            );
        }
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// 3. Gradient suite
// ---------------------------------------------------------------------------

/// Offsets snapped off the integer lattice so finite differences of
/// bilinear sampling stay well-defined.
fn grid_offsets(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ArrayD<f64> {
    Array4::from_shape_fn(shape, |_| 0.05 * rng.gen_range(-30..30) as f64 + 0.025).into_dyn()
}

fn leaky_well_conditioned(g: &Graph<f64>) -> bool {
    g.nodes_of_kind("leaky_relu").iter().all(|n| {
        let pre = g.parents(*n)[0];
        g.value(pre).iter().all(|v| v.abs() > 1e-3)
    })
}

#[test]
fn criterion_3_gradient_suite() {
    let mut c = Criterion::new(3, "analytic gradients match finite differences");
    const TOL: f64 = 1e-4;
    const STEP: f64 = 1e-5;
    const INSTANCES: usize = 20;

    // deformable_conv2d w.r.t. input, weights, offsets.
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3A00 + i as u64);
        let ci = rng.gen_range(1..=2usize);
        let h = rng.gen_range(4..=6usize);
        let x0 = rand4(&mut rng, (1, ci, h, h));
        let o0 = grid_offsets(&mut rng, (1, 18 * ci, h, h));
        let w0 = rand4(&mut rng, (2, ci, 3, 3));
        let groups = ci;
        let mut g = Graph::<f64>::new();
        let (x, o, w) = (g.leaf(x0.clone()), g.leaf(o0.clone()), g.leaf(w0.clone()));
        let y = g.deformable_conv2d(x, o, w, None, groups).unwrap();
        let root = g.sum_all(y);
        let grads = g.backward(root).unwrap();
        for (var, at) in [(x, &x0), (o, &o0), (w, &w0)] {
            let fd = central_diff(
                |v| {
                    let mut g = Graph::<f64>::new();
                    let x = g.constant(if var == x { v.clone() } else { x0.clone() });
                    let o = g.constant(if var == o { v.clone() } else { o0.clone() });
                    let w = g.constant(if var == w { v.clone() } else { w0.clone() });
                    let y = g.deformable_conv2d(x, o, w, None, groups).unwrap();
                    let r = g.sum_all(y);
                    g.scalar(r)
                },
                at,
                STEP,
            );
            worst = worst.max(rel_err(grads.get(var).unwrap(), &fd));
        }
    }
    c.check(worst < TOL, format!("deformable_conv worst rel err {worst:.3e}"));
    println!("  deformable_conv grads ({INSTANCES} instances): worst rel err {worst:.3e}");

    // convlstm_cell gate weights and bias.
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3B00 + i as u64);
        let ch = rng.gen_range(1..=2usize);
        let hw = rng.gen_range(3..=5usize);
        let mut ps = ParamSet::<f64>::new();
        let gates = Conv2d::new(&mut ps, &mut rng, "gates", 2 * ch, 4 * ch, (3, 3), 1, Init::Kaiming { scale: 1.0 });
        let xv = rand4(&mut rng, (1, ch, hw, hw));
        let hv = rand4(&mut rng, (1, ch, hw, hw));
        let cv = rand4(&mut rng, (1, ch, hw, hw));
        let run = |ps: &ParamSet<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let lv = ps.inject(&mut g);
            let x = g.constant(xv.clone());
            let h = g.constant(hv.clone());
            let cc = g.constant(cv.clone());
            let gates = Conv2d { w: stvsr::nn::ParamId(0), b: Some(stvsr::nn::ParamId(1)), stride: 1, pad: (1, 1) };
            let (h1, c1) = stvsr::convlstm::convlstm_cell(&mut g, &lv, &gates, x, h, cc, ch).unwrap();
            let s1 = g.sum_all(h1);
            let s2 = g.sum_all(c1);
            let r = g.scalar_weighted_sum(&[(s1, 1.0), (s2, 0.5)]).unwrap();
            g.scalar(r)
        };
        let mut g = Graph::<f64>::new();
        let lv = ps.inject(&mut g);
        let x = g.constant(xv.clone());
        let h = g.constant(hv.clone());
        let cc = g.constant(cv.clone());
        let (h1, c1) = stvsr::convlstm::convlstm_cell(&mut g, &lv, &gates, x, h, cc, ch).unwrap();
        let s1 = g.sum_all(h1);
        let s2 = g.sum_all(c1);
        let root = g.scalar_weighted_sum(&[(s1, 1.0), (s2, 0.5)]).unwrap();
        let grads = g.backward(root).unwrap();
        for id in [gates.w, gates.b.unwrap()] {
            let fd = central_diff(
                |v| {
                    let mut ps2 = ParamSet::<f64>::new();
                    for (n, val) in ps.iter() {
                        ps2.add(n, val.clone());
                    }
                    *ps2.value_mut(id) = v.clone();
                    run(&ps2)
                },
                ps.value(id),
                STEP,
            );
            worst = worst.max(rel_err(grads.get(lv.var(id)).unwrap(), &fd));
        }
    }
    c.check(worst < TOL, format!("convlstm_cell worst rel err {worst:.3e}"));
    println!("  convlstm_cell grads ({INSTANCES} instances): worst rel err {worst:.3e}");

    // residual_block, both convolutions; instances resampled until the
    // rectifier inputs are away from the kink.
    let mut worst = 0.0f64;
    let mut seed = 0x3C00u64;
    for _ in 0..INSTANCES {
        loop {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = rng.gen_range(1..=3usize);
            let hw = rng.gen_range(3..=5usize);
            let mut ps = ParamSet::<f64>::new();
            let block = ResBlock::new(&mut ps, &mut rng, "rb", ch);
            let x0 = rand4(&mut rng, (1, ch, hw, hw));
            let run = |ps: &ParamSet<f64>| -> (f64, bool) {
                let mut g = Graph::<f64>::new();
                let lv = ps.inject(&mut g);
                let x = g.constant(x0.clone());
                let y = block.forward(&mut g, &lv, x).unwrap();
                let ok = leaky_well_conditioned(&g);
                let r = g.sum_all(y);
                (g.scalar(r), ok)
            };
            if !run(&ps).1 {
                continue;
            }
            let mut g = Graph::<f64>::new();
            let lv = ps.inject(&mut g);
            let x = g.constant(x0.clone());
            let y = block.forward(&mut g, &lv, x).unwrap();
            let root = g.sum_all(y);
            let grads = g.backward(root).unwrap();
            for id in [block.conv1.w, block.conv2.w, block.conv1.b.unwrap()] {
                let fd = central_diff(
                    |v| {
                        let mut ps2 = ParamSet::<f64>::new();
                        for (n, val) in ps.iter() {
                            ps2.add(n, val.clone());
                        }
                        *ps2.value_mut(id) = v.clone();
                        run(&ps2).0
                    },
                    ps.value(id),
                    STEP,
                );
                worst = worst.max(rel_err(grads.get(lv.var(id)).unwrap(), &fd));
            }
            break;
        }
    }
    c.check(worst < TOL, format!("residual_block worst rel err {worst:.3e}"));
    println!("  residual_block grads ({INSTANCES} instances): worst rel err {worst:.3e}");

    // charbonnier.
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(0x3D00 + i as u64);
        let a0 = rand4(&mut rng, (1, 2, 4, 4));
        let b0 = rand4(&mut rng, (1, 2, 4, 4));
        let mut g = Graph::<f64>::new();
        let a = g.leaf(a0.clone());
        let b = g.constant(b0.clone());
        let root = g.charbonnier(a, b, 1e-3).unwrap();
        let grads = g.backward(root).unwrap();
        let fd = central_diff(
            |v| {
                let mut g = Graph::<f64>::new();
                let a = g.constant(v.clone());
                let b = g.constant(b0.clone());
                let r = g.charbonnier(a, b, 1e-3).unwrap();
                g.scalar(r)
            },
            &a0,
            STEP,
        );
        worst = worst.max(rel_err(grads.get(a).unwrap(), &fd));
    }
    c.check(worst < TOL, format!("charbonnier worst rel err {worst:.3e}"));
    println!("  charbonnier grads ({INSTANCES} instances): worst rel err {worst:.3e}");

    // Full interpolate_intermediate pass, end to end.
    let mut worst = 0.0f64;
    let mut seed = 0x3E00u64;
    for _ in 0..INSTANCES {
        loop {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ps = ParamSet::<f64>::new();
            let interp = stvsr::interp::TemporalInterp::new_deform(&mut ps, &mut rng, 2, 1, 1);
            let stvsr::interp::TemporalInterp::Deform(d) = &interp else { unreachable!() };
            for p in [&d.g1, &d.g3] {
                if let OffsetPredictor::Single { head, .. } = p {
                    ps.value_mut(head.w).mapv_inplace(|_| rng.gen_range(-0.3..0.3));
                    ps.value_mut(head.b.unwrap()).mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                }
            }
            let fa = rand4(&mut rng, (1, 2, 5, 5));
            let fb = rand4(&mut rng, (1, 2, 5, 5));
            let run = |ps: &ParamSet<f64>| -> (f64, bool) {
                let mut g = Graph::<f64>::new();
                let lv = ps.inject(&mut g);
                let f1 = g.constant(fa.clone());
                let f3 = g.constant(fb.clone());
                let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
                let mut ok = leaky_well_conditioned(&g);
                for off in [out.offsets_fwd.unwrap(), out.offsets_bwd.unwrap()] {
                    for v in g.value(off).iter() {
                        let frac = (v.fract() + 1.0).fract();
                        if frac.min(1.0 - frac) < 2e-3 {
                            ok = false;
                        }
                    }
                }
                let r = g.sum_all(out.feature);
                (g.scalar(r), ok)
            };
            if !run(&ps).1 {
                continue;
            }
            let mut g = Graph::<f64>::new();
            let lv = ps.inject(&mut g);
            let f1 = g.constant(fa.clone());
            let f3 = g.constant(fb.clone());
            let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
            let root = g.sum_all(out.feature);
            let grads = g.backward(root).unwrap();
            for name in [
                "interp.alpha.weight",
                "interp.beta.weight",
                "interp.t1.weight",
                "interp.t3.weight",
                "interp.g1.fuse.weight",
                "interp.g1.head.weight",
                "interp.g3.head.weight",
            ] {
                let id = ps.index_of(name).unwrap();
                let fd = central_diff(
                    |v| {
                        let mut ps2 = ParamSet::<f64>::new();
                        for (n, val) in ps.iter() {
                            ps2.add(n, val.clone());
                        }
                        *ps2.value_mut(id) = v.clone();
                        run(&ps2).0
                    },
                    ps.value(id),
                    STEP,
                );
                worst = worst.max(rel_err(grads.get(lv.var(id)).unwrap(), &fd));
            }
            break;
        }
    }
    c.check(worst < TOL, format!("interpolate_intermediate worst rel err {worst:.3e}"));
    println!("  interpolate_intermediate grads ({INSTANCES} instances): worst rel err {worst:.3e}");
    c.finish();
}

// ---------------------------------------------------------------------------
// 4. Structural contracts
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_structural_contracts() {
    let mut c = Criterion::new(4, "variant shape contracts and checkpoint round trips");
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut configs: Vec<ModelConfig> = Variant::ALL
        .iter()
        .map(|v| ModelConfig {
            k1: 1,
            k2: 1,
            k3: 1,
            channels: 8,
            deformable_groups: 2,
            ..ModelConfig::desk(*v)
        })
        .collect();
    // Pyramid predictors exercised on the flagship variant too.
    configs.push(ModelConfig {
        k1: 1,
        k2: 1,
        k3: 1,
        channels: 8,
        deformable_groups: 2,
        pcd_levels: 3,
        ..ModelConfig::desk(Variant::Guided)
    });
    let dir = tempfile::tempdir().unwrap();
    for cfg in configs {
        let model = Model::<f32>::new(cfg, 11).unwrap();
        for n in [1usize, 2, 3] {
            let frames: Vec<ArrayD<f32>> = (0..n + 1)
                .map(|_| {
                    Array4::from_shape_fn((1, 3, 24, 24), |_| rng.gen_range(0.0..1.0f32)).into_dyn()
                })
                .collect();
            let run = |m: &Model<f32>| -> Vec<ArrayD<f32>> {
                let mut g = Graph::new();
                let lv = m.inject(&mut g);
                let vars: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
                let out = m.forward(&mut g, &lv, &vars).unwrap();
                out.hr_frames.iter().map(|v| g.value(*v).clone()).collect()
            };
            let hr = run(&model);
            c.check(
                hr.len() == 2 * n + 1,
                format!("variant {} n={n}: {} frames", cfg.variant, hr.len()),
            );
            for f in &hr {
                c.check(
                    f.shape() == [1, 3, 96, 96],
                    format!("variant {} n={n}: shape {:?}", cfg.variant, f.shape()),
                );
            }
            if n == 2 {
                // Checkpoint round trip reproduces outputs bit-identically.
                let path = dir.path().join(format!(
                    "v{}_p{}.bin",
                    cfg.variant, cfg.pcd_levels
                ));
                stvsr::checkpoint::save(&path, &model, 7, &[]).unwrap();
                let restored =
                    stvsr::checkpoint::to_model(&stvsr::checkpoint::load(&path).unwrap()).unwrap();
                let hr2 = run(&restored);
                let bit_identical = hr.iter().zip(hr2.iter()).all(|(a, b)| {
                    a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                });
                c.check(
                    bit_identical,
                    format!("variant {}: round trip not bit-identical", cfg.variant),
                );
            }
        }
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// 5 & 6. Desk-scale overfit criteria
// ---------------------------------------------------------------------------

fn desk_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        k1: 2,
        k2: 6,
        k3: 1,
        channels: 24,
        scale: 4,
        pcd_levels: 1,
        deformable_groups: 4,
    }
}

fn desk_clips(count: usize) -> Vec<(String, Vec<Array3<f32>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = SyntheticSpec::default();
    (0..count)
        .map(|i| (format!("clip_{i}"), synthesize_clip(&mut rng, &spec)))
        .collect()
}

struct OverfitOutcome {
    step10_total: f64,
    final_total: f64,
    report: EvalReport,
}

/// Shared overfit schedule for criteria 5 and 6: identical steps, batch
/// size, learning-rate schedule and seed across variants.
fn overfit(variant: Variant, named_clips: &[(String, Vec<Array3<f32>>)], steps: u64) -> OverfitOutcome {
    let clips: Vec<Vec<Array3<f32>>> = named_clips.iter().map(|(_, f)| f.clone()).collect();
    let mut model = Model::<f32>::new(desk_config(variant), 7).unwrap();
    let tc = TrainConfig {
        total_steps: steps,
        batch_size: 2,
        lr_max: 4e-4,
        lr_min: 1e-7,
        weights: LossWeights::default(),
        degradation: DegradationSpec::Clean,
        seed: 0,
        checkpoint_interval: 0,
        augment: false,
    };
    let mut trainer = Trainer::new(&mut model, tc, clips).unwrap();
    let mut step10_total = f64::NAN;
    for s in 0..steps {
        let out = trainer.run_step().unwrap();
        if s == 9 {
            step10_total = out.metrics.total;
        }
    }
    let final_total = trainer.metrics.last().unwrap().total;
    let eval_clips = clips_from_frames(named_clips.to_vec());
    let report =
        evaluate_dataset(&Scorer::Model(&model), &eval_clips, &DegradationSpec::Clean, 0).unwrap();
    OverfitOutcome {
        step10_total,
        final_total,
        report,
    }
}

#[test]
fn criterion_5_overfit_smoke() {
    let mut c = Criterion::new(5, "guided variant overfits two synthetic clips");
    const STEPS: u64 = 500; // well under the 2000-step budget
    let named = desk_clips(2);
    let outcome = overfit(Variant::Guided, &named, STEPS);
    println!(
        "  loss: step10 {:.5} -> final {:.5} (ratio {:.3})",
        outcome.step10_total,
        outcome.final_total,
        outcome.final_total / outcome.step10_total
    );
    c.check(
        outcome.final_total < 0.5 * outcome.step10_total,
        format!(
            "final loss {:.5} not below half of step-10 loss {:.5}",
            outcome.final_total, outcome.step10_total
        ),
    );
    let eval_clips = clips_from_frames(named);
    let baseline =
        evaluate_dataset(&Scorer::Baseline, &eval_clips, &DegradationSpec::Clean, 0).unwrap();
    let margin_all = outcome.report.aggregate_psnr() - baseline.aggregate_psnr();
    let margin_mid =
        outcome.report.intermediate_frame_psnr() - baseline.intermediate_frame_psnr();
    println!(
        "  Y-PSNR: model {:.2} dB (intermediates {:.2}) vs baseline {:.2} ({:.2}); margins {:.2} / {:.2} dB",
        outcome.report.aggregate_psnr(),
        outcome.report.intermediate_frame_psnr(),
        baseline.aggregate_psnr(),
        baseline.intermediate_frame_psnr(),
        margin_all,
        margin_mid
    );
    c.check(
        margin_all >= 3.0,
        format!("overall margin {margin_all:.2} dB below 3 dB"),
    );
    c.check(
        margin_mid >= 3.0,
        format!("intermediate-frame margin {margin_mid:.2} dB below 3 dB"),
    );
    c.finish();
}

#[test]
fn criterion_6_ablation_monotonicity() {
    let mut c = Criterion::new(6, "aligned bidirectional variant beats naive blending");
    const STEPS: u64 = 400;
    let named = desk_clips(3);
    let e = overfit(Variant::Bidirectional, &named, STEPS);
    let a = overfit(Variant::NaiveInterp, &named, STEPS);
    let e_mid = e.report.intermediate_frame_psnr();
    let a_mid = a.report.intermediate_frame_psnr();
    println!(
        "  intermediate-frame Y-PSNR over the 3-clip mean: variant e {:.2} dB, variant a {:.2} dB",
        e_mid, a_mid
    );
    c.check(
        e_mid >= a_mid,
        format!("variant e ({e_mid:.2} dB) below variant a ({a_mid:.2} dB)"),
    );
    c.finish();
}

// ---------------------------------------------------------------------------
// 7. Metric correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_metric_correctness() {
    let mut c = Criterion::new(7, "metric anchors");
    let a = ndarray::Array2::<f64>::from_elem((16, 16), 0.45);
    let b = a.mapv(|v| v + 0.1);
    let p = stvsr::eval::psnr(&a, &b, 1.0).unwrap();
    c.check(
        (p - 20.0).abs() <= 1e-6,
        format!("psnr at uniform 0.1 difference: {p}"),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let img = ndarray::Array2::<f64>::from_shape_fn((24, 24), |_| rng.gen_range(0.0..1.0));
    let s = stvsr::eval::ssim(&img, &img).unwrap();
    c.check((s - 1.0).abs() < 5e-7, format!("self-SSIM {s} != 1.000000"));

    let solid = |r: f32, g: f32, b: f32| {
        let mut f = Array3::<f32>::zeros((3, 4, 4));
        f.index_axis_mut(ndarray::Axis(0), 0).fill(r);
        f.index_axis_mut(ndarray::Axis(0), 1).fill(g);
        f.index_axis_mut(ndarray::Axis(0), 2).fill(b);
        f
    };
    let y = |f: &Array3<f32>| stvsr::eval::rgb_to_y(f).unwrap()[[0, 0]];
    let black = y(&solid(0.0, 0.0, 0.0));
    c.check(black == 16.0 / 255.0, format!("black luma {black}"));
    let white = y(&solid(1.0, 1.0, 1.0));
    c.check(
        (white - 235.0 / 255.0).abs() < 1e-12,
        format!("white luma {white}"),
    );
    let green = y(&solid(0.0, 1.0, 0.0));
    c.check(
        (green - (128.553 + 16.0) / 255.0).abs() < 1e-12,
        format!("green luma {green}"),
    );
    c.finish();
}

// ---------------------------------------------------------------------------
// 8. Degradation regimes
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_degradation_regimes() {
    let mut c = Criterion::new(8, "noise statistics and jpeg quality ordering");
    // Salt-and-pepper saturation fraction on a mid-range 256x256 frame.
    let frame = Array3::from_elem((3, 256, 256), 0.5f32);
    let mut rng = stvsr::data::derive_rng(8, 0);
    let noisy = stvsr::data::degrade_noise(&frame, 0.1, 0.1, &mut rng);
    let saturated = (0..256usize)
        .flat_map(|y| (0..256usize).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            let px = [noisy[[0, y, x]], noisy[[1, y, x]], noisy[[2, y, x]]];
            px.iter().all(|v| *v == 0.0) || px.iter().all(|v| *v == 1.0)
        })
        .count();
    let frac = saturated as f64 / (256.0 * 256.0);
    println!("  salt-and-pepper saturated fraction: {frac:.4}");
    c.check(
        (0.09..=0.11).contains(&frac),
        format!("saturated fraction {frac} outside [0.09, 0.11]"),
    );

    // The eval surface accepts exactly the studied quality factors.
    for qf in [10u8, 20, 30, 40] {
        c.check(
            stvsr::eval::validate_eval_degradation(&DegradationSpec::Jpeg { quality_factor: qf })
                .is_ok(),
            format!("qf {qf} rejected"),
        );
    }
    for qf in [5u8, 15, 50, 99] {
        c.check(
            stvsr::eval::validate_eval_degradation(&DegradationSpec::Jpeg { quality_factor: qf })
                .is_err(),
            format!("qf {qf} accepted"),
        );
    }

    // Monotone mean Y-PSNR across the presets over a 20-image corpus.
    let spec = SyntheticSpec { size: 64, ..SyntheticSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let corpus: Vec<Array3<f32>> = (0..3)
        .flat_map(|_| synthesize_clip(&mut rng, &spec))
        .take(20)
        .collect();
    assert_eq!(corpus.len(), 20);
    let mean_psnr = |qf: u8| -> f64 {
        corpus
            .iter()
            .map(|f| {
                let coded = stvsr::data::degrade_jpeg(f, qf).unwrap();
                stvsr::eval::psnr(
                    &stvsr::eval::rgb_to_y(&coded).unwrap(),
                    &stvsr::eval::rgb_to_y(f).unwrap(),
                    1.0,
                )
                .unwrap()
            })
            .sum::<f64>()
            / corpus.len() as f64
    };
    let scores: Vec<f64> = [10u8, 20, 30, 40].iter().map(|qf| mean_psnr(*qf)).collect();
    println!(
        "  jpeg mean Y-PSNR: qf10 {:.2}, qf20 {:.2}, qf30 {:.2}, qf40 {:.2}",
        scores[0], scores[1], scores[2], scores[3]
    );
    for w in scores.windows(2) {
        c.check(
            w[1] > w[0],
            format!("psnr not monotone in quality: {scores:?}"),
        );
    }
    c.finish();
}

// ---------------------------------------------------------------------------
// 9. Learning-rate schedule
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_learning_rate_schedule() {
    let mut c = Criterion::new(9, "cosine annealing endpoints and monotonicity");
    let (hi, lo) = (4e-4, 1e-7);
    let total = 10_000u64;
    c.check(cosine_lr(0, total, hi, lo) == hi, "start not exactly 4e-4");
    c.check(cosine_lr(total, total, hi, lo) == lo, "end not exactly 1e-7");
    let mid = cosine_lr(total / 2, total, hi, lo);
    c.check(
        (mid - (hi + lo) / 2.0).abs() < 1e-12,
        format!("midpoint {mid} vs mean {}", (hi + lo) / 2.0),
    );
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    for step in 0..=total {
        let lr = cosine_lr(step, total, hi, lo);
        if lr > prev {
            monotone = false;
        }
        prev = lr;
    }
    c.check(monotone, "schedule not monotone non-increasing");
    c.finish();
}
