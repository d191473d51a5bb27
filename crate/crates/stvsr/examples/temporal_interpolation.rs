//! Feature temporal interpolation on its own: a hand-built module with
//! identity samplers blends two feature maps into their midpoint, and a
//! whole sequence interleaves originals with synthesized intermediates.

use ndarray::{Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvsr::graph::Graph;
use stvsr::interp::{DeformInterp, TemporalInterp};
use stvsr::nn::{Conv2d, DeformConv2d, OffsetPredictor, ParamSet};

fn identity_1x1(ps: &mut ParamSet<f64>, name: &str, c: usize, s: f64) -> ArrayD<f64> {
    let _ = (ps, name);
    Array4::from_shape_fn((c, c, 1, 1), |(o, i, _, _)| if o == i { s } else { 0.0 }).into_dyn()
}

fn main() {
    let c = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::<f64>::new();
    // Fresh offset predictors emit exactly zero offsets; with identity
    // samplers and 0.5-diagonal blends the module averages its inputs.
    let interp = TemporalInterp::Deform(Box::new(DeformInterp {
        g1: OffsetPredictor::new(&mut ps, &mut rng, "g1", c, 2, 1),
        g3: OffsetPredictor::new(&mut ps, &mut rng, "g3", c, 2, 1),
        t1: DeformConv2d {
            w: {
                let v = identity_1x1(&mut ps, "t1", c, 1.0);
                ps.add("t1.weight", v)
            },
            b: None,
            groups: 1,
        },
        t3: DeformConv2d {
            w: {
                let v = identity_1x1(&mut ps, "t3", c, 1.0);
                ps.add("t3.weight", v)
            },
            b: None,
            groups: 1,
        },
        alpha: Conv2d {
            w: {
                let v = identity_1x1(&mut ps, "alpha", c, 0.5);
                ps.add("alpha.weight", v)
            },
            b: None,
            stride: 1,
            pad: (0, 0),
        },
        beta: Conv2d {
            w: {
                let v = identity_1x1(&mut ps, "beta", c, 0.5);
                ps.add("beta.weight", v)
            },
            b: None,
            stride: 1,
            pad: (0, 0),
        },
    }));

    let mut g = Graph::<f64>::new();
    let lv = ps.inject(&mut g);
    let f1v = Array4::from_shape_fn((1, c, 6, 6), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let f3v = Array4::from_shape_fn((1, c, 6, 6), |_| rng.gen_range(-1.0..1.0)).into_dyn();
    let f1 = g.constant(f1v.clone());
    let f3 = g.constant(f3v.clone());
    let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
    let expect = (&f1v + &f3v) * 0.5;
    let max = g
        .value(out.feature)
        .iter()
        .zip(expect.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("identity construction: |blend - midpoint| max = {max:.3e}");

    // Sequence interpolation: n+1 inputs become 2n+1 interleaved maps.
    let inputs: Vec<_> = (0..4)
        .map(|_| g.constant(Array4::from_shape_fn((1, c, 6, 6), |_| rng.gen_range(-1.0..1.0)).into_dyn()))
        .collect();
    let seq = interp.interpolate_sequence(&mut g, &lv, &inputs).unwrap();
    println!(
        "sequence: {} inputs -> {} frames ({} synthesized intermediates)",
        inputs.len(),
        seq.frames.len(),
        seq.intermediates.len()
    );
    for (i, f) in seq.frames.iter().enumerate() {
        let kind = if i % 2 == 0 { "input" } else { "synthesized" };
        println!("  position {:>2}: {kind:<12} shape {:?}", i + 1, g.shape(*f));
    }
}
