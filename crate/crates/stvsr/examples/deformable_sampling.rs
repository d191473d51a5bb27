//! Deformable convolution in isolation: with zero offsets it collapses to a
//! standard convolution; with a constant offset it shifts its sampling grid,
//! here by one pixel on a horizontal ramp.

use ndarray::{Array1, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvsr::ops::{conv2d, deformable_conv2d};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array4::from_shape_fn((1, 3, 8, 8), |_| rng.gen_range(-1.0..1.0f64));
    let w = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.gen_range(-0.5..0.5f64));
    let b = Array1::from_shape_fn(4, |_| rng.gen_range(-0.1..0.1f64));

    // Zero offsets: the regular sampling grid is recovered.
    let zero_off = Array4::<f64>::zeros((1, 2 * 9 * 3, 8, 8));
    let deform = deformable_conv2d(&x.view(), &zero_off.view(), &w.view(), Some(&b), 3).unwrap();
    let standard = conv2d(&x.view(), &w.view(), Some(&b), 1, (1, 1)).unwrap();
    let max_diff = deform
        .iter()
        .zip(standard.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("zero-offset deformable vs standard convolution: max |diff| = {max_diff:.3e}");

    // A +1 horizontal offset with a 1x1 identity kernel shifts a ramp.
    let ramp = Array4::from_shape_fn((1, 1, 5, 5), |(_, _, _, x)| x as f64);
    let ident = Array4::from_elem((1, 1, 1, 1), 1.0);
    let mut shift = Array4::<f64>::zeros((1, 2, 5, 5));
    shift.index_axis_mut(ndarray::Axis(1), 1).fill(1.0);
    let moved = deformable_conv2d(&ramp.view(), &shift.view(), &ident.view(), None, 1).unwrap();
    println!("ramp f(y,x) = x sampled with (dy, dx) = (0, +1):");
    for y in 0..5 {
        let row: Vec<String> = (0..5).map(|x| format!("{:4.1}", moved[[0, 0, y, x]])).collect();
        println!("  {}", row.join(" "));
    }
    println!("interior columns advance by one; the last column falls off the zero-padded grid");
}
