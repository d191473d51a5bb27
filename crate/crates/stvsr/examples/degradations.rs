//! Degradation simulators: measures the salt-and-pepper saturation fraction
//! of the mixed-noise regime and the Y-channel PSNR of the JPEG round trip
//! across the studied quality factors.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stvsr::data::{degrade_jpeg, degrade_noise, synthesize_clip, SyntheticSpec};
use stvsr::eval::{psnr, rgb_to_y};

fn main() {
    // Mixed noise on a mid-gray frame: only salt-and-pepper saturates.
    let frame = Array3::from_elem((3, 256, 256), 0.5f32);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = degrade_noise(&frame, 0.1, 0.1, &mut rng);
    let (_, h, w) = noisy.dim();
    let saturated = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            let px = [noisy[[0, y, x]], noisy[[1, y, x]], noisy[[2, y, x]]];
            px.iter().all(|v| *v == 0.0) || px.iter().all(|v| *v == 1.0)
        })
        .count();
    println!(
        "mixed noise (sigma=0.1, sp=0.1): saturated pixel fraction = {:.4}",
        saturated as f64 / (h * w) as f64
    );

    // JPEG round trip across quality factors on textured frames.
    let spec = SyntheticSpec { size: 64, ..SyntheticSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<Array3<f32>> = (0..4)
        .flat_map(|_| synthesize_clip(&mut rng, &spec))
        .take(8)
        .collect();
    println!("\njpeg round trip, mean Y-channel PSNR over {} frames:", frames.len());
    for qf in [10u8, 20, 30, 40, 100] {
        let mut acc = 0.0;
        for f in &frames {
            let coded = degrade_jpeg(f, qf).unwrap();
            acc += psnr(&rgb_to_y(&coded).unwrap(), &rgb_to_y(f).unwrap(), 1.0).unwrap();
        }
        println!("  qf {qf:>3}: {:.2} dB", acc / frames.len() as f64);
    }
}
