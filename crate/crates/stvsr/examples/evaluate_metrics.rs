//! Y-channel PSNR/SSIM scoring and a dataset-level comparison between the
//! bicubic-upsample + nearest-frame-repeat baseline and a perfect oracle.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stvsr::data::{synthesize_clip, DegradationSpec, SyntheticSpec};
use stvsr::eval::{
    clips_from_frames, evaluate_dataset, format_table, psnr, rgb_to_y, ssim, Scorer,
};

fn main() {
    // Metric anchors.
    let black = Array3::<f32>::zeros((3, 16, 16));
    let y = rgb_to_y(&black).unwrap();
    println!("luma of black = {:.6} (16/255 = {:.6})", y[[0, 0]], 16.0 / 255.0);
    let a = ndarray::Array2::<f64>::from_elem((16, 16), 0.5);
    let b = a.mapv(|v| v + 0.1);
    println!("psnr at uniform 0.1 difference = {:.4} dB", psnr(&a, &b, 1.0).unwrap());
    println!("ssim of an image with itself  = {:.6}", ssim(&a, &a).unwrap());

    // Dataset-level scoring on synthetic clips.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let spec = SyntheticSpec::default();
    let clips = clips_from_frames(
        (0..2)
            .map(|i| (format!("clip_{i}"), synthesize_clip(&mut rng, &spec)))
            .collect(),
    );
    println!("\nbicubic + nearest-frame-repeat baseline:");
    let base = evaluate_dataset(&Scorer::Baseline, &clips, &DegradationSpec::Clean, 0).unwrap();
    print!("{}", format_table(&base));
    println!("\nperfect-prediction oracle (sanity ceiling):");
    let oracle = evaluate_dataset(&Scorer::Oracle, &clips, &DegradationSpec::Clean, 0).unwrap();
    print!("{}", format_table(&oracle));
}
