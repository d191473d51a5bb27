//! End-to-end inference: builds a small model, saves a checkpoint, reloads
//! it and maps 4 LR PNG frames to 7 HR PNG frames on disk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stvsr::checkpoint;
use stvsr::data::{bicubic_downsample, save_frame, synthesize_clip, SyntheticSpec};
use stvsr::model::{infer, Model, ModelConfig, Variant};

fn main() {
    let dir = std::env::temp_dir().join("stvsr_inference_example");
    std::fs::create_dir_all(dir.join("in")).unwrap();
    std::fs::create_dir_all(dir.join("out")).unwrap();

    // LR inputs: odd-indexed frames of a synthetic clip, downsampled x4.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clip = synthesize_clip(&mut rng, &SyntheticSpec::default());
    let lr: Vec<_> = clip
        .iter()
        .step_by(2)
        .map(|f| bicubic_downsample(f, 4).unwrap())
        .collect();
    for (i, f) in lr.iter().enumerate() {
        save_frame(&dir.join("in").join(format!("frame_{:02}.png", i + 1)), f).unwrap();
    }

    let config = ModelConfig::desk(Variant::Guided);
    let model = Model::<f32>::new(config, 3).unwrap();
    let ckpt_path = dir.join("model.bin");
    checkpoint::save(&ckpt_path, &model, 0, &[]).unwrap();
    let restored = checkpoint::to_model(&checkpoint::load(&ckpt_path).unwrap()).unwrap();

    let outputs = infer(&restored, &lr).unwrap();
    for (i, frame) in outputs.iter().enumerate() {
        save_frame(&dir.join("out").join(format!("out_{:03}.png", i + 1)), frame).unwrap();
    }
    println!(
        "{} LR frames ({}x{}) -> {} HR frames ({}x{})",
        lr.len(),
        lr[0].dim().2,
        lr[0].dim().1,
        outputs.len(),
        outputs[0].dim().2,
        outputs[0].dim().1
    );
    println!("inputs:  {}", dir.join("in").display());
    println!("outputs: {}", dir.join("out").display());
    println!("(an untrained model produces plausible shapes, not plausible pictures)");
}
