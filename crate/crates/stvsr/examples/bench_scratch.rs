// Scratch dry run of the overfit protocol (temporary).
use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use stvsr::data::{synthesize_clip, DegradationSpec, SyntheticSpec};
use stvsr::eval::{clips_from_frames, evaluate_dataset, Scorer};
use stvsr::loss::LossWeights;
use stvsr::model::{Model, ModelConfig, Variant};
use stvsr::train::{TrainConfig, Trainer};

fn main() {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let channels: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = SyntheticSpec::default();
    let frames: Vec<(String, Vec<Array3<f32>>)> = (0..2)
        .map(|i| (format!("clip{i}"), synthesize_clip(&mut rng, &spec)))
        .collect();
    let clips: Vec<Vec<Array3<f32>>> = frames.iter().map(|(_, f)| f.clone()).collect();

    let cfg = ModelConfig {
        channels,
        k2: if channels >= 24 { 6 } else { 3 },
        ..ModelConfig::desk(Variant::Guided)
    };
    let mut model = Model::<f32>::new(cfg, 7).unwrap();
    println!("params={} steps={steps}", model.parameter_count());
    let tc = TrainConfig {
        total_steps: steps,
        batch_size: 2,
        augment: false,
        weights: LossWeights::default(),
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(&mut model, tc, clips).unwrap();
    let t0 = Instant::now();
    let mut step10 = f64::NAN;
    for s in 0..steps {
        let o = tr.run_step().unwrap();
        if s == 9 {
            step10 = o.metrics.total;
        }
        if s % 25 == 0 || s == steps - 1 {
            let gnorm: f64 = o.grad_norms.iter().map(|n| n * n).sum::<f64>().sqrt();
            println!(
                "step {:4} lr={:.2e} total={:.5} rec={:.5} gnorm={:.2} ({:.1}s)",
                o.metrics.step,
                o.metrics.lr,
                o.metrics.total,
                o.metrics.l_rec,
                gnorm,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    let final_total = tr.metrics.last().unwrap().total;
    println!(
        "step10={step10:.5} final={final_total:.5} ratio={:.3}",
        final_total / step10
    );

    let eval_clips = clips_from_frames(frames);
    let model_report =
        evaluate_dataset(&Scorer::Model(&model), &eval_clips, &DegradationSpec::Clean, 0).unwrap();
    let base_report =
        evaluate_dataset(&Scorer::Baseline, &eval_clips, &DegradationSpec::Clean, 0).unwrap();
    println!(
        "model: psnr={:.2} even={:.2} | baseline: psnr={:.2} even={:.2}",
        model_report.aggregate_psnr(),
        model_report.intermediate_frame_psnr(),
        base_report.aggregate_psnr(),
        base_report.intermediate_frame_psnr()
    );
    println!(
        "margins: all={:.2} dB, intermediate={:.2} dB",
        model_report.aggregate_psnr() - base_report.aggregate_psnr(),
        model_report.intermediate_frame_psnr() - base_report.intermediate_frame_psnr()
    );
}
