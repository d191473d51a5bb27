//! Desk-scale training demo: overfits the guided variant on two synthetic
//! clips and compares the result against the bicubic + frame-repeat
//! baseline on the Y channel. Accepts an optional step count (default 120,
//! enough to watch the loss fall; a few hundred steps are needed before the
//! model overtakes the baseline).

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stvsr::data::{synthesize_clip, DegradationSpec, SyntheticSpec};
use stvsr::eval::{clips_from_frames, evaluate_dataset, Scorer};
use stvsr::model::{Model, ModelConfig, Variant};
use stvsr::train::{TrainConfig, Trainer};

fn main() {
    let steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(120);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = SyntheticSpec::default();
    let named: Vec<(String, Vec<Array3<f32>>)> = (0..2)
        .map(|i| (format!("clip_{i}"), synthesize_clip(&mut rng, &spec)))
        .collect();
    let clips: Vec<Vec<Array3<f32>>> = named.iter().map(|(_, f)| f.clone()).collect();

    let config = ModelConfig {
        channels: 24,
        k2: 6,
        ..ModelConfig::desk(Variant::Guided)
    };
    let mut model = Model::<f32>::new(config, 7).unwrap();
    println!(
        "variant {} | {} parameters | {} steps",
        config.variant,
        model.parameter_count(),
        steps
    );
    let tc = TrainConfig {
        total_steps: steps,
        batch_size: 2,
        augment: false,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&mut model, tc, clips).unwrap();
    for s in 0..steps {
        let out = trainer.run_step().unwrap();
        if s % 20 == 0 || s + 1 == steps {
            println!(
                "step {:>4}  lr {:.2e}  rec {:.5}  i1 {:.5}  i2 {:.5}  total {:.5}",
                out.metrics.step,
                out.metrics.lr,
                out.metrics.l_rec,
                out.metrics.l_i1,
                out.metrics.l_i2,
                out.metrics.total
            );
        }
    }

    let eval_clips = clips_from_frames(named);
    let ours = evaluate_dataset(&Scorer::Model(&model), &eval_clips, &DegradationSpec::Clean, 0)
        .unwrap();
    let base =
        evaluate_dataset(&Scorer::Baseline, &eval_clips, &DegradationSpec::Clean, 0).unwrap();
    println!(
        "\nY-PSNR   model {:.2} dB (intermediate frames {:.2})",
        ours.aggregate_psnr(),
        ours.intermediate_frame_psnr()
    );
    println!(
        "baseline       {:.2} dB (intermediate frames {:.2})",
        base.aggregate_psnr(),
        base.intermediate_frame_psnr()
    );
}
