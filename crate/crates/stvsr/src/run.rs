//! Run configuration (key=value files plus overrides) and the command
//! implementations behind the `stvsr` binary.

use crate::checkpoint;
use crate::data::{self, DegradationSpec, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{self, EvalClip, Scorer};
use crate::model::{Model, ModelConfig};
use crate::train::{self, TrainConfig};
use ndarray::Array3;
use std::path::Path;

/// Every key accepted in run-config files and `--set` overrides.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("variant", "architecture variant a-f"),
    ("k1", "feature-extraction residual units"),
    ("k2", "reconstruction residual units"),
    ("k3", "LR-synthesis residual units"),
    ("channels", "feature width"),
    ("scale", "spatial upscaling factor (fixed 4)"),
    ("pcd_levels", "offset predictor levels: 1 or 3"),
    ("deformable_groups", "deformable offset groups"),
    ("total_steps", "optimizer steps"),
    ("batch_size", "samples per step"),
    ("lr_max", "initial learning rate"),
    ("lr_min", "final learning rate"),
    ("lambda1", "reconstruction loss weight"),
    ("lambda2", "first-order cyclic loss weight"),
    ("lambda3", "second-order cyclic loss weight"),
    ("degradation", "input degradation: clean | noise[:sigma=S,sp=P] | jpeg:QF"),
    ("seed", "run seed; all randomness derives from it"),
    ("checkpoint_interval", "steps between checkpoints"),
    ("augment", "rotation/flip augmentation: true | false"),
];

/// Combined model + training settings for a run.
#[derive(Clone, Debug, Default)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    guidance_set_explicitly: bool,
}

impl RunSettings {
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "lambda2" || key == "lambda3" {
            self.guidance_set_explicitly = true;
        }
        match self.model.set_key(key, value) {
            Err(Error::InvalidConfigKey(_)) => self.train.set_key(key, value),
            other => other,
        }
    }

    /// Guided interpolation does not help noisy or compressed inputs, so
    /// its weights default to zero under those regimes unless the run sets
    /// them explicitly.
    pub fn resolve_guidance_default(&mut self) {
        if !self.guidance_set_explicitly
            && self.train.degradation != DegradationSpec::Clean
        {
            self.train.weights.lambda2 = 0.0;
            self.train.weights.lambda3 = 0.0;
        }
    }

    /// Parses a `key=value` config file (`#` comments, blank lines allowed).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidConfigValue {
                    key: format!("line {}", ln + 1),
                    msg: format!("expected key=value, got `{line}`"),
                });
            };
            self.set_key(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let Some((k, v)) = s.split_once('=') else {
                return Err(Error::InvalidConfigValue {
                    key: s.clone(),
                    msg: "expected KEY=VALUE".into(),
                });
            };
            self.set_key(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

fn load_split_clips(root: &Path, prefer: Split) -> Result<Vec<data::ClipRecord>> {
    let all = data::load_index(root)?;
    let preferred: Vec<_> = all.iter().filter(|c| c.split == prefer).cloned().collect();
    Ok(if preferred.is_empty() { all } else { preferred })
}

pub fn cmd_train(
    config_file: Option<&Path>,
    data_root: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    sets: &[String],
    resume: Option<&Path>,
) -> Result<()> {
    let mut settings = RunSettings::default();
    if let Some(cfg) = config_file {
        settings.apply_file(cfg)?;
    }
    settings.apply_overrides(sets)?;
    if let Some(seed) = seed {
        settings.train.seed = seed;
    }
    settings.resolve_guidance_default();
    settings.model.validate()?;
    settings.train.validate()?;

    let records = load_split_clips(data_root, Split::Train)?;
    let clips: Vec<Vec<Array3<f32>>> = records
        .iter()
        .map(data::load_clip_frames)
        .collect::<Result<_>>()?;

    let (mut model, resume_ckpt) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            if ckpt.config != settings.model {
                return Err(Error::Checkpoint(
                    "resume checkpoint configuration differs from the requested model".into(),
                ));
            }
            (checkpoint::to_model(&ckpt)?, Some(ckpt))
        }
        None => (
            Model::<f32>::new(settings.model, settings.train.seed)?,
            None,
        ),
    };
    let report = train::train(
        &mut model,
        &settings.train,
        clips,
        Some(out_dir),
        resume_ckpt.as_ref(),
    )?;
    if let Some(last) = report.metrics.last() {
        println!(
            "trained {} steps; final losses: rec={:.6} i1={:.6} i2={:.6} total={:.6}",
            last.step + 1,
            last.l_rec,
            last.l_i1,
            last.l_i2,
            last.total
        );
    }
    if let Some(path) = &report.final_checkpoint {
        println!("checkpoint: {}", path.display());
    }
    Ok(())
}

pub fn cmd_infer(checkpoint_path: &Path, input_dir: &Path, out_dir: &Path) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let model = checkpoint::to_model(&ckpt)?;
    let mut paths: Vec<_> = std::fs::read_dir(input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 input PNG frames in {}",
            input_dir.display()
        )));
    }
    let frames: Vec<Array3<f32>> = paths
        .iter()
        .map(|p| data::load_frame(p))
        .collect::<Result<_>>()?;
    let outputs = crate::model::infer(&model, &frames)?;
    std::fs::create_dir_all(out_dir)?;
    for (i, frame) in outputs.iter().enumerate() {
        data::save_frame(&out_dir.join(format!("out_{:03}.png", i + 1)), frame)?;
    }
    println!(
        "{} input frames -> {} output frames in {}",
        frames.len(),
        outputs.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(
    checkpoint_path: Option<&Path>,
    data_root: &Path,
    report_path: Option<&Path>,
    degrade: &str,
    baseline: bool,
    seed: u64,
) -> Result<()> {
    let spec: DegradationSpec = degrade.parse()?;
    eval::validate_eval_degradation(&spec)?;
    let records = load_split_clips(data_root, Split::Test)?;
    let clips: Vec<EvalClip> = records
        .iter()
        .map(|r| {
            Ok(EvalClip {
                id: r.id.clone(),
                hr_frames: data::load_clip_frames(r)?,
            })
        })
        .collect::<Result<_>>()?;
    let model;
    let scorer = if baseline {
        Scorer::Baseline
    } else {
        let Some(path) = checkpoint_path else {
            return Err(Error::InvalidArgument(
                "eval needs --checkpoint unless --baseline is given".into(),
            ));
        };
        let ckpt = checkpoint::load(path)?;
        model = checkpoint::to_model(&ckpt)?;
        Scorer::Model(&model)
    };
    let report = eval::evaluate_dataset(&scorer, &clips, &spec, seed)?;
    print!("{}", eval::format_table(&report));
    if let Some(path) = report_path {
        eval::write_report(&report, path)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

pub fn cmd_degrade(spec: &str, input_dir: &Path, out_dir: &Path, seed: u64) -> Result<()> {
    let spec: DegradationSpec = spec.parse()?;
    let mut paths: Vec<_> = std::fs::read_dir(input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!(
            "no PNG frames in {}",
            input_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rng = data::derive_rng(seed, 0xDE6);
    for p in &paths {
        let frame = data::load_frame(p)?;
        let out = spec.apply(&frame, &mut rng)?;
        data::save_frame(&out_dir.join(p.file_name().unwrap()), &out)?;
    }
    println!("degraded {} frames -> {}", paths.len(), out_dir.display());
    Ok(())
}

pub fn cmd_inspect(checkpoint_path: &Path) -> Result<()> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    println!("format_version: {}", ckpt.format_version);
    println!("step: {}", ckpt.step);
    for (k, v) in ckpt.config.to_key_values() {
        println!("config.{k}: {v}");
    }
    let mut by_module = std::collections::BTreeMap::<String, usize>::new();
    let mut total = 0usize;
    for (name, v) in ckpt.model_tensors() {
        let module = name.split('.').next().unwrap_or(name).to_string();
        *by_module.entry(module).or_insert(0) += v.len();
        total += v.len();
    }
    println!("parameters by module:");
    for (m, n) in &by_module {
        println!("  {m:<12} {n:>12}  ({:.3} M)", *n as f64 / 1e6);
    }
    println!("total parameters: {total} ({:.2} M)", total as f64 / 1e6);
    println!(
        "optimizer state: {}",
        if ckpt.has_optimizer() { "present" } else { "absent" }
    );
    Ok(())
}

pub fn cmd_make_synthetic(
    n_clips: usize,
    out_dir: &Path,
    seed: u64,
    size: usize,
    split: &str,
) -> Result<()> {
    let split: Split = split.parse()?;
    let spec = SyntheticSpec {
        size,
        ..SyntheticSpec::default()
    };
    let records = data::write_synthetic_dataset(out_dir, n_clips, seed, &spec, split)?;
    println!(
        "wrote {} synthetic clips under {}",
        records.len(),
        out_dir.display()
    );
    Ok(())
}

/// Maps library errors onto process exit codes: 2 for invalid
/// configuration/input, 3 for a non-finite training loss, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFiniteLoss { .. } => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn config_file_and_overrides_route_to_both_halves() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(
            &cfg,
            "# comment\nvariant=e\nchannels=16\n\ntotal_steps=7\nlambda2=0.2\n",
        )
        .unwrap();
        let mut s = RunSettings::default();
        s.apply_file(&cfg).unwrap();
        assert_eq!(s.model.variant, Variant::Bidirectional);
        assert_eq!(s.model.channels, 16);
        assert_eq!(s.train.total_steps, 7);
        assert!((s.train.weights.lambda2 - 0.2).abs() < 1e-12);
        s.apply_overrides(&["variant=a".into(), "batch_size=2".into()])
            .unwrap();
        assert_eq!(s.model.variant, Variant::NaiveInterp);
        assert_eq!(s.train.batch_size, 2);
        // Unknown keys name themselves.
        let err = s.set_key("warmup", "10").unwrap_err();
        assert!(matches!(err, Error::InvalidConfigKey(k) if k == "warmup"));
        // Every documented key is accepted by the router.
        let mut fresh = RunSettings::default();
        for (key, _) in CONFIG_KEYS {
            let value = match *key {
                "variant" => "f",
                "degradation" => "noise:sigma=0.1,sp=0.1",
                "lr_max" => "0.001",
                "lr_min" => "0.0000001",
                "lambda1" | "lambda2" | "lambda3" => "0.5",
                "augment" => "true",
                "scale" => "4",
                _ => "2",
            };
            fresh
                .set_key(key, value)
                .unwrap_or_else(|e| panic!("documented key `{key}` rejected: {e}"));
        }
    }

    #[test]
    fn guidance_defaults_off_for_noisy_regimes() {
        let mut s = RunSettings::default();
        s.set_key("degradation", "noise").unwrap();
        s.resolve_guidance_default();
        assert_eq!(s.train.weights.lambda2, 0.0);
        assert_eq!(s.train.weights.lambda3, 0.0);
        // Explicit settings win over the regime default.
        let mut s = RunSettings::default();
        s.set_key("degradation", "jpeg:20").unwrap();
        s.set_key("lambda2", "0.3").unwrap();
        s.resolve_guidance_default();
        assert!((s.train.weights.lambda2 - 0.3).abs() < 1e-12);
        // Clean runs keep the guided defaults.
        let mut s = RunSettings::default();
        s.resolve_guidance_default();
        assert!(s.train.weights.lambda2 > 0.0);
    }
}
