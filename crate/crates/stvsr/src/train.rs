//! The optimization loop: Adam with per-batch cosine-annealed learning
//! rate, gradient clipping, deterministic seeded batch construction,
//! periodic checkpoints and a CSV metrics log.

use crate::checkpoint;
use crate::data::{
    derive_rng, make_training_sample, stack_batch, DegradationSpec, SampleOptions,
};
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::loss::{
    cyclic_loss_first_order, cyclic_loss_second_order, reconstruction_loss, total_loss,
    LossWeights,
};
use crate::model::Model;
use ndarray::{Array3, ArrayD};
use rand::Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weights: LossWeights,
    pub degradation: DegradationSpec,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 2000,
            batch_size: 4,
            lr_max: 4e-4,
            lr_min: 1e-7,
            weights: LossWeights::default(),
            degradation: DegradationSpec::Clean,
            seed: 0,
            checkpoint_interval: 500,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(invalid("total_steps must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.lr_max > self.lr_min && self.lr_min > 0.0) {
            return Err(invalid("need lr_max > lr_min > 0"));
        }
        self.weights.validate()?;
        self.degradation.validate()
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: &str| Error::InvalidConfigValue {
            key: key.to_string(),
            msg: msg.to_string(),
        };
        match key {
            "total_steps" => self.total_steps = value.parse().map_err(|_| bad("not a count"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("not a count"))?,
            "lr_max" => self.lr_max = value.parse().map_err(|_| bad("not a number"))?,
            "lr_min" => self.lr_min = value.parse().map_err(|_| bad("not a number"))?,
            "lambda1" => self.weights.lambda1 = value.parse().map_err(|_| bad("not a number"))?,
            "lambda2" => self.weights.lambda2 = value.parse().map_err(|_| bad("not a number"))?,
            "lambda3" => self.weights.lambda3 = value.parse().map_err(|_| bad("not a number"))?,
            "degradation" => self.degradation = value.parse()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("not a count"))?,
            "checkpoint_interval" => {
                self.checkpoint_interval = value.parse().map_err(|_| bad("not a count"))?
            }
            "augment" => {
                self.augment = value.parse().map_err(|_| bad("not a boolean"))?
            }
            other => return Err(Error::InvalidConfigKey(other.to_string())),
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate, evaluated per batch. The endpoints are
/// exact: step 0 gives `lr_max`, step >= total gives `lr_min`.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if step == 0 {
        return lr_max;
    }
    if step >= total {
        return lr_min;
    }
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Adam first/second moments, stored per parameter in parameter order.
pub struct AdamState {
    pub m: Vec<ArrayD<f32>>,
    pub v: Vec<ArrayD<f32>>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const GRAD_CLIP_NORM: f64 = 10.0;

impl AdamState {
    pub fn new(model: &Model<f32>) -> Self {
        let zeros: Vec<ArrayD<f32>> = model
            .params
            .iter()
            .map(|(_, v)| ArrayD::zeros(v.raw_dim()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Serializes the moments as checkpoint tensors.
    pub fn to_tensors(&self, model: &Model<f32>) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (i, (name, _)) in model.params.iter().enumerate() {
            out.push((format!("adam.m.{name}"), self.m[i].clone()));
            out.push((format!("adam.v.{name}"), self.v[i].clone()));
        }
        out
    }

    pub fn from_checkpoint(ckpt: &checkpoint::Checkpoint, model: &Model<f32>) -> Result<Self> {
        let mut state = AdamState::new(model);
        state.t = ckpt.step;
        for (name, v) in ckpt.optimizer_tensors() {
            let (kind, pname) = if let Some(p) = name.strip_prefix("adam.m.") {
                ('m', p)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                ('v', p)
            } else {
                continue;
            };
            let id = model
                .params
                .index_of(pname)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer tensor for unknown `{pname}`")))?;
            match kind {
                'm' => state.m[id.0] = v.clone(),
                _ => state.v[id.0] = v.clone(),
            }
        }
        Ok(state)
    }

    /// One Adam update over all parameters; `grads` is indexed like the
    /// parameter set, `None` meaning a zero gradient.
    pub fn update(&mut self, model: &mut Model<f32>, grads: &[Option<ArrayD<f32>>], lr: f64) {
        self.t += 1;
        let b1 = ADAM_BETA1 as f32;
        let b2 = ADAM_BETA2 as f32;
        let bc1 = 1.0 - (ADAM_BETA1).powi(self.t as i32);
        let bc2 = 1.0 - (ADAM_BETA2).powi(self.t as i32);
        // Global-norm clipping across every gradient.
        let mut sq = 0.0f64;
        for g in grads.iter().flatten() {
            for x in g.iter() {
                sq += (*x as f64) * (*x as f64);
            }
        }
        let norm = sq.sqrt();
        let clip = if norm > GRAD_CLIP_NORM {
            (GRAD_CLIP_NORM / norm) as f32
        } else {
            1.0
        };
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = model.params.value_mut(crate::nn::ParamId(i));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, g| {
                    let gc = *g * clip;
                    *m = b1 * *m + (1.0 - b1) * gc;
                    *v = b2 * *v + (1.0 - b2) * gc * gc;
                    let mhat = (*m as f64) / bc1;
                    let vhat = (*v as f64) / bc2;
                    *p -= (lr * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
                });
        }
    }
}

/// Loss values recorded for one step.
#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub l_rec: f64,
    pub l_i1: f64,
    pub l_i2: f64,
    pub total: f64,
}

/// One step's metrics plus per-parameter gradient norms (parameter order).
pub struct StepOutcome {
    pub metrics: StepMetrics,
    pub grad_norms: Vec<f64>,
}

/// Incremental trainer; drives one model over an in-memory clip set.
pub struct Trainer<'m> {
    pub model: &'m mut Model<f32>,
    pub config: TrainConfig,
    clips: Vec<Vec<Array3<f32>>>,
    pub adam: AdamState,
    pub step: u64,
    pub metrics: Vec<StepMetrics>,
}

impl<'m> Trainer<'m> {
    pub fn new(
        model: &'m mut Model<f32>,
        config: TrainConfig,
        clips: Vec<Vec<Array3<f32>>>,
    ) -> Result<Self> {
        config.validate()?;
        if clips.is_empty() {
            return Err(Error::Dataset("training needs at least one clip".into()));
        }
        let adam = AdamState::new(model);
        Ok(Trainer {
            model,
            config,
            clips,
            adam,
            step: 0,
            metrics: Vec::new(),
        })
    }

    /// Restores optimizer moments and the step counter from a checkpoint.
    pub fn resume_from(&mut self, ckpt: &checkpoint::Checkpoint) -> Result<()> {
        self.adam = AdamState::from_checkpoint(ckpt, self.model)?;
        self.step = ckpt.step;
        Ok(())
    }

    /// Runs one optimization step; deterministic given (seed, step).
    pub fn run_step(&mut self) -> Result<StepOutcome> {
        let step = self.step;
        let cfg = &self.config;
        let mut rng = derive_rng(cfg.seed, step.wrapping_add(1));
        let opts = SampleOptions {
            augment: cfg.augment,
            degradation: cfg.degradation,
        };
        let samples: Vec<crate::data::TrainingSample> = (0..cfg.batch_size)
            .map(|_| {
                let ci = rng.gen_range(0..self.clips.len());
                make_training_sample(&self.clips[ci], &mut rng, &opts)
            })
            .collect::<Result<_>>()?;

        let mut g = Graph::<f32>::new();
        let lv = self.model.inject(&mut g);
        let as_vars = |g: &mut Graph<f32>, pick: &dyn Fn(&crate::data::TrainingSample) -> &[Array3<f32>], t: usize| -> Var {
            let lists: Vec<&[Array3<f32>]> = samples.iter().map(|s| pick(s)).collect();
            let batch = stack_batch(&lists, t);
            g.constant(batch.into_dyn())
        };
        let n_in = samples[0].lr_inputs.len();
        let inputs: Vec<Var> = (0..n_in)
            .map(|t| as_vars(&mut g, &|s| &s.lr_inputs, t))
            .collect();
        let out = self.model.forward(&mut g, &lv, &inputs)?;
        let n_out = out.hr_frames.len();
        let hr_targets: Vec<Var> = (0..n_out)
            .map(|t| as_vars(&mut g, &|s| &s.hr_targets, t))
            .collect();

        let l_rec = reconstruction_loss(&mut g, &out.hr_frames, &hr_targets)?;
        let guided = self.model.config.variant.has_lr_synthesis()
            && (cfg.weights.lambda2 > 0.0 || cfg.weights.lambda3 > 0.0);
        let (l_i1, l_i2) = if guided {
            let gt_even: Vec<Var> = (0..out.interp_features.len())
                .map(|i| as_vars(&mut g, &|s| &s.lr_targets, 2 * i + 1))
                .collect();
            let l1 = cyclic_loss_first_order(
                &mut g,
                &lv,
                self.model,
                &out.interp_features,
                &gt_even,
            )?;
            let gt_odd_inner: Vec<Var> = (0..out.interp_features.len().saturating_sub(1))
                .map(|i| as_vars(&mut g, &|s| &s.lr_targets, 2 * i + 2))
                .collect();
            let l2 = cyclic_loss_second_order(
                &mut g,
                &lv,
                self.model,
                &self.model.interp,
                &out.interp_features,
                &gt_odd_inner,
            )?;
            (Some(l1), Some(l2.value))
        } else {
            (None, None)
        };
        let total = total_loss(&mut g, l_rec, l_i1, l_i2, &cfg.weights)?;

        let metrics = StepMetrics {
            step,
            lr: cosine_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min),
            l_rec: g.scalar(l_rec) as f64,
            l_i1: l_i1.map(|v| g.scalar(v) as f64).unwrap_or(0.0),
            l_i2: l_i2.map(|v| g.scalar(v) as f64).unwrap_or(0.0),
            total: g.scalar(total) as f64,
        };
        for (value, term) in [
            (metrics.l_rec, "reconstruction"),
            (metrics.l_i1, "cyclic_first_order"),
            (metrics.l_i2, "cyclic_second_order"),
            (metrics.total, "total"),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: term.to_string(),
                    step,
                });
            }
        }

        let mut grads = g.backward(total)?;
        let collected: Vec<Option<ArrayD<f32>>> = lv
            .all()
            .iter()
            .map(|v| grads.take(*v))
            .collect();
        let grad_norms: Vec<f64> = collected
            .iter()
            .map(|g| {
                g.as_ref()
                    .map(|g| g.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt())
                    .unwrap_or(0.0)
            })
            .collect();
        self.adam.update(self.model, &collected, metrics.lr);
        self.step += 1;
        self.metrics.push(metrics);
        Ok(StepOutcome {
            metrics,
            grad_norms,
        })
    }
}

/// Result of a full training run.
pub struct TrainReport {
    pub metrics: Vec<StepMetrics>,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn metrics_csv(metrics: &[StepMetrics]) -> String {
    let mut text = String::from("step,lr,l_rec,l_i1,l_i2,total\n");
    for m in metrics {
        let _ = writeln!(
            text,
            "{},{:e},{:.8},{:.8},{:.8},{:.8}",
            m.step, m.lr, m.l_rec, m.l_i1, m.l_i2, m.total
        );
    }
    text
}

/// Full training run with optional checkpoint/metrics output under
/// `out_dir`, optionally resuming from an existing checkpoint.
pub fn train(
    model: &mut Model<f32>,
    config: &TrainConfig,
    clips: Vec<Vec<Array3<f32>>>,
    out_dir: Option<&Path>,
    resume: Option<&checkpoint::Checkpoint>,
) -> Result<TrainReport> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let total = config.total_steps;
    let interval = config.checkpoint_interval;
    let mut trainer = Trainer::new(model, config.clone(), clips)?;
    if let Some(ckpt) = resume {
        trainer.resume_from(ckpt)?;
    }
    while trainer.step < total {
        trainer.run_step()?;
        let done = trainer.step;
        if let Some(dir) = out_dir {
            if interval > 0 && done % interval == 0 && done < total {
                let path = dir.join(format!("checkpoint_{done:06}.bin"));
                let opt = trainer.adam.to_tensors(trainer.model);
                checkpoint::save(&path, trainer.model, done, &opt)?;
            }
        }
    }
    let metrics = trainer.metrics.clone();
    let final_checkpoint = if let Some(dir) = out_dir {
        let path = dir.join("checkpoint_final.bin");
        let opt = trainer.adam.to_tensors(trainer.model);
        checkpoint::save(&path, trainer.model, trainer.step, &opt)?;
        std::fs::write(dir.join("metrics.csv"), metrics_csv(&metrics))?;
        Some(path)
    } else {
        None
    };
    Ok(TrainReport {
        metrics,
        final_checkpoint,
    })
}
