//! The full one-stage network: per-frame feature extraction, temporal
//! feature interpolation, optional (deformable, optionally bidirectional)
//! ConvLSTM aggregation, sub-pixel HR reconstruction, and the LR synthesis
//! head used by guided interpolation training.

use crate::convlstm::ConvLstm;
use crate::element::Element;
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::interp::TemporalInterp;
use crate::nn::{Conv2d, Init, Leaves, ParamSet, ResBlock, LEAKY_SLOPE};
use ndarray::{Array3, Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

/// Architecture variants, ordered by capability. Each adds exactly one
/// mechanism on top of the previous one.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Variant {
    /// (a) naive convolutional feature blending, per-frame reconstruction
    NaiveInterp,
    /// (b) deformable feature interpolation, per-frame reconstruction
    DeformInterp,
    /// (c) (b) + vanilla ConvLSTM aggregation
    ConvLstm,
    /// (d) (c) with deformable state alignment
    DeformConvLstm,
    /// (e) (d) run bidirectionally
    Bidirectional,
    /// (f) (e) + LR-synthesis head for guided interpolation training
    Guided,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NaiveInterp,
        Variant::DeformInterp,
        Variant::ConvLstm,
        Variant::DeformConvLstm,
        Variant::Bidirectional,
        Variant::Guided,
    ];

    pub fn letter(&self) -> char {
        match self {
            Variant::NaiveInterp => 'a',
            Variant::DeformInterp => 'b',
            Variant::ConvLstm => 'c',
            Variant::DeformConvLstm => 'd',
            Variant::Bidirectional => 'e',
            Variant::Guided => 'f',
        }
    }

    pub fn uses_deform_interp(&self) -> bool {
        *self >= Variant::DeformInterp
    }
    pub fn uses_lstm(&self) -> bool {
        *self >= Variant::ConvLstm
    }
    pub fn uses_alignment(&self) -> bool {
        *self >= Variant::DeformConvLstm
    }
    pub fn bidirectional(&self) -> bool {
        *self >= Variant::Bidirectional
    }
    pub fn has_lr_synthesis(&self) -> bool {
        *self == Variant::Guided
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Variant::NaiveInterp),
            "b" => Ok(Variant::DeformInterp),
            "c" => Ok(Variant::ConvLstm),
            "d" => Ok(Variant::DeformConvLstm),
            "e" => Ok(Variant::Bidirectional),
            "f" => Ok(Variant::Guided),
            other => Err(invalid(format!(
                "unknown variant `{other}` (expected one of a-f)"
            ))),
        }
    }
}

/// Architecture and ablation knobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Residual units in the feature extractor.
    pub k1: usize,
    /// Residual units in the HR reconstruction trunk.
    pub k2: usize,
    /// Residual units in the LR synthesis head.
    pub k3: usize,
    /// Feature width; the ConvLSTM hidden width equals it.
    pub channels: usize,
    /// Spatial upscaling factor; fixed at 4.
    pub scale: usize,
    /// 1 = single-level offset predictors, 3 = pyramid with cascade.
    pub pcd_levels: usize,
    pub deformable_groups: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Guided,
            k1: 5,
            k2: 40,
            k3: 5,
            channels: 64,
            scale: 4,
            pcd_levels: 1,
            deformable_groups: 8,
        }
    }
}

impl ModelConfig {
    /// The flagship configuration: pyramid offset predictors enabled.
    pub fn paper() -> Self {
        ModelConfig {
            pcd_levels: 3,
            ..Default::default()
        }
    }

    /// A small configuration for CPU-scale experiments and tests.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            k1: 2,
            k2: 3,
            k3: 1,
            channels: 16,
            scale: 4,
            pcd_levels: 1,
            deformable_groups: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale != 4 {
            return Err(invalid("scale is fixed at 4"));
        }
        if self.channels == 0 {
            return Err(invalid("channels must be positive"));
        }
        if self.deformable_groups == 0 || self.channels % self.deformable_groups != 0 {
            return Err(invalid(
                "channels must be divisible by deformable_groups",
            ));
        }
        if self.pcd_levels != 1 && self.pcd_levels != 3 {
            return Err(invalid("pcd_levels must be 1 or 3"));
        }
        Ok(())
    }

    /// Spatial divisibility required of LR inputs.
    pub fn spatial_multiple(&self) -> usize {
        if self.pcd_levels == 3 {
            4
        } else {
            1
        }
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("variant".into(), self.variant.to_string()),
            ("k1".into(), self.k1.to_string()),
            ("k2".into(), self.k2.to_string()),
            ("k3".into(), self.k3.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("scale".into(), self.scale.to_string()),
            ("pcd_levels".into(), self.pcd_levels.to_string()),
            (
                "deformable_groups".into(),
                self.deformable_groups.to_string(),
            ),
        ]
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::InvalidConfigValue {
                key: key.to_string(),
                msg: format!("not a count: `{v}`"),
            })
        };
        match key {
            "variant" => self.variant = value.parse()?,
            "k1" => self.k1 = parse_usize(value)?,
            "k2" => self.k2 = parse_usize(value)?,
            "k3" => self.k3 = parse_usize(value)?,
            "channels" => self.channels = parse_usize(value)?,
            "scale" => self.scale = parse_usize(value)?,
            "pcd_levels" => self.pcd_levels = parse_usize(value)?,
            "deformable_groups" => self.deformable_groups = parse_usize(value)?,
            other => return Err(Error::InvalidConfigKey(other.to_string())),
        }
        Ok(())
    }
}

struct Extractor {
    conv_in: Conv2d,
    blocks: Vec<ResBlock>,
}

struct Recon {
    reduce: Option<Conv2d>,
    blocks: Vec<ResBlock>,
    up1: Conv2d,
    up2: Conv2d,
    hr: Conv2d,
    out: Conv2d,
}

struct Synth {
    blocks: Vec<ResBlock>,
    out: Conv2d,
}

/// Output of a full forward pass.
pub struct ModelOutput {
    /// `2n+1` HR frames for `n+1` LR inputs (unclipped values).
    pub hr_frames: Vec<Var>,
    /// The `n` synthesized intermediate LR feature maps.
    pub interp_features: Vec<Var>,
}

pub struct Model<E: Element> {
    pub config: ModelConfig,
    pub params: ParamSet<E>,
    extractor: Extractor,
    pub interp: TemporalInterp,
    pub lstm: Option<ConvLstm>,
    recon: Recon,
    synth: Option<Synth>,
}

impl<E: Element> Model<E> {
    /// Builds a model with deterministic, seed-derived initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let k = Init::Kaiming { scale: 1.0 };

        let conv_in = Conv2d::new(&mut ps, &mut rng, "extract.conv_in", 3, c, (3, 3), 1, k);
        let blocks = (0..config.k1)
            .map(|i| ResBlock::new(&mut ps, &mut rng, &format!("extract.res.{i}"), c))
            .collect();
        let extractor = Extractor { conv_in, blocks };

        let interp = if config.variant.uses_deform_interp() {
            TemporalInterp::new_deform(
                &mut ps,
                &mut rng,
                c,
                config.deformable_groups,
                config.pcd_levels,
            )
        } else {
            TemporalInterp::new_naive(&mut ps, &mut rng, c)
        };

        let lstm = config.variant.uses_lstm().then(|| {
            ConvLstm::new(
                &mut ps,
                &mut rng,
                c,
                c,
                config.variant.uses_alignment(),
                config.variant.bidirectional(),
                config.deformable_groups,
                config.pcd_levels,
            )
        });

        let recon_in = if config.variant.bidirectional() {
            2 * c
        } else {
            c
        };
        let reduce = (recon_in != c).then(|| {
            Conv2d::new(&mut ps, &mut rng, "recon.reduce", recon_in, c, (3, 3), 1, k)
        });
        let recon = Recon {
            reduce,
            blocks: (0..config.k2)
                .map(|i| ResBlock::new(&mut ps, &mut rng, &format!("recon.res.{i}"), c))
                .collect(),
            up1: Conv2d::new(&mut ps, &mut rng, "recon.up1", c, 4 * c, (3, 3), 1, k),
            up2: Conv2d::new(&mut ps, &mut rng, "recon.up2", c, 4 * c, (3, 3), 1, k),
            hr: Conv2d::new(&mut ps, &mut rng, "recon.hr", c, c, (3, 3), 1, k),
            out: Conv2d::new(&mut ps, &mut rng, "recon.out", c, 3, (3, 3), 1, k),
        };

        let synth = config.variant.has_lr_synthesis().then(|| Synth {
            blocks: (0..config.k3)
                .map(|i| ResBlock::new(&mut ps, &mut rng, &format!("lr_synth.res.{i}"), c))
                .collect(),
            out: Conv2d::new(&mut ps, &mut rng, "lr_synth.out", c, 3, (3, 3), 1, k),
        });

        Ok(Model {
            config,
            params: ps,
            extractor,
            interp,
            lstm,
            recon,
            synth,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_scalars()
    }

    /// Injects all parameters into a fresh graph as leaves.
    pub fn inject(&self, g: &mut Graph<E>) -> Leaves {
        self.params.inject(g)
    }

    /// One convolution plus `k1` residual units over one frame.
    pub fn extract_features(&self, g: &mut Graph<E>, lv: &Leaves, frame: Var) -> Result<Var> {
        let s = g.shape(frame);
        if s.len() != 4 || s[1] != 3 {
            return Err(invalid("extract_features: expected (B, 3, H, W) frame"));
        }
        let mut x = self.extractor.conv_in.forward(g, lv, frame)?;
        x = g.leaky_relu(x, LEAKY_SLOPE);
        for b in &self.extractor.blocks {
            x = b.forward(g, lv, x)?;
        }
        Ok(x)
    }

    /// `k2` residual units, two x2 sub-pixel stages and the RGB head.
    pub fn reconstruct_hr(&self, g: &mut Graph<E>, lv: &Leaves, hidden: Var) -> Result<Var> {
        let expected = if self.config.variant.bidirectional() {
            2 * self.config.channels
        } else {
            self.config.channels
        };
        if g.shape(hidden)[1] != expected {
            return Err(invalid(format!(
                "reconstruct_hr: expected {expected} channels, got {}",
                g.shape(hidden)[1]
            )));
        }
        let mut x = hidden;
        if let Some(reduce) = &self.recon.reduce {
            x = reduce.forward(g, lv, x)?;
            x = g.leaky_relu(x, LEAKY_SLOPE);
        }
        for b in &self.recon.blocks {
            x = b.forward(g, lv, x)?;
        }
        let u = self.recon.up1.forward(g, lv, x)?;
        let u = g.pixel_shuffle(u, 2)?;
        let u = g.leaky_relu(u, LEAKY_SLOPE);
        let u = self.recon.up2.forward(g, lv, u)?;
        let u = g.pixel_shuffle(u, 2)?;
        let u = g.leaky_relu(u, LEAKY_SLOPE);
        let h = self.recon.hr.forward(g, lv, u)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        self.recon.out.forward(g, lv, h)
    }

    /// `k3` residual units and a 3-channel convolution; turns a feature map
    /// back into an LR frame. Only present on the guided variant.
    pub fn synthesize_lr(&self, g: &mut Graph<E>, lv: &Leaves, feature: Var) -> Result<Var> {
        let synth = self
            .synth
            .as_ref()
            .ok_or_else(|| invalid("synthesize_lr: variant has no LR synthesis head"))?;
        if g.shape(feature)[1] != self.config.channels {
            return Err(invalid("synthesize_lr: channel mismatch"));
        }
        let mut x = feature;
        for b in &synth.blocks {
            x = b.forward(g, lv, x)?;
        }
        synth.out.forward(g, lv, x)
    }

    /// Full forward pass over `n+1` LR frames (each `(B, 3, H, W)`).
    pub fn forward(&self, g: &mut Graph<E>, lv: &Leaves, frames: &[Var]) -> Result<ModelOutput> {
        if frames.len() < 2 {
            return Err(invalid("forward: need at least 2 input frames"));
        }
        let s = g.shape(frames[0]).to_vec();
        let m = self.config.spatial_multiple();
        if s[2] % m != 0 || s[3] % m != 0 {
            return Err(invalid(format!(
                "forward: spatial dims must be divisible by {m} for pcd_levels={}",
                self.config.pcd_levels
            )));
        }
        for f in frames {
            if g.shape(*f) != s.as_slice() {
                return Err(invalid("forward: inconsistent frame shapes"));
            }
        }
        let feats: Vec<Var> = frames
            .iter()
            .map(|f| self.extract_features(g, lv, *f))
            .collect::<Result<_>>()?;
        let seq = self.interp.interpolate_sequence(g, lv, &feats)?;
        let hidden: Vec<Var> = match &self.lstm {
            Some(lstm) => lstm.run(g, lv, &seq.frames)?,
            None => seq.frames.clone(),
        };
        let hr_frames = hidden
            .iter()
            .map(|h| self.reconstruct_hr(g, lv, *h))
            .collect::<Result<_>>()?;
        Ok(ModelOutput {
            hr_frames,
            interp_features: seq.intermediates,
        })
    }
}

/// Total learnable scalar count for a configuration.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    Ok(Model::<f32>::new(*config, 0)?.parameter_count())
}

/// Runs inference on a stack of LR frames `(T, 3, H, W)`, returning
/// `2T-1` HR frames clipped to `[0, 1]`.
///
/// Sequences longer than 4 input frames are processed in clips of 4 with
/// one overlapping frame; the earlier clip's frames win at overlaps. Inputs
/// whose dims are not divisible by the required multiple are
/// replicate-padded and the outputs cropped back.
pub fn infer(model: &Model<f32>, frames: &[Array3<f32>]) -> Result<Vec<Array3<f32>>> {
    if frames.len() < 2 {
        return Err(invalid("infer: need at least 2 frames"));
    }
    let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
    for f in frames {
        if f.shape() != [3, h, w] {
            return Err(invalid("infer: inconsistent frame shapes"));
        }
    }
    let mut outputs: Vec<Option<Array3<f32>>> = vec![None; 2 * frames.len() - 1];
    let chunk = 4usize;
    let mut start = 0usize;
    while start < frames.len() - 1 {
        let end = (start + chunk).min(frames.len());
        let hr = infer_clip(model, &frames[start..end])?;
        for (i, frame) in hr.into_iter().enumerate() {
            let slot = 2 * start + i;
            if outputs[slot].is_none() {
                outputs[slot] = Some(frame);
            }
        }
        if end == frames.len() {
            break;
        }
        start = end - 1;
    }
    Ok(outputs.into_iter().map(|o| o.expect("all slots filled")).collect())
}

fn infer_clip(model: &Model<f32>, frames: &[Array3<f32>]) -> Result<Vec<Array3<f32>>> {
    let m = model.config.spatial_multiple();
    let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
    let (ph, pw) = (h.next_multiple_of(m), w.next_multiple_of(m));
    let mut g = Graph::<f32>::new();
    let lv = model.inject(&mut g);
    let vars: Vec<Var> = frames
        .iter()
        .map(|f| {
            let mut padded = Array4::<f32>::zeros((1, 3, ph, pw));
            for c in 0..3 {
                for y in 0..ph {
                    for x in 0..pw {
                        padded[[0, c, y, x]] = f[[c, y.min(h - 1), x.min(w - 1)]];
                    }
                }
            }
            g.constant(padded.into_dyn())
        })
        .collect();
    let out = model.forward(&mut g, &lv, &vars)?;
    let scale = model.config.scale;
    Ok(out
        .hr_frames
        .iter()
        .map(|v| {
            let full = g.value(*v);
            Array3::from_shape_fn((3, h * scale, w * scale), |(c, y, x)| {
                full[[0, c, y, x]].clamp(0.0, 1.0)
            })
        })
        .collect())
}

/// Converts a `(T, 3, H, W)` stack into per-frame arrays.
pub fn stack_to_frames<T: Clone + num_traits::Zero + Copy>(stack: &Array4<T>) -> Vec<Array3<T>> {
    (0..stack.shape()[0])
        .map(|t| {
            stack
                .index_axis(ndarray::Axis(0), t)
                .to_owned()
        })
        .collect()
}

/// Lifts a `(3, H, W)` frame into a single-batch graph constant.
pub fn frame_constant<E: Element>(g: &mut Graph<E>, frame: &Array3<E>) -> Var {
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let v: ArrayD<E> = frame
        .to_owned()
        .into_shape((1, c, h, w))
        .unwrap()
        .into_dyn();
    g.constant(v)
}
