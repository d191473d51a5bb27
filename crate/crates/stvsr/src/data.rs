//! Dataset ingestion and training-sample construction: clip index handling,
//! PNG frame I/O, antialiased bicubic rescaling, augmentation, degradation
//! simulators (mixed noise, JPEG) and a synthetic-clip generator for
//! desk-scale experiments.

use crate::error::{invalid, Error, Result};
use ndarray::{Array3, Array4};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const HR_CROP: usize = 128;
pub const SCALE: usize = 4;
pub const CLIP_LEN: usize = 7;

// ---------------------------------------------------------------------------
// Clip records and index files
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Motion {
    Fast,
    Medium,
    Slow,
    Unlabeled,
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motion::Fast => "fast",
            Motion::Medium => "medium",
            Motion::Slow => "slow",
            Motion::Unlabeled => "unlabeled",
        })
    }
}

impl FromStr for Motion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Motion::Fast),
            "medium" => Ok(Motion::Medium),
            "slow" => Ok(Motion::Slow),
            "unlabeled" => Ok(Motion::Unlabeled),
            other => Err(invalid(format!("unknown motion class `{other}`"))),
        }
    }
}

/// One clip: an ordered list of frame paths plus metadata.
#[derive(Clone, Debug)]
pub struct ClipRecord {
    pub id: String,
    pub split: Split,
    pub motion: Motion,
    pub frames: Vec<PathBuf>,
}

/// Reads `root/index.txt` (lines: `id split motion`, `#` comments) and
/// resolves each clip's frame files from `root/<split>/<id>/`.
pub fn load_index(root: &Path) -> Result<Vec<ClipRecord>> {
    let index = root.join("index.txt");
    let text = fs::read_to_string(&index)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", index.display())))?;
    let mut clips = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Dataset(format!(
                "index line {}: expected `id split motion`, got `{line}`",
                ln + 1
            )));
        }
        let id = parts[0].to_string();
        let split: Split = parts[1].parse()?;
        let motion: Motion = parts[2].parse()?;
        let dir = root.join(split.to_string()).join(&id);
        let mut frames: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::Dataset(format!("clip dir {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        frames.sort();
        if frames.len() < 2 {
            return Err(Error::Dataset(format!(
                "clip `{id}` has {} frames, need at least 2",
                frames.len()
            )));
        }
        clips.push(ClipRecord {
            id,
            split,
            motion,
            frames,
        });
    }
    if clips.is_empty() {
        return Err(Error::Dataset("index contains no clips".into()));
    }
    Ok(clips)
}

pub fn write_index(root: &Path, clips: &[ClipRecord]) -> Result<()> {
    let mut text = String::new();
    for c in clips {
        text.push_str(&format!("{} {} {}\n", c.id, c.split, c.motion));
    }
    fs::write(root.join("index.txt"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Frame I/O
// ---------------------------------------------------------------------------

/// Loads an 8-bit RGB PNG as a `(3, H, W)` array in `[0, 1]`.
pub fn load_frame(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Saves a `(3, H, W)` array in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_frame(path: &Path, frame: &Array3<f32>) -> Result<()> {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                to_u8(frame[[0, y, x]]),
                to_u8(frame[[1, y, x]]),
                to_u8(frame[[2, y, x]]),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_clip_frames(clip: &ClipRecord) -> Result<Vec<Array3<f32>>> {
    let frames: Vec<Array3<f32>> = clip
        .frames
        .iter()
        .map(|p| load_frame(p))
        .collect::<Result<_>>()?;
    let dims = frames[0].dim();
    if frames.iter().any(|f| f.dim() != dims) {
        return Err(Error::Dataset(format!(
            "clip `{}` mixes frame dimensions",
            clip.id
        )));
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Bicubic rescaling
// ---------------------------------------------------------------------------

/// The Catmull-Rom style cubic kernel with a = -0.5.
pub fn bicubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized tap positions/weights for one output sample centered at input
/// coordinate `u`, with the kernel stretched by `kernel_scale` (> 1 when
/// downscaling with antialiasing). Taps are clamped to the grid, which
/// replicates edges.
pub fn bicubic_taps(u: f64, kernel_scale: f64, input_len: usize) -> (Vec<usize>, Vec<f64>) {
    let support = 2.0 * kernel_scale;
    let lo = (u - support).ceil() as i64;
    let hi = (u + support).floor() as i64;
    let mut idx = Vec::new();
    let mut wts = Vec::new();
    let mut sum = 0.0;
    for i in lo..=hi {
        let w = bicubic_kernel((u - i as f64) / kernel_scale);
        if w == 0.0 {
            continue;
        }
        idx.push(i.clamp(0, input_len as i64 - 1) as usize);
        wts.push(w);
        sum += w;
    }
    for w in &mut wts {
        *w /= sum;
    }
    (idx, wts)
}

/// Separable bicubic resize of a `(3, H, W)` frame; antialiases when
/// downscaling. Output values are clipped to `[0, 1]`.
pub fn bicubic_resize(frame: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let plan = |n_in: usize, n_out: usize| -> Vec<(Vec<usize>, Vec<f64>)> {
        let scale = n_in as f64 / n_out as f64;
        let kernel_scale = scale.max(1.0);
        (0..n_out)
            .map(|o| {
                let u = (o as f64 + 0.5) * scale - 0.5;
                bicubic_taps(u, kernel_scale, n_in)
            })
            .collect()
    };
    let rows = plan(h, out_h);
    let cols = plan(w, out_w);
    // Vertical pass, then horizontal.
    let mut tmp = Array3::<f64>::zeros((c, out_h, w));
    for ch in 0..c {
        for (oy, (idx, wts)) in rows.iter().enumerate() {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, wt) in idx.iter().zip(wts.iter()) {
                    acc += frame[[ch, *i, x]] as f64 * wt;
                }
                tmp[[ch, oy, x]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for ch in 0..c {
        for y in 0..out_h {
            for (ox, (idx, wts)) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for (i, wt) in idx.iter().zip(wts.iter()) {
                    acc += tmp[[ch, y, *i]] * wt;
                }
                out[[ch, y, ox]] = (acc as f32).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Bicubic downsampling by an integer factor; training inputs require the
/// dimensions to divide evenly.
pub fn bicubic_downsample(frame: &Array3<f32>, factor: usize) -> Result<Array3<f32>> {
    let (_, h, w) = frame.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(invalid(format!(
            "bicubic_downsample: {h}x{w} not divisible by factor {factor}"
        )));
    }
    Ok(bicubic_resize(frame, h / factor, w / factor))
}

/// Bicubic upsampling by an integer factor (the comparison baseline).
pub fn bicubic_upsample(frame: &Array3<f32>, factor: usize) -> Array3<f32> {
    let (_, h, w) = frame.dim();
    bicubic_resize(frame, h * factor, w * factor)
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn from_quarter_turns(q: usize) -> Rotation {
        match q % 4 {
            0 => Rotation::R0,
            1 => Rotation::R90,
            2 => Rotation::R180,
            _ => Rotation::R270,
        }
    }
}

fn rotate_frame(frame: &Array3<f32>, rot: Rotation) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    match rot {
        Rotation::R0 => frame.clone(),
        // Quarter turn counter-clockwise.
        Rotation::R90 => Array3::from_shape_fn((c, w, h), |(ch, y, x)| frame[[ch, x, w - 1 - y]]),
        Rotation::R180 => {
            Array3::from_shape_fn((c, h, w), |(ch, y, x)| frame[[ch, h - 1 - y, w - 1 - x]])
        }
        Rotation::R270 => Array3::from_shape_fn((c, w, h), |(ch, y, x)| frame[[ch, h - 1 - x, y]]),
    }
}

fn hflip_frame(frame: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| frame[[ch, y, w - 1 - x]])
}

/// Applies the identical rotation-then-flip transform to every frame of a
/// sample. Quarter-turn rotations require square frames.
pub fn augment(frames: &[Array3<f32>], rot: Rotation, hflip: bool) -> Result<Vec<Array3<f32>>> {
    if matches!(rot, Rotation::R90 | Rotation::R270) {
        for f in frames {
            let (_, h, w) = f.dim();
            if h != w {
                return Err(invalid("augment: quarter-turn rotation needs square frames"));
            }
        }
    }
    Ok(frames
        .iter()
        .map(|f| {
            let r = rotate_frame(f, rot);
            if hflip {
                hflip_frame(&r)
            } else {
                r
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Degradations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum DegradationSpec {
    Clean,
    /// Zero-mean Gaussian noise followed by salt-and-pepper saturation of a
    /// pixel fraction (a saturated pixel has all channels set to 0 or 1).
    MixedNoise { gaussian_sigma: f64, sp_ratio: f64 },
    /// Baseline JPEG round trip at the given quality factor.
    Jpeg { quality_factor: u8 },
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec::Clean
    }
}

impl DegradationSpec {
    pub fn noise_default() -> Self {
        DegradationSpec::MixedNoise {
            gaussian_sigma: 0.1,
            sp_ratio: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DegradationSpec::Clean => Ok(()),
            DegradationSpec::MixedNoise {
                gaussian_sigma,
                sp_ratio,
            } => {
                if *gaussian_sigma < 0.0 {
                    return Err(invalid("noise sigma must be non-negative"));
                }
                if !(0.0..=1.0).contains(sp_ratio) {
                    return Err(invalid("salt-and-pepper ratio must lie in [0, 1]"));
                }
                Ok(())
            }
            DegradationSpec::Jpeg { quality_factor } => {
                if !(1..=100).contains(quality_factor) {
                    return Err(invalid("jpeg quality factor must lie in [1, 100]"));
                }
                Ok(())
            }
        }
    }

    /// Applies the degradation to one LR frame.
    pub fn apply(&self, frame: &Array3<f32>, rng: &mut ChaCha8Rng) -> Result<Array3<f32>> {
        match self {
            DegradationSpec::Clean => Ok(frame.clone()),
            DegradationSpec::MixedNoise {
                gaussian_sigma,
                sp_ratio,
            } => Ok(degrade_noise(frame, *gaussian_sigma, *sp_ratio, rng)),
            DegradationSpec::Jpeg { quality_factor } => degrade_jpeg(frame, *quality_factor),
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradationSpec::Clean => write!(f, "clean"),
            DegradationSpec::MixedNoise {
                gaussian_sigma,
                sp_ratio,
            } => write!(f, "noise:sigma={gaussian_sigma},sp={sp_ratio}"),
            DegradationSpec::Jpeg { quality_factor } => write!(f, "jpeg:qf={quality_factor}"),
        }
    }
}

impl FromStr for DegradationSpec {
    type Err = Error;

    /// Mini-grammar `kind[:k=v,...]` with kinds `clean`, `noise`, `jpeg`.
    /// `jpeg:20` is shorthand for `jpeg:qf=20`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        let spec = match kind {
            "clean" => {
                if rest.is_some() {
                    return Err(invalid("degradation `clean` takes no options"));
                }
                DegradationSpec::Clean
            }
            "noise" => {
                let mut sigma = 0.1;
                let mut sp = 0.1;
                if let Some(rest) = rest {
                    for kv in rest.split(',') {
                        let Some((k, v)) = kv.split_once('=') else {
                            return Err(invalid(format!("malformed noise option `{kv}`")));
                        };
                        let val: f64 = v
                            .parse()
                            .map_err(|_| invalid(format!("bad value in `{kv}`")))?;
                        match k {
                            "sigma" => sigma = val,
                            "sp" => sp = val,
                            other => {
                                return Err(invalid(format!("unknown noise option `{other}`")))
                            }
                        }
                    }
                }
                DegradationSpec::MixedNoise {
                    gaussian_sigma: sigma,
                    sp_ratio: sp,
                }
            }
            "jpeg" => {
                let Some(rest) = rest else {
                    return Err(invalid("jpeg degradation needs a quality factor"));
                };
                let v = rest.strip_prefix("qf=").unwrap_or(rest);
                let qf: u8 = v
                    .parse()
                    .map_err(|_| invalid(format!("bad jpeg quality `{rest}`")))?;
                DegradationSpec::Jpeg { quality_factor: qf }
            }
            other => return Err(invalid(format!("unknown degradation kind `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Gaussian noise then per-pixel salt-and-pepper saturation; clips to
/// `[0, 1]`.
pub fn degrade_noise(
    frame: &Array3<f32>,
    sigma: f64,
    sp_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let mut out = frame.clone();
    if sigma > 0.0 {
        for v in out.iter_mut() {
            *v = (*v + (gaussian(rng) * sigma) as f32).clamp(0.0, 1.0);
        }
    }
    if sp_ratio > 0.0 {
        for y in 0..h {
            for x in 0..w {
                if rng.gen::<f64>() < sp_ratio {
                    let value = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                    for ch in 0..c {
                        out[[ch, y, x]] = value;
                    }
                }
            }
        }
    }
    out
}

/// Standard-normal draw via Box-Muller, so the only RNG dependency is the
/// seeded uniform stream.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Baseline JPEG encode/decode round trip at the given quality factor.
pub fn degrade_jpeg(frame: &Array3<f32>, quality_factor: u8) -> Result<Array3<f32>> {
    if !(1..=100).contains(&quality_factor) {
        return Err(invalid("jpeg quality factor must lie in [1, 100]"));
    }
    let (_, h, w) = frame.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    to_u8(frame[[0, y, x]]),
                    to_u8(frame[[1, y, x]]),
                    to_u8(frame[[2, y, x]]),
                ]),
            );
        }
    }
    let mut buf = Vec::new();
    let mut enc =
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality_factor);
    enc.encode_image(&img)?;
    let decoded = image::load_from_memory(&buf)?.to_rgb8();
    let mut out = Array3::<f32>::zeros((3, h, w));
    for (x, y, p) in decoded.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training samples
// ---------------------------------------------------------------------------

/// One training sample: odd-indexed degraded LR inputs, clean HR targets and
/// clean LR targets for the cyclic losses.
pub struct TrainingSample {
    /// 4 frames, `(3, 32, 32)` each.
    pub lr_inputs: Vec<Array3<f32>>,
    /// 7 frames, `(3, 128, 128)` each.
    pub hr_targets: Vec<Array3<f32>>,
    /// 7 frames, `(3, 32, 32)` each.
    pub lr_targets: Vec<Array3<f32>>,
}

pub struct SampleOptions {
    pub augment: bool,
    pub degradation: DegradationSpec,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            augment: true,
            degradation: DegradationSpec::Clean,
        }
    }
}

/// Builds one sample from a 7-frame clip: a shared random 128x128 HR crop,
/// shared augmentation, bicubic x4 downsampling, odd-index input selection
/// and input-only degradation.
pub fn make_training_sample(
    clip_frames: &[Array3<f32>],
    rng: &mut ChaCha8Rng,
    opts: &SampleOptions,
) -> Result<TrainingSample> {
    if clip_frames.len() != CLIP_LEN {
        return Err(invalid(format!(
            "make_training_sample: clip has {} frames, need {CLIP_LEN}",
            clip_frames.len()
        )));
    }
    let (_, h, w) = clip_frames[0].dim();
    if h < HR_CROP || w < HR_CROP {
        return Err(invalid(format!(
            "make_training_sample: frames {h}x{w} smaller than the {HR_CROP} crop"
        )));
    }
    let y0 = rng.gen_range(0..=h - HR_CROP);
    let x0 = rng.gen_range(0..=w - HR_CROP);
    let mut crops: Vec<Array3<f32>> = clip_frames
        .iter()
        .map(|f| {
            f.slice(ndarray::s![.., y0..y0 + HR_CROP, x0..x0 + HR_CROP])
                .to_owned()
        })
        .collect();
    if opts.augment {
        let rot = Rotation::from_quarter_turns(rng.gen_range(0..4usize));
        let flip = rng.gen::<bool>();
        crops = augment(&crops, rot, flip)?;
    }
    let lr_targets: Vec<Array3<f32>> = crops
        .iter()
        .map(|f| bicubic_downsample(f, SCALE))
        .collect::<Result<_>>()?;
    let lr_inputs: Vec<Array3<f32>> = lr_targets
        .iter()
        .step_by(2)
        .map(|f| opts.degradation.apply(f, rng))
        .collect::<Result<_>>()?;
    Ok(TrainingSample {
        lr_inputs,
        hr_targets: crops,
        lr_targets,
    })
}

/// Stacks per-sample frame lists into per-timestep batch arrays
/// `(B, 3, H, W)`.
pub fn stack_batch(samples: &[&[Array3<f32>]], t: usize) -> Array4<f32> {
    let (c, h, w) = samples[0][t].dim();
    let mut out = Array4::<f32>::zeros((samples.len(), c, h, w));
    for (b, s) in samples.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), b).assign(&s[t]);
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic clips
// ---------------------------------------------------------------------------

/// Parameters of the synthetic moving-rectangle generator.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub size: usize,
    pub frame_count: usize,
    pub rect_count: usize,
    /// Speed range in HR pixels per frame.
    pub min_speed: f64,
    pub max_speed: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            size: HR_CROP,
            frame_count: CLIP_LEN,
            rect_count: 4,
            min_speed: 3.0,
            max_speed: 6.0,
        }
    }
}

struct MovingRect {
    cy: f64,
    cx: f64,
    vy: f64,
    vx: f64,
    half_h: f64,
    half_w: f64,
    /// Mosaic cell size in pixels.
    cell: f64,
    tex_seed: u64,
}

/// Deterministic per-cell value in [0.1, 0.9].
fn mosaic_value(seed: u64, iy: i64, ix: i64, channel: usize) -> f64 {
    let mut h = seed
        ^ (iy as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (ix as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (channel as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    0.1 + 0.8 * (h % 10_000) as f64 / 10_000.0
}

/// Generates one clip of mosaic-textured rectangles translating at constant
/// subpixel velocities over a smooth, slowly drifting background. The
/// mosaic cells have sharp borders that x4 bicubic downsampling cannot
/// preserve, while staying large enough to remain identifiable in the LR
/// frames.
pub fn synthesize_clip(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<Array3<f32>> {
    let s = spec.size as f64;
    let tau = std::f64::consts::TAU;
    let bg_period = rng.gen_range(0.6..1.4);
    let (bfy, bfx) = (tau / s * bg_period, tau / s * rng.gen_range(0.6..1.4));
    let bg_speed = rng.gen_range(0.8..1.6);
    let bg_dir = rng.gen_range(0.0..tau);
    let (bvy, bvx) = (bg_speed * bg_dir.sin(), bg_speed * bg_dir.cos());
    let bg_phase: [f64; 3] = [
        rng.gen_range(0.0..tau),
        rng.gen_range(0.0..tau),
        rng.gen_range(0.0..tau),
    ];
    let rects: Vec<MovingRect> = (0..spec.rect_count)
        .map(|_| {
            let speed = rng.gen_range(spec.min_speed..=spec.max_speed);
            let angle = rng.gen_range(0.0..tau);
            MovingRect {
                cy: rng.gen_range(0.25 * s..0.75 * s),
                cx: rng.gen_range(0.25 * s..0.75 * s),
                vy: speed * angle.sin(),
                vx: speed * angle.cos(),
                half_h: rng.gen_range(14.0..26.0),
                half_w: rng.gen_range(14.0..26.0),
                cell: rng.gen_range(6.0..12.0),
                tex_seed: rng.gen(),
            }
        })
        .collect();
    (0..spec.frame_count)
        .map(|t| {
            let t = t as f64;
            Array3::from_shape_fn((3, spec.size, spec.size), |(c, y, x)| {
                let (yf, xf) = (y as f64, x as f64);
                let (by, bx) = (yf - bvy * t, xf - bvx * t);
                let mut v = 0.5
                    + 0.25 * (bfy * by + bg_phase[c]).sin()
                    + 0.15 * (bfx * bx + 1.7 * bg_phase[c]).cos();
                for r in &rects {
                    let cy = r.cy + r.vy * t;
                    let cx = r.cx + r.vx * t;
                    // Soft 1px coverage edge keeps rectangle borders
                    // antialiased at subpixel positions.
                    let dy = r.half_h - (yf - cy).abs();
                    let dx = r.half_w - (xf - cx).abs();
                    let cov = dy.min(dx).clamp(0.0, 1.0);
                    if cov > 0.0 {
                        // Rect-local mosaic, rigidly attached to the motion.
                        let u = (yf - cy + r.half_h) / r.cell;
                        let w = (xf - cx + r.half_w) / r.cell;
                        let tex = mosaic_value(r.tex_seed, u.floor() as i64, w.floor() as i64, c);
                        v = v * (1.0 - cov) + tex * cov;
                    }
                }
                v.clamp(0.02, 0.98) as f32
            })
        })
        .collect()
}

/// Writes `n_clips` synthetic clips plus the index file under `root`.
pub fn write_synthetic_dataset(
    root: &Path,
    n_clips: usize,
    seed: u64,
    spec: &SyntheticSpec,
    split: Split,
) -> Result<Vec<ClipRecord>> {
    fs::create_dir_all(root)?;
    let mut records = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let id = format!("clip_{:04}", i + 1);
        let dir = root.join(split.to_string()).join(&id);
        fs::create_dir_all(&dir)?;
        let frames = synthesize_clip(&mut rng, spec);
        let mut paths = Vec::with_capacity(frames.len());
        for (t, frame) in frames.iter().enumerate() {
            let path = dir.join(format!("frame_{:02}.png", t + 1));
            save_frame(&path, frame)?;
            paths.push(path);
        }
        records.push(ClipRecord {
            id,
            split,
            motion: Motion::Medium,
            frames: paths,
        });
    }
    // Keep any clips already present in the index.
    let existing = load_index(root).ok();
    let mut all = existing.unwrap_or_default();
    all.retain(|c| !records.iter().any(|r| r.id == c.id && r.split == c.split));
    all.extend(records.iter().cloned());
    write_index(root, &all)?;
    Ok(records)
}

/// Derives a per-purpose RNG from a base seed; keeps every random decision
/// attributable to the single run seed.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let _ = rng.next_u64();
    rng
}
