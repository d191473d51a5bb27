//! Y-channel PSNR/SSIM scoring and dataset-level evaluation, including the
//! bicubic-upsample + nearest-frame-repeat comparison baseline and the
//! machine-readable report format.

use crate::data::{bicubic_downsample, bicubic_upsample, DegradationSpec, SCALE};
use crate::error::{invalid, Result};
use crate::model::{infer, Model};
use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

/// ITU-R BT.601 studio-swing luma in `[16/255, 235/255]`.
pub fn rgb_to_y(frame: &Array3<f32>) -> Result<Array2<f64>> {
    let (c, h, w) = frame.dim();
    if c != 3 {
        return Err(invalid(format!("rgb_to_y: expected 3 channels, got {c}")));
    }
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let r = frame[[0, y, x]] as f64;
        let g = frame[[1, y, x]] as f64;
        let b = frame[[2, y, x]] as f64;
        (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    }))
}

/// Peak signal-to-noise ratio in dB; `+inf` when the images are identical.
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid("psnr: shape mismatch"));
    }
    let mse: f64 =
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1; mean over valid
/// window positions.
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    const WIN: usize = 11;
    const K1: f64 = 0.01;
    const K2: f64 = 0.03;
    if a.dim() != b.dim() {
        return Err(invalid("ssim: shape mismatch"));
    }
    let (h, w) = a.dim();
    if h < WIN || w < WIN {
        return Err(invalid(format!(
            "ssim: image {h}x{w} smaller than the {WIN}x{WIN} window"
        )));
    }
    let c1 = (K1 * 1.0f64).powi(2);
    let c2 = (K2 * 1.0f64).powi(2);
    let g = gaussian_window(WIN, 1.5);
    // Separable Gaussian filtering of the five moment maps, valid region only.
    let filter = |img: &Array2<f64>| -> Array2<f64> {
        let mut tmp = Array2::<f64>::zeros((h, w - WIN + 1));
        for y in 0..h {
            for x in 0..w - WIN + 1 {
                let mut acc = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    acc += img[[y, x + k]] * gk;
                }
                tmp[[y, x]] = acc;
            }
        }
        let mut out = Array2::<f64>::zeros((h - WIN + 1, w - WIN + 1));
        for y in 0..h - WIN + 1 {
            for x in 0..w - WIN + 1 {
                let mut acc = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    acc += tmp[[y + k, x]] * gk;
                }
                out[[y, x]] = acc;
            }
        }
        out
    };
    let mu_a = filter(a);
    let mu_b = filter(b);
    let aa = filter(&(a * a));
    let bb = filter(&(b * b));
    let ab = filter(&(a * b));
    let mut acc = 0.0;
    let mut count = 0usize;
    for ((((ma, mb), saa), sbb), sab) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(aa.iter())
        .zip(bb.iter())
        .zip(ab.iter())
    {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        let val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        acc += val;
        count += 1;
    }
    Ok(acc / count as f64)
}

/// Per-clip scores. PSNR/SSIM are means over the clip's output frames on
/// the Y channel.
#[derive(Clone, Debug)]
pub struct ClipScore {
    pub id: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
    /// Per-output-frame Y-channel PSNR, in temporal order.
    pub frame_psnr: Vec<f64>,
}

/// Dataset-level evaluation report.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub clips: Vec<ClipScore>,
    pub parameter_count: usize,
}

impl EvalReport {
    pub fn aggregate_psnr(&self) -> f64 {
        mean(self.clips.iter().map(|c| c.psnr))
    }
    pub fn aggregate_ssim(&self) -> f64 {
        mean(self.clips.iter().map(|c| c.ssim))
    }
    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.frames).sum()
    }
    pub fn total_seconds(&self) -> f64 {
        self.clips.iter().map(|c| c.seconds).sum()
    }
    pub fn seconds_per_frame(&self) -> f64 {
        let frames = self.total_frames();
        if frames == 0 {
            0.0
        } else {
            self.total_seconds() / frames as f64
        }
    }

    /// Mean Y-channel PSNR over intermediate (synthesized) output frames
    /// only, i.e. the odd 0-based positions.
    pub fn intermediate_frame_psnr(&self) -> f64 {
        let vals: Vec<f64> = self
            .clips
            .iter()
            .map(|c| {
                mean(
                    c.frame_psnr
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| i % 2 == 1)
                        .map(|(_, v)| *v),
                )
            })
            .collect();
        mean(vals.into_iter())
    }
}

fn mean(vals: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in vals {
        acc += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        acc / n as f64
    }
}

/// A clip ready for evaluation: its identifier and ground-truth HR frames.
pub struct EvalClip {
    pub id: String,
    pub hr_frames: Vec<Array3<f32>>,
}

/// How HR predictions are produced from LR inputs.
pub enum Scorer<'m> {
    Model(&'m Model<f32>),
    /// Bicubic x4 upsampling of the inputs; intermediate slots repeat the
    /// nearest earlier input frame.
    Baseline,
    /// Scores the ground truth against itself (harness oracle).
    Oracle,
}

/// Bicubic x4 downsampling for inference inputs: frames whose dimensions
/// do not divide evenly are replicate-padded first; the prediction is later
/// cropped back to the ground-truth extent.
pub fn downsample_for_inference(frame: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    let (ph, pw) = (h.next_multiple_of(SCALE), w.next_multiple_of(SCALE));
    if (ph, pw) == (h, w) {
        return bicubic_downsample(frame, SCALE).expect("divisible dims");
    }
    let padded = Array3::from_shape_fn((c, ph, pw), |(ch, y, x)| {
        frame[[ch, y.min(h - 1), x.min(w - 1)]]
    });
    bicubic_downsample(&padded, SCALE).expect("padded to divisible dims")
}

fn crop_to(frame: &Array3<f32>, h: usize, w: usize) -> Array3<f32> {
    frame.slice(ndarray::s![.., ..h, ..w]).to_owned()
}

/// Evaluates clips: builds LR inputs from odd-indexed downsampled frames,
/// optionally degrades them, predicts HR frames and scores every output
/// frame against the ground truth on the Y channel. Forward time is
/// measured around prediction only. Clips without usable ground truth
/// (fewer than 3 frames) are skipped with a warning.
pub fn evaluate_dataset(
    scorer: &Scorer,
    clips: &[EvalClip],
    degradation: &DegradationSpec,
    seed: u64,
) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(clips.len());
    for (ci, clip) in clips.iter().enumerate() {
        let t_gt = clip.hr_frames.len();
        if t_gt < 3 {
            eprintln!(
                "warning: skipping clip `{}`: {t_gt} ground-truth frames, need at least 3",
                clip.id
            );
            continue;
        }
        // Largest odd-length prefix defines the evaluation window.
        let t_used = if t_gt % 2 == 1 { t_gt } else { t_gt - 1 };
        let gt = &clip.hr_frames[..t_used];
        let (_, gh, gw) = gt[0].dim();
        let mut rng = crate::data::derive_rng(seed, 0x5EED ^ ci as u64);
        let lr_inputs: Vec<Array3<f32>> = gt
            .iter()
            .step_by(2)
            .map(|f| degradation.apply(&downsample_for_inference(f), &mut rng))
            .collect::<Result<_>>()?;
        let start = Instant::now();
        let preds: Vec<Array3<f32>> = match scorer {
            Scorer::Model(m) => infer(m, &lr_inputs)?,
            Scorer::Baseline => baseline_predict(&lr_inputs),
            Scorer::Oracle => gt.to_vec(),
        };
        let seconds = start.elapsed().as_secs_f64();
        let preds: Vec<Array3<f32>> = preds.iter().map(|p| crop_to(p, gh, gw)).collect();
        if preds.len() != t_used {
            return Err(invalid(format!(
                "scorer produced {} frames for {} ground-truth frames",
                preds.len(),
                t_used
            )));
        }
        let mut frame_psnr = Vec::with_capacity(t_used);
        let mut frame_ssim = Vec::with_capacity(t_used);
        for (p, t) in preds.iter().zip(gt.iter()) {
            let py = rgb_to_y(p)?;
            let ty = rgb_to_y(t)?;
            frame_psnr.push(psnr(&py, &ty, 1.0)?);
            frame_ssim.push(ssim(&py, &ty)?);
        }
        scores.push(ClipScore {
            id: clip.id.clone(),
            frames: t_used,
            psnr: mean(frame_psnr.iter().copied()),
            ssim: mean(frame_ssim.iter().copied()),
            seconds,
            frame_psnr,
        });
    }
    let parameter_count = match scorer {
        Scorer::Model(m) => m.parameter_count(),
        _ => 0,
    };
    Ok(EvalReport {
        clips: scores,
        parameter_count,
    })
}

/// Bicubic x4 upsample of each input; intermediate output slots repeat the
/// nearest earlier input.
pub fn baseline_predict(lr_inputs: &[Array3<f32>]) -> Vec<Array3<f32>> {
    let ups: Vec<Array3<f32>> = lr_inputs.iter().map(|f| bicubic_upsample(f, SCALE)).collect();
    let mut out = Vec::with_capacity(2 * ups.len() - 1);
    for (i, up) in ups.iter().enumerate() {
        out.push(up.clone());
        if i + 1 < ups.len() {
            out.push(up.clone());
        }
    }
    out
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse()
        .map_err(|_| invalid(format!("bad number `{s}` in report")))
}

/// Serializes a report as comma-separated lines (one per clip plus an
/// aggregate row).
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let mut text = String::from("clip,frames,psnr_db,ssim,seconds\n");
    for c in &report.clips {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            c.id,
            c.frames,
            fmt_f64(c.psnr),
            fmt_f64(c.ssim),
            fmt_f64(c.seconds)
        );
    }
    let _ = writeln!(
        text,
        "aggregate,{},{},{},{}",
        report.total_frames(),
        fmt_f64(report.aggregate_psnr()),
        fmt_f64(report.aggregate_ssim()),
        fmt_f64(report.total_seconds())
    );
    let _ = writeln!(text, "# parameters={}", report.parameter_count);
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses a report written by [`write_report`]; returns the clip rows and
/// the aggregate `(frames, psnr, ssim, seconds)` row.
pub fn parse_report(path: &Path) -> Result<(Vec<ClipScore>, (usize, f64, f64, f64))> {
    let text = std::fs::read_to_string(path)?;
    let mut clips = Vec::new();
    let mut aggregate = None;
    for line in text.lines().skip(1) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts[0] == "aggregate" {
            aggregate = Some((
                parts[1]
                    .parse::<usize>()
                    .map_err(|_| invalid("bad frame count"))?,
                parse_f64(parts[2])?,
                parse_f64(parts[3])?,
                parse_f64(parts[4])?,
            ));
        } else {
            clips.push(ClipScore {
                id: parts[0].to_string(),
                frames: parts[1]
                    .parse()
                    .map_err(|_| invalid("bad frame count"))?,
                psnr: parse_f64(parts[2])?,
                ssim: parse_f64(parts[3])?,
                seconds: parse_f64(parts[4])?,
                frame_psnr: Vec::new(),
            });
        }
    }
    let aggregate = aggregate.ok_or_else(|| invalid("report has no aggregate row"))?;
    Ok((clips, aggregate))
}

/// Human-readable table.
pub fn format_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>7} {:>10} {:>8} {:>9}", "clip", "frames", "psnr(dB)", "ssim", "secs");
    for c in &report.clips {
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:>10} {:>8} {:>9.3}",
            c.id,
            c.frames,
            if c.psnr.is_infinite() { "inf".into() } else { format!("{:.2}", c.psnr) },
            format!("{:.4}", c.ssim),
            c.seconds
        );
    }
    let _ = writeln!(
        out,
        "{:<16} {:>7} {:>10} {:>8} {:>9.3}",
        "aggregate",
        report.total_frames(),
        if report.aggregate_psnr().is_infinite() {
            "inf".into()
        } else {
            format!("{:.2}", report.aggregate_psnr())
        },
        format!("{:.4}", report.aggregate_ssim()),
        report.total_seconds()
    );
    let _ = writeln!(
        out,
        "seconds/frame: {:.4}   parameters: {}",
        report.seconds_per_frame(),
        report.parameter_count
    );
    out
}

/// Hook used by evaluation CLI: restricts JPEG degradation to the preset
/// quality factors studied for compressed inputs.
pub fn validate_eval_degradation(spec: &DegradationSpec) -> Result<()> {
    if let DegradationSpec::Jpeg { quality_factor } = spec {
        if ![10, 20, 30, 40].contains(quality_factor) {
            return Err(invalid(format!(
                "eval jpeg presets are qf in {{10, 20, 30, 40}}, got {quality_factor}"
            )));
        }
    }
    Ok(())
}

/// Seeded helper reused by tests and examples to build eval clips straight
/// from synthetic frames.
pub fn clips_from_frames(frames: Vec<(String, Vec<Array3<f32>>)>) -> Vec<EvalClip> {
    frames
        .into_iter()
        .map(|(id, hr_frames)| EvalClip { id, hr_frames })
        .collect()
}

#[allow(unused)]
fn _rng_type_check(r: &mut ChaCha8Rng) {
    let _ = r;
}
