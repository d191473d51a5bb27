//! Training objectives: Charbonnier reconstruction loss over all output
//! frames, and the first- and second-order cyclic interpolation losses that
//! guide the feature interpolation with LR frames.

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::interp::TemporalInterp;
use crate::model::Model;
use crate::nn::Leaves;

/// Charbonnier epsilon used by every loss term.
pub const CHARBONNIER_EPS: f64 = 1e-3;

/// Weights of the combined objective. The reconstruction term must stay
/// supervised.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // The paper leaves the weights unstated; reconstruction dominates.
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.05,
        }
    }
}

impl LossWeights {
    /// Guidance disabled; used by default for noisy/compressed regimes.
    pub fn reconstruction_only() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 <= 0.0 {
            return Err(invalid("lambda1 must be positive"));
        }
        if self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Mean over frames of the per-frame Charbonnier penalty.
pub fn reconstruction_loss<E: Element>(
    g: &mut Graph<E>,
    pred_hr: &[Var],
    gt_hr: &[Var],
) -> Result<Var> {
    if pred_hr.len() != gt_hr.len() || pred_hr.is_empty() {
        return Err(invalid("reconstruction_loss: frame count mismatch"));
    }
    let terms: Vec<(Var, f64)> = pred_hr
        .iter()
        .zip(gt_hr.iter())
        .map(|(p, t)| Ok((g.charbonnier(*p, *t, CHARBONNIER_EPS)?, 1.0 / pred_hr.len() as f64)))
        .collect::<Result<_>>()?;
    g.scalar_weighted_sum(&terms)
}

/// First-order interpolation loss: synthesized intermediate features are
/// decoded to LR frames and penalized against the even-indexed LR ground
/// truth.
pub fn cyclic_loss_first_order<E: Element>(
    g: &mut Graph<E>,
    lv: &Leaves,
    model: &Model<E>,
    interp_features: &[Var],
    gt_lr_even: &[Var],
) -> Result<Var> {
    if interp_features.len() != gt_lr_even.len() || interp_features.is_empty() {
        return Err(invalid(
            "cyclic_loss_first_order: feature/frame count mismatch",
        ));
    }
    let n = interp_features.len() as f64;
    let mut terms = Vec::with_capacity(interp_features.len());
    for (f, gt) in interp_features.iter().zip(gt_lr_even.iter()) {
        let lr = model.synthesize_lr(g, lv, *f)?;
        terms.push((g.charbonnier(*gt, lr, CHARBONNIER_EPS)?, 1.0 / n));
    }
    g.scalar_weighted_sum(&terms)
}

/// Second-order cyclic loss with its degenerate-input marker.
pub struct SecondOrderLoss {
    pub value: Var,
    /// True when fewer than two intermediates exist (no pairs to
    /// re-interpolate); the value is then a constant zero.
    pub degenerate: bool,
}

/// Re-interpolates consecutive synthesized features and penalizes the
/// decoded frames against the inner odd-indexed LR ground truth.
pub fn cyclic_loss_second_order<E: Element>(
    g: &mut Graph<E>,
    lv: &Leaves,
    model: &Model<E>,
    interp: &TemporalInterp,
    interp_features: &[Var],
    gt_lr_odd_inner: &[Var],
) -> Result<SecondOrderLoss> {
    if interp_features.len() < 2 {
        let zero = g.constant(crate::graph::scalar_array(E::zero()));
        return Ok(SecondOrderLoss {
            value: zero,
            degenerate: true,
        });
    }
    if gt_lr_odd_inner.len() != interp_features.len() - 1 {
        return Err(invalid(
            "cyclic_loss_second_order: expected one ground-truth frame per feature pair",
        ));
    }
    let n = (interp_features.len() - 1) as f64;
    let mut terms = Vec::new();
    for (pair, gt) in interp_features.windows(2).zip(gt_lr_odd_inner.iter()) {
        let re = interp.interpolate_intermediate(g, lv, pair[0], pair[1])?;
        let lr = model.synthesize_lr(g, lv, re.feature)?;
        terms.push((g.charbonnier(*gt, lr, CHARBONNIER_EPS)?, 1.0 / n));
    }
    Ok(SecondOrderLoss {
        value: g.scalar_weighted_sum(&terms)?,
        degenerate: false,
    })
}

/// `lambda1 * l_rec + lambda2 * l_i1 + lambda3 * l_i2`.
pub fn total_loss<E: Element>(
    g: &mut Graph<E>,
    l_rec: Var,
    l_i1: Option<Var>,
    l_i2: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let mut terms = vec![(l_rec, weights.lambda1)];
    if let Some(v) = l_i1 {
        terms.push((v, weights.lambda2));
    }
    if let Some(v) = l_i2 {
        terms.push((v, weights.lambda3));
    }
    g.scalar_weighted_sum(&terms)
}
