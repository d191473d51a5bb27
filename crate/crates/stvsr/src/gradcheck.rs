//! Central finite-difference probes used to verify analytic gradients.
//!
//! The probes only ever evaluate a forward closure at perturbed inputs, so
//! they stay independent of the backward implementations they check.

use ndarray::ArrayD;

/// Central finite difference of a scalar function w.r.t. every element of
/// `at`, with step `h`.
pub fn central_diff<F>(mut f: F, at: &ArrayD<f64>, h: f64) -> ArrayD<f64>
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    let mut grad = ArrayD::<f64>::zeros(at.raw_dim());
    let mut work = at.clone();
    let len = at.len();
    for i in 0..len {
        let orig = work.as_slice_mut().unwrap()[i];
        work.as_slice_mut().unwrap()[i] = orig + h;
        let up = f(&work);
        work.as_slice_mut().unwrap()[i] = orig - h;
        let down = f(&work);
        work.as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Global relative error `||a - b|| / max(||a||, ||b||)`; zero when both
/// vanish.
pub fn rel_err(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel_err: shape mismatch");
    let diff: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
