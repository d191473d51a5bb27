//! Differentiable numeric primitives: bilinear sampling, standard and
//! deformable convolution, pixel shuffle, Charbonnier penalty, activations.
//!
//! Every forward kernel here has a matching hand-derived backward kernel;
//! both are exercised against finite differences and naive loop oracles in
//! the test suites. Convolutions are realized as im2col + GEMM so the inner
//! products go through `ndarray`'s matrix multiply.
//!
//! Conventions:
//! - feature maps are `(batch, channels, height, width)`;
//! - convolution weights are `(out_channels, in_channels, kh, kw)`;
//! - offset fields are `(batch, 2*K*G, height, width)` where `K = kh*kw`
//!   taps in row-major kernel order, `G` deformable groups (outermost), and
//!   each tap stores `(dy, dx)` in that order;
//! - sampling outside the grid contributes zero (zero padding), matching the
//!   zero-padded convolution semantics.

use crate::element::Element;
use crate::error::{invalid, Result};
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4};

/// Bilinear interpolation of one channel plane at a fractional location.
///
/// Locations outside `[0, H-1] x [0, W-1]` contribute zero. At integer
/// locations the four interpolation weights collapse onto one pixel.
pub fn bilinear_sample<E: Element>(
    feature: &ArrayView4<E>,
    y: f64,
    x: f64,
    channel: usize,
    batch: usize,
) -> E {
    let (h, w) = (feature.shape()[2], feature.shape()[3]);
    if y <= -1.0 || x <= -1.0 || y >= h as f64 || x >= w as f64 {
        return E::zero();
    }
    let y0 = y.floor() as isize;
    let x0 = x.floor() as isize;
    let dy = E::from_f64(y - y0 as f64);
    let dx = E::from_f64(x - x0 as f64);
    let one = E::one();
    let mut acc = E::zero();
    for (iy, wy) in [(y0, one - dy), (y0 + 1, dy)] {
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for (ix, wx) in [(x0, one - dx), (x0 + 1, dx)] {
            if ix < 0 || ix >= w as isize {
                continue;
            }
            acc += wy * wx * feature[[batch, channel, iy as usize, ix as usize]];
        }
    }
    acc
}

#[inline]
fn bilerp_plane<E: Element>(plane: &[E], h: usize, w: usize, py: f64, px: f64) -> E {
    if py <= -1.0 || px <= -1.0 || py >= h as f64 || px >= w as f64 {
        return E::zero();
    }
    let y0 = py.floor() as isize;
    let x0 = px.floor() as isize;
    let dy = E::from_f64(py - y0 as f64);
    let dx = E::from_f64(px - x0 as f64);
    let one = E::one();
    let mut acc = E::zero();
    for (iy, wy) in [(y0, one - dy), (y0 + 1, dy)] {
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for (ix, wx) in [(x0, one - dx), (x0 + 1, dx)] {
            if ix < 0 || ix >= w as isize {
                continue;
            }
            acc += wy * wx * plane[iy as usize * w + ix as usize];
        }
    }
    acc
}

/// Accumulates the bilinear footprint of `g` into `grad_plane` and returns
/// `(d value / d py, d value / d px)` scaled by `g`.
#[inline]
fn bilerp_backward<E: Element>(
    plane: &[E],
    grad_plane: &mut [E],
    h: usize,
    w: usize,
    py: f64,
    px: f64,
    g: E,
) -> (E, E) {
    if py <= -1.0 || px <= -1.0 || py >= h as f64 || px >= w as f64 {
        return (E::zero(), E::zero());
    }
    let y0 = py.floor() as isize;
    let x0 = px.floor() as isize;
    let dy = E::from_f64(py - y0 as f64);
    let dx = E::from_f64(px - x0 as f64);
    let one = E::one();
    let mut gy = E::zero();
    let mut gx = E::zero();
    for (iy, wy, sy) in [(y0, one - dy, -one), (y0 + 1, dy, one)] {
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for (ix, wx, sx) in [(x0, one - dx, -one), (x0 + 1, dx, one)] {
            if ix < 0 || ix >= w as isize {
                continue;
            }
            let idx = iy as usize * w + ix as usize;
            let v = plane[idx];
            grad_plane[idx] += wy * wx * g;
            gy += sy * wx * v * g;
            gx += wy * sx * v * g;
        }
    }
    (gy, gx)
}

fn check_weights<E: Element>(w: &ArrayView4<E>) -> Result<(usize, usize, usize, usize)> {
    let &[co, ci, kh, kw] = w.shape() else {
        return Err(invalid("weights must be 4-d"));
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid(format!("kernel dims must be odd, got {kh}x{kw}")));
    }
    Ok((co, ci, kh, kw))
}

/// Output spatial size of a zero-padded strided convolution.
#[inline]
fn conv_out_dim(input: usize, k: usize, pad: usize, stride: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn im2col<E: Element>(
    x: &[E],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (ph, pw): (usize, usize),
    stride: usize,
    cols: &mut Array2<E>,
) {
    let oh = conv_out_dim(h, kh, ph, stride);
    let ow = conv_out_dim(w, kw, pw, stride);
    let k = kh * kw;
    let cs = cols.as_slice_mut().unwrap();
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * k + ki * kw + kj) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - ph as isize;
                    let base = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        cs[base..base + ow].fill(E::zero());
                        continue;
                    }
                    let src = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pw as isize;
                        cs[base + ox] = if ix < 0 || ix >= w as isize {
                            E::zero()
                        } else {
                            plane[src + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<E: Element>(
    cols: &ArrayView2<E>,
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (ph, pw): (usize, usize),
    stride: usize,
    grad_x: &mut [E],
) {
    let oh = conv_out_dim(h, kh, ph, stride);
    let ow = conv_out_dim(w, kw, pw, stride);
    let k = kh * kw;
    let cs = cols.as_slice().unwrap();
    for c in 0..ci {
        let plane = &mut grad_x[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * k + ki * kw + kj) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = iy as usize * w;
                    let base = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[dst + ix as usize] += cs[base + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Standard zero-padded convolution, stride `stride`, padding `(kh/2, kw/2)`
/// scaled by `pad_same` or explicit `pad`.
pub fn conv2d<E: Element>(
    x: &ArrayView4<E>,
    weight: &ArrayView4<E>,
    bias: Option<&Array1<E>>,
    stride: usize,
    pad: (usize, usize),
) -> Result<Array4<E>> {
    let (co, ci, kh, kw) = check_weights(weight)?;
    let &[b, xc, h, w] = x.shape() else {
        return Err(invalid("input must be 4-d"));
    };
    if xc != ci {
        return Err(invalid(format!(
            "conv2d: input has {xc} channels, weights expect {ci}"
        )));
    }
    if let Some(bv) = bias {
        if bv.len() != co {
            return Err(invalid("conv2d: bias length != out channels"));
        }
    }
    let oh = conv_out_dim(h, kh, pad.0, stride);
    let ow = conv_out_dim(w, kw, pad.1, stride);
    let k = kh * kw;
    let w_mat = weight.to_shape((co, ci * k)).unwrap().to_owned();
    let mut cols = Array2::<E>::zeros((ci * k, oh * ow));
    let mut out = Array4::<E>::zeros((b, co, oh, ow));
    let xs = x.as_slice().expect("contiguous input");
    for bi in 0..b {
        im2col(
            &xs[bi * ci * h * w..(bi + 1) * ci * h * w],
            (ci, h, w),
            (kh, kw),
            pad,
            stride,
            &mut cols,
        );
        let prod = w_mat.dot(&cols);
        let mut o = out.index_axis_mut(ndarray::Axis(0), bi);
        let os = o.as_slice_mut().unwrap();
        os.copy_from_slice(prod.as_slice().unwrap());
        if let Some(bv) = bias {
            for c in 0..co {
                let beta = bv[c];
                for v in &mut os[c * oh * ow..(c + 1) * oh * ow] {
                    *v += beta;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<E: Element>(
    x: &ArrayView4<E>,
    weight: &ArrayView4<E>,
    grad_out: &ArrayView4<E>,
    stride: usize,
    pad: (usize, usize),
    has_bias: bool,
) -> (Array4<E>, Array4<E>, Option<Array1<E>>) {
    let (co, ci, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
    let k = kh * kw;
    let w_mat = weight.to_shape((co, ci * k)).unwrap().to_owned();
    let mut grad_x = Array4::<E>::zeros((b, ci, h, w));
    let mut grad_w_mat = Array2::<E>::zeros((co, ci * k));
    let mut grad_b = has_bias.then(|| Array1::<E>::zeros(co));
    let mut cols = Array2::<E>::zeros((ci * k, oh * ow));
    let xs = x.as_slice().expect("contiguous input");
    let gs = grad_out.as_slice().expect("contiguous grad");
    let gxs = grad_x.as_slice_mut().unwrap();
    for bi in 0..b {
        let g_mat =
            ArrayView2::from_shape((co, oh * ow), &gs[bi * co * oh * ow..(bi + 1) * co * oh * ow])
                .unwrap();
        // d/dweight: recompute the column matrix rather than caching it.
        im2col(
            &xs[bi * ci * h * w..(bi + 1) * ci * h * w],
            (ci, h, w),
            (kh, kw),
            pad,
            stride,
            &mut cols,
        );
        grad_w_mat = grad_w_mat + g_mat.dot(&cols.t());
        let grad_cols = w_mat.t().dot(&g_mat);
        col2im(
            &grad_cols.view(),
            (ci, h, w),
            (kh, kw),
            pad,
            stride,
            &mut gxs[bi * ci * h * w..(bi + 1) * ci * h * w],
        );
        if let Some(gb) = grad_b.as_mut() {
            for c in 0..co {
                let mut acc = E::zero();
                for v in g_mat.row(c) {
                    acc += *v;
                }
                gb[c] += acc;
            }
        }
    }
    let grad_w = grad_w_mat.into_shape((co, ci, kh, kw)).unwrap();
    (grad_x, grad_w, grad_b)
}

fn check_deformable<E: Element>(
    x: &ArrayView4<E>,
    offsets: &ArrayView4<E>,
    weight: &ArrayView4<E>,
    groups: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (co, ci, kh, kw) = check_weights(weight)?;
    let &[b, xc, h, w] = x.shape() else {
        return Err(invalid("input must be 4-d"));
    };
    if xc != ci {
        return Err(invalid("deformable_conv: channel mismatch"));
    }
    if ci % groups != 0 {
        return Err(invalid(format!(
            "deformable_conv: {ci} channels not divisible by {groups} groups"
        )));
    }
    let k = kh * kw;
    if offsets.shape() != [b, 2 * k * groups, h, w] {
        return Err(invalid(format!(
            "deformable_conv: offset shape {:?} does not match 2*K*G={} taps over {}x{}",
            offsets.shape(),
            2 * k * groups,
            h,
            w
        )));
    }
    Ok((b, ci, co, h, w, kh, kw))
}

fn deform_im2col<E: Element>(
    x: &[E],
    off: &[E],
    (ci, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    groups: usize,
    cols: &mut Array2<E>,
) {
    let k = kh * kw;
    let (ph, pw) = (kh / 2, kw / 2);
    let hw = h * w;
    let per_group = ci / groups;
    let cs = cols.as_slice_mut().unwrap();
    for g in 0..groups {
        for tap in 0..k {
            let (ki, kj) = (tap / kw, tap % kw);
            let oy_ch = ((g * k + tap) * 2) * hw;
            let ox_ch = ((g * k + tap) * 2 + 1) * hw;
            for y in 0..h {
                for xx in 0..w {
                    let p = y * w + xx;
                    let py = (y + ki) as f64 - ph as f64 + off[oy_ch + p].as_f64();
                    let px = (xx + kj) as f64 - pw as f64 + off[ox_ch + p].as_f64();
                    for cg in 0..per_group {
                        let c = g * per_group + cg;
                        cs[(c * k + tap) * hw + p] = bilerp_plane(&x[c * hw..(c + 1) * hw], h, w, py, px);
                    }
                }
            }
        }
    }
}

/// Deformable convolution (stride 1, zero padding preserving spatial dims).
///
/// For each output location `p` and kernel tap `t`, the input is sampled at
/// `p + grid(t) + offset(t, p)` with bilinear interpolation, multiplied by
/// the tap weight and summed over taps and input channels. `groups` is the
/// number of deformable offset groups; weights stay densely connected.
pub fn deformable_conv2d<E: Element>(
    x: &ArrayView4<E>,
    offsets: &ArrayView4<E>,
    weight: &ArrayView4<E>,
    bias: Option<&Array1<E>>,
    groups: usize,
) -> Result<Array4<E>> {
    let (b, ci, co, h, w, kh, kw) = check_deformable(x, offsets, weight, groups)?;
    let k = kh * kw;
    let hw = h * w;
    let w_mat = weight.to_shape((co, ci * k)).unwrap().to_owned();
    let mut cols = Array2::<E>::zeros((ci * k, hw));
    let mut out = Array4::<E>::zeros((b, co, h, w));
    let xs = x.as_slice().expect("contiguous input");
    let offs = offsets.as_slice().expect("contiguous offsets");
    let off_stride = 2 * k * groups * hw;
    for bi in 0..b {
        deform_im2col(
            &xs[bi * ci * hw..(bi + 1) * ci * hw],
            &offs[bi * off_stride..(bi + 1) * off_stride],
            (ci, h, w),
            (kh, kw),
            groups,
            &mut cols,
        );
        let prod = w_mat.dot(&cols);
        let mut o = out.index_axis_mut(ndarray::Axis(0), bi);
        let os = o.as_slice_mut().unwrap();
        os.copy_from_slice(prod.as_slice().unwrap());
        if let Some(bv) = bias {
            for c in 0..co {
                let beta = bv[c];
                for v in &mut os[c * hw..(c + 1) * hw] {
                    *v += beta;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`deformable_conv2d`] with respect to input, offsets,
/// weights and bias.
pub fn deformable_conv2d_backward<E: Element>(
    x: &ArrayView4<E>,
    offsets: &ArrayView4<E>,
    weight: &ArrayView4<E>,
    grad_out: &ArrayView4<E>,
    groups: usize,
    has_bias: bool,
) -> (Array4<E>, Array4<E>, Array4<E>, Option<Array1<E>>) {
    let (co, ci, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let k = kh * kw;
    let hw = h * w;
    let (ph, pw) = (kh / 2, kw / 2);
    let per_group = ci / groups;
    let w_mat = weight.to_shape((co, ci * k)).unwrap().to_owned();
    let mut grad_x = Array4::<E>::zeros((b, ci, h, w));
    let mut grad_off = Array4::<E>::zeros(offsets.raw_dim());
    let mut grad_w_mat = Array2::<E>::zeros((co, ci * k));
    let mut grad_b = has_bias.then(|| Array1::<E>::zeros(co));
    let mut cols = Array2::<E>::zeros((ci * k, hw));
    let xs = x.as_slice().expect("contiguous input");
    let offs = offsets.as_slice().expect("contiguous offsets");
    let gs = grad_out.as_slice().expect("contiguous grad");
    let off_stride = 2 * k * groups * hw;
    let gxs = grad_x.as_slice_mut().unwrap();
    let gos = grad_off.as_slice_mut().unwrap();
    for bi in 0..b {
        let xb = &xs[bi * ci * hw..(bi + 1) * ci * hw];
        let ob = &offs[bi * off_stride..(bi + 1) * off_stride];
        let g_mat =
            ArrayView2::from_shape((co, hw), &gs[bi * co * hw..(bi + 1) * co * hw]).unwrap();
        deform_im2col(xb, ob, (ci, h, w), (kh, kw), groups, &mut cols);
        grad_w_mat = grad_w_mat + g_mat.dot(&cols.t());
        if let Some(gb) = grad_b.as_mut() {
            for c in 0..co {
                let mut acc = E::zero();
                for v in g_mat.row(c) {
                    acc += *v;
                }
                gb[c] += acc;
            }
        }
        let grad_cols = w_mat.t().dot(&g_mat);
        let gc = grad_cols.as_slice().unwrap();
        let gxb = &mut gxs[bi * ci * hw..(bi + 1) * ci * hw];
        let gob = &mut gos[bi * off_stride..(bi + 1) * off_stride];
        for g in 0..groups {
            for tap in 0..k {
                let (ki, kj) = (tap / kw, tap % kw);
                let oy_ch = ((g * k + tap) * 2) * hw;
                let ox_ch = ((g * k + tap) * 2 + 1) * hw;
                for y in 0..h {
                    for xx in 0..w {
                        let p = y * w + xx;
                        let py = (y + ki) as f64 - ph as f64 + ob[oy_ch + p].as_f64();
                        let px = (xx + kj) as f64 - pw as f64 + ob[ox_ch + p].as_f64();
                        let mut gy = E::zero();
                        let mut gx = E::zero();
                        for cg in 0..per_group {
                            let c = g * per_group + cg;
                            let (dy, dx) = bilerp_backward(
                                &xb[c * hw..(c + 1) * hw],
                                &mut gxb[c * hw..(c + 1) * hw],
                                h,
                                w,
                                py,
                                px,
                                gc[(c * k + tap) * hw + p],
                            );
                            gy += dy;
                            gx += dx;
                        }
                        gob[oy_ch + p] += gy;
                        gob[ox_ch + p] += gx;
                    }
                }
            }
        }
    }
    let grad_w = grad_w_mat.into_shape((co, ci, kh, kw)).unwrap();
    (grad_x, grad_off, grad_w, grad_b)
}

/// Sub-pixel rearrangement: channel block `c*r^2 + dy*r + dx` of the input
/// maps to spatial phase `(dy, dx)` of output channel `c`.
pub fn pixel_shuffle<E: Element>(x: &ArrayView4<E>, r: usize) -> Result<Array4<E>> {
    let &[b, c, h, w] = x.shape() else {
        return Err(invalid("input must be 4-d"));
    };
    if r == 0 || c % (r * r) != 0 {
        return Err(invalid(format!(
            "pixel_shuffle: {c} channels not divisible by r^2={}",
            r * r
        )));
    }
    let oc = c / (r * r);
    let mut out = Array4::<E>::zeros((b, oc, h * r, w * r));
    let xs = x.as_slice().expect("contiguous input");
    let os = out.as_slice_mut().unwrap();
    let (ohw, ihw) = (h * r * w * r, h * w);
    for bi in 0..b {
        for co in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = co * r * r + dy * r + dx;
                    let src = (bi * c + ic) * ihw;
                    let dst = (bi * oc + co) * ohw;
                    for y in 0..h {
                        let orow = dst + (y * r + dy) * w * r + dx;
                        let irow = src + y * w;
                        for xx in 0..w {
                            os[orow + xx * r] = xs[irow + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<E: Element>(x: &ArrayView4<E>, r: usize) -> Result<Array4<E>> {
    let &[b, c, h, w] = x.shape() else {
        return Err(invalid("input must be 4-d"));
    };
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(invalid("pixel_unshuffle: spatial dims not divisible by r"));
    }
    let (oh, ow) = (h / r, w / r);
    let oc = c * r * r;
    let mut out = Array4::<E>::zeros((b, oc, oh, ow));
    let xs = x.as_slice().expect("contiguous input");
    let os = out.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst_c = ci * r * r + dy * r + dx;
                    let dst = (bi * oc + dst_c) * oh * ow;
                    let src = (bi * c + ci) * h * w;
                    for y in 0..oh {
                        let irow = src + (y * r + dy) * w + dx;
                        let orow = dst + y * ow;
                        for xx in 0..ow {
                            os[orow + xx] = xs[irow + xx * r];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean per-element Charbonnier penalty `mean(sqrt((a-b)^2 + eps^2))`.
pub fn charbonnier<E: Element>(pred: &ArrayView4<E>, target: &ArrayView4<E>, eps: f64) -> Result<E> {
    if pred.shape() != target.shape() {
        return Err(invalid(format!(
            "charbonnier: shape mismatch {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(invalid("charbonnier: eps must be positive"));
    }
    let e2 = E::from_f64(eps * eps);
    let mut acc = E::zero();
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = *p - *t;
        acc += (d * d + e2).sqrt();
    }
    Ok(acc / E::from_f64(pred.len() as f64))
}

/// Gradient of [`charbonnier`] with respect to `pred` (the gradient w.r.t.
/// `target` is its negation).
pub fn charbonnier_backward<E: Element>(
    pred: &ArrayView4<E>,
    target: &ArrayView4<E>,
    eps: f64,
    upstream: E,
) -> Array4<E> {
    let e2 = E::from_f64(eps * eps);
    let scale = upstream / E::from_f64(pred.len() as f64);
    let mut grad = Array4::<E>::zeros(pred.raw_dim());
    for ((gp, p), t) in grad.iter_mut().zip(pred.iter()).zip(target.iter()) {
        let d = *p - *t;
        *gp = scale * d / (d * d + e2).sqrt();
    }
    grad
}

/// Bilinear 2x spatial upsampling with half-pixel centers and edge clamping.
/// Used to lift coarse-scale offset fields and features to the next
/// pyramid level.
pub fn upsample_bilinear_x2<E: Element>(x: &ArrayView4<E>) -> Array4<E> {
    let &[b, c, h, w] = x.shape() else { unreachable!() };
    let mut out = Array4::<E>::zeros((b, c, h * 2, w * 2));
    let xs = x.as_slice().expect("contiguous input");
    let os = out.as_slice_mut().unwrap();
    let taps = |o: usize, n: usize| -> (usize, usize, f64) {
        let s = (o as f64 + 0.5) / 2.0 - 0.5;
        let i0 = s.floor();
        let frac = s - i0;
        let a = (i0.max(0.0) as usize).min(n - 1);
        let b = ((i0 + 1.0).max(0.0) as usize).min(n - 1);
        (a, b, frac)
    };
    for bc in 0..b * c {
        let src = &xs[bc * h * w..(bc + 1) * h * w];
        let dst = &mut os[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        for oy in 0..2 * h {
            let (y0, y1, fy) = taps(oy, h);
            for ox in 0..2 * w {
                let (x0, x1, fx) = taps(ox, w);
                let v00 = src[y0 * w + x0].as_f64();
                let v01 = src[y0 * w + x1].as_f64();
                let v10 = src[y1 * w + x0].as_f64();
                let v11 = src[y1 * w + x1].as_f64();
                let v = v00 * (1.0 - fy) * (1.0 - fx)
                    + v01 * (1.0 - fy) * fx
                    + v10 * fy * (1.0 - fx)
                    + v11 * fy * fx;
                dst[oy * 2 * w + ox] = E::from_f64(v);
            }
        }
    }
    out
}

/// Transpose of [`upsample_bilinear_x2`]: scatters output gradients back to
/// the coarse grid.
pub fn upsample_bilinear_x2_backward<E: Element>(grad_out: &ArrayView4<E>) -> Array4<E> {
    let &[b, c, oh, ow] = grad_out.shape() else { unreachable!() };
    let (h, w) = (oh / 2, ow / 2);
    let mut grad = Array4::<E>::zeros((b, c, h, w));
    let gs = grad_out.as_slice().expect("contiguous grad");
    let out = grad.as_slice_mut().unwrap();
    let taps = |o: usize, n: usize| -> (usize, usize, f64) {
        let s = (o as f64 + 0.5) / 2.0 - 0.5;
        let i0 = s.floor();
        let frac = s - i0;
        let a = (i0.max(0.0) as usize).min(n - 1);
        let b = ((i0 + 1.0).max(0.0) as usize).min(n - 1);
        (a, b, frac)
    };
    for bc in 0..b * c {
        let src = &gs[bc * oh * ow..(bc + 1) * oh * ow];
        let dst = &mut out[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1, fy) = taps(oy, h);
            for ox in 0..ow {
                let (x0, x1, fx) = taps(ox, w);
                let g = src[oy * ow + ox].as_f64();
                dst[y0 * w + x0] += E::from_f64(g * (1.0 - fy) * (1.0 - fx));
                dst[y0 * w + x1] += E::from_f64(g * (1.0 - fy) * fx);
                dst[y1 * w + x0] += E::from_f64(g * fy * (1.0 - fx));
                dst[y1 * w + x1] += E::from_f64(g * fy * fx);
            }
        }
    }
    grad
}
