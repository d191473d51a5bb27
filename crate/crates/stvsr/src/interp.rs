//! Temporal feature interpolation: synthesizes the missing intermediate
//! frame feature from its two neighbors, either by learned deformable
//! sampling with a linear 1x1 blend, or by a naive convolutional blend (the
//! ablation baseline).

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, DeformConv2d, Init, Leaves, OffsetPredictor, ParamSet, LEAKY_SLOPE};
use rand_chacha::ChaCha8Rng;

/// Deformable interpolation parameters: two offset predictors (independent
/// parameters, same architecture), two deformable samplers and a 1x1 blend.
pub struct DeformInterp {
    pub g1: OffsetPredictor,
    pub g3: OffsetPredictor,
    pub t1: DeformConv2d,
    pub t3: DeformConv2d,
    pub alpha: Conv2d,
    pub beta: Conv2d,
}

pub enum TemporalInterp {
    /// Concatenate both neighbors and blend with two plain convolutions.
    Naive { conv1: Conv2d, conv2: Conv2d },
    Deform(Box<DeformInterp>),
}

/// Result of one intermediate synthesis, with the offset fields exposed for
/// diagnostics and conditioning checks.
pub struct InterpOutput {
    pub feature: Var,
    pub offsets_fwd: Option<Var>,
    pub offsets_bwd: Option<Var>,
}

/// Result of interpolating a whole sequence.
pub struct SequenceOutput {
    /// `[F_1, F_2, ..., F_{2n+1}]`: originals at odd 1-indexed positions,
    /// synthesized maps at even positions.
    pub frames: Vec<Var>,
    /// The `n` synthesized intermediates, in temporal order.
    pub intermediates: Vec<Var>,
}

impl TemporalInterp {
    pub fn new_naive<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        channels: usize,
    ) -> Self {
        TemporalInterp::Naive {
            conv1: Conv2d::new(
                ps,
                rng,
                "interp.naive.conv1",
                2 * channels,
                channels,
                (3, 3),
                1,
                Init::Kaiming { scale: 1.0 },
            ),
            conv2: Conv2d::new(
                ps,
                rng,
                "interp.naive.conv2",
                channels,
                channels,
                (3, 3),
                1,
                Init::Kaiming { scale: 1.0 },
            ),
        }
    }

    pub fn new_deform<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        channels: usize,
        deformable_groups: usize,
        pcd_levels: usize,
    ) -> Self {
        let offset_channels = 2 * 9 * deformable_groups;
        TemporalInterp::Deform(Box::new(DeformInterp {
            g1: OffsetPredictor::new(ps, rng, "interp.g1", channels, offset_channels, pcd_levels),
            g3: OffsetPredictor::new(ps, rng, "interp.g3", channels, offset_channels, pcd_levels),
            t1: DeformConv2d::new(ps, rng, "interp.t1", channels, channels, 3, deformable_groups),
            t3: DeformConv2d::new(ps, rng, "interp.t3", channels, channels, 3, deformable_groups),
            alpha: Conv2d::new(
                ps,
                rng,
                "interp.alpha",
                channels,
                channels,
                (1, 1),
                1,
                Init::Kaiming { scale: 1.0 },
            ),
            beta: Conv2d::new(
                ps,
                rng,
                "interp.beta",
                channels,
                channels,
                (1, 1),
                1,
                Init::Kaiming { scale: 1.0 },
            ),
        }))
    }

    /// Synthesizes the feature map between `f1` and `f3`.
    pub fn interpolate_intermediate<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        f1: Var,
        f3: Var,
    ) -> Result<InterpOutput> {
        if g.shape(f1) != g.shape(f3) {
            return Err(invalid("interpolate_intermediate: shape mismatch"));
        }
        match self {
            TemporalInterp::Naive { conv1, conv2 } => {
                let cat = g.concat_channels(&[f1, f3])?;
                let x = conv1.forward(g, lv, cat)?;
                let x = g.leaky_relu(x, LEAKY_SLOPE);
                let feature = conv2.forward(g, lv, x)?;
                Ok(InterpOutput {
                    feature,
                    offsets_fwd: None,
                    offsets_bwd: None,
                })
            }
            TemporalInterp::Deform(d) => {
                let off1 = d.g1.forward(g, lv, f1, f3)?;
                let off3 = d.g3.forward(g, lv, f3, f1)?;
                let s1 = d.t1.forward(g, lv, f1, off1)?;
                let s3 = d.t3.forward(g, lv, f3, off3)?;
                let a = d.alpha.forward(g, lv, s1)?;
                let b = d.beta.forward(g, lv, s3)?;
                let feature = g.add(a, b)?;
                Ok(InterpOutput {
                    feature,
                    offsets_fwd: Some(off1),
                    offsets_bwd: Some(off3),
                })
            }
        }
    }

    /// Interleaves `n+1` input features with `n` synthesized intermediates.
    pub fn interpolate_sequence<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        features: &[Var],
    ) -> Result<SequenceOutput> {
        if features.len() < 2 {
            return Err(invalid(
                "interpolate_sequence: need at least 2 input features",
            ));
        }
        let mut frames = Vec::with_capacity(2 * features.len() - 1);
        let mut intermediates = Vec::with_capacity(features.len() - 1);
        for (i, pair) in features.windows(2).enumerate() {
            frames.push(pair[0]);
            let mid = self.interpolate_intermediate(g, lv, pair[0], pair[1])?;
            frames.push(mid.feature);
            intermediates.push(mid.feature);
            if i == features.len() - 2 {
                frames.push(pair[1]);
            }
        }
        Ok(SequenceOutput {
            frames,
            intermediates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, rel_err};
    use crate::graph::Graph;
    use crate::nn::{Conv2d, DeformConv2d, OffsetPredictor, ParamSet};
    use ndarray::{Array4, ArrayD};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ArrayD<f64> {
        Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0)).into_dyn()
    }

    fn scaled_identity_1x1(c: usize, s: f64) -> ArrayD<f64> {
        Array4::from_shape_fn((c, c, 1, 1), |(o, i, _, _)| if o == i { s } else { 0.0 }).into_dyn()
    }

    /// Deformable interpolation with 1x1 identity samplers, zero-offset
    /// predictors (fresh heads) and diagonal 1x1 blends.
    fn identity_interp(ps: &mut ParamSet<f64>, c: usize, ab: (f64, f64)) -> TemporalInterp {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        TemporalInterp::Deform(Box::new(DeformInterp {
            g1: OffsetPredictor::new(ps, &mut rng, "interp.g1", c, 2, 1),
            g3: OffsetPredictor::new(ps, &mut rng, "interp.g3", c, 2, 1),
            t1: DeformConv2d {
                w: ps.add("interp.t1.weight", scaled_identity_1x1(c, 1.0)),
                b: None,
                groups: 1,
            },
            t3: DeformConv2d {
                w: ps.add("interp.t3.weight", scaled_identity_1x1(c, 1.0)),
                b: None,
                groups: 1,
            },
            alpha: Conv2d {
                w: ps.add("interp.alpha.weight", scaled_identity_1x1(c, ab.0)),
                b: None,
                stride: 1,
                pad: (0, 0),
            },
            beta: Conv2d {
                w: ps.add("interp.beta.weight", scaled_identity_1x1(c, ab.1)),
                b: None,
                stride: 1,
                pad: (0, 0),
            },
        }))
    }

    fn max_abs_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_construction_averages_inputs() {
        let mut ps = ParamSet::<f64>::new();
        let interp = identity_interp(&mut ps, 3, (0.5, 0.5));
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let f = rand4(&mut r, (1, 3, 6, 6));
        let f1 = g.constant(f.clone());
        let f3 = g.constant(f.clone());
        let same = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
        assert!(max_abs_diff(g.value(same.feature), &f) < 1e-12);

        let fa = rand4(&mut r, (1, 3, 6, 6));
        let fb = rand4(&mut r, (1, 3, 6, 6));
        let v1 = g.constant(fa.clone());
        let v3 = g.constant(fb.clone());
        let mid = interp.interpolate_intermediate(&mut g, &lv, v1, v3).unwrap();
        let expect = (&fa + &fb) * 0.5;
        assert!(max_abs_diff(g.value(mid.feature), &expect) < 1e-12);
    }

    #[test]
    fn doubling_alpha_adds_exactly_the_forward_term() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let fa = rand4(&mut r, (1, 2, 5, 5));
        let fb = rand4(&mut r, (1, 2, 5, 5));
        let eval = |ab: (f64, f64)| -> ArrayD<f64> {
            let mut ps = ParamSet::<f64>::new();
            let interp = identity_interp(&mut ps, 2, ab);
            let mut g = Graph::new();
            let lv = ps.inject(&mut g);
            let f1 = g.constant(fa.clone());
            let f3 = g.constant(fb.clone());
            let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
            g.value(out.feature).clone()
        };
        let base = eval((0.5, 0.5));
        let doubled = eval((1.0, 0.5));
        let alpha_term = eval((0.5, 0.0));
        let shifted = &base + &alpha_term;
        assert!(max_abs_diff(&doubled, &shifted) < 1e-12);
    }

    #[test]
    fn swapping_inputs_and_branch_parameters_is_symmetric() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let head_a = Array4::from_shape_fn((18, 2, 3, 3), |_| r.gen_range(-0.2..0.2)).into_dyn();
        let head_b = Array4::from_shape_fn((18, 2, 3, 3), |_| r.gen_range(-0.2..0.2)).into_dyn();
        let t1w = rand4(&mut r, (2, 2, 3, 3));
        let t3w = rand4(&mut r, (2, 2, 3, 3));
        let aw = rand4(&mut r, (2, 2, 1, 1));
        let bw = rand4(&mut r, (2, 2, 1, 1));
        let fa = rand4(&mut r, (1, 2, 6, 6));
        let fb = rand4(&mut r, (1, 2, 6, 6));

        // Builds the module with branch parameters in the given order; the
        // fuse/refine stacks of the two predictors are kept identical so a
        // branch is fully described by its head.
        let make = |swap: bool| -> ArrayD<f64> {
            let mut ps = ParamSet::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut g1 = OffsetPredictor::new(&mut ps, &mut rng, "i.g1", 2, 18, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut g3 = OffsetPredictor::new(&mut ps, &mut rng, "i.g3", 2, 18, 1);
            let (h1, h3) = if swap {
                (head_b.clone(), head_a.clone())
            } else {
                (head_a.clone(), head_b.clone())
            };
            for (p, h) in [(&mut g1, h1), (&mut g3, h3)] {
                if let OffsetPredictor::Single { head, .. } = p {
                    *ps.value_mut(head.w) = h;
                }
            }
            let (t1v, t3v) = if swap { (t3w.clone(), t1w.clone()) } else { (t1w.clone(), t3w.clone()) };
            let (av, bv) = if swap { (bw.clone(), aw.clone()) } else { (aw.clone(), bw.clone()) };
            let interp = TemporalInterp::Deform(Box::new(DeformInterp {
                g1,
                g3,
                t1: DeformConv2d { w: ps.add("t1", t1v), b: None, groups: 1 },
                t3: DeformConv2d { w: ps.add("t3", t3v), b: None, groups: 1 },
                alpha: Conv2d { w: ps.add("a", av), b: None, stride: 1, pad: (0, 0) },
                beta: Conv2d { w: ps.add("b", bv), b: None, stride: 1, pad: (0, 0) },
            }));
            let mut g = Graph::new();
            let lv = ps.inject(&mut g);
            let (x1, x3) = if swap {
                (g.constant(fb.clone()), g.constant(fa.clone()))
            } else {
                (g.constant(fa.clone()), g.constant(fb.clone()))
            };
            let out = interp.interpolate_intermediate(&mut g, &lv, x1, x3).unwrap();
            g.value(out.feature).clone()
        };
        assert!(max_abs_diff(&make(false), &make(true)) < 1e-12);
    }

    #[test]
    fn zero_offsets_reduce_to_standard_convolutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut ps = ParamSet::<f64>::new();
        let interp = TemporalInterp::new_deform(&mut ps, &mut rng, 4, 2, 1);
        let mut r = ChaCha8Rng::seed_from_u64(16);
        let fa = rand4(&mut r, (1, 4, 6, 6));
        let fb = rand4(&mut r, (1, 4, 6, 6));
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let f1 = g.constant(fa);
        let f3 = g.constant(fb);
        let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
        // Fresh heads emit zero offsets, so the deformable samplers act as
        // plain convolutions and the blend composes linearly.
        let TemporalInterp::Deform(d) = &interp else { unreachable!() };
        let c1 = g
            .conv2d(f1, lv.var(d.t1.w), d.t1.b.map(|b| lv.var(b)), 1, (1, 1))
            .unwrap();
        let c3 = g
            .conv2d(f3, lv.var(d.t3.w), d.t3.b.map(|b| lv.var(b)), 1, (1, 1))
            .unwrap();
        let a = d.alpha.forward(&mut g, &lv, c1).unwrap();
        let b = d.beta.forward(&mut g, &lv, c3).unwrap();
        let expect = g.add(a, b).unwrap();
        let diff = max_abs_diff(g.value(out.feature), &g.value(expect).clone());
        assert!(diff < 1e-6, "max {diff}");
    }

    #[test]
    fn sequence_interleaves_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let mut ps = ParamSet::<f64>::new();
        let interp = TemporalInterp::new_deform(&mut ps, &mut rng, 2, 1, 1);
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r = ChaCha8Rng::seed_from_u64(20);
        let inputs: Vec<_> = (0..4)
            .map(|_| g.constant(rand4(&mut r, (1, 2, 4, 4))))
            .collect();
        let seq = interp.interpolate_sequence(&mut g, &lv, &inputs).unwrap();
        assert_eq!(seq.frames.len(), 7);
        assert_eq!(seq.intermediates.len(), 3);
        for (i, original) in inputs.iter().enumerate() {
            assert_eq!(seq.frames[2 * i], *original);
        }
        let two = interp.interpolate_sequence(&mut g, &lv, &inputs[..2]).unwrap();
        assert_eq!(two.frames.len(), 3);
        assert!(interp.interpolate_sequence(&mut g, &lv, &inputs[..1]).is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut seed = 22u64;
        loop {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ps = ParamSet::<f64>::new();
            let interp = TemporalInterp::new_deform(&mut ps, &mut rng, 2, 1, 1);
            // Random offset heads so the sampled positions are generic
            // (fresh heads would pin every position onto the integer
            // lattice where bilinear sampling is non-smooth).
            let TemporalInterp::Deform(d) = &interp else { unreachable!() };
            for p in [&d.g1, &d.g3] {
                if let OffsetPredictor::Single { head, .. } = p {
                    ps.value_mut(head.w).mapv_inplace(|_| rng.gen_range(-0.3..0.3));
                    ps.value_mut(head.b.unwrap()).mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                }
            }
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            let fa = rand4(&mut r, (1, 2, 5, 5));
            let fb = rand4(&mut r, (1, 2, 5, 5));

            // Forward closure plus a conditioning probe: finite differences
            // are only valid when offsets stay off the integer lattice and
            // rectifier inputs stay away from zero.
            let forward = |ps: &ParamSet<f64>| -> (f64, bool) {
                let mut g = Graph::new();
                let lv = ps.inject(&mut g);
                let f1 = g.constant(fa.clone());
                let f3 = g.constant(fb.clone());
                let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
                let mut ok = true;
                for off in [out.offsets_fwd.unwrap(), out.offsets_bwd.unwrap()] {
                    for v in g.value(off).iter() {
                        let frac = (v.fract() + 1.0).fract();
                        if frac.min(1.0 - frac) < 2e-3 {
                            ok = false;
                        }
                    }
                }
                for n in g.nodes_of_kind("leaky_relu") {
                    let pre = g.parents(n)[0];
                    if g.value(pre).iter().any(|v| v.abs() < 1e-3) {
                        ok = false;
                    }
                }
                let root = g.sum_all(out.feature);
                (g.scalar(root), ok)
            };
            if !forward(&ps).1 {
                continue;
            }

            let mut g = Graph::new();
            let lv = ps.inject(&mut g);
            let f1 = g.constant(fa.clone());
            let f3 = g.constant(fb.clone());
            let out = interp.interpolate_intermediate(&mut g, &lv, f1, f3).unwrap();
            let root = g.sum_all(out.feature);
            let grads = g.backward(root).unwrap();

            for name in [
                "interp.alpha.weight",
                "interp.beta.weight",
                "interp.t1.weight",
                "interp.g1.fuse.weight",
                "interp.g1.head.weight",
            ] {
                let id = ps.index_of(name).unwrap();
                let at = ps.value(id).clone();
                let analytic = grads.get(lv.var(id)).unwrap().clone();
                let fd = central_diff(
                    |v| {
                        let mut ps2 = ParamSet::<f64>::new();
                        for (n, val) in ps.iter() {
                            ps2.add(n, val.clone());
                        }
                        *ps2.value_mut(id) = v.clone();
                        forward(&ps2).0
                    },
                    &at,
                    1e-5,
                );
                let err = rel_err(&analytic, &fd);
                assert!(err < 1e-4, "{name}: rel err {err}");
            }
            break;
        }
    }
}
