//! Convolutional LSTM sequence aggregation with optional deformable
//! alignment of the recurrent states to the current input, run in one or
//! both temporal directions. The backward direction reuses the forward
//! parameters (the reversed sequence is fed through the same cell).

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv2d, DeformConv2d, Init, Leaves, OffsetPredictor, ParamSet};
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

/// Offset predictor plus deformable sampler used to align one state map.
pub struct Alignment {
    pub predictor: OffsetPredictor,
    pub sampler: DeformConv2d,
}

impl Alignment {
    /// Aligns `state` to the current input feature `f_t`: offsets are
    /// predicted from `[state, f_t]` and applied by the deformable sampler.
    pub fn align<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        state: Var,
        f_t: Var,
    ) -> Result<Var> {
        if g.shape(state)[2..] != g.shape(f_t)[2..] {
            return Err(invalid("align_state: spatial dims mismatch"));
        }
        let offsets = self.predictor.forward(g, lv, state, f_t)?;
        self.sampler.forward(g, lv, state, offsets)
    }
}

/// Standard convolutional LSTM gate update. Gates are computed by one
/// convolution over `[x, h]` producing `4 * hidden` channels split as
/// input / forget / candidate / output; returns `(h_new, c_new)`.
pub fn convlstm_cell<E: Element>(
    g: &mut Graph<E>,
    lv: &Leaves,
    gates: &Conv2d,
    x: Var,
    h: Var,
    c: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    if g.shape(h) != g.shape(c) {
        return Err(invalid("convlstm_cell: h and c shapes differ"));
    }
    let cat = g.concat_channels(&[x, h])?;
    let gs = gates.forward(g, lv, cat)?;
    if g.shape(gs)[1] != 4 * hidden {
        return Err(invalid("convlstm_cell: gate channels != 4 * hidden"));
    }
    let i = g.narrow_channels(gs, 0, hidden)?;
    let f = g.narrow_channels(gs, hidden, hidden)?;
    let cand = g.narrow_channels(gs, 2 * hidden, hidden)?;
    let o = g.narrow_channels(gs, 3 * hidden, hidden)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ic = g.mul(i, cand)?;
    let c_new = g.add(fc, ic)?;
    let tc = g.tanh(c_new);
    let h_new = g.mul(o, tc)?;
    Ok((h_new, c_new))
}

pub struct ConvLstm {
    pub gates: Conv2d,
    pub align_h: Option<Alignment>,
    pub align_c: Option<Alignment>,
    pub bidirectional: bool,
    pub hidden_channels: usize,
}

impl ConvLstm {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        hidden_channels: usize,
        aligned: bool,
        bidirectional: bool,
        deformable_groups: usize,
        pcd_levels: usize,
    ) -> Self {
        let gates = Conv2d::new(
            ps,
            rng,
            "lstm.gates",
            in_channels + hidden_channels,
            4 * hidden_channels,
            (3, 3),
            1,
            Init::Kaiming { scale: 1.0 },
        );
        let offset_channels = 2 * 9 * deformable_groups;
        let mk_align = |ps: &mut ParamSet<E>, rng: &mut ChaCha8Rng, tag: &str| Alignment {
            predictor: OffsetPredictor::new(
                ps,
                rng,
                &format!("lstm.align_{tag}"),
                hidden_channels,
                offset_channels,
                pcd_levels,
            ),
            sampler: DeformConv2d::new(
                ps,
                rng,
                &format!("lstm.sampler_{tag}"),
                hidden_channels,
                hidden_channels,
                3,
                deformable_groups,
            ),
        };
        let (align_h, align_c) = if aligned {
            (
                Some(mk_align(ps, rng, "h")),
                Some(mk_align(ps, rng, "c")),
            )
        } else {
            (None, None)
        };
        ConvLstm {
            gates,
            align_h,
            align_c,
            bidirectional,
            hidden_channels,
        }
    }

    fn step<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let (ha, ca) = match (&self.align_h, &self.align_c) {
            (Some(ah), Some(ac)) => (ah.align(g, lv, h, x)?, ac.align(g, lv, c, x)?),
            _ => (h, c),
        };
        convlstm_cell(g, lv, &self.gates, x, ha, ca, self.hidden_channels)
    }

    fn run_direction<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        features: &[Var],
    ) -> Result<Vec<Var>> {
        let s = g.shape(features[0]).to_vec();
        let zero = ArrayD::<E>::zeros(IxDyn(&[s[0], self.hidden_channels, s[2], s[3]]));
        let mut h = g.constant(zero.clone());
        let mut c = g.constant(zero);
        let mut out = Vec::with_capacity(features.len());
        for &x in features {
            let (nh, nc) = self.step(g, lv, x, h, c)?;
            h = nh;
            c = nc;
            out.push(h);
        }
        Ok(out)
    }

    /// Runs the sequence; returns one hidden map per input. Bidirectional
    /// mode concatenates forward and backward hidden states channel-wise
    /// (output channels `2 * hidden`), sharing all cell parameters between
    /// the directions.
    pub fn run<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        features: &[Var],
    ) -> Result<Vec<Var>> {
        if features.is_empty() {
            return Err(invalid("convlstm: empty sequence"));
        }
        let fwd = self.run_direction(g, lv, features)?;
        if !self.bidirectional {
            return Ok(fwd);
        }
        let reversed: Vec<Var> = features.iter().rev().copied().collect();
        let mut bwd = self.run_direction(g, lv, &reversed)?;
        bwd.reverse();
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| g.concat_channels(&[f, b]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, rel_err};
    use crate::nn::Init;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ArrayD<f64> {
        Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0)).into_dyn()
    }

    fn identity_1x1(c: usize) -> ArrayD<f64> {
        Array4::from_shape_fn((c, c, 1, 1), |(o, i, _, _)| if o == i { 1.0 } else { 0.0 })
            .into_dyn()
    }

    #[test]
    fn cell_with_zero_parameters_follows_gate_algebra() {
        // All gates at zero: sigmoid(0) = 0.5, tanh(0) = 0, so the new cell
        // is 0.5*c and the new hidden is 0.5*tanh(0.5*c).
        let c_ch = 3;
        let mut ps = ParamSet::<f64>::new();
        let gates = Conv2d {
            w: ps.add("gates.weight", Array4::<f64>::zeros((4 * c_ch, 2 * c_ch, 3, 3)).into_dyn()),
            b: Some(ps.add("gates.bias", ndarray::Array1::<f64>::zeros(4 * c_ch).into_dyn())),
            stride: 1,
            pad: (1, 1),
        };
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let x = g.constant(rand4(&mut r, (1, c_ch, 4, 4)));
        let h0 = g.constant(rand4(&mut r, (1, c_ch, 4, 4)));
        let c0v = rand4(&mut r, (1, c_ch, 4, 4));
        let c0 = g.constant(c0v.clone());
        let (h1, c1) = convlstm_cell(&mut g, &lv, &gates, x, h0, c0, c_ch).unwrap();
        let expect_c = c0v.mapv(|v| 0.5 * v);
        let expect_h = c0v.mapv(|v| 0.5 * (0.5 * v).tanh());
        let dc = g
            .value(c1)
            .iter()
            .zip(expect_c.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dh = g
            .value(h1)
            .iter()
            .zip(expect_h.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dc < 1e-12 && dh < 1e-12, "dc={dc} dh={dh}");
        assert_eq!(g.shape(h1), g.shape(c1));
    }

    #[test]
    fn cell_gate_gradients_match_finite_differences() {
        let c_ch = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::<f64>::new();
        let gates = Conv2d::new(&mut ps, &mut rng, "gates", 2 * c_ch, 4 * c_ch, (3, 3), 1, Init::Kaiming { scale: 1.0 });
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let xv = rand4(&mut r, (1, c_ch, 4, 4));
        let hv = rand4(&mut r, (1, c_ch, 4, 4));
        let cv = rand4(&mut r, (1, c_ch, 4, 4));
        let run = |ps: &ParamSet<f64>| -> f64 {
            let mut g = Graph::new();
            let lv = ps.inject(&mut g);
            let x = g.constant(xv.clone());
            let h = g.constant(hv.clone());
            let c = g.constant(cv.clone());
            let gates = Conv2d {
                w: crate::nn::ParamId(0),
                b: Some(crate::nn::ParamId(1)),
                stride: 1,
                pad: (1, 1),
            };
            let (h1, _) = convlstm_cell(&mut g, &lv, &gates, x, h, c, c_ch).unwrap();
            let root = g.sum_all(h1);
            g.scalar(root)
        };
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let x = g.constant(xv.clone());
        let h = g.constant(hv.clone());
        let c = g.constant(cv.clone());
        let (h1, _) = convlstm_cell(&mut g, &lv, &gates, x, h, c, c_ch).unwrap();
        let root = g.sum_all(h1);
        let grads = g.backward(root).unwrap();
        for id in [gates.w, gates.b.unwrap()] {
            let at = ps.value(id).clone();
            let analytic = grads.get(lv.var(id)).unwrap().clone();
            let fd = central_diff(
                |v| {
                    let mut ps2 = ParamSet::<f64>::new();
                    for (n, val) in ps.iter() {
                        ps2.add(n, val.clone());
                    }
                    *ps2.value_mut(id) = v.clone();
                    run(&ps2)
                },
                &at,
                1e-5,
            );
            let err = rel_err(&analytic, &fd);
            assert!(err < 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn zero_offset_alignment_with_identity_sampler_is_identity() {
        let c_ch = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ps = ParamSet::<f64>::new();
        let align = Alignment {
            predictor: OffsetPredictor::new(&mut ps, &mut rng, "align", c_ch, 2, 1),
            sampler: DeformConv2d {
                w: ps.add("sampler.weight", identity_1x1(c_ch)),
                b: None,
                groups: 1,
            },
        };
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let state_v = rand4(&mut r, (1, c_ch, 5, 5));
        let state = g.constant(state_v.clone());
        let f_t = g.constant(rand4(&mut r, (1, c_ch, 5, 5)));
        let aligned = align.align(&mut g, &lv, state, f_t).unwrap();
        assert_eq!(g.value(aligned), &state_v);
    }

    #[test]
    fn alignment_gradients_reach_the_offset_head() {
        let c_ch = 2;
        let mut seed = 11u64;
        loop {
            seed += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ps = ParamSet::<f64>::new();
            let align = Alignment {
                predictor: OffsetPredictor::new(&mut ps, &mut rng, "align", c_ch, 18, 1),
                sampler: DeformConv2d::new(&mut ps, &mut rng, "sampler", c_ch, c_ch, 3, 1),
            };
            // Generic offsets; fresh zero heads would sit on the bilinear
            // kinks where finite differences are undefined.
            if let OffsetPredictor::Single { head, .. } = &align.predictor {
                ps.value_mut(head.w).mapv_inplace(|_| rng.gen_range(-0.3..0.3));
                ps.value_mut(head.b.unwrap()).mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            }
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
            let sv = rand4(&mut r, (1, c_ch, 5, 5));
            let fv = rand4(&mut r, (1, c_ch, 5, 5));
            let run = |ps: &ParamSet<f64>| -> (f64, bool) {
                let mut g = Graph::new();
                let lv = ps.inject(&mut g);
                let s = g.constant(sv.clone());
                let f = g.constant(fv.clone());
                let offsets = align.predictor.forward(&mut g, &lv, s, f).unwrap();
                let mut ok = true;
                for v in g.value(offsets).iter() {
                    let frac = (v.fract() + 1.0).fract();
                    if frac.min(1.0 - frac) < 2e-3 {
                        ok = false;
                    }
                }
                for n in g.nodes_of_kind("leaky_relu") {
                    let pre = g.parents(n)[0];
                    if g.value(pre).iter().any(|v| v.abs() < 1e-3) {
                        ok = false;
                    }
                }
                let out = align.sampler.forward(&mut g, &lv, s, offsets).unwrap();
                let root = g.sum_all(out);
                (g.scalar(root), ok)
            };
            if !run(&ps).1 {
                continue;
            }
            let mut g = Graph::new();
            let lv = ps.inject(&mut g);
            let s = g.constant(sv.clone());
            let f = g.constant(fv.clone());
            let aligned = align.align(&mut g, &lv, s, f).unwrap();
            let root = g.sum_all(aligned);
            let grads = g.backward(root).unwrap();
            let head_w = match &align.predictor {
                OffsetPredictor::Single { head, .. } => head.w,
                _ => unreachable!(),
            };
            let analytic = grads.get(lv.var(head_w)).unwrap().clone();
            let at = ps.value(head_w).clone();
            let fd = central_diff(
                |v| {
                    let mut ps2 = ParamSet::<f64>::new();
                    for (n, val) in ps.iter() {
                        ps2.add(n, val.clone());
                    }
                    *ps2.value_mut(head_w) = v.clone();
                    run(&ps2).0
                },
                &at,
                1e-5,
            );
            let err = rel_err(&analytic, &fd);
            assert!(err < 1e-4, "rel err {err}");
            break;
        }
    }

    #[test]
    fn bidirectional_run_concatenates_and_handles_t1() {
        let c_ch = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut ps = ParamSet::<f64>::new();
        let lstm = ConvLstm::new(&mut ps, &mut rng, c_ch, c_ch, true, true, 1, 1);
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r = ChaCha8Rng::seed_from_u64(22);
        let feats: Vec<_> = (0..3)
            .map(|_| g.constant(rand4(&mut r, (1, c_ch, 4, 4))))
            .collect();
        let out = lstm.run(&mut g, &lv, &feats).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert_eq!(g.shape(*o), &[1, 2 * c_ch, 4, 4]);
        }
        // A single-step sequence sees the same zero state in both
        // directions, so the two concatenated halves agree.
        let single = lstm.run(&mut g, &lv, &feats[..1]).unwrap();
        let fwd = g.narrow_channels(single[0], 0, c_ch).unwrap();
        let bwd = g.narrow_channels(single[0], c_ch, c_ch).unwrap();
        assert_eq!(g.value(fwd), g.value(bwd));
        assert!(lstm.run(&mut g, &lv, &[]).is_err());
    }

    #[test]
    fn zero_offset_alignment_equals_vanilla_convlstm() {
        // With fresh (zero) offset heads and 1x1 identity samplers, the
        // aligned module must match a plain ConvLSTM sharing its gates.
        let c_ch = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut ps = ParamSet::<f64>::new();
        let gates = Conv2d::new(&mut ps, &mut rng, "gates", 2 * c_ch, 4 * c_ch, (3, 3), 1, Init::Kaiming { scale: 1.0 });
        let aligned = ConvLstm {
            gates: gates.clone(),
            align_h: Some(Alignment {
                predictor: OffsetPredictor::new(&mut ps, &mut rng, "ah", c_ch, 2, 1),
                sampler: DeformConv2d {
                    w: ps.add("sh.weight", identity_1x1(c_ch)),
                    b: None,
                    groups: 1,
                },
            }),
            align_c: Some(Alignment {
                predictor: OffsetPredictor::new(&mut ps, &mut rng, "ac", c_ch, 2, 1),
                sampler: DeformConv2d {
                    w: ps.add("sc.weight", identity_1x1(c_ch)),
                    b: None,
                    groups: 1,
                },
            }),
            bidirectional: true,
            hidden_channels: c_ch,
        };
        let vanilla = ConvLstm {
            gates,
            align_h: None,
            align_c: None,
            bidirectional: true,
            hidden_channels: c_ch,
        };
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r = ChaCha8Rng::seed_from_u64(32);
        let feats: Vec<_> = (0..4)
            .map(|_| g.constant(rand4(&mut r, (2, c_ch, 5, 5))))
            .collect();
        let a = aligned.run(&mut g, &lv, &feats).unwrap();
        let v = vanilla.run(&mut g, &lv, &feats).unwrap();
        for (x, y) in a.iter().zip(v.iter()) {
            let max = g
                .value(*x)
                .iter()
                .zip(g.value(*y).iter())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-6, "aligned-at-init differs from vanilla: {max}");
        }
    }
}
