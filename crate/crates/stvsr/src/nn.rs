//! Parameter storage and the small layer vocabulary the network is built
//! from: plain convolutions, residual blocks, deformable convolutions and
//! offset predictors (single-level or 3-level pyramid with cascade
//! refinement).

use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, Var};
use ndarray::{Array1, Array4, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Negative slope shared by every leaky rectifier in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors of a model.
pub struct ParamSet<E: Element> {
    names: Vec<String>,
    values: Vec<ArrayD<E>>,
}

impl<E: Element> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<E>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<E> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<E> {
        &mut self.values[id.0]
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<E>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    /// Total learnable scalar count.
    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Scalar counts grouped by the first dotted name component.
    pub fn scalars_by_module(&self) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for (name, v) in self.iter() {
            let module = name.split('.').next().unwrap_or(name).to_string();
            *map.entry(module).or_insert(0) += v.len();
        }
        map
    }

    /// Injects every parameter as a graph leaf, in storage order.
    pub fn inject(&self, g: &mut Graph<E>) -> Leaves {
        Leaves(self.values.iter().map(|v| g.leaf(v.clone())).collect())
    }
}

/// Graph leaves corresponding to a [`ParamSet`], in the same order.
pub struct Leaves(pub Vec<Var>);

impl Leaves {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
    pub fn all(&self) -> &[Var] {
        &self.0
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Fan-in scaled uniform with leaky-rectifier gain, optionally damped.
    Kaiming { scale: f64 },
    /// All zeros (offset heads, so untrained offsets vanish exactly).
    Zero,
}

fn init_conv_weight<E: Element>(
    rng: &mut ChaCha8Rng,
    co: usize,
    ci: usize,
    kh: usize,
    kw: usize,
    init: Init,
) -> Array4<E> {
    match init {
        Init::Zero => Array4::zeros((co, ci, kh, kw)),
        Init::Kaiming { scale } => {
            let fan_in = (ci * kh * kw) as f64;
            let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
            let bound = gain * (3.0 / fan_in).sqrt() * scale;
            Array4::from_shape_fn((co, ci, kh, kw), |_| {
                E::from_f64(rng.gen_range(-bound..bound))
            })
        }
    }
}

/// A convolution layer: weight, optional bias, stride and centered padding.
#[derive(Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: (usize, usize),
}

impl Conv2d {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        ci: usize,
        co: usize,
        kernel: (usize, usize),
        stride: usize,
        init: Init,
    ) -> Self {
        let w = ps.add(
            format!("{name}.weight"),
            init_conv_weight(rng, co, ci, kernel.0, kernel.1, init).into_dyn(),
        );
        let b = ps.add(
            format!("{name}.bias"),
            Array1::<E>::zeros(co).into_dyn(),
        );
        Conv2d {
            w,
            b: Some(b),
            stride,
            pad: (kernel.0 / 2, kernel.1 / 2),
        }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, lv: &Leaves, x: Var) -> Result<Var> {
        g.conv2d(x, lv.var(self.w), self.b.map(|b| lv.var(b)), self.stride, self.pad)
    }
}

/// Two channel-preserving 3x3 convolutions with a leaky rectifier between
/// them, plus the identity shortcut. No normalization layers.
#[derive(Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
    ) -> Self {
        ResBlock {
            conv1: Conv2d::new(
                ps,
                rng,
                &format!("{name}.conv1"),
                channels,
                channels,
                (3, 3),
                1,
                Init::Kaiming { scale: 1.0 },
            ),
            // Damped so freshly stacked blocks start near the identity.
            conv2: Conv2d::new(
                ps,
                rng,
                &format!("{name}.conv2"),
                channels,
                channels,
                (3, 3),
                1,
                Init::Kaiming { scale: 0.1 },
            ),
        }
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, lv: &Leaves, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, lv, x)?;
        let y = g.leaky_relu(y, LEAKY_SLOPE);
        let y = self.conv2.forward(g, lv, y)?;
        g.add(x, y)
    }
}

/// Deformable convolution layer with its offset-group count.
#[derive(Clone)]
pub struct DeformConv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub groups: usize,
}

impl DeformConv2d {
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        ci: usize,
        co: usize,
        kernel: usize,
        groups: usize,
    ) -> Self {
        let w = ps.add(
            format!("{name}.weight"),
            init_conv_weight(rng, co, ci, kernel, kernel, Init::Kaiming { scale: 1.0 }).into_dyn(),
        );
        let b = ps.add(format!("{name}.bias"), Array1::<E>::zeros(co).into_dyn());
        DeformConv2d {
            w,
            b: Some(b),
            groups,
        }
    }

    pub fn forward<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        x: Var,
        offsets: Var,
    ) -> Result<Var> {
        g.deformable_conv2d(
            x,
            offsets,
            lv.var(self.w),
            self.b.map(|b| lv.var(b)),
            self.groups,
        )
    }
}

/// Predicts a per-tap offset field from a channel-concatenated feature pair.
///
/// Two modes: a single-level stack (two 3x3 convolutions with activation and
/// a zero-initialized offset head) and a 3-level pyramid that refines coarse
/// offsets residually, with a final cascade refinement at full resolution.
/// All heads are zero-initialized, so a freshly built predictor emits an
/// exactly-zero offset field in either mode.
pub enum OffsetPredictor {
    Single {
        fuse: Conv2d,
        refine: Conv2d,
        head: Conv2d,
    },
    Pyramid(Box<PyramidPredictor>),
}

pub struct PyramidPredictor {
    pub fuse: Conv2d,
    pub l1r1: Conv2d,
    pub l1r2: Conv2d,
    pub down2: Conv2d,
    pub l2r1: Conv2d,
    pub l2r2: Conv2d,
    pub down3: Conv2d,
    pub l3r1: Conv2d,
    pub l3r2: Conv2d,
    pub l3o1: Conv2d,
    pub l3o2: Conv2d,
    pub l3head: Conv2d,
    pub l2merge: Conv2d,
    pub l2o1: Conv2d,
    pub l2o2: Conv2d,
    pub l2head: Conv2d,
    pub l1merge: Conv2d,
    pub l1o1: Conv2d,
    pub l1o2: Conv2d,
    pub l1head: Conv2d,
    pub cas_merge: Conv2d,
    pub cas_o1: Conv2d,
    pub cas_o2: Conv2d,
    pub cas_head: Conv2d,
}

impl OffsetPredictor {
    /// `offset_channels` must equal `2 * K * G` of the paired sampler.
    pub fn new<E: Element>(
        ps: &mut ParamSet<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        offset_channels: usize,
        pcd_levels: usize,
    ) -> Self {
        let c = channels;
        let k = Init::Kaiming { scale: 1.0 };
        let conv = |ps: &mut ParamSet<E>, rng: &mut ChaCha8Rng, suffix: &str, ci, co, stride, init| {
            Conv2d::new(ps, rng, &format!("{name}.{suffix}"), ci, co, (3, 3), stride, init)
        };
        if pcd_levels <= 1 {
            OffsetPredictor::Single {
                fuse: conv(ps, rng, "fuse", 2 * c, c, 1, k),
                refine: conv(ps, rng, "refine", c, c, 1, k),
                head: conv(ps, rng, "head", c, offset_channels, 1, Init::Zero),
            }
        } else {
            OffsetPredictor::Pyramid(Box::new(PyramidPredictor {
                fuse: conv(ps, rng, "fuse", 2 * c, c, 1, k),
                l1r1: conv(ps, rng, "l1r1", c, c, 1, k),
                l1r2: conv(ps, rng, "l1r2", c, c, 1, k),
                down2: conv(ps, rng, "down2", c, c, 2, k),
                l2r1: conv(ps, rng, "l2r1", c, c, 1, k),
                l2r2: conv(ps, rng, "l2r2", c, c, 1, k),
                down3: conv(ps, rng, "down3", c, c, 2, k),
                l3r1: conv(ps, rng, "l3r1", c, c, 1, k),
                l3r2: conv(ps, rng, "l3r2", c, c, 1, k),
                l3o1: conv(ps, rng, "l3o1", c, c, 1, k),
                l3o2: conv(ps, rng, "l3o2", c, c, 1, k),
                l3head: conv(ps, rng, "l3head", c, offset_channels, 1, Init::Zero),
                l2merge: conv(ps, rng, "l2merge", c + offset_channels, c, 1, k),
                l2o1: conv(ps, rng, "l2o1", c, c, 1, k),
                l2o2: conv(ps, rng, "l2o2", c, c, 1, k),
                l2head: conv(ps, rng, "l2head", c, offset_channels, 1, Init::Zero),
                l1merge: conv(ps, rng, "l1merge", c + offset_channels, c, 1, k),
                l1o1: conv(ps, rng, "l1o1", c, c, 1, k),
                l1o2: conv(ps, rng, "l1o2", c, c, 1, k),
                l1head: conv(ps, rng, "l1head", c, offset_channels, 1, Init::Zero),
                cas_merge: conv(ps, rng, "cas_merge", c + offset_channels, c, 1, k),
                cas_o1: conv(ps, rng, "cas_o1", c, c, 1, k),
                cas_o2: conv(ps, rng, "cas_o2", c, c, 1, k),
                cas_head: conv(ps, rng, "cas_head", c, offset_channels, 1, Init::Zero),
            }))
        }
    }

    /// Offset field from the ordered pair `(f_ref, f_other)`.
    pub fn forward<E: Element>(
        &self,
        g: &mut Graph<E>,
        lv: &Leaves,
        f_ref: Var,
        f_other: Var,
    ) -> Result<Var> {
        let cat = g.concat_channels(&[f_ref, f_other])?;
        match self {
            OffsetPredictor::Single { fuse, refine, head } => {
                let x = fuse.forward(g, lv, cat)?;
                let x = g.leaky_relu(x, LEAKY_SLOPE);
                let x = refine.forward(g, lv, x)?;
                let x = g.leaky_relu(x, LEAKY_SLOPE);
                head.forward(g, lv, x)
            }
            OffsetPredictor::Pyramid(p) => {
                let act = |g: &mut Graph<E>, v| g.leaky_relu(v, LEAKY_SLOPE);
                let x = p.fuse.forward(g, lv, cat)?;
                let x = act(g, x);
                let l1 = p.l1r1.forward(g, lv, x)?;
                let l1 = act(g, l1);
                let l1 = p.l1r2.forward(g, lv, l1)?;
                let l1 = act(g, l1);
                let d2 = p.down2.forward(g, lv, l1)?;
                let d2 = act(g, d2);
                let l2 = p.l2r1.forward(g, lv, d2)?;
                let l2 = act(g, l2);
                let l2 = p.l2r2.forward(g, lv, l2)?;
                let l2 = act(g, l2);
                let d3 = p.down3.forward(g, lv, l2)?;
                let d3 = act(g, d3);
                let l3 = p.l3r1.forward(g, lv, d3)?;
                let l3 = act(g, l3);
                let l3 = p.l3r2.forward(g, lv, l3)?;
                let l3 = act(g, l3);

                let o3 = p.l3o1.forward(g, lv, l3)?;
                let o3 = act(g, o3);
                let o3 = p.l3o2.forward(g, lv, o3)?;
                let o3 = act(g, o3);
                let o3 = p.l3head.forward(g, lv, o3)?;

                // Offsets are in pixels: doubling resolution doubles values.
                let up3 = g.upsample2x(o3);
                let up3 = g.scale(up3, 2.0);
                let m2 = g.concat_channels(&[l2, up3])?;
                let m2 = p.l2merge.forward(g, lv, m2)?;
                let m2 = act(g, m2);
                let r2 = p.l2o1.forward(g, lv, m2)?;
                let r2 = act(g, r2);
                let r2 = p.l2o2.forward(g, lv, r2)?;
                let r2 = act(g, r2);
                let r2 = p.l2head.forward(g, lv, r2)?;
                let o2 = g.add(up3, r2)?;

                let up2 = g.upsample2x(o2);
                let up2 = g.scale(up2, 2.0);
                let m1 = g.concat_channels(&[l1, up2])?;
                let m1 = p.l1merge.forward(g, lv, m1)?;
                let m1 = act(g, m1);
                let r1 = p.l1o1.forward(g, lv, m1)?;
                let r1 = act(g, r1);
                let r1 = p.l1o2.forward(g, lv, r1)?;
                let r1 = act(g, r1);
                let r1 = p.l1head.forward(g, lv, r1)?;
                let o1 = g.add(up2, r1)?;

                let cm = g.concat_channels(&[l1, o1])?;
                let cm = p.cas_merge.forward(g, lv, cm)?;
                let cm = act(g, cm);
                let cr = p.cas_o1.forward(g, lv, cm)?;
                let cr = act(g, cr);
                let cr = p.cas_o2.forward(g, lv, cr)?;
                let cr = act(g, cr);
                let cr = p.cas_head.forward(g, lv, cr)?;
                g.add(o1, cr)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, rel_err};
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> ndarray::ArrayD<f64> {
        Array4::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0)).into_dyn()
    }

    #[test]
    fn fresh_offset_predictors_emit_exact_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for levels in [1usize, 3] {
            let mut ps = ParamSet::<f64>::new();
            let pred = OffsetPredictor::new(&mut ps, &mut rng, "p", 4, 2 * 9 * 2, levels);
            let mut g = Graph::new();
            let lv = ps.inject(&mut g);
            let mut r2 = ChaCha8Rng::seed_from_u64(9);
            let a = g.constant(rand4(&mut r2, (1, 4, 8, 8)));
            let b = g.constant(rand4(&mut r2, (1, 4, 8, 8)));
            let off = pred.forward(&mut g, &lv, a, b).unwrap();
            assert_eq!(g.shape(off), &[1, 2 * 9 * 2, 8, 8]);
            assert!(g.value(off).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn residual_block_with_zero_second_conv_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamSet::<f64>::new();
        let block = ResBlock::new(&mut ps, &mut rng, "rb", 3);
        let w2 = block.conv2.w;
        let b2 = block.conv2.b.unwrap();
        ps.value_mut(w2).fill(0.0);
        ps.value_mut(b2).fill(0.0);
        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let x0 = rand4(&mut r2, (2, 3, 5, 5));
        let x = g.constant(x0.clone());
        let y = block.forward(&mut g, &lv, x).unwrap();
        assert_eq!(g.value(y), &x0);
    }

    #[test]
    fn residual_block_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ps = ParamSet::<f64>::new();
        let block = ResBlock::new(&mut ps, &mut rng, "rb", 2);
        let mut r2 = ChaCha8Rng::seed_from_u64(13);
        let x0 = rand4(&mut r2, (1, 2, 4, 4));
        let w1_0 = ps.value(block.conv1.w).clone();

        let mut g = Graph::new();
        let lv = ps.inject(&mut g);
        let x = g.constant(x0.clone());
        let y = block.forward(&mut g, &lv, x).unwrap();
        // Conditioning: finite differences need the rectifier inputs away
        // from the kink.
        for n in g.nodes_of_kind("leaky_relu") {
            let pre = g.parents(n)[0];
            let min = g.value(pre).iter().fold(f64::MAX, |m, v| m.min(v.abs()));
            assert!(min > 1e-3, "ill-conditioned instance, pick another seed");
        }
        let root = g.sum_all(y);
        let grads = g.backward(root).unwrap();
        let analytic = grads.get(lv.var(block.conv1.w)).unwrap().clone();

        let fd = central_diff(
            |v| {
                let mut ps2 = ParamSet::<f64>::new();
                let block2 = ResBlock {
                    conv1: Conv2d {
                        w: ps2.add("w1", v.clone()),
                        b: Some(ps2.add("b1", ps.value(block.conv1.b.unwrap()).clone())),
                        stride: 1,
                        pad: (1, 1),
                    },
                    conv2: Conv2d {
                        w: ps2.add("w2", ps.value(block.conv2.w).clone()),
                        b: Some(ps2.add("b2", ps.value(block.conv2.b.unwrap()).clone())),
                        stride: 1,
                        pad: (1, 1),
                    },
                };
                let mut g = Graph::new();
                let lv = ps2.inject(&mut g);
                let x = g.constant(x0.clone());
                let y = block2.forward(&mut g, &lv, x).unwrap();
                let r = g.sum_all(y);
                g.scalar(r)
            },
            &w1_0,
            1e-5,
        );
        let err = rel_err(&analytic, &fd);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn module_grouping_counts_scalars() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut ps = ParamSet::<f32>::new();
        let _ = Conv2d::new(&mut ps, &mut rng, "extract.conv_in", 3, 64, (3, 3), 1, Init::Kaiming { scale: 1.0 });
        let by = ps.scalars_by_module();
        assert_eq!(by["extract"], 3 * 64 * 9 + 64);
        assert_eq!(ps.total_scalars(), 1792);
    }
}
