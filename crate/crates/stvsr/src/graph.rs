//! Reverse-mode autodiff tape over the numeric kernels in [`crate::ops`].
//!
//! A [`Graph`] records every forward operation as a node holding its value,
//! its parents and a backward closure. [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients into the leaves. The tape is rebuilt per
//! forward pass; parameters are injected as leaves each time.

use crate::element::Element;
use crate::error::{invalid, Result};
use crate::ops;
use ndarray::{Array1, ArrayD, ArrayViewD, Ix4, IxDyn};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

type BackwardFn<E> = Box<dyn Fn(&Graph<E>, &ArrayD<E>, &ArrayD<E>) -> Vec<(Var, ArrayD<E>)>>;

struct Node<E: Element> {
    value: ArrayD<E>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<E>>,
    needs_grad: bool,
    kind: &'static str,
}

/// Per-leaf gradients produced by [`Graph::backward`].
pub struct Gradients<E: Element>(Vec<Option<ArrayD<E>>>);

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&ArrayD<E>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
    pub fn take(&mut self, v: Var) -> Option<ArrayD<E>> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(
        &mut self,
        value: ArrayD<E>,
        parents: Vec<Var>,
        backward: Option<BackwardFn<E>>,
        kind: &'static str,
    ) -> Var {
        // The structured kernels index flat slices; keep every node value in
        // standard layout.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            parents,
            backward: if needs_grad { backward } else { None },
            needs_grad,
            kind,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that participates in differentiation (a parameter or probed input).
    pub fn leaf(&mut self, value: ArrayD<E>) -> Var {
        self.nodes.push(Node {
            value,
            parents: vec![],
            backward: None,
            needs_grad: true,
            kind: "leaf",
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that does not require gradients (inputs, targets).
    pub fn constant(&mut self, value: ArrayD<E>) -> Var {
        self.nodes.push(Node {
            value,
            parents: vec![],
            backward: None,
            needs_grad: false,
            kind: "constant",
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> E {
        *self.nodes[v.0]
            .value
            .iter()
            .next()
            .expect("scalar node with a value")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].kind
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].parents
    }

    /// All nodes of a given op kind, in creation order. Used by the
    /// finite-difference suites to check instances are well-conditioned.
    pub fn nodes_of_kind(&self, kind: &str) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|i| self.nodes[*i].kind == kind)
            .map(Var)
            .collect()
    }

    fn view4(&self, v: Var) -> ndarray::ArrayView4<'_, E> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("4-d node")
    }

    fn expect_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_shape(a, b, "add")?;
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g, _, grad| {
                let mut out = Vec::new();
                if g.nodes[a.0].needs_grad {
                    out.push((a, grad.clone()));
                }
                if g.nodes[b.0].needs_grad {
                    out.push((b, grad.clone()));
                }
                out
            })),
            "add",
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_shape(a, b, "sub")?;
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g, _, grad| {
                let mut out = Vec::new();
                if g.nodes[a.0].needs_grad {
                    out.push((a, grad.clone()));
                }
                if g.nodes[b.0].needs_grad {
                    out.push((b, grad.mapv(|x| -x)));
                }
                out
            })),
            "sub",
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_shape(a, b, "mul")?;
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g, _, grad| {
                let mut out = Vec::new();
                if g.nodes[a.0].needs_grad {
                    out.push((a, grad * &g.nodes[b.0].value));
                }
                if g.nodes[b.0].needs_grad {
                    out.push((b, grad * &g.nodes[a.0].value));
                }
                out
            })),
            "mul",
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let sv = E::from_f64(s);
        let v = self.nodes[a.0].value.mapv(|x| x * sv);
        self.push(
            v,
            vec![a],
            Some(Box::new(move |_, _, grad| vec![(a, grad.mapv(|x| x * sv))])),
            "scale",
        )
    }

    /// Leaky rectifier with the given negative slope; the kink at zero takes
    /// the negative-side slope.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = E::from_f64(slope);
        let v = self.nodes[a.0]
            .value
            .mapv(|x| if x > E::zero() { x } else { x * s });
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, grad| {
                let pa = &g.nodes[a.0].value;
                let mut out = grad.clone();
                out.zip_mut_with(pa, |gv, xv| {
                    if *xv <= E::zero() {
                        *gv *= s;
                    }
                });
                vec![(a, out)]
            })),
            "leaky_relu",
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0]
            .value
            .mapv(|x| E::one() / (E::one() + (-x).exp()));
        self.push(
            v,
            vec![a],
            Some(Box::new(move |_, own, grad| {
                let mut out = grad.clone();
                out.zip_mut_with(own, |gv, y| *gv *= *y * (E::one() - *y));
                vec![(a, out)]
            })),
            "sigmoid",
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x.tanh());
        self.push(
            v,
            vec![a],
            Some(Box::new(move |_, own, grad| {
                let mut out = grad.clone();
                out.zip_mut_with(own, |gv, y| *gv *= E::one() - *y * *y);
                vec![(a, out)]
            })),
            "tanh",
        )
    }

    // ---- shape ops ----

    /// Channel-wise concatenation of 4-d feature maps.
    pub fn concat_channels(&mut self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(invalid("concat_channels: empty input list"));
        }
        let first = self.shape(vars[0]).to_vec();
        if first.len() != 4 {
            return Err(invalid("concat_channels: expects 4-d inputs"));
        }
        let mut spans = Vec::with_capacity(vars.len());
        let mut total = 0usize;
        for v in vars {
            let s = self.shape(*v);
            if s.len() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(invalid("concat_channels: incompatible shapes"));
            }
            spans.push((total, s[1]));
            total += s[1];
        }
        let views: Vec<_> = vars.iter().map(|v| self.view4(*v)).collect();
        let value = ndarray::concatenate(
            ndarray::Axis(1),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .expect("concat shapes checked")
        .into_dyn();
        let owned: Vec<Var> = vars.to_vec();
        Ok(self.push(
            value,
            owned.clone(),
            Some(Box::new(move |g, _, grad| {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                owned
                    .iter()
                    .zip(spans.iter())
                    .filter(|(v, _)| g.nodes[v.0].needs_grad)
                    .map(|(v, (start, len))| {
                        (
                            *v,
                            g4.slice(ndarray::s![.., *start..*start + *len, .., ..])
                                .to_owned()
                                .into_dyn(),
                        )
                    })
                    .collect()
            })),
            "concat_channels",
        ))
    }

    /// Channel slice `[start, start+len)` of a 4-d feature map.
    pub fn narrow_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || start + len > s[1] {
            return Err(invalid("narrow_channels: range out of bounds"));
        }
        let v = self
            .view4(a)
            .slice(ndarray::s![.., start..start + len, .., ..])
            .to_owned()
            .into_dyn();
        Ok(self.push(
            v,
            vec![a],
            Some(Box::new(move |_, _, grad| {
                let mut full = ArrayD::<E>::zeros(IxDyn(&s));
                full.slice_mut(ndarray::s![.., start..start + len, .., ..])
                    .assign(&grad.view().into_dimensionality::<Ix4>().unwrap());
                vec![(a, full)]
            })),
            "narrow_channels",
        ))
    }

    // ---- structured ops ----

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: (usize, usize),
    ) -> Result<Var> {
        let bias = b.map(|bv| {
            self.nodes[bv.0]
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("1-d bias")
                .to_owned()
        });
        let out = ops::conv2d(&self.view4(x), &self.view4(w), bias.as_ref(), stride, pad)?;
        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        Ok(self.push(
            out.into_dyn(),
            parents,
            Some(Box::new(move |g, _, grad| {
                let need_x = g.nodes[x.0].needs_grad;
                let need_w = g.nodes[w.0].needs_grad;
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (gx, gw, gb) = ops::conv2d_backward(
                    &g.view4(x),
                    &g.view4(w),
                    &g4.view(),
                    stride,
                    pad,
                    b.is_some(),
                );
                let mut out = Vec::new();
                if need_x {
                    out.push((x, gx.into_dyn()));
                }
                if need_w {
                    out.push((w, gw.into_dyn()));
                }
                if let (Some(bv), Some(gbv)) = (b, gb) {
                    if g.nodes[bv.0].needs_grad {
                        out.push((bv, gbv.into_dyn()));
                    }
                }
                out
            })),
            "conv2d",
        ))
    }

    pub fn deformable_conv2d(
        &mut self,
        x: Var,
        offsets: Var,
        w: Var,
        b: Option<Var>,
        groups: usize,
    ) -> Result<Var> {
        let bias = b.map(|bv| {
            self.nodes[bv.0]
                .value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("1-d bias")
                .to_owned()
        });
        let out = ops::deformable_conv2d(
            &self.view4(x),
            &self.view4(offsets),
            &self.view4(w),
            bias.as_ref(),
            groups,
        )?;
        let mut parents = vec![x, offsets, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        Ok(self.push(
            out.into_dyn(),
            parents,
            Some(Box::new(move |g, _, grad| {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                let (gx, goff, gw, gb) = ops::deformable_conv2d_backward(
                    &g.view4(x),
                    &g.view4(offsets),
                    &g.view4(w),
                    &g4.view(),
                    groups,
                    b.is_some(),
                );
                let mut out = Vec::new();
                if g.nodes[x.0].needs_grad {
                    out.push((x, gx.into_dyn()));
                }
                if g.nodes[offsets.0].needs_grad {
                    out.push((offsets, goff.into_dyn()));
                }
                if g.nodes[w.0].needs_grad {
                    out.push((w, gw.into_dyn()));
                }
                if let (Some(bv), Some(gbv)) = (b, gb) {
                    if g.nodes[bv.0].needs_grad {
                        out.push((bv, gbv.into_dyn()));
                    }
                }
                out
            })),
            "deformable_conv2d",
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let out = ops::pixel_shuffle(&self.view4(x), r)?;
        Ok(self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |_, _, grad| {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                vec![(
                    x,
                    ops::pixel_unshuffle(&g4.view(), r)
                        .expect("inverse shuffle")
                        .into_dyn(),
                )]
            })),
            "pixel_shuffle",
        ))
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let out = ops::upsample_bilinear_x2(&self.view4(x));
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |_, _, grad| {
                let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
                vec![(x, ops::upsample_bilinear_x2_backward(&g4.view()).into_dyn())]
            })),
            "upsample2x",
        )
    }

    /// Mean per-element Charbonnier penalty as a scalar node.
    pub fn charbonnier(&mut self, pred: Var, target: Var, eps: f64) -> Result<Var> {
        let v = ops::charbonnier(&self.view4(pred), &self.view4(target), eps)?;
        let value = ArrayD::from_elem(IxDyn(&[]), v);
        Ok(self.push(
            value,
            vec![pred, target],
            Some(Box::new(move |g, _, grad| {
                let up = *grad.iter().next().unwrap();
                let gp = ops::charbonnier_backward(&g.view4(pred), &g.view4(target), eps, up);
                let mut out = Vec::new();
                if g.nodes[pred.0].needs_grad {
                    out.push((pred, gp.clone().into_dyn()));
                }
                if g.nodes[target.0].needs_grad {
                    out.push((target, gp.mapv(|x| -x).into_dyn()));
                }
                out
            })),
            "charbonnier",
        ))
    }

    /// Weighted sum of scalar nodes.
    pub fn scalar_weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(invalid("scalar_weighted_sum: no terms"));
        }
        let mut acc = E::zero();
        for (v, w) in terms {
            if self.shape(*v) != [] as [usize; 0] {
                return Err(invalid("scalar_weighted_sum: non-scalar term"));
            }
            acc += self.scalar(*v) * E::from_f64(*w);
        }
        let owned: Vec<(Var, f64)> = terms.to_vec();
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), acc),
            terms.iter().map(|(v, _)| *v).collect(),
            Some(Box::new(move |g, _, grad| {
                let up = *grad.iter().next().unwrap();
                owned
                    .iter()
                    .filter(|(v, _)| g.nodes[v.0].needs_grad)
                    .map(|(v, w)| {
                        (
                            *v,
                            ArrayD::from_elem(IxDyn(&[]), up * E::from_f64(*w)),
                        )
                    })
                    .collect()
            })),
            "scalar_weighted_sum",
        ))
    }

    /// Sum of all elements, as a scalar node. Handy for gradient probes.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = E::zero();
        for v in self.nodes[a.0].value.iter() {
            acc += *v;
        }
        self.push(
            ArrayD::from_elem(IxDyn(&[]), acc),
            vec![a],
            Some(Box::new(move |g, _, grad| {
                let up = *grad.iter().next().unwrap();
                vec![(a, ArrayD::from_elem(g.nodes[a.0].value.raw_dim(), up))]
            })),
            "sum_all",
        )
    }

    /// Inner product with a fixed projection array, as a scalar node. Used by
    /// the gradient-check suites to form a generic scalar objective.
    pub fn project(&mut self, a: Var, weights: &ArrayViewD<E>) -> Result<Var> {
        if weights.shape() != self.shape(a) {
            return Err(invalid("project: weight shape mismatch"));
        }
        let mut acc = E::zero();
        for (v, w) in self.nodes[a.0].value.iter().zip(weights.iter()) {
            acc += *v * *w;
        }
        let w = weights.to_owned();
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), acc),
            vec![a],
            Some(Box::new(move |_, _, grad| {
                let up = *grad.iter().next().unwrap();
                vec![(a, w.mapv(|x| x * up))]
            })),
            "project",
        ))
    }

    /// Reverse-mode sweep from a scalar root; returns per-leaf gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients<E>> {
        if self.nodes[root.0].value.ndim() != 0 {
            return Err(invalid("backward: root must be scalar"));
        }
        let mut grads: Vec<Option<ArrayD<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::from_elem(IxDyn(&[]), E::one()));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(bf) = &node.backward {
                for (pv, pg) in bf(self, &node.value, &g) {
                    match &mut grads[pv.0] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            } else if node.needs_grad {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients(grads))
    }

    /// Global L2 norm over a set of leaf gradients.
    pub fn grad_global_norm(grads: &Gradients<E>, leaves: &[Var]) -> f64 {
        let mut acc = 0.0;
        for v in leaves {
            if let Some(g) = grads.get(*v) {
                for x in g.iter() {
                    acc += x.as_f64() * x.as_f64();
                }
            }
        }
        acc.sqrt()
    }
}

/// Convenience: a 0-dim scalar array.
pub fn scalar_array<E: Element>(v: E) -> ArrayD<E> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

/// Convenience: 1-d array from a slice.
pub fn vec_array<E: Element>(v: &[E]) -> Array1<E> {
    Array1::from_vec(v.to_vec())
}
