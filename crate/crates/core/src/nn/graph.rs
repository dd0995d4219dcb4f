//! Reverse-mode automatic differentiation over a linear tape of tensor ops.

use super::kernels::{self, ConvGeom, GcCache};
use super::tensor::{Scalar, Tensor};
use crate::metrics::{smooth_l1_grad, smooth_l1_value};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    AvgPool {
        x: Var,
        k: usize,
    },
    Gc {
        x: Var,
        wk: Var,
        wv: Var,
        cache: GcCache<T>,
    },
    SmoothL1 {
        x: Var,
        target: Tensor<T>,
    },
    WeightedSum(Vec<(Var, T)>),
    Dot {
        x: Var,
        w: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A forward pass recorded for differentiation. Values are computed eagerly.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, g: ConvGeom) -> Var {
        let out =
            kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &g);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Conv { x, w, b, g }, &inputs)
    }

    /// Stride-2 transposed convolution doubling each side (output padding 1
    /// for odd kernels, pad `(k − 1)/2`).
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, g: ConvGeom) -> Var {
        let out = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &g,
            Self::out_pad(&g),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::ConvTranspose { x, w, b, g }, &inputs)
    }

    fn out_pad(g: &ConvGeom) -> usize {
        g.sh - 1
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::from_vec(&v.shape, v.data.iter().map(|&a| a.max(T::zero())).collect());
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape, self.value(b).shape, "add shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Channel-wise concatenation of 4-D tensors with equal batch and sides.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (b, _, h, w) = self.value(parts[0]).dims4();
        let mut channels = 0;
        for &p in parts {
            let (pb, pc, ph, pw) = self.value(p).dims4();
            assert_eq!((pb, ph, pw), (b, h, w), "concat shape mismatch");
            channels += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape[1];
                data.extend_from_slice(&v.data[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let out = Tensor::from_vec(&[b, channels, h, w], data);
        self.push(out, Op::Concat(parts.to_vec()), parts)
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Var {
        if k == 1 {
            return x;
        }
        let out = kernels::avg_pool_forward(self.value(x), k);
        self.push(out, Op::AvgPool { x, k }, &[x])
    }

    pub fn gc(&mut self, x: Var, wk: Var, wv: Var) -> Var {
        let (out, cache) = kernels::gc_forward(self.value(x), self.value(wk), self.value(wv));
        self.push(out, Op::Gc { x, wk, wv, cache }, &[x, wk, wv])
    }

    /// Softmax weights of a GC node, `[B, P]`.
    pub fn gc_attention(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Gc { cache, .. } => Some(&cache.alpha),
            _ => None,
        }
    }

    /// Mean smooth-L1 between `x` and a constant target; scalar output.
    pub fn smooth_l1(&mut self, x: Var, target: &Tensor<T>) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape, target.shape, "smooth_l1 shape mismatch");
        let total: f64 = v
            .data
            .iter()
            .zip(&target.data)
            .map(|(&a, &b)| smooth_l1_value((a - b).to_f64().unwrap()))
            .sum();
        let out = Tensor::scalar(T::of(total / v.len() as f64));
        self.push(
            out,
            Op::SmoothL1 {
                x,
                target: target.clone(),
            },
            &[x],
        )
    }

    /// `Σ c_i · s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let terms: Vec<(Var, T)> = terms.iter().map(|&(v, c)| (v, T::of(c))).collect();
        let total = terms.iter().map(|&(v, c)| c * self.value(v).item()).sum();
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Tensor::scalar(total), Op::WeightedSum(terms), &inputs)
    }

    /// `Σ x ⊙ w` against a constant tensor; scalar output.
    pub fn dot(&mut self, x: Var, w: Tensor<T>) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape, w.shape, "dot shape mismatch");
        let total = v.data.iter().zip(&w.data).map(|(&a, &b)| a * b).sum();
        self.push(Tensor::scalar(total), Op::Dot { x, w }, &[x])
    }

    /// Back-propagates from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(&self.value(root).shape, T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            let emit =
                |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, g } => {
                    let r =
                        kernels::conv2d_backward(self.value(*x), self.value(*w), &dy, g, wants(*x));
                    if let Some(dx) = r.dx {
                        emit(&mut grads, *x, dx);
                    }
                    if wants(*w) {
                        emit(&mut grads, *w, r.dw);
                    }
                    if let Some(b) = b.filter(|&b| wants(b)) {
                        emit(&mut grads, b, r.db);
                    }
                }
                Op::ConvTranspose { x, w, b, g } => {
                    let r = kernels::conv_transpose2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &dy,
                        g,
                        wants(*x),
                    );
                    if let Some(dx) = r.dx {
                        emit(&mut grads, *x, dx);
                    }
                    if wants(*w) {
                        emit(&mut grads, *w, r.dw);
                    }
                    if let Some(b) = b.filter(|&b| wants(b)) {
                        emit(&mut grads, b, r.db);
                    }
                }
                Op::Relu(x) => {
                    if wants(*x) {
                        let out = &node.value;
                        let dx = dy
                            .data
                            .iter()
                            .zip(&out.data)
                            .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
                            .collect();
                        emit(&mut grads, *x, Tensor::from_vec(&dy.shape, dx));
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        emit(&mut grads, *a, dy.clone());
                    }
                    if wants(*b) {
                        emit(&mut grads, *b, dy.clone());
                    }
                }
                Op::Concat(parts) => {
                    let (b, _, h, w) = dy.dims4();
                    let plane = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape[1];
                        if wants(p) {
                            let mut d = Vec::with_capacity(b * c * plane);
                            let total = dy.shape[1];
                            for bi in 0..b {
                                let start = (bi * total + offset) * plane;
                                d.extend_from_slice(&dy.data[start..start + c * plane]);
                            }
                            emit(&mut grads, p, Tensor::from_vec(&[b, c, h, w], d));
                        }
                        offset += c;
                    }
                }
                Op::AvgPool { x, k } => {
                    if wants(*x) {
                        emit(&mut grads, *x, kernels::avg_pool_backward(&dy, *k));
                    }
                }
                Op::Gc { x, wk, wv, cache } => {
                    let r = kernels::gc_backward(
                        self.value(*x),
                        self.value(*wk),
                        self.value(*wv),
                        cache,
                        &dy,
                    );
                    if wants(*x) {
                        emit(&mut grads, *x, r.dx);
                    }
                    if wants(*wk) {
                        emit(&mut grads, *wk, r.dwk);
                    }
                    if wants(*wv) {
                        emit(&mut grads, *wv, r.dwv);
                    }
                }
                Op::SmoothL1 { x, target } => {
                    let v = self.value(*x);
                    let scale = dy.item() / T::of(v.len() as f64);
                    let dx = v
                        .data
                        .iter()
                        .zip(&target.data)
                        .map(|(&a, &b)| T::of(smooth_l1_grad((a - b).to_f64().unwrap())) * scale)
                        .collect();
                    emit(&mut grads, *x, Tensor::from_vec(&v.shape, dx));
                }
                Op::WeightedSum(terms) => {
                    for &(v, c) in terms {
                        if wants(v) {
                            emit(&mut grads, v, Tensor::scalar(c * dy.item()));
                        }
                    }
                }
                Op::Dot { x, w } => {
                    let s = dy.item();
                    let dx = w.data.iter().map(|&a| a * s).collect();
                    emit(&mut grads, *x, Tensor::from_vec(&w.shape, dx));
                }
            }
        }
        Gradients { grads }
    }
}
