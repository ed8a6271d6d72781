//! Reverse-mode automatic differentiation on a tape of f64 arrays.
//!
//! Every operation evaluates eagerly and records how to differentiate
//! itself. The backward pass builds its gradients *as tape nodes*, so the
//! result of [`Graph::grad`] is itself differentiable; taking `grad` of an
//! expression that contains an earlier gradient yields exact second
//! derivatives. The critic's gradient-norm penalty depends on this: its
//! parameter update differentiates through the norm of an input gradient.
//!
//! The op set is small and closed under differentiation. In particular the
//! convolution trio ([`crate::conv`]) maps onto itself: the derivative of a
//! convolution is expressed with the two adjoint kernels, and the
//! derivatives of the adjoints are expressed with the forward kernel again.

use crate::conv::{self, ConvGeom};
use ndarray::{concatenate, ArrayD, Axis, IxDyn, Slice};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Powi(Var, i32),
    SumAll(Var),
    SumPerSample(Var),
    SumToChannel(Var),
    BroadcastAll(Var),
    BroadcastPerSample(Var),
    BroadcastChannel(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    /// Adjoint of Conv2d in the input; also the forward pass of a
    /// transpose convolution (`map` holds the smaller spatial extent).
    ConvDx { map: Var, w: Var, geom: ConvGeom },
    /// Adjoint of Conv2d in the weights.
    ConvDw { x: Var, map: Var, geom: ConvGeom },
    ConcatC(Var, Var),
    SliceC { v: Var, from: usize },
    PadC { v: Var, from: usize },
    CropHw { v: Var, h0: usize, w0: usize },
    PadHw { v: Var, h0: usize, w0: usize },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Wengert-list tape. Values are evaluated as nodes are added.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "expected scalar, got shape {:?}", a.shape());
        *a.iter().next().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        debug_assert!(value.is_standard_layout());
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves ----

    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().to_owned()
        };
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(ArrayD::from_elem(IxDyn(&[]), v), Op::Leaf)
    }

    fn zeros_like(&mut self, v: Var) -> Var {
        let z = ArrayD::zeros(self.value(v).raw_dim());
        self.push(z, Op::Leaf)
    }

    // ---- elementwise ----

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|t| t * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|t| t + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|t| t * t);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|t| if t > 0.0 { t } else { slope * t });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        assert!(n >= 1, "powi exponent must be >= 1");
        if n == 1 {
            return a;
        }
        let v = self.value(a).mapv(|t| t.powi(n));
        self.push(v, Op::Powi(a, n))
    }

    // ---- reductions and broadcasts ----

    /// Sum of all elements, as a 0-d scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// `[n, ...] -> [n]`: sum over every axis but the first.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let val = self.value(a);
        let n = val.shape()[0];
        let rest = val.len() / n;
        let flat = val.as_slice().unwrap();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(flat[i * rest..(i + 1) * rest].iter().sum());
        }
        let v = ArrayD::from_shape_vec(IxDyn(&[n]), out).unwrap();
        self.push(v, Op::SumPerSample(a))
    }

    /// `[n,k,h,w] -> [k]`: sum over batch and spatial axes.
    pub fn sum_to_channel(&mut self, a: Var) -> Var {
        let val = self.value(a);
        assert_eq!(val.ndim(), 4, "sum_to_channel expects NCHW");
        let v = val
            .sum_axis(Axis(3))
            .sum_axis(Axis(2))
            .sum_axis(Axis(0))
            .into_dyn();
        let v = if v.is_standard_layout() { v } else { v.as_standard_layout().to_owned() };
        self.push(v, Op::SumToChannel(a))
    }

    /// Scalar replicated to `shape`.
    pub fn broadcast_all(&mut self, a: Var, shape: &[usize]) -> Var {
        let c = self.scalar_value(a);
        let v = ArrayD::from_elem(IxDyn(shape), c);
        self.push(v, Op::BroadcastAll(a))
    }

    /// `[n]` replicated along all trailing axes of `shape`.
    pub fn broadcast_per_sample(&mut self, a: Var, shape: &[usize]) -> Var {
        let val = self.value(a);
        assert_eq!(val.ndim(), 1, "broadcast_per_sample expects a 1-d source");
        let n = val.len();
        assert_eq!(n, shape[0], "sample count mismatch");
        let rest: usize = shape[1..].iter().product();
        let src = val.as_slice().unwrap();
        let mut out = Vec::with_capacity(n * rest);
        for &s in src {
            out.extend(std::iter::repeat(s).take(rest));
        }
        let v = ArrayD::from_shape_vec(IxDyn(shape), out).unwrap();
        self.push(v, Op::BroadcastPerSample(a))
    }

    /// `[k]` replicated along batch and spatial axes of an NCHW `shape`.
    pub fn broadcast_channel(&mut self, a: Var, shape: &[usize]) -> Var {
        let val = self.value(a);
        assert_eq!(val.ndim(), 1, "broadcast_channel expects a 1-d source");
        assert_eq!(shape.len(), 4, "broadcast_channel expects an NCHW target");
        let (n, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(val.len(), k, "channel count mismatch");
        let src = val.as_slice().unwrap();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * k * hw);
        for _ in 0..n {
            for &s in src {
                out.extend(std::iter::repeat(s).take(hw));
            }
        }
        let v = ArrayD::from_shape_vec(IxDyn(shape), out).unwrap();
        self.push(v, Op::BroadcastChannel(a))
    }

    // ---- structure ----

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ndim(), 4, "concat_channels expects NCHW");
        let v = concatenate(Axis(1), &[va.view(), vb.view()]).unwrap();
        let v = if v.is_standard_layout() { v } else { v.as_standard_layout().to_owned() };
        self.push(v, Op::ConcatC(a, b))
    }

    pub fn slice_channels(&mut self, a: Var, from: usize, to: usize) -> Var {
        let val = self.value(a);
        let v = val
            .slice_axis(Axis(1), Slice::from(from..to))
            .to_owned();
        let v = if v.is_standard_layout() { v } else { v.as_standard_layout().to_owned() };
        self.push(v, Op::SliceC { v: a, from })
    }

    fn pad_channels(&mut self, a: Var, from: usize, total: usize) -> Var {
        let val = self.value(a);
        let s = val.shape();
        let mut out = ArrayD::zeros(IxDyn(&[s[0], total, s[2], s[3]]));
        out.slice_axis_mut(Axis(1), Slice::from(from..from + s[1]))
            .assign(val);
        self.push(out, Op::PadC { v: a, from })
    }

    /// Crop the spatial axes of an NCHW value to `h_len x w_len` starting
    /// at `(h0, w0)`.
    pub fn crop_hw(&mut self, a: Var, h0: usize, h_len: usize, w0: usize, w_len: usize) -> Var {
        let val = self.value(a);
        let v = val
            .slice_axis(Axis(2), Slice::from(h0..h0 + h_len))
            .slice_axis(Axis(3), Slice::from(w0..w0 + w_len))
            .to_owned();
        let v = if v.is_standard_layout() { v } else { v.as_standard_layout().to_owned() };
        self.push(v, Op::CropHw { v: a, h0, w0 })
    }

    fn pad_hw(&mut self, a: Var, h0: usize, w0: usize, full_h: usize, full_w: usize) -> Var {
        let val = self.value(a);
        let s = val.shape();
        let mut out = ArrayD::zeros(IxDyn(&[s[0], s[1], full_h, full_w]));
        out.slice_axis_mut(Axis(2), Slice::from(h0..h0 + s[2]))
            .slice_axis_mut(Axis(3), Slice::from(w0..w0 + s[3]))
            .assign(val);
        self.push(out, Op::PadHw { v: a, h0, w0 })
    }

    // ---- convolution ----

    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let v = conv::conv2d(self.value(x), self.value(w), geom);
        self.push(v, Op::Conv2d { x, w, geom })
    }

    /// Transpose convolution. `w` is laid out `[k_in, c_out, kh, kw]` and
    /// the output spatial extent is the conv-input extent for `geom`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let out_h = geom.in_dim(xs[2], ws[2], geom.pad.top, geom.pad.bottom);
        let out_w = geom.in_dim(xs[3], ws[3], geom.pad.left, geom.pad.right);
        let v = conv::conv2d_dx(self.value(x), self.value(w), geom, (out_h, out_w));
        self.push(v, Op::ConvDx { map: x, w, geom })
    }

    fn conv2d_dx_op(&mut self, map: Var, w: Var, geom: ConvGeom, in_hw: (usize, usize)) -> Var {
        let v = conv::conv2d_dx(self.value(map), self.value(w), geom, in_hw);
        self.push(v, Op::ConvDx { map, w, geom })
    }

    fn conv2d_dw_op(&mut self, x: Var, map: Var, geom: ConvGeom, k_hw: (usize, usize)) -> Var {
        let v = conv::conv2d_dw(self.value(x), self.value(map), geom, k_hw);
        self.push(v, Op::ConvDw { x, map, geom })
    }

    /// Bias add over the channel axis of an NCHW value.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let bb = self.broadcast_channel(b, &shape);
        self.add(x, bb)
    }

    // ---- differentiation ----

    fn parents(&self, id: usize) -> Vec<usize> {
        match self.nodes[id].op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::ConcatC(a, b) => {
                vec![a.0, b.0]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Powi(a, _)
            | Op::SumAll(a)
            | Op::SumPerSample(a)
            | Op::SumToChannel(a)
            | Op::BroadcastAll(a)
            | Op::BroadcastPerSample(a)
            | Op::BroadcastChannel(a)
            | Op::SliceC { v: a, .. }
            | Op::PadC { v: a, .. }
            | Op::CropHw { v: a, .. }
            | Op::PadHw { v: a, .. } => vec![a.0],
            Op::Conv2d { x, w, .. } => vec![x.0, w.0],
            Op::ConvDx { map, w, .. } => vec![map.0, w.0],
            Op::ConvDw { x, map, .. } => vec![x.0, map.0],
        }
    }

    fn topo_from(&self, out: Var) -> Vec<usize> {
        let mut visited = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        let mut stack = vec![(out.0, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
                continue;
            }
            if visited[id] {
                continue;
            }
            visited[id] = true;
            stack.push((id, true));
            for p in self.parents(id) {
                if !visited[p] {
                    stack.push((p, false));
                }
            }
        }
        order
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, contrib: Var) {
        adj[target.0] = Some(match adj[target.0] {
            None => contrib,
            Some(existing) => self.add(existing, contrib),
        });
    }

    /// Gradients of the scalar `out` with respect to each of `wrt`.
    ///
    /// The returned gradients are tape nodes; differentiating an expression
    /// built from them yields second derivatives. Variables `out` does not
    /// depend on get a zero gradient of their own shape.
    pub fn grad(&mut self, out: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(
            self.value(out).len(),
            1,
            "grad target must be a scalar, got shape {:?}",
            self.value(out).shape()
        );
        let order = self.topo_from(out);
        let mut adj: Vec<Option<Var>> = vec![None; self.nodes.len()];
        let seed = ArrayD::ones(self.value(out).raw_dim());
        adj[out.0] = Some(self.leaf(seed));
        for &id in order.iter().rev() {
            let Some(g) = adj[id] else { continue };
            self.backward_node(id, Var(id), g, &mut adj);
        }
        wrt.iter()
            .map(|&v| adj[v.0].unwrap_or_else(|| self.zeros_like(v)))
            .collect()
    }

    fn backward_node(&mut self, id: usize, out: Var, g: Var, adj: &mut [Option<Var>]) {
        match self.nodes[id].op.clone() {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, a, g);
                self.accumulate(adj, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, g);
                let ng = self.neg(g);
                self.accumulate(adj, b, ng);
            }
            Op::Mul(a, b) => {
                let ga = self.mul(g, b);
                self.accumulate(adj, a, ga);
                let gb = self.mul(g, a);
                self.accumulate(adj, b, gb);
            }
            Op::Div(a, b) => {
                let ga = self.div(g, b);
                self.accumulate(adj, a, ga);
                // d(a/b)/db = -(a/b)/b
                let gyb = self.mul(g, out);
                let gyb = self.div(gyb, b);
                let gb = self.neg(gyb);
                self.accumulate(adj, b, gb);
            }
            Op::Scale(a, c) => {
                let ga = self.scale(g, c);
                self.accumulate(adj, a, ga);
            }
            Op::AddScalar(a) => {
                self.accumulate(adj, a, g);
            }
            Op::Abs(a) => {
                let mask = self.value(a).mapv(|t| {
                    if t > 0.0 {
                        1.0
                    } else if t < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let mask = self.leaf(mask);
                let ga = self.mul(g, mask);
                self.accumulate(adj, a, ga);
            }
            Op::Square(a) => {
                let ga = self.mul(g, a);
                let ga = self.scale(ga, 2.0);
                self.accumulate(adj, a, ga);
            }
            Op::Sqrt(a) => {
                let ga = self.div(g, out);
                let ga = self.scale(ga, 0.5);
                self.accumulate(adj, a, ga);
            }
            Op::Tanh(a) => {
                let t2 = self.square(out);
                let nt2 = self.neg(t2);
                let d = self.add_scalar(nt2, 1.0);
                let ga = self.mul(g, d);
                self.accumulate(adj, a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self
                    .value(a)
                    .mapv(|t| if t > 0.0 { 1.0 } else { slope });
                let mask = self.leaf(mask);
                let ga = self.mul(g, mask);
                self.accumulate(adj, a, ga);
            }
            Op::Powi(a, n) => {
                let p = self.powi(a, n - 1);
                let ga = self.mul(g, p);
                let ga = self.scale(ga, n as f64);
                self.accumulate(adj, a, ga);
            }
            Op::SumAll(a) => {
                let shape = self.value(a).shape().to_vec();
                let ga = self.broadcast_all(g, &shape);
                self.accumulate(adj, a, ga);
            }
            Op::SumPerSample(a) => {
                let shape = self.value(a).shape().to_vec();
                let ga = self.broadcast_per_sample(g, &shape);
                self.accumulate(adj, a, ga);
            }
            Op::SumToChannel(a) => {
                let shape = self.value(a).shape().to_vec();
                let ga = self.broadcast_channel(g, &shape);
                self.accumulate(adj, a, ga);
            }
            Op::BroadcastAll(a) => {
                let ga = self.sum_all(g);
                self.accumulate(adj, a, ga);
            }
            Op::BroadcastPerSample(a) => {
                let ga = self.sum_per_sample(g);
                self.accumulate(adj, a, ga);
            }
            Op::BroadcastChannel(a) => {
                let ga = self.sum_to_channel(g);
                self.accumulate(adj, a, ga);
            }
            Op::Conv2d { x, w, geom } => {
                let xs = self.value(x).shape().to_vec();
                let ws = self.value(w).shape().to_vec();
                let gx = self.conv2d_dx_op(g, w, geom, (xs[2], xs[3]));
                self.accumulate(adj, x, gx);
                let gw = self.conv2d_dw_op(x, g, geom, (ws[2], ws[3]));
                self.accumulate(adj, w, gw);
            }
            Op::ConvDx { map, w, geom } => {
                // out = dx(map, w) is linear in both arguments:
                //   d/d map -> conv(g, w);  d/d w -> dw(x: g, map: map).
                let ws = self.value(w).shape().to_vec();
                let gm = self.conv2d(g, w, geom);
                self.accumulate(adj, map, gm);
                let gw = self.conv2d_dw_op(g, map, geom, (ws[2], ws[3]));
                self.accumulate(adj, w, gw);
            }
            Op::ConvDw { x, map, geom } => {
                // out = dw(x, map), g has kernel shape and acts as weights.
                let xs = self.value(x).shape().to_vec();
                let gx = self.conv2d_dx_op(map, g, geom, (xs[2], xs[3]));
                self.accumulate(adj, x, gx);
                let gm = self.conv2d(x, g, geom);
                self.accumulate(adj, map, gm);
            }
            Op::ConcatC(a, b) => {
                let ca = self.value(a).shape()[1];
                let cb = self.value(b).shape()[1];
                let ga = self.slice_channels(g, 0, ca);
                self.accumulate(adj, a, ga);
                let gb = self.slice_channels(g, ca, ca + cb);
                self.accumulate(adj, b, gb);
            }
            Op::SliceC { v, from } => {
                let total = self.value(v).shape()[1];
                let ga = self.pad_channels(g, from, total);
                self.accumulate(adj, v, ga);
            }
            Op::PadC { v, from } => {
                let cv = self.value(v).shape()[1];
                let ga = self.slice_channels(g, from, from + cv);
                self.accumulate(adj, v, ga);
            }
            Op::CropHw { v, h0, w0 } => {
                let s = self.value(v).shape().to_vec();
                let ga = self.pad_hw(g, h0, w0, s[2], s[3]);
                self.accumulate(adj, v, ga);
            }
            Op::PadHw { v, h0, w0 } => {
                let s = self.value(v).shape().to_vec();
                let ga = self.crop_hw(g, h0, s[2], w0, s[3]);
                self.accumulate(adj, v, ga);
            }
        }
    }

}
