//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every operation evaluates eagerly and
//! records how to pull a gradient back to its inputs. Domain terms whose
//! backward pass is easier to write by hand (synthesis, gating, the legality
//! energy) enter through [`Graph::custom`].

use super::tensor::{matmul_at_acc, matmul_bt_acc, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Silu(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Reshape(Var),
    Clamp(Var, f64, f64),
    /// Forward value supplied externally, gradient passed through unchanged.
    Straight(Var),
    Custom(Vec<Var>, BackwardFn),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of evaluated operations.
///
/// With `relaxed` set, straight-through nodes forward their continuous
/// surrogate instead of the discrete value, so the recorded function is
/// smooth and finite differences can check the backward rules.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    relaxed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn relaxed() -> Self {
        Self {
            nodes: Vec::new(),
            relaxed: true,
        }
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `v`'s value that blocks gradient flow.
    pub fn stop_grad(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(t, Op::AddScalar(a), rg)
    }

    /// `a[n×m] + b[m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        assert_eq!(self.value(b).len(), m, "add_row width");
        let mut t = self.value(a).clone();
        let bv = self.value(b).data();
        for i in 0..n {
            for (x, &y) in t.data_mut()[i * m..(i + 1) * m].iter_mut().zip(bv) {
                *x += y;
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(t, Op::AddRow(a, b), rg)
    }

    /// `a[n×m] ⊙ b[m]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        assert_eq!(self.value(b).len(), m, "mul_row width");
        let mut t = self.value(a).clone();
        let bv = self.value(b).data();
        for i in 0..n {
            for (x, &y) in t.data_mut()[i * m..(i + 1) * m].iter_mut().zip(bv) {
                *x *= y;
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MulRow(a, b), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(t, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose2();
        let rg = self.rg(&[a]);
        self.push(t, Op::Transpose(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(&[a]);
        self.push(t, Op::Silu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(t, Op::Exp(a), rg)
    }

    /// `|a|` with subgradient 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        let rg = self.rg(&[a]);
        self.push(t, Op::Abs(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(t, Op::Square(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(t, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(t, Op::Mean(a), rg)
    }

    /// Column-wise mean of an `n×m` matrix, giving an `m` vector.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, &x) in out.iter_mut().zip(self.value(a).row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::vector(out), Op::MeanRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.value(a).dims2();
        let mut t = self.value(a).clone();
        for i in 0..n {
            let row = &mut t.data_mut()[i * m..(i + 1) * m];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::SoftmaxRows(a), rg)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (n, m) = self.value(a).dims2();
        let mut t = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut t.data_mut()[i * m..(i + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mu) * is);
            inv_std.push(is);
        }
        let rg = self.rg(&[a]);
        self.push(t, Op::LayerNormRows(a, inv_std), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.value(a).dims2();
        assert!(start + len <= m);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&src[i * m + start..i * m + start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_vec(&[n, len], out), Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        self.push(
            Tensor::from_vec(&[n, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self
            .value(a)
            .clone()
            .reshape(shape)
            .expect("reshape size mismatch");
        let rg = self.rg(&[a]);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(t, Op::Clamp(a, lo, hi), rg)
    }

    /// Straight-through node: forwards `hard` (or `a`'s own value on a
    /// relaxed graph) and passes gradients to `a` unchanged.
    pub fn straight_through(&mut self, a: Var, hard: Tensor) -> Var {
        assert_eq!(hard.len(), self.value(a).len());
        let t = if self.relaxed {
            self.value(a).clone()
        } else {
            hard
        };
        let rg = self.rg(&[a]);
        self.push(t, Op::Straight(a), rg)
    }

    /// Node with a hand-written backward rule. `backward` maps the output
    /// gradient to one optional gradient per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), Box::new(backward)), rg)
    }

    /// Fails if `v` holds a non-finite value.
    pub fn check_finite(&self, v: Var, term: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                term: term.to_string(),
            })
        }
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.pull_back(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot @ None => *slot = Some(g),
        }
    }

    fn pull_back(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) | Op::Straight(a) => self.accumulate(grads, *a, g.clone()),
            Op::Reshape(a) => {
                let t = Tensor::from_vec(self.value(*a).shape(), g.data().to_vec());
                self.accumulate(grads, *a, t);
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let (n, m) = g.dims2();
                    let mut gb = vec![0.0; m];
                    for i in 0..n {
                        for (o, &x) in gb.iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    let t = Tensor::from_vec(self.value(*b).shape(), gb);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::MulRow(a, b) => {
                let (n, m) = g.dims2();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    let mut ga = g.clone();
                    for i in 0..n {
                        for (x, &y) in ga.data_mut()[i * m..(i + 1) * m].iter_mut().zip(bv) {
                            *x *= y;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a);
                    let mut gb = vec![0.0; m];
                    for i in 0..n {
                        for ((o, &x), &y) in gb.iter_mut().zip(g.row(i)).zip(av.row(i)) {
                            *o += x * y;
                        }
                    }
                    let t = Tensor::from_vec(self.value(*b).shape(), gb);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.value(*a).dims2();
                let m = self.value(*b).dims2().1;
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; n * k];
                    matmul_bt_acc(g.data(), self.value(*b).data(), &mut ga, n, m, k);
                    let t = Tensor::from_vec(self.value(*a).shape(), ga);
                    self.accumulate(grads, *a, t);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * m];
                    matmul_at_acc(self.value(*a).data(), g.data(), &mut gb, n, k, m);
                    let t = Tensor::from_vec(self.value(*b).shape(), gb);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose2()),
            Op::Sigmoid(a) => {
                let t = g.zip_map(out, |gv, s| gv * s * (1.0 - s));
                self.accumulate(grads, *a, t);
            }
            Op::Silu(a) => {
                let t = g.zip_map(self.value(*a), |gv, x| {
                    let s = sigmoid(x);
                    gv * (s + x * s * (1.0 - s))
                });
                self.accumulate(grads, *a, t);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |gv, e| gv * e)),
            Op::Abs(a) => {
                let t = g.zip_map(self.value(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, t);
            }
            Op::Square(a) => {
                let t = g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x);
                self.accumulate(grads, *a, t);
            }
            Op::Sum(a) => {
                let t = Tensor::full(self.value(*a).shape(), g.item());
                self.accumulate(grads, *a, t);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let t = Tensor::full(self.value(*a).shape(), g.item() / n);
                self.accumulate(grads, *a, t);
            }
            Op::MeanRows(a) => {
                let (n, m) = self.value(*a).dims2();
                let mut t = Tensor::zeros(self.value(*a).shape());
                for i in 0..n {
                    for (o, &x) in t.data_mut()[i * m..(i + 1) * m].iter_mut().zip(g.data()) {
                        *o = x / n as f64;
                    }
                }
                self.accumulate(grads, *a, t);
            }
            Op::SoftmaxRows(a) => {
                let (n, m) = out.dims2();
                let mut t = Tensor::zeros(out.shape());
                for i in 0..n {
                    let s = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for j in 0..m {
                        t.data_mut()[i * m + j] = s[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, t);
            }
            Op::LayerNormRows(a, inv_std) => {
                let (n, m) = out.dims2();
                let mut t = Tensor::zeros(out.shape());
                for i in 0..n {
                    let y = out.row(i);
                    let gr = g.row(i);
                    let mg = gr.iter().sum::<f64>() / m as f64;
                    let mgy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                    for j in 0..m {
                        t.data_mut()[i * m + j] = inv_std[i] * (gr[j] - mg - y[j] * mgy);
                    }
                }
                self.accumulate(grads, *a, t);
            }
            Op::SliceCols(a, start) => {
                let (n, m) = self.value(*a).dims2();
                let len = g.dims2().1;
                let mut t = Tensor::zeros(self.value(*a).shape());
                for i in 0..n {
                    t.data_mut()[i * m + start..i * m + start + len].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, t);
            }
            Op::ConcatCols(parts) => {
                let (n, total) = g.dims2();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    if self.requires_grad(p) {
                        let mut buf = Vec::with_capacity(n * w);
                        for i in 0..n {
                            buf.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                        }
                        let t = Tensor::from_vec(self.value(p).shape(), buf);
                        self.accumulate(grads, p, t);
                    }
                    off += w;
                }
            }
            Op::Clamp(a, lo, hi) => {
                let t = g.zip_map(self.value(*a), |gv, x| {
                    if x >= *lo && x <= *hi {
                        gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, t);
            }
            Op::Custom(inputs, f) => {
                for (v, gi) in inputs.iter().zip(f(g)) {
                    if let Some(gi) = gi {
                        debug_assert_eq!(gi.len(), self.value(*v).len());
                        self.accumulate(grads, *v, gi);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_sigmoid_derivatives() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.square(x);
        assert_eq!(g.scalar(y), 9.0);
        assert_eq!(g.backward(y).get(x).unwrap().item(), 6.0);

        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.scalar(y), 0.5);
        assert_eq!(g.backward(y).get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn straight_through_value_and_gradient() {
        // r = b + q - sg(q): value b, d r / d q = 1
        let mut g = Graph::new();
        let q = g.param(Tensor::vector(vec![0.3, 0.8]));
        let r = g.straight_through(q, Tensor::vector(vec![1.0, 0.0]));
        assert_eq!(g.value(r).data(), &[1.0, 0.0]);
        let s = g.sum(r);
        assert_eq!(g.backward(s).get(q).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.param(Tensor::scalar(5.0));
        let c = g.mul(a, b);
        let grads = g.backward(c);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().item(), 2.0);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let sx = g.stop_grad(x);
        let y = g.mul(x, sx);
        assert_eq!(g.backward(y).get(x).unwrap().item(), 2.0);
    }
}
