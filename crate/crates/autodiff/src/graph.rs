//! The differentiation tape.
//!
//! A [`Graph`] owns every value produced during a forward pass. Operations on
//! nodes that require gradients are appended to the tape in execution order;
//! [`Graph::backward`] walks the tape in reverse. A graph built with
//! [`Graph::no_grad`] computes values only and never records.

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, Conv1dGeom, Conv2dGeom, Padding};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: Conv1dGeom },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: Conv2dGeom },
    Dense { x: Var, w: Var, b: Option<Var>, batch: usize, n_in: usize, n_out: usize },
    GlobalAvgPool { x: Var, spatial: usize },
    Sum(Var),
    Mse { pred: Var, target: Var },
    Reshape(Var),
    Select { x: Var, index: usize, steps: usize, inner: usize },
}

#[derive(Debug)]
struct Record {
    out: Var,
    op: Op,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    tape: Vec<Record>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(slots: &mut [Option<Vec<f64>>], v: Var, buf: Vec<f64>) {
    match &mut slots[v.0] {
        Some(existing) => add_into(existing, &buf),
        slot @ None => *slot = Some(buf),
    }
}

impl Graph {
    /// A recording graph.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), tape: Vec::new(), recording: true }
    }

    /// A graph that evaluates values without recording any operation.
    pub fn no_grad() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded operations.
    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// A leaf that receives gradients (a trainable parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = self.recording;
        self.insert(value, requires_grad)
    }

    /// A leaf that never receives gradients (data, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.insert(value, false)
    }

    fn insert(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let out = self.insert(value, requires_grad);
        if requires_grad {
            self.tape.push(Record { out, op });
        }
        out
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, `None` until a backward pass reaches `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let shape = self.shape(v).to_vec();
        self.grad(v).map(|g| Tensor::new(shape, g.to_vec()).expect("gradient matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::shape(
                op,
                format!("left {:?} vs right {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.map(a, |x| x * factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    /// 1D cross-correlation. `x: [batch, c_in, len]`, `w: [c_out, c_in, k]`, `b: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let geom = Conv1dGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return Err(AutodiffError::shape(
                    "conv1d",
                    format!("bias must be [{}] (channels_out), got {:?}", geom.c_out, self.shape(b)),
                ));
            }
        }
        let mut out = Tensor::zeros(geom.out_shape());
        kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Conv1d { x, w, b, geom }, &parents))
    }

    /// 2D cross-correlation. `x: [batch, c_in, h, w]`, `w: [c_out, c_in, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let geom = Conv2dGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return Err(AutodiffError::shape(
                    "conv2d",
                    format!("bias must be [{}] (channels_out), got {:?}", geom.c_out, self.shape(b)),
                ));
            }
        }
        let mut out = Tensor::zeros(geom.out_shape());
        kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &parents))
    }

    /// Affine map `x: [batch, in]`, `w: [out, in]`, `b: [out]` -> `[batch, out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 {
            return Err(AutodiffError::shape("dense", format!("x {xs:?} and w {ws:?} must both be rank 2")));
        }
        if xs[1] != ws[1] {
            return Err(AutodiffError::shape(
                "dense",
                format!("input features of x ({}) != input features of w ({})", xs[1], ws[1]),
            ));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(AutodiffError::shape("dense", format!("bias must be [{n_out}], got {:?}", self.shape(b))));
            }
        }
        let mut out = Tensor::zeros(vec![batch, n_out]);
        kernels::dense_forward(
            batch,
            n_in,
            n_out,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            out.data_mut(),
        );
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Dense { x, w, b, batch, n_in, n_out }, &parents))
    }

    /// Mean over every axis after the first two: `[batch, c, ...] -> [batch, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 3 {
            return Err(AutodiffError::shape("global_avg_pool", format!("need rank >= 3, got {xs:?}")));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(spatial)
            .map(|c| c.iter().sum::<f64>() / spatial as f64)
            .collect();
        let out = Tensor::new(vec![batch, channels], data)?;
        Ok(self.push(out, Op::GlobalAvgPool { x, spatial }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len().max(1) as f64;
        let l = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Tensor::scalar(l), Op::Mse { pred, target }, &[pred, target]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Picks `index` along axis 1: `[n, steps, rest...] -> [n, rest...]`.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(AutodiffError::shape("select", format!("need rank >= 2, got {xs:?}")));
        }
        let steps = xs[1];
        if index >= steps {
            return Err(AutodiffError::invalid("select", format!("index {index} out of range for axis 1 of size {steps}")));
        }
        let inner: usize = xs[2..].iter().product();
        let mut shape = vec![xs[0]];
        shape.extend_from_slice(&xs[2..]);
        if shape.len() == 1 {
            shape.push(1);
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(xs[0] * inner);
        for n in 0..xs[0] {
            data.extend_from_slice(&src[(n * steps + index) * inner..][..inner]);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Select { x, index, steps, inner }, &[x]))
    }

    /// Reverse pass from a one-element `loss`. Gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(ls.to_vec()));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        tmp[loss.0] = Some(vec![1.0]);
        for rec in self.tape.iter().rev() {
            let Some(gout) = tmp[rec.out.0].take() else { continue };
            self.backprop_record(rec, &gout, &mut tmp);
            accumulate(&mut self.grads, rec.out, gout);
        }
        for (i, g) in tmp.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[i].requires_grad {
                    accumulate(&mut self.grads, Var(i), g);
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_record(&self, rec: &Record, g: &[f64], tmp: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let y = val(rec.out);
        match rec.op {
            Op::Add(a, b) => {
                for p in [a, b] {
                    if self.needs(p) {
                        accumulate(tmp, p, g.to_vec());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(tmp, a, g.to_vec());
                }
                if self.needs(b) {
                    accumulate(tmp, b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    accumulate(tmp, a, g.iter().zip(val(b)).map(|(g, y)| g * y).collect());
                }
                if self.needs(b) {
                    accumulate(tmp, b, g.iter().zip(val(a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, f) => {
                if self.needs(a) {
                    accumulate(tmp, a, g.iter().map(|g| g * f).collect());
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(a) {
                    accumulate(tmp, a, g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect());
                }
            }
            Op::Tanh(a) => {
                if self.needs(a) {
                    accumulate(tmp, a, g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect());
                }
            }
            Op::Relu(a) => {
                if self.needs(a) {
                    accumulate(tmp, a, g.iter().zip(y).map(|(&g, &o)| if o > 0.0 { g } else { 0.0 }).collect());
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let mut dx = self.needs(x).then(|| vec![0.0; val(x).len()]);
                let mut dw = self.needs(w).then(|| vec![0.0; val(w).len()]);
                let mut db = b.filter(|&b| self.needs(b)).map(|_| vec![0.0; geom.c_out]);
                kernels::conv1d_backward(
                    &geom,
                    val(x),
                    val(w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.scatter(tmp, [(x, dx), (w, dw), (b.unwrap_or(w), db)]);
            }
            Op::Conv2d { x, w, b, geom } => {
                let mut dx = self.needs(x).then(|| vec![0.0; val(x).len()]);
                let mut dw = self.needs(w).then(|| vec![0.0; val(w).len()]);
                let mut db = b.filter(|&b| self.needs(b)).map(|_| vec![0.0; geom.c_out]);
                kernels::conv2d_backward(
                    &geom,
                    val(x),
                    val(w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.scatter(tmp, [(x, dx), (w, dw), (b.unwrap_or(w), db)]);
            }
            Op::Dense { x, w, b, batch, n_in, n_out } => {
                let mut dx = self.needs(x).then(|| vec![0.0; val(x).len()]);
                let mut dw = self.needs(w).then(|| vec![0.0; val(w).len()]);
                let mut db = b.filter(|&b| self.needs(b)).map(|_| vec![0.0; n_out]);
                kernels::dense_backward(
                    batch,
                    n_in,
                    n_out,
                    val(x),
                    val(w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.scatter(tmp, [(x, dx), (w, dw), (b.unwrap_or(w), db)]);
            }
            Op::GlobalAvgPool { x, spatial } => {
                if self.needs(x) {
                    let inv = 1.0 / spatial as f64;
                    let d = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, spatial)).collect();
                    accumulate(tmp, x, d);
                }
            }
            Op::Sum(x) => {
                if self.needs(x) {
                    accumulate(tmp, x, vec![g[0]; val(x).len()]);
                }
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(pred), val(target));
                let scale = 2.0 * g[0] / p.len().max(1) as f64;
                let d: Vec<f64> = p.iter().zip(t).map(|(a, b)| scale * (a - b)).collect();
                if self.needs(target) {
                    accumulate(tmp, target, d.iter().map(|x| -x).collect());
                }
                if self.needs(pred) {
                    accumulate(tmp, pred, d);
                }
            }
            Op::Reshape(x) => {
                if self.needs(x) {
                    accumulate(tmp, x, g.to_vec());
                }
            }
            Op::Select { x, index, steps, inner } => {
                if self.needs(x) {
                    let mut d = vec![0.0; val(x).len()];
                    for (n, gc) in g.chunks_exact(inner).enumerate() {
                        d[(n * steps + index) * inner..][..inner].copy_from_slice(gc);
                    }
                    accumulate(tmp, x, d);
                }
            }
        }
    }

    fn scatter<const N: usize>(&self, tmp: &mut [Option<Vec<f64>>], parts: [(Var, Option<Vec<f64>>); N]) {
        for (v, d) in parts {
            if let Some(d) = d {
                accumulate(tmp, v, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn activations_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![3]));
        let s = g.sigmoid(x);
        let th = g.tanh(x);
        assert_eq!(g.value(s).data(), &[0.5; 3]);
        assert_eq!(g.value(th).data(), &[0.0; 3]);
    }

    #[test]
    fn mse_of_equal_is_zero_with_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 1], &[0.3, -1.2]));
        let l = g.mse_loss(x, x).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn avg_pool_constant_map() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(vec![2, 3, 5], 1.7));
        let p = g.global_avg_pool(x).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 1.7).abs() < 1e-15));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn unused_parameter_gets_zero_or_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let unused = g.leaf(t(&[2], &[3.0, 4.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(unused).is_none_or(|d| d.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0]);
        g.zero_grad();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarLoss(_))));
    }

    #[test]
    fn no_grad_graph_records_nothing() {
        let mut g = Graph::no_grad();
        let x = g.leaf(Tensor::full(vec![1, 1, 4], 1.0));
        let w = g.leaf(Tensor::full(vec![2, 1, 3], 0.5));
        let y = g.conv1d(x, w, None, 1, Padding::Same).unwrap();
        let _ = g.relu(y);
        assert_eq!(g.tape_len(), 0);
    }

    #[test]
    fn constants_are_not_differentiated() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.leaf(t(&[2], &[3.0, 4.0]));
        let y = g.mul(x, w).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_dimension() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![1, 3, 10]));
        let w = g.leaf(Tensor::zeros(vec![2, 4, 3]));
        let err = g.conv1d(x, w, None, 1, Padding::Same).unwrap_err();
        assert!(err.to_string().contains("channels_in"), "{err}");
        let a = g.leaf(Tensor::zeros(vec![2]));
        let b = g.leaf(Tensor::zeros(vec![3]));
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn select_picks_time_step() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3, 2], &[0., 1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11.]));
        let s = g.select(x, 1).unwrap();
        assert_eq!(g.shape(s), &[2, 2]);
        assert_eq!(g.value(s).data(), &[2., 3., 8., 9.]);
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0., 0., 1., 1., 0., 0., 0., 0., 1., 1., 0., 0.]);
    }
}
