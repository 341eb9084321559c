//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the [`Tape`]; nodes are created in
//! topological order, so [`Tape::backward`] walks them in reverse exactly once.
//! A tape and its [`Var`] handles are confined to one thread.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng as _;

use super::kernels::{self, BatchNormCache, Conv2dGeom};
use super::tensor::{broadcast_shape, index_map, sum_to_shape, Real, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Backward rule for [`Tape::custom`]: `(grad_out, inputs, output) -> grads`.
pub type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnMode<'a, T> {
    Train,
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Reshape(usize),
    Transpose(usize),
    SumAll(usize),
    Mean(usize),
    Max { x: usize, arg: Vec<usize> },
    Conv { x: usize, w: usize, b: Option<usize>, geom: Conv2dGeom },
    BatchNorm { x: usize, gamma: usize, beta: usize, cache: BatchNormCache<T>, train: bool },
    Softmax { x: usize, axis: usize },
    MatMul(usize, usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { x: usize, axis: usize, start: usize },
    Dropout { x: usize, mask: Vec<T> },
    CrossEntropy { logits: usize, labels: Vec<usize>, probs: Tensor<T> },
    Custom { inputs: Vec<usize>, backward: CustomBackward<T> },
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    tracked: bool,
}

pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_, T>) -> Tensor<T> {
        self.grads[v.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }

    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads[v.id].as_ref()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].tracked)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Records an operation with a caller-supplied backward rule.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t, T>],
        forward: impl FnOnce(&[&Tensor<T>]) -> Result<Tensor<T>>,
        backward: CustomBackward<T>,
    ) -> Result<Var<'t, T>> {
        let vals: Vec<Rc<Tensor<T>>> = inputs.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|v| v.as_ref()).collect();
        let out = forward(&refs)?;
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let tracked = self.tracked(&ids);
        Ok(self.push(out, Op::Custom { inputs: ids, backward }, tracked))
    }

    pub fn concat<'t>(&'t self, inputs: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?
            .shape();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        let shapes: Vec<Vec<usize>> = inputs.iter().map(|v| v.shape()).collect();
        for s in &shapes {
            let same = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
        }
        let mut out_shape = first.clone();
        out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
        let (outer, _, inner) = kernels::axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        let vals: Vec<Rc<Tensor<T>>> = inputs.iter().map(|v| v.value()).collect();
        for o in 0..outer {
            for (v, s) in vals.iter().zip(&shapes) {
                let chunk = s[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let tracked = self.tracked(&ids);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Concat { inputs: ids, axis },
            tracked,
        ))
    }

    /// Computes gradients of `loss` for every tracked node.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let n = nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(&loss_shape));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (pid, pg) in node_backward(&nodes, node, &g) {
                if nodes[pid].tracked {
                    accumulate(&mut grads[pid], pg);
                }
            }
        }
        // Drop intermediate gradients; keep leaves only.
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn val<T: Real>(nodes: &[Node<T>], id: usize) -> &Tensor<T> {
    &nodes[id].value
}

fn node_backward<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let out = &node.value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, sum_to_shape(g, val(nodes, *a).shape())),
            (*b, sum_to_shape(g, val(nodes, *b).shape())),
        ],
        Op::Sub(a, b) => {
            let gb = sum_to_shape(g, val(nodes, *b).shape()).map(|v| -v);
            vec![(*a, sum_to_shape(g, val(nodes, *a).shape())), (*b, gb)]
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let ma = index_map(g.shape(), av.shape());
            let mb = index_map(g.shape(), bv.shape());
            let mut ga = Tensor::zeros(av.shape());
            let mut gb = Tensor::zeros(bv.shape());
            let is_div = matches!(node.op, Op::Div(..));
            for (i, &gv) in g.data().iter().enumerate() {
                let (x, y) = (av.data()[ma[i]], bv.data()[mb[i]]);
                if is_div {
                    ga.data_mut()[ma[i]] += gv / y;
                    gb.data_mut()[mb[i]] -= gv * x / (y * y);
                } else {
                    ga.data_mut()[ma[i]] += gv * y;
                    gb.data_mut()[mb[i]] += gv * x;
                }
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Scale(a, s) => vec![(*a, g.map(|v| v * *s))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Relu(a) => {
            let x = val(nodes, *a);
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![(*a, Tensor::new(x.shape(), data).expect("shape"))]
        }
        Op::Sigmoid(a) => {
            let data = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(&gv, &y)| gv * y * (T::one() - y))
                .collect();
            vec![(*a, Tensor::new(out.shape(), data).expect("shape"))]
        }
        Op::Reshape(a) => vec![(*a, g.reshape(val(nodes, *a).shape()).expect("numel"))],
        Op::Transpose(a) => vec![(*a, kernels::transpose_last2(g).expect("rank"))],
        Op::SumAll(a) => {
            let x = val(nodes, *a);
            vec![(*a, Tensor::full(x.shape(), g.data()[0]))]
        }
        Op::Mean(a) => {
            let x = val(nodes, *a);
            let map = index_map(x.shape(), g.shape());
            let count = T::lit((x.numel() / g.numel()) as f64);
            let data = map.iter().map(|&o| g.data()[o] / count).collect();
            vec![(*a, Tensor::new(x.shape(), data).expect("shape"))]
        }
        Op::Max { x, arg } => {
            let mut gx = Tensor::zeros(val(nodes, *x).shape());
            for (o, &i) in arg.iter().enumerate() {
                gx.data_mut()[i] += g.data()[o];
            }
            vec![(*x, gx)]
        }
        Op::Conv { x, w, b, geom } => {
            let (gx, gw, gb) =
                kernels::conv2d_backward(val(nodes, *x), val(nodes, *w), geom, g).expect("conv shapes");
            let mut v = vec![(*x, gx), (*w, gw)];
            if let Some(b) = b {
                v.push((*b, gb));
            }
            v
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            cache,
            train,
        } => {
            let (gx, gg, gb) =
                kernels::batch_norm_backward(val(nodes, *x).shape(), val(nodes, *gamma), cache, g, *train);
            vec![(*x, gx), (*gamma, gg), (*beta, gb)]
        }
        Op::Softmax { x, axis } => vec![(*x, kernels::softmax_backward(out, g, *axis))],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let bt = kernels::transpose_last2(bv).expect("rank");
            let at = kernels::transpose_last2(av).expect("rank");
            vec![
                (*a, kernels::matmul(g, &bt).expect("shapes")),
                (*b, kernels::matmul(&at, g).expect("shapes")),
            ]
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = kernels::axis_split(g.shape(), *axis);
            let total = g.shape()[*axis];
            let mut offset = 0;
            inputs
                .iter()
                .map(|&id| {
                    let shape = val(nodes, id).shape().to_vec();
                    let len = shape[*axis];
                    let mut data = Vec::with_capacity(shape.iter().product());
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[start..start + len * inner]);
                    }
                    offset += len;
                    (id, Tensor::new(&shape, data).expect("shape"))
                })
                .collect()
        }
        Op::Narrow { x, axis, start } => {
            let xs = val(nodes, *x).shape().to_vec();
            let (outer, full, inner) = kernels::axis_split(&xs, *axis);
            let len = g.shape()[*axis];
            let mut gx = Tensor::zeros(&xs);
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                let src = o * len * inner;
                gx.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![(*x, gx)]
        }
        Op::Dropout { x, mask } => {
            let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
            vec![(*x, Tensor::new(g.shape(), data).expect("shape"))]
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let k = probs.shape()[1];
            let scale = g.data()[0] / T::lit(labels.len() as f64);
            let mut gl = probs.clone();
            for (row, &l) in gl.data_mut().chunks_mut(k).zip(labels) {
                row[l] -= T::one();
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![(*logits, gl)]
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| val(nodes, i)).collect();
            inputs.iter().copied().zip(backward(g, &vals, out)).collect()
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let tracked = self.tape.tracked(&[self.id]);
        self.tape.push(value, op, tracked)
    }

    fn binary(
        &self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape(), data)?
        } else {
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
                Error::shape(name, format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()))
            })?;
            let (ma, mb) = (index_map(&shape, a.shape()), index_map(&shape, b.shape()));
            let data = ma
                .iter()
                .zip(&mb)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect();
            Tensor::new(&shape, data)?
        };
        let tracked = self.tape.tracked(&[self.id, other.id]);
        Ok(self.tape.push(out, op, tracked))
    }

    /// Broadcasting addition.
    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        self.unary(self.value().map(|v| v * s), Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: T) -> Var<'t, T> {
        self.unary(self.value().map(|v| v + s), Op::AddScalar(self.id))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(self.value().map(|v| v.max(T::zero())), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(self.value().map(sigmoid_scalar), Op::Sigmoid(self.id))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn transpose_last2(&self) -> Result<Var<'t, T>> {
        let v = kernels::transpose_last2(&self.value())?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::SumAll(self.id))
    }

    /// Mean over `axes`, keeping reduced axes with length 1.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        let v = kernels::reduce_mean(&self.value(), axes)?;
        Ok(self.unary(v, Op::Mean(self.id)))
    }

    /// Max over `axes`, keeping reduced axes with length 1.
    pub fn max_axes(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        let (v, arg) = kernels::reduce_max(&self.value(), axes)?;
        Ok(self.unary(v, Op::Max { x: self.id, arg }))
    }

    /// Min over `axes` via `-max(-x)`.
    pub fn min_axes(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        Ok(self.scale(-T::one()).max_axes(axes)?.scale(-T::one()))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let v = kernels::softmax(&self.value(), axis)?;
        Ok(self.unary(v, Op::Softmax { x: self.id, axis }))
    }

    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = kernels::matmul(&self.value(), &other.value())?;
        let tracked = self.tape.tracked(&[self.id, other.id]);
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id), tracked))
    }

    pub fn conv2d(&self, w: Var<'t, T>, b: Option<Var<'t, T>>, geom: Conv2dGeom) -> Result<Var<'t, T>> {
        let bv = b.map(|b| b.value());
        let v = kernels::conv2d(&self.value(), &w.value(), bv.as_deref(), &geom)?;
        let mut ids = vec![self.id, w.id];
        ids.extend(b.map(|b| b.id));
        let tracked = self.tape.tracked(&ids);
        Ok(self.tape.push(
            v,
            Op::Conv {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
            tracked,
        ))
    }

    /// Batch normalization over (B, H, W). In train mode the batch mean and
    /// biased variance are returned alongside the output.
    pub fn batch_norm(
        &self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        mode: BnMode<'_, T>,
        eps: f64,
    ) -> Result<(Var<'t, T>, Option<(Vec<T>, Vec<T>)>)> {
        let x = self.value();
        let (g, b) = (gamma.value(), beta.value());
        let (out, cache, train) = match mode {
            BnMode::Train => {
                let (o, c) = kernels::batch_norm_train(&x, &g, &b, eps)?;
                (o, c, true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
            } => {
                let (o, c) = kernels::batch_norm_eval(&x, &g, &b, running_mean, running_var, eps)?;
                (o, c, false)
            }
        };
        let stats = train.then(|| (cache.mean.clone(), cache.var.clone()));
        let tracked = self.tape.tracked(&[self.id, gamma.id, beta.id]);
        let v = self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                cache,
                train,
            },
            tracked,
        );
        Ok((v, stats))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = kernels::axis_split(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[s..s + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(self.unary(
            Tensor::new(&out_shape, data)?,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    /// `rng = None` (eval mode) or `p = 0` is the identity.
    pub fn dropout(&self, p: f64, rng: Option<&mut Rng>) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout p={p} must lie in [0, 1)")));
        }
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(*self),
        };
        let keep = T::lit(1.0 / (1.0 - p));
        let x = self.value();
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.unary(Tensor::new(x.shape(), data)?, Op::Dropout { x: self.id, mask }))
    }

    /// Mean cross-entropy of `(B, K)` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t, T>> {
        let (loss, probs) = kernels::cross_entropy(&self.value(), labels)?;
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
