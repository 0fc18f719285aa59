use std::cell::RefCell;
use std::fmt;

use rand::Rng;

use super::kernels::{self, NormStats};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Backward rule for a user-defined operation: receives the input values,
/// the output value and the upstream gradient, returns one gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

enum Op<T: Real> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Matmul(usize, usize),
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, stats: NormStats<T> },
    Gelu(usize),
    Relu(usize),
    Sigmoid(usize),
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Tensor<T> },
    Reshape(usize),
    Permute { x: usize, perm: Vec<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Sum { x: usize, axis: usize },
    Mean { x: usize, axis: usize },
    SumAll(usize),
    Roll { x: usize, shifts: Vec<isize>, axes: Vec<usize> },
    IndexSelect { x: usize, indices: Vec<usize> },
    Custom { inputs: Vec<usize>, backward: BackwardFn<T> },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Reshape(x)
            | Op::SumAll(x)
            | Op::Softmax { x, .. }
            | Op::CrossEntropy { logits: x, .. }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::Sum { x, .. }
            | Op::Mean { x, .. }
            | Op::Roll { x, .. }
            | Op::IndexSelect { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so every node's inputs precede it.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], retained for leaf nodes.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Takes ownership of a leaf gradient.
    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records a differentiable input.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor<T>> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.id].value).collect();
            kernels::concat(&refs, axis)?
        };
        Ok(self.push(value, Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis }))
    }

    /// Records an operation with a caller-supplied value and backward rule.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t, T>],
        forward: impl FnOnce(&[&Tensor<T>]) -> Result<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Result<Var<'t, T>> {
        let value = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&Tensor<T>> = inputs.iter().map(|p| &nodes[p.id].value).collect();
            forward(&refs)?
        };
        Ok(self.push(value, Op::Custom { inputs: inputs.iter().map(|p| p.id).collect(), backward }))
    }

    /// Reverse pass from a one-element `loss`. Every node is visited once, in
    /// reverse execution order; gradients of fanned-out values accumulate.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &nodes[i].value;
            let mut emit = |i: usize, t: Tensor<T>| {
                if !needs(i) {
                    return;
                }
                match grads[i].as_mut() {
                    Some(acc) => acc.add_assign(&t).expect("gradient shape matches node"),
                    None => grads[i] = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    emit(*a, kernels::reduce_broadcast(&g, val(*a).shape()));
                    emit(*b, kernels::reduce_broadcast(&g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    emit(*a, kernels::reduce_broadcast(&g, val(*a).shape()));
                    let neg = g.map(|v| -v);
                    emit(*b, kernels::reduce_broadcast(&neg, val(*b).shape()));
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        let full = kernels::binary("mul", &g, val(*b), |x, y| x * y)?;
                        emit(*a, kernels::reduce_broadcast(&full, val(*a).shape()));
                    }
                    if needs(*b) {
                        let full = kernels::binary("mul", &g, val(*a), |x, y| x * y)?;
                        emit(*b, kernels::reduce_broadcast(&full, val(*b).shape()));
                    }
                }
                Op::Scale(x, s) => emit(*x, g.map(|v| v * *s)),
                Op::Matmul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(val(*a), val(*b), &g, needs(*a), needs(*b));
                    if let Some(ga) = ga {
                        emit(*a, ga);
                    }
                    if let Some(gb) = gb {
                        emit(*b, gb);
                    }
                }
                Op::Softmax { x, axis } => {
                    emit(*x, kernels::softmax_backward(&node.value, &g, *axis));
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let (dx, dg, db) = kernels::layer_norm_backward(val(*x), val(*gain), stats, &g);
                    emit(*x, dx);
                    emit(*gain, dg);
                    emit(*bias, db);
                }
                Op::Gelu(x) => {
                    let d = val(*x).zip_map(&g, |v, gv| {
                        gv * (kernels::phi(v) + v * kernels::phi_density(v))
                    })?;
                    emit(*x, d);
                }
                Op::Relu(x) => {
                    let d = val(*x).zip_map(&g, |v, gv| if v > T::zero() { gv } else { T::zero() })?;
                    emit(*x, d);
                }
                Op::Sigmoid(x) => {
                    let d = node.value.zip_map(&g, |y, gv| gv * y * (T::one() - y))?;
                    emit(*x, d);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let k = probs.shape()[1];
                    let scale = g.data()[0] / T::lit(targets.len() as f64);
                    let mut d = probs.clone();
                    for (b, &t) in targets.iter().enumerate() {
                        d.data_mut()[b * k + t] -= T::one();
                    }
                    emit(*logits, d.map(|v| v * scale));
                }
                Op::Reshape(x) => emit(*x, g.reshape(val(*x).shape())?),
                Op::Permute { x, perm } => {
                    emit(*x, kernels::permute(&g, &kernels::inverse_perm(perm))?);
                }
                Op::Concat { parts, axis } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = val(p).shape()[*axis];
                        if needs(p) {
                            emit(p, kernels::slice(&g, *axis, start, len)?);
                        }
                        start += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    emit(*x, kernels::slice_backward(&g, val(*x).shape(), *axis, *start));
                }
                Op::Sum { x, axis } => {
                    emit(*x, kernels::expand_axis(&g, val(*x).shape(), *axis, T::one()));
                }
                Op::Mean { x, axis } => {
                    let n = T::lit(val(*x).shape()[*axis] as f64);
                    emit(*x, kernels::expand_axis(&g, val(*x).shape(), *axis, T::one() / n));
                }
                Op::SumAll(x) => emit(*x, Tensor::full(val(*x).shape(), g.data()[0])),
                Op::Roll { x, shifts, axes } => {
                    let back: Vec<isize> = shifts.iter().map(|s| -s).collect();
                    emit(*x, kernels::roll(&g, &back, axes)?);
                }
                Op::IndexSelect { x, indices } => {
                    emit(*x, kernels::index_select_backward(&g, val(*x).shape(), indices));
                }
                Op::Custom { inputs, backward } => {
                    let refs: Vec<&Tensor<T>> = inputs.iter().map(|&i| val(i)).collect();
                    let outs = backward(&refs, &node.value, &g);
                    if outs.len() != inputs.len() {
                        return Err(Error::Contract(format!(
                            "custom backward returned {} gradients for {} inputs",
                            outs.len(),
                            inputs.len()
                        )));
                    }
                    for (&i, t) in inputs.iter().zip(outs) {
                        if t.shape() != val(i).shape() {
                            return Err(Error::dim(
                                "custom backward",
                                format!("gradient {:?} for input {:?}", t.shape(), val(i).shape()),
                            ));
                        }
                        emit(i, t);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.value_of(self.id))
    }

    fn unary(self, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>, op: Op<T>) -> Result<Self> {
        let value = f(&self.tape.value_of(self.id))?;
        Ok(self.tape.push(value, op))
    }

    fn binary_with(
        self,
        other: Self,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
        op: Op<T>,
    ) -> Result<Self> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.tape.push(value, op))
    }

    /// Broadcasting addition.
    pub fn add(self, other: Self) -> Result<Self> {
        self.binary_with(other, |a, b| kernels::binary("add", a, b, |x, y| x + y), Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary_with(other, |a, b| kernels::binary("sub", a, b, |x, y| x - y), Op::Sub(self.id, other.id))
    }

    /// Broadcasting element-wise product.
    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary_with(other, |a, b| kernels::binary("mul", a, b, |x, y| x * y), Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: T) -> Result<Self> {
        self.unary(|x| Ok(x.map(|v| v * s)), Op::Scale(self.id, s))
    }

    /// Matrix product over the last two axes; leading axes broadcast.
    pub fn matmul(self, other: Self) -> Result<Self> {
        self.binary_with(other, kernels::matmul, Op::Matmul(self.id, other.id))
    }

    /// `x · weight + bias` with `weight: [in, out]`.
    pub fn linear(self, weight: Self, bias: Option<Self>) -> Result<Self> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => {
                let (ys, bs) = (y.shape(), b.shape());
                if bs.len() != 1 || ys.last() != bs.last() {
                    return Err(Error::dim("linear", format!("output {ys:?} with bias {bs:?}")));
                }
                y.add(b)
            }
            None => Ok(y),
        }
    }

    pub fn softmax(self, axis: usize) -> Result<Self> {
        self.unary(|x| kernels::softmax(x, axis), Op::Softmax { x: self.id, axis })
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(self, gain: Self, bias: Self, eps: T) -> Result<Self> {
        if eps <= T::zero() {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let (value, stats) = {
            let nodes = self.tape.nodes.borrow();
            kernels::layer_norm(&nodes[self.id].value, &nodes[gain.id].value, &nodes[bias.id].value, eps)?
        };
        Ok(self.tape.push(value, Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, stats }))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(self) -> Result<Self> {
        self.unary(|x| Ok(x.map(|v| v * kernels::phi(v))), Op::Gelu(self.id))
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(|x| Ok(x.map(|v| v.max(T::zero()))), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary(|x| Ok(x.map(|v| T::one() / (T::one() + (-v).exp()))), Op::Sigmoid(self.id))
    }

    /// Mean cross-entropy of `self: [B, K]` logits against class indices.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Self> {
        let (loss, probs) = kernels::cross_entropy(&self.tape.value_of(self.id), targets)?;
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: self.id, targets: targets.to_vec(), probs },
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.unary(|x| x.reshape(shape), Op::Reshape(self.id))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Self> {
        self.unary(|x| kernels::permute(x, perm), Op::Permute { x: self.id, perm: perm.to_vec() })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Result<Self> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(Error::dim("transpose", "needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        self.unary(|x| kernels::slice(x, axis, start, len), Op::Slice { x: self.id, axis, start })
    }

    /// Sum over `axis`, removing it.
    pub fn sum(self, axis: usize) -> Result<Self> {
        self.unary(|x| kernels::sum_axis(x, axis), Op::Sum { x: self.id, axis })
    }

    /// Mean over `axis`, removing it.
    pub fn mean(self, axis: usize) -> Result<Self> {
        self.unary(
            |x| {
                let n = T::lit(x.shape()[axis.min(x.ndim() - 1)] as f64);
                Ok(kernels::sum_axis(x, axis)?.map(|v| v / n))
            },
            Op::Mean { x: self.id, axis },
        )
    }

    pub fn sum_all(self) -> Result<Self> {
        self.unary(|x| Ok(Tensor::scalar(x.sum_all())), Op::SumAll(self.id))
    }

    /// Cyclic shift along each axis in `axes`; positive shifts move elements
    /// toward higher indices.
    pub fn roll(self, shifts: &[isize], axes: &[usize]) -> Result<Self> {
        self.unary(
            |x| kernels::roll(x, shifts, axes),
            Op::Roll { x: self.id, shifts: shifts.to_vec(), axes: axes.to_vec() },
        )
    }

    /// Gathers rows (axis 0) by index; repeated indices accumulate gradient.
    pub fn index_select(self, indices: &[usize]) -> Result<Self> {
        self.unary(
            |x| kernels::index_select(x, indices),
            Op::IndexSelect { x: self.id, indices: indices.to_vec() },
        )
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`.
    pub fn dropout(self, rate: f64, rng: &mut impl Rng) -> Result<Self> {
        if rate <= 0.0 {
            return Ok(self);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be below 1")));
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let shape = self.shape();
        let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < rate { T::zero() } else { keep });
        let mask = self.tape.constant(mask);
        self.mul(mask)
    }
}
