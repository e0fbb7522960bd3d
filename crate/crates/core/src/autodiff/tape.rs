//! Wengert-list tape and the differentiable handle [`Var`].
//!
//! Every forward op appends one node; node ids are therefore a topological
//! order and `backward` is a single reverse sweep. Leaves that require
//! gradients accumulate into their own `grad` slot across sweeps until
//! [`Tape::zero_grads`] is called.

use std::cell::{Ref, RefCell};
use std::sync::Arc;

use super::tensor::{
    axis_split, broadcast_indices, broadcast_shape, gemm, gemm_nt, gemm_tn, permute_data,
    reduce_to_shape, Tensor,
};
use super::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Vector-Jacobian product of a custom node: upstream grad → one grad per input.
pub type CustomBackward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

/// Norm below which L2 normalization refuses to divide.
pub const DEGENERATE_NORM: f64 = 1e-12;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Sqrt(usize),
    MatMul(usize, usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    Sum(usize, usize),
    Mean(usize, usize),
    SumAll(usize),
    Max {
        input: usize,
        argmax: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Permute {
        input: usize,
        perm: Vec<usize>,
    },
    Reshape(usize),
    BroadcastTo(usize),
    L2Normalize {
        input: usize,
        axis: usize,
        norms: Vec<f64>,
    },
    GatherRows {
        input: usize,
        indices: Vec<usize>,
    },
    MaskedFill {
        input: usize,
        mask: Arc<Vec<bool>>,
    },
    Custom {
        inputs: Vec<usize>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub fn leaf_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Record a node whose gradient rule is supplied by the caller.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Tensor,
        backward: CustomBackward,
    ) -> Result<Var<'t>> {
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(
            "custom",
            value,
            Op::Custom {
                inputs: ids,
                backward,
            },
        )
    }

    /// Accumulated gradient of a leaf, if any sweep has reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.nodes.borrow()[var.id].grad.clone()
    }

    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op: op_name, index });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op_inputs(&op).iter().any(|&i| nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf grads.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((id, g));
                continue;
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            let slot = &mut nodes[id].grad;
            match slot {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    use Op::*;
    match op {
        Leaf => vec![],
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => vec![*a, *b],
        Neg(a)
        | Scale(a, _)
        | AddScalar(a)
        | Exp(a)
        | Log(a)
        | Tanh(a)
        | Sigmoid(a)
        | Relu(a)
        | Sqrt(a)
        | Softmax(a, _)
        | LogSoftmax(a, _)
        | Sum(a, _)
        | Mean(a, _)
        | SumAll(a)
        | Reshape(a)
        | BroadcastTo(a) => vec![*a],
        Max { input, .. }
        | Slice { input, .. }
        | Permute { input, .. }
        | L2Normalize { input, .. }
        | GatherRows { input, .. }
        | MaskedFill { input, .. } => vec![*input],
        Concat { inputs, .. } | Custom { inputs, .. } => inputs.clone(),
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn map_grad(g: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
    let data = g.data().iter().enumerate().map(|(i, &v)| f(i, v)).collect();
    Tensor::from_parts(g.shape().to_vec(), data)
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let y = &*node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, reduce_to_shape(g, val(*a).shape()));
            accumulate(nodes, grads, *b, reduce_to_shape(g, val(*b).shape()));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, reduce_to_shape(g, val(*a).shape()));
            let neg = map_grad(g, |_, v| -v);
            accumulate(nodes, grads, *b, reduce_to_shape(&neg, val(*b).shape()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].requires_grad {
                let ib = broadcast_indices(vb.shape(), g.shape());
                let ga = map_grad(g, |i, v| v * vb.data()[ib[i]]);
                accumulate(nodes, grads, *a, reduce_to_shape(&ga, va.shape()));
            }
            if nodes[*b].requires_grad {
                let ia = broadcast_indices(va.shape(), g.shape());
                let gb = map_grad(g, |i, v| v * va.data()[ia[i]]);
                accumulate(nodes, grads, *b, reduce_to_shape(&gb, vb.shape()));
            }
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ib = broadcast_indices(vb.shape(), g.shape());
            if nodes[*a].requires_grad {
                let ga = map_grad(g, |i, v| v / vb.data()[ib[i]]);
                accumulate(nodes, grads, *a, reduce_to_shape(&ga, va.shape()));
            }
            if nodes[*b].requires_grad {
                let gb = map_grad(g, |i, v| {
                    let d = vb.data()[ib[i]];
                    -v * y.data()[i] / d
                });
                accumulate(nodes, grads, *b, reduce_to_shape(&gb, vb.shape()));
            }
        }
        Op::Neg(a) => accumulate(nodes, grads, *a, map_grad(g, |_, v| -v)),
        Op::Scale(a, c) => accumulate(nodes, grads, *a, map_grad(g, |_, v| v * c)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Exp(a) => accumulate(nodes, grads, *a, map_grad(g, |i, v| v * y.data()[i])),
        Op::Log(a) => {
            let x = val(*a);
            accumulate(nodes, grads, *a, map_grad(g, |i, v| v / x.data()[i]))
        }
        Op::Tanh(a) => accumulate(
            nodes,
            grads,
            *a,
            map_grad(g, |i, v| v * (1.0 - y.data()[i] * y.data()[i])),
        ),
        Op::Sigmoid(a) => accumulate(
            nodes,
            grads,
            *a,
            map_grad(g, |i, v| v * y.data()[i] * (1.0 - y.data()[i])),
        ),
        Op::Relu(a) => {
            let x = val(*a);
            accumulate(
                nodes,
                grads,
                *a,
                map_grad(g, |i, v| if x.data()[i] > 0.0 { v } else { 0.0 }),
            )
        }
        Op::Sqrt(a) => accumulate(nodes, grads, *a, map_grad(g, |i, v| 0.5 * v / y.data()[i])),
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (ga, gb) = matmul_backward(va, vb, g);
            if nodes[*a].requires_grad {
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Softmax(a, axis) => {
            let (outer, n, inner) = axis_split(y.shape(), *axis);
            let mut gx = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let dotp: f64 = (0..n)
                        .map(|j| g.data()[base + j * inner] * y.data()[base + j * inner])
                        .sum();
                    for j in 0..n {
                        let k = base + j * inner;
                        gx[k] = y.data()[k] * (g.data()[k] - dotp);
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(y.shape().to_vec(), gx));
        }
        Op::LogSoftmax(a, axis) => {
            let (outer, n, inner) = axis_split(y.shape(), *axis);
            let mut gx = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let gsum: f64 = (0..n).map(|j| g.data()[base + j * inner]).sum();
                    for j in 0..n {
                        let k = base + j * inner;
                        gx[k] = g.data()[k] - y.data()[k].exp() * gsum;
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(y.shape().to_vec(), gx));
        }
        Op::Sum(a, axis) | Op::Mean(a, axis) => {
            let xs = val(*a).shape().to_vec();
            let (outer, n, inner) = axis_split(&xs, *axis);
            let scale = if matches!(node.op, Op::Mean(..)) {
                1.0 / n as f64
            } else {
                1.0
            };
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for j in 0..n {
                    for i in 0..inner {
                        gx[(o * n + j) * inner + i] = g.data()[o * inner + i] * scale;
                    }
                }
            }
            accumulate(nodes, grads, *a, Tensor::from_parts(xs, gx));
        }
        Op::SumAll(a) => {
            let xs = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::full(&xs, g.item()));
        }
        Op::Max { input, argmax, .. } => {
            let xs = val(*input).shape().to_vec();
            let mut gx = vec![0.0; xs.iter().product()];
            for (k, &src) in argmax.iter().enumerate() {
                gx[src] += g.data()[k];
            }
            accumulate(nodes, grads, *input, Tensor::from_parts(xs, gx));
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_split(y.shape(), *axis);
            let total = y.shape()[*axis];
            let mut offset = 0;
            for &inp in inputs {
                let xs = val(inp).shape().to_vec();
                let n = xs[*axis];
                if nodes[inp].requires_grad {
                    let mut gx = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gx.extend_from_slice(&g.data()[start..start + n * inner]);
                    }
                    accumulate(nodes, grads, inp, Tensor::from_parts(xs, gx));
                }
                offset += n;
            }
        }
        Op::Slice { input, axis, start } => {
            let xs = val(*input).shape().to_vec();
            let (outer, total, inner) = axis_split(&xs, *axis);
            let n = y.shape()[*axis];
            let mut gx = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * n * inner;
                gx[dst..dst + n * inner].copy_from_slice(&g.data()[src..src + n * inner]);
            }
            accumulate(nodes, grads, *input, Tensor::from_parts(xs, gx));
        }
        Op::Permute { input, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let (shape, data) = permute_data(g.data(), g.shape(), &inverse);
            accumulate(nodes, grads, *input, Tensor::from_parts(shape, data));
        }
        Op::Reshape(a) => {
            let xs = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, Tensor::from_parts(xs, g.data().to_vec()));
        }
        Op::BroadcastTo(a) => {
            let xs = val(*a).shape().to_vec();
            accumulate(nodes, grads, *a, reduce_to_shape(g, &xs));
        }
        Op::L2Normalize { input, axis, norms } => {
            let (outer, n, inner) = axis_split(y.shape(), *axis);
            let mut gx = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let norm = norms[o * inner + i];
                    let dotp: f64 = (0..n)
                        .map(|j| g.data()[base + j * inner] * y.data()[base + j * inner])
                        .sum();
                    for j in 0..n {
                        let k = base + j * inner;
                        gx[k] = (g.data()[k] - y.data()[k] * dotp) / norm;
                    }
                }
            }
            accumulate(
                nodes,
                grads,
                *input,
                Tensor::from_parts(y.shape().to_vec(), gx),
            );
        }
        Op::GatherRows { input, indices } => {
            let xs = val(*input).shape().to_vec();
            let row: usize = xs[1..].iter().product();
            let mut gx = vec![0.0; xs.iter().product()];
            for (k, &r) in indices.iter().enumerate() {
                for c in 0..row {
                    gx[r * row + c] += g.data()[k * row + c];
                }
            }
            accumulate(nodes, grads, *input, Tensor::from_parts(xs, gx));
        }
        Op::MaskedFill { input, mask } => accumulate(
            nodes,
            grads,
            *input,
            map_grad(g, |i, v| if mask[i] { 0.0 } else { v }),
        ),
        Op::Custom { inputs, backward } => {
            let gs = backward(g);
            for (&inp, gi) in inputs.iter().zip(gs) {
                accumulate(nodes, grads, inp, gi);
            }
        }
    }
}

/// Matmul layouts supported: `[.., m, k] · [k, n]` and equal-batch `[.., m, k] · [.., k, n]`.
enum MatmulLayout {
    Shared {
        rows: usize,
        k: usize,
        n: usize,
    },
    Batched {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
}

fn matmul_layout(a: &[usize], b: &[usize]) -> Result<(MatmulLayout, Vec<usize>)> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        shapes: vec![a.to_vec(), b.to_vec()],
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(mismatch());
    }
    let mut out = a[..a.len() - 1].to_vec();
    out.push(n);
    if b.len() == 2 {
        let rows = a[..a.len() - 1].iter().product();
        Ok((MatmulLayout::Shared { rows, k, n }, out))
    } else if a.len() == b.len() && a[..a.len() - 2] == b[..b.len() - 2] {
        let batch = a[..a.len() - 2].iter().product();
        Ok((MatmulLayout::Batched { batch, m, k, n }, out))
    } else {
        Err(mismatch())
    }
}

fn matmul_forward(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (layout, out_shape) = matmul_layout(a.shape(), b.shape())?;
    let data = match layout {
        MatmulLayout::Shared { rows, k, n } => gemm(a.data(), b.data(), rows, k, n),
        MatmulLayout::Batched { batch, m, k, n } => {
            let mut out = Vec::with_capacity(batch * m * n);
            for t in 0..batch {
                out.extend(gemm(
                    &a.data()[t * m * k..(t + 1) * m * k],
                    &b.data()[t * k * n..(t + 1) * k * n],
                    m,
                    k,
                    n,
                ));
            }
            out
        }
    };
    Ok(Tensor::from_parts(out_shape, data))
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (layout, _) = matmul_layout(a.shape(), b.shape()).expect("validated in forward");
    match layout {
        MatmulLayout::Shared { rows, k, n } => {
            let ga = gemm_nt(g.data(), b.data(), rows, n, k);
            let gb = gemm_tn(a.data(), g.data(), rows, k, n);
            (
                Tensor::from_parts(a.shape().to_vec(), ga),
                Tensor::from_parts(b.shape().to_vec(), gb),
            )
        }
        MatmulLayout::Batched { batch, m, k, n } => {
            let mut ga = Vec::with_capacity(a.numel());
            let mut gb = Vec::with_capacity(b.numel());
            for t in 0..batch {
                let gt = &g.data()[t * m * n..(t + 1) * m * n];
                let at = &a.data()[t * m * k..(t + 1) * m * k];
                let bt = &b.data()[t * k * n..(t + 1) * k * n];
                ga.extend(gemm_nt(gt, bt, m, n, k));
                gb.extend(gemm_tn(at, gt, m, k, n));
            }
            (
                Tensor::from_parts(a.shape().to_vec(), ga),
                Tensor::from_parts(b.shape().to_vec(), gb),
            )
        }
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        Err(TensorError::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        })
    } else {
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    /// Borrow the value without bumping the refcount.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes: Ref<'_, Vec<Node>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> f64 {
        self.with_value(|t| t.item())
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape =
            broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
                op: name,
                shapes: vec![a.shape().to_vec(), b.shape().to_vec()],
            })?;
        let data: Vec<f64> = if a.shape() == b.shape() {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let ia = broadcast_indices(a.shape(), &shape);
            let ib = broadcast_indices(b.shape(), &shape);
            ia.iter()
                .zip(&ib)
                .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                .collect()
        };
        self.tape
            .push(name, Tensor::from_parts(shape, data), op(self.id, other.id))
    }

    fn unary(self, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>> {
        let x = self.value();
        let data = x.data().iter().map(|&v| f(v)).collect();
        self.tape
            .push(name, Tensor::from_parts(x.shape().to_vec(), data), op)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "divide", |x, y| x / y, Op::Div)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary("neg", |v| -v, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", |v| v * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", |v| v + c, Op::AddScalar(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary("log", f64::ln, Op::Log(self.id))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", f64::tanh, Op::Tanh(self.id))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", sigmoid, Op::Sigmoid(self.id))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", |v| v.max(0.0), Op::Relu(self.id))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary("sqrt", f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = matmul_forward(&self.value(), &other.value())?;
        self.tape.push("matmul", out, Op::MatMul(self.id, other.id))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("softmax", x.shape(), axis)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n)
                    .map(|j| x.data()[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (x.data()[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    total += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= total;
                }
            }
        }
        self.tape.push(
            "softmax",
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::Softmax(self.id, axis),
        )
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("log_softmax", x.shape(), axis)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n)
                    .map(|j| x.data()[base + j * inner])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + (0..n)
                        .map(|j| (x.data()[base + j * inner] - max).exp())
                        .sum::<f64>()
                        .ln();
                for j in 0..n {
                    out[base + j * inner] = x.data()[base + j * inner] - lse;
                }
            }
        }
        self.tape.push(
            "log_softmax",
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::LogSoftmax(self.id, axis),
        )
    }

    fn reduce(self, name: &'static str, axis: usize, mean: bool) -> Result<Var<'t>> {
        let x = self.value();
        check_axis(name, x.shape(), axis)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += x.data()[(o * n + j) * inner + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let op = if mean {
            Op::Mean(self.id, axis)
        } else {
            Op::Sum(self.id, axis)
        };
        self.tape.push(name, Tensor::from_parts(shape, out), op)
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce("sum", axis, false)
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce("mean", axis, true)
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let x = self.value();
        let total = x.data().iter().sum();
        self.tape
            .push("sum", Tensor::scalar(total), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.with_value(|t| t.numel()) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Max over `axis` (kept); ties resolve to the first index.
    pub fn max_axis(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("max", x.shape(), axis)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * n) * inner + i;
                for j in 1..n {
                    let k = (o * n + j) * inner + i;
                    if x.data()[k] > x.data()[best] {
                        best = k;
                    }
                }
                out.push(x.data()[best]);
                argmax.push(best);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        self.tape.push(
            "max",
            Tensor::from_parts(shape, out),
            Op::Max {
                input: self.id,
                argmax,
            },
        )
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let tape = first.tape;
        let values: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    shapes: values.iter().map(|v| v.shape().to_vec()).collect(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        tape.push(
            "concat",
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        )
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("slice", x.shape(), axis)?;
        if start >= end || end > x.shape()[axis] {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!(
                    "range {start}..{end} invalid for shape {:?} axis {axis}",
                    x.shape()
                ),
            });
        }
        let (outer, total, inner) = axis_split(x.shape(), axis);
        let n = end - start;
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            out.extend_from_slice(&x.data()[s..s + n * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = n;
        self.tape.push(
            "slice",
            Tensor::from_parts(shape, out),
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
        )
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let mut seen = vec![false; x.rank()];
        let valid = perm.len() == x.rank()
            && perm
                .iter()
                .all(|&p| p < x.rank() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("permutation {perm:?} invalid for shape {:?}", x.shape()),
            });
        }
        let (shape, data) = permute_data(x.data(), x.shape(), perm);
        self.tape.push(
            "transpose",
            Tensor::from_parts(shape, data),
            Op::Permute {
                input: self.id,
                perm: perm.to_vec(),
            },
        )
    }

    /// Swap the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        let r = self.with_value(|t| t.rank());
        if r < 2 {
            return Err(TensorError::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank: r,
            });
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != x.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                shapes: vec![x.shape().to_vec(), shape.to_vec()],
            });
        }
        self.tape.push(
            "reshape",
            Tensor::from_parts(shape.to_vec(), x.data().to_vec()),
            Op::Reshape(self.id),
        )
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        match broadcast_shape(x.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "broadcast",
                    shapes: vec![x.shape().to_vec(), shape.to_vec()],
                })
            }
        }
        let map = broadcast_indices(x.shape(), shape);
        let data = map.iter().map(|&i| x.data()[i]).collect();
        self.tape.push(
            "broadcast",
            Tensor::from_parts(shape.to_vec(), data),
            Op::BroadcastTo(self.id),
        )
    }

    /// Divide every vector along `axis` by its Euclidean norm.
    pub fn l2_normalize(self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        check_axis("l2_normalize", x.shape(), axis)?;
        let (outer, n, inner) = axis_split(x.shape(), axis);
        let mut norms = Vec::with_capacity(outer * inner);
        let mut out = vec![0.0; x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let norm = (0..n)
                    .map(|j| x.data()[base + j * inner].powi(2))
                    .sum::<f64>()
                    .sqrt();
                if norm < DEGENERATE_NORM {
                    return Err(TensorError::DegenerateNorm {
                        index: o * inner + i,
                        norm,
                    });
                }
                for j in 0..n {
                    out[base + j * inner] = x.data()[base + j * inner] / norm;
                }
                norms.push(norm);
            }
        }
        self.tape.push(
            "l2_normalize",
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::L2Normalize {
                input: self.id,
                axis,
                norms,
            },
        )
    }

    /// Select rows (leading-axis slices) by index; indices may repeat.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let rows = x.shape()[0];
        if indices.is_empty() {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: "empty index list".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {bad} out of range for shape {:?}", x.shape()),
            });
        }
        let row: usize = x.shape()[1..].iter().product();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &r in indices {
            out.extend_from_slice(&x.data()[r * row..(r + 1) * row]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        self.tape.push(
            "gather_rows",
            Tensor::from_parts(shape, out),
            Op::GatherRows {
                input: self.id,
                indices: indices.to_vec(),
            },
        )
    }

    /// Replace entries where `mask` is true by `value`; `mask` covers every element.
    pub fn masked_fill(self, mask: &[bool], value: f64) -> Result<Var<'t>> {
        let x = self.value();
        if mask.len() != x.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_fill",
                shapes: vec![x.shape().to_vec(), vec![mask.len()]],
            });
        }
        let data = x
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        self.tape.push(
            "masked_fill",
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::MaskedFill {
                input: self.id,
                mask: Arc::new(mask.to_vec()),
            },
        )
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
