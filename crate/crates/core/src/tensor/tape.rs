use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::kernels;
use super::{Result, Tensor, TensorError};

/// Position of a node on its tape.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Square(NodeId),
    Recip(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    SumAxis(NodeId, usize),
    MaxAxis(NodeId, usize, Rc<[usize]>),
    Gather(NodeId, Rc<[usize]>),
    ScatterAdd(NodeId, Rc<[usize]>),
    Stack(Vec<NodeId>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Square(_) => "square",
            Op::Recip(_) => "recip",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Softplus(_) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Matmul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::MaxAxis(..) => "max_axis",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Stack(_) => "stack",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Square(a)
            | Op::Recip(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::MaxAxis(a, _, _)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _) => vec![*a],
            Op::Stack(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one differentiable computation, typically one training step.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// The tape is single-threaded; drop it after the step.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// Differentiable input (parameter or model input).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes held by node values; used as the peak-memory estimate of a step.
    pub fn bytes(&self) -> usize {
        self.nodes.borrow().iter().map(|n| n.value.numel() * 8).sum()
    }

    fn push_raw(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, op: Op, value: Tensor) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires = self.recording.get() && {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        let op = if requires { op } else { Op::Leaf };
        Ok(self.push_raw(value, op, requires))
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { tape: self, id }
    }

    fn check_owned(&self, v: &Var<'_>) -> Result<()> {
        if std::ptr::eq(v.tape, self) && v.id < self.len() {
            Ok(())
        } else {
            Err(TensorError::NotOnTape(v.id))
        }
    }

    /// Stacks same-shape tensors along a new leading axis.
    pub fn stack<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "stack",
                shape: vec![],
                reason: "nothing to stack".into(),
            });
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = kernels::stack(&refs)?;
        self.push(Op::Stack(parts.iter().map(|p| p.id).collect()), out)
    }

    /// Gradients of a scalar `output` with respect to each of `inputs`.
    ///
    /// Inputs that are on the tape but do not influence `output` get zeros.
    /// With `create_graph` the backward pass is itself recorded, so the
    /// returned gradients can be differentiated again.
    pub fn grad<'t>(&'t self, output: Var<'t>, inputs: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        self.check_owned(&output)?;
        let out_shape = output.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NotScalar(out_shape));
        }
        for v in inputs {
            self.check_owned(v)?;
            if !self.nodes.borrow()[v.id].requires_grad {
                return Err(TensorError::NotDifferentiable(v.id));
            }
        }

        let saved = self.recording.replace(create_graph);
        let result = self.backward(output, inputs);
        self.recording.set(saved);
        result
    }

    fn backward<'t>(&'t self, output: Var<'t>, inputs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let root = output.id;
        // nodes lying on some path from an input to the output
        let mut needed = vec![false; root + 1];
        for v in inputs {
            if v.id <= root {
                needed[v.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..=root {
                if !needed[i] && nodes[i].requires_grad {
                    needed[i] = nodes[i].op.inputs().iter().any(|&j| needed[j]);
                }
            }
        }

        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; root + 1];
        adjoint[root] = Some(self.constant(Tensor::ones(output.shape())?));

        for i in (0..=root).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            let (op, requires) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op.clone(), nodes[i].requires_grad)
            };
            if !requires || matches!(op, Op::Leaf) {
                continue;
            }
            for (j, contrib) in self.backward_rule(i, &op, g, &needed)? {
                adjoint[j] = Some(match adjoint[j] {
                    Some(acc) => acc.add(&contrib)?,
                    None => contrib,
                });
            }
        }

        inputs
            .iter()
            .map(|v| match adjoint.get(v.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(v.shape())?)),
            })
            .collect()
    }

    fn backward_rule<'t>(&'t self, id: NodeId, op: &Op, g: Var<'t>, needed: &[bool]) -> Result<Vec<(NodeId, Var<'t>)>> {
        let want = |j: NodeId| needed[j];
        let v = |j: NodeId| self.var(j);
        let y = self.var(id);
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(*a) {
                    out.push((*a, g));
                }
                if want(*b) {
                    out.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    out.push((*a, g));
                }
                if want(*b) {
                    out.push((*b, g.scale(-1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    out.push((*a, g.mul(&v(*b))?));
                }
                if want(*b) {
                    out.push((*b, g.mul(&v(*a))?));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.scale(*c)?)),
            Op::AddScalar(a, _) => out.push((*a, g)),
            Op::Square(a) => out.push((*a, g.mul(&v(*a))?.scale(2.0)?)),
            Op::Recip(_) => {
                let a = op.inputs()[0];
                out.push((a, g.mul(&y.square()?)?.scale(-1.0)?));
            }
            Op::Exp(a) => out.push((*a, g.mul(&y)?)),
            Op::Log(a) => out.push((*a, g.mul(&v(*a).recip()?)?)),
            Op::Relu(a) => {
                let step = self.value_of(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                out.push((*a, g.mul(&self.constant(step))?));
            }
            Op::Abs(a) => {
                let sign = self.value_of(*a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                out.push((*a, g.mul(&self.constant(sign))?));
            }
            Op::Softplus(a) => out.push((*a, g.mul(&v(*a).sigmoid()?)?)),
            Op::Sigmoid(a) => out.push((*a, g.mul(&y.sub(&y.square()?)?)?)),
            Op::Matmul(a, b) => {
                if want(*a) {
                    out.push((*a, g.matmul(&v(*b).transpose()?)?));
                }
                if want(*b) {
                    out.push((*b, v(*a).transpose()?.matmul(&g)?));
                }
            }
            Op::Transpose(a) => out.push((*a, g.transpose()?)),
            Op::Reshape(a) => out.push((*a, g.reshape(v(*a).shape())?)),
            Op::Sum(a) => {
                let shape = v(*a).shape();
                let n = shape.iter().product();
                out.push((*a, g.gather(Rc::from(vec![0; n]), shape)?));
            }
            Op::SumAxis(a, axis) => {
                let shape = v(*a).shape();
                let idx = kernels::axis_broadcast_index(&shape, *axis)?;
                out.push((*a, g.gather(Rc::from(idx), shape)?));
            }
            Op::MaxAxis(a, _, arg) => out.push((*a, g.scatter_add(Rc::clone(arg), v(*a).shape())?)),
            Op::Gather(a, idx) => out.push((*a, g.scatter_add(Rc::clone(idx), v(*a).shape())?)),
            Op::ScatterAdd(a, idx) => out.push((*a, g.gather(Rc::clone(idx), v(*a).shape())?)),
            Op::Stack(parts) => {
                for (k, &p) in parts.iter().enumerate() {
                    if !want(p) {
                        continue;
                    }
                    let shape = v(p).shape();
                    let n: usize = shape.iter().product();
                    let idx: Vec<usize> = (k * n..(k + 1) * n).collect();
                    out.push((p, g.gather(Rc::from(idx), shape)?));
                }
            }
        }
        Ok(out)
    }

    /// Re-evaluates every recorded op from its stored inputs and checks the
    /// result is bit-identical to the stored value.
    pub fn replay_matches(&self) -> Result<bool> {
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let val = |j: NodeId| nodes[j].value.as_ref();
            let shape = node.value.shape();
            let recomputed = match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => val(*a).zip_map(val(*b), "add", |x, y| x + y)?,
                Op::Sub(a, b) => val(*a).zip_map(val(*b), "sub", |x, y| x - y)?,
                Op::Mul(a, b) => val(*a).zip_map(val(*b), "mul", |x, y| x * y)?,
                Op::Scale(a, c) => val(*a).map(|x| x * c),
                Op::AddScalar(a, c) => val(*a).map(|x| x + c),
                Op::Square(a) => val(*a).map(|x| x * x),
                Op::Recip(a) => val(*a).map(|x| 1.0 / x),
                Op::Exp(a) => val(*a).map(f64::exp),
                Op::Log(a) => val(*a).map(f64::ln),
                Op::Relu(a) => val(*a).map(|x| x.max(0.0)),
                Op::Abs(a) => val(*a).map(f64::abs),
                Op::Softplus(a) => val(*a).map(kernels::softplus),
                Op::Sigmoid(a) => val(*a).map(kernels::sigmoid),
                Op::Matmul(a, b) => kernels::matmul(val(*a), val(*b))?,
                Op::Transpose(a) => kernels::transpose(val(*a))?,
                Op::Reshape(a) => val(*a).reshape(shape.to_vec())?,
                Op::Sum(a) => Tensor::scalar(val(*a).sum()),
                Op::SumAxis(a, axis) => kernels::sum_axis(val(*a), *axis)?,
                Op::MaxAxis(a, axis, arg) => {
                    let (t, new_arg) = kernels::max_axis(val(*a), *axis)?;
                    if new_arg.as_slice() != arg.as_ref() {
                        return Ok(false);
                    }
                    t
                }
                Op::Gather(a, idx) => kernels::gather(val(*a), idx, shape)?,
                Op::ScatterAdd(a, idx) => kernels::scatter_add(val(*a), idx, shape)?,
                Op::Stack(parts) => {
                    let refs: Vec<&Tensor> = parts.iter().map(|&p| val(p)).collect();
                    kernels::stack(&refs)?
                }
            };
            let same = recomputed.shape() == shape
                && recomputed.data().iter().zip(node.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Detached copy of the value.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value().as_ref().clone())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.value().map(f);
        self.tape.push(op, out)
    }

    /// Brings two operands to a common shape; only scalar broadcast is supported.
    fn align(&self, other: &Var<'t>, op: &'static str) -> Result<(Var<'t>, Var<'t>)> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            return Ok((*self, *other));
        }
        if other.numel() == 1 {
            return Ok((*self, other.broadcast_to(sa)?));
        }
        if self.numel() == 1 {
            return Ok((self.broadcast_to(sb)?, *other));
        }
        Err(TensorError::ShapeMismatch { op, left: sa, right: sb })
    }

    fn binary(&self, other: &Var<'t>, name: &'static str, make: fn(NodeId, NodeId) -> Op, f: fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (a, b) = self.align(other, name)?;
        let out = a.value().zip_map(&b.value(), name, f)?;
        self.tape.push(make(a.id, b.id), out)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.mul(&other.recip()?)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar(self.id, c), |x| x + c)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn recip(&self) -> Result<Var<'t>> {
        self.unary(Op::Recip(self.id), |x| 1.0 / x)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Result<Var<'t>> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// Rectifier; the derivative at exactly 0 is taken as 0.
    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Op::Softplus(self.id), kernels::softplus)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), kernels::sigmoid)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let out = kernels::matmul(&self.value(), &other.value())?;
        self.tape.push(Op::Matmul(self.id, other.id), out)
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let out = kernels::transpose(&self.value())?;
        self.tape.push(Op::Transpose(self.id), out)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let out = self.value().reshape(shape).map_err(|_| TensorError::InvalidShape {
            op: "reshape",
            shape: self.shape(),
            reason: "element count changes".into(),
        })?;
        self.tape.push(Op::Reshape(self.id), out)
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(Op::Sum(self.id), out)
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let out = kernels::sum_axis(&self.value(), axis)?;
        self.tape.push(Op::SumAxis(self.id, axis), out)
    }

    /// Maximum over one axis; ties resolve to the lowest index.
    pub fn max_axis(&self, axis: usize) -> Result<Var<'t>> {
        let (out, arg) = kernels::max_axis(&self.value(), axis)?;
        self.tape.push(Op::MaxAxis(self.id, axis, Rc::from(arg)), out)
    }

    /// `out[i] = self[index[i]]` over flat positions, reshaped to `shape`.
    pub fn gather(&self, index: Rc<[usize]>, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let out = kernels::gather(&self.value(), &index, &shape)?;
        self.tape.push(Op::Gather(self.id, index), out)
    }

    /// `out[index[i]] += self[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, index: Rc<[usize]>, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        let out = kernels::scatter_add(&self.value(), &index, &shape)?;
        self.tape.push(Op::ScatterAdd(self.id, index), out)
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast_to(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let shape = shape.into();
        if self.numel() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                left: self.shape(),
                right: shape,
            });
        }
        let n: usize = shape.iter().product();
        self.gather(Rc::from(vec![0; n]), shape)
    }

    /// Repeats a `[n]` vector across the rows of a `[rows, n]` result.
    pub fn repeat_rows(&self, rows: usize) -> Result<Var<'t>> {
        let n = self.numel();
        let idx: Vec<usize> = (0..rows).flat_map(|_| 0..n).collect();
        self.gather(Rc::from(idx), vec![rows, n])
    }

    /// Repeats a `[rows]` vector across the columns of a `[rows, n]` result.
    pub fn repeat_cols(&self, n: usize) -> Result<Var<'t>> {
        let rows = self.numel();
        let idx: Vec<usize> = (0..rows).flat_map(|r| std::iter::repeat_n(r, n)).collect();
        self.gather(Rc::from(idx), vec![rows, n])
    }

    /// Row-wise log-softmax of a `[rows, n]` tensor.
    pub fn log_softmax(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "log_softmax",
                shape,
                reason: "expected [rows, classes]".into(),
            });
        }
        let (rows, n) = (shape[0], shape[1]);
        let (row_max, _) = kernels::max_axis(&self.value(), 1)?;
        let shift = self.tape.constant(row_max).repeat_cols(n)?;
        let shifted = self.sub(&shift)?;
        let lse = shifted.exp()?.sum_axis(1)?.ln()?;
        debug_assert_eq!(lse.numel(), rows);
        shifted.sub(&lse.repeat_cols(n)?)
    }

    pub fn softmax(&self) -> Result<Var<'t>> {
        self.log_softmax()?.exp()
    }

    /// 2-d convolution (cross-correlation), stride 1.
    ///
    /// `self` is `[N, H, W, C]`, `kernel` is `[KH, KW, C, O]`; zero padding of
    /// `padding` pixels on every side. Output is `[N, H', W', O]`.
    pub fn conv2d(&self, kernel: &Var<'t>, padding: usize) -> Result<Var<'t>> {
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[3] != ks[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: xs,
                right: ks,
            });
        }
        let (n, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, o) = (ks[0], ks[1], ks[3]);
        let (hp, wp) = (h + 2 * padding, w + 2 * padding);
        if kh > hp || kw > wp {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: xs,
                right: ks,
            });
        }
        let padded = if padding == 0 {
            *self
        } else {
            let mut idx = Vec::with_capacity(n * h * w * c);
            for b in 0..n {
                for r in 0..h {
                    for col in 0..w {
                        for ch in 0..c {
                            idx.push(((b * hp + r + padding) * wp + col + padding) * c + ch);
                        }
                    }
                }
            }
            self.scatter_add(Rc::from(idx), vec![n, hp, wp, c])?
        };
        let (ho, wo) = (hp - kh + 1, wp - kw + 1);
        let cols = kh * kw * c;
        let mut idx = Vec::with_capacity(n * ho * wo * cols);
        for b in 0..n {
            for r in 0..ho {
                for col in 0..wo {
                    for i in 0..kh {
                        for j in 0..kw {
                            for ch in 0..c {
                                idx.push(((b * hp + r + i) * wp + col + j) * c + ch);
                            }
                        }
                    }
                }
            }
        }
        let patches = padded.gather(Rc::from(idx), vec![n * ho * wo, cols])?;
        let k = kernel.reshape(vec![cols, o])?;
        patches.matmul(&k)?.reshape(vec![n, ho, wo, o])
    }

    /// Non-overlapping max pooling of an `[N, H, W, C]` tensor; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn max_pool2d(&self, size: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 4 || size == 0 || s[1] < size || s[2] < size {
            return Err(TensorError::InvalidShape {
                op: "max_pool2d",
                shape: s,
                reason: format!("cannot pool with window {size}"),
            });
        }
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / size, w / size);
        let mut idx = Vec::with_capacity(n * ho * wo * c * size * size);
        for b in 0..n {
            for r in 0..ho {
                for col in 0..wo {
                    for ch in 0..c {
                        for i in 0..size {
                            for j in 0..size {
                                idx.push(((b * h + r * size + i) * w + col * size + j) * c + ch);
                            }
                        }
                    }
                }
            }
        }
        self.gather(Rc::from(idx), vec![n * ho * wo * c, size * size])?
            .max_axis(1)?
            .reshape(vec![n, ho, wo, c])
    }
}
