use std::sync::OnceLock;

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::{Result, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Neg,
}

impl Elementwise {
    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Tanh => "tanh",
            Elementwise::Sigmoid => "sigmoid",
            Elementwise::Relu => "relu",
            Elementwise::Exp => "exp",
            Elementwise::Log => "log",
            Elementwise::Neg => "neg",
        }
    }

    fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Binary(Elementwise, Var, Var),
    Unary(Elementwise, Var),
    AddRows(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    GatherParam { param: ParamId, ids: Vec<usize> },
    Reshape(Var),
    Stack(Vec<Var>),
    Sum(Var),
    Dropout(Var, Vec<f64>),
    Maxout(Var, Vec<usize>),
    StraightThrough(Var),
    PickSum(Var, Vec<usize>),
    ClampMin(Var, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` only for `Op::Param`, whose value is read from the store.
    value: Option<Tensor>,
    needs_grad: bool,
}

/// An append-only record of one forward computation.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward pass is a single reverse sweep. A graph borrows the parameter
/// store immutably; [`Graph::backward`] returns the parameter gradients
/// instead of writing them, which lets independent graphs run in parallel.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

fn empty_store() -> &'static ParamStore {
    static EMPTY: OnceLock<ParamStore> = OnceLock::new();
    EMPTY.get_or_init(ParamStore::new)
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    /// A graph without trainable parameters.
    pub fn standalone() -> Graph<'static> {
        Graph::new(empty_store())
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|&v| self.needs_grad(v));
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product. A 1-D left operand acts as a row vector and a 1-D
    /// right operand as a column vector; the matching output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = mat_dims(ta);
        let (kb, n) = if tb.rank() == 1 {
            (tb.numel(), 1)
        } else {
            (tb.shape()[0], tb.shape()[1])
        };
        if ta.rank() > 2 || tb.rank() > 2 || k != kb {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let shape = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![1],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        let value = Tensor::new(shape, out)?;
        self.push(Op::MatMul(a, b), value, "matmul", &[a, b])
    }

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = if op.is_binary() { 2 } else { 1 };
        if inputs.len() != arity {
            return Err(TensorError::Invalid(format!(
                "{} takes {arity} input(s), got {}",
                op.name(),
                inputs.len()
            )));
        }
        if op.is_binary() {
            self.binary(op, inputs[0], inputs[1])
        } else {
            self.unary(op, inputs[0])
        }
    }

    fn binary(&mut self, op: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let f = match op {
            Elementwise::Add => |x: f64, y: f64| x + y,
            Elementwise::Sub => |x: f64, y: f64| x - y,
            Elementwise::Mul => |x: f64, y: f64| x * y,
            _ => unreachable!(),
        };
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())?
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            Tensor::new(tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())?
        } else {
            return Err(TensorError::Shape {
                op: op.name(),
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        self.push(Op::Binary(op, a, b), value, op.name(), &[a, b])
    }

    fn unary(&mut self, op: Elementwise, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if op == Elementwise::Log {
            if let Some(&bad) = ta.data().iter().find(|&&x| x <= 0.0) {
                return Err(TensorError::Domain { op: "log", value: bad });
            }
        }
        let f: fn(f64) -> f64 = match op {
            Elementwise::Tanh => f64::tanh,
            Elementwise::Sigmoid => sigmoid,
            Elementwise::Relu => |x| x.max(0.0),
            Elementwise::Exp => f64::exp,
            Elementwise::Log => f64::ln,
            Elementwise::Neg => |x| -x,
            _ => unreachable!(),
        };
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        self.push(Op::Unary(op, a), value, op.name(), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Elementwise::Neg, a)
    }

    /// Adds the vector `bias` to every row of the matrix `a` (or to `a`
    /// itself when `a` is a vector of the same length).
    pub fn add_rows(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rank() != 1 || ta.cols() != tb.numel() || ta.rank() > 2 {
            return Err(TensorError::Shape {
                op: "add_rows",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % c])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::AddRows(a, bias), value, "add_rows", &[a, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * factor).collect())?;
        self.push(Op::Scale(a, factor), value, "scale", &[a])
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x + c).collect())?;
        self.push(Op::Offset(a), value, "offset", &[a])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.offset(n, 1.0)
    }

    /// Softmax over the last axis, computed with max subtraction. Masked
    /// entries (`false` in `mask`, same length as the tensor) are exactly 0.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = self.value(a);
        if let Some(m) = mask {
            if m.len() != ta.numel() {
                return Err(TensorError::Shape {
                    op: "softmax",
                    lhs: ta.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let c = ta.cols();
        let mut out = vec![0.0; ta.numel()];
        for (r, row) in ta.data().chunks(c).enumerate() {
            let keep = |j: usize| mask.is_none_or(|m| m[r * c + j]);
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::AllMasked);
            }
            let mut total = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    out[r * c + j] = e;
                    total += e;
                }
            }
            for v in &mut out[r * c..(r + 1) * c] {
                *v /= total;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.push(Op::Softmax(a), value, "softmax", &[a])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        let mut out = Vec::with_capacity(ta.numel());
        for row in ta.data().chunks(c) {
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|x| x - lse));
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.push(Op::LogSoftmax(a), value, "log_softmax", &[a])
    }

    /// Concatenation along `axis`. Axis 0 joins vectors end to end or stacks
    /// matrix rows; axis 1 joins matrix columns.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let rank = self.value(*first).rank();
        let mismatch = |g: &Self, v: Var| TensorError::Shape {
            op: "concat",
            lhs: g.shape(*first).to_vec(),
            rhs: g.shape(v).to_vec(),
        };
        let value = match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for &v in inputs {
                    if self.value(v).rank() != 1 {
                        return Err(mismatch(self, v));
                    }
                    data.extend_from_slice(self.value(v).data());
                }
                Tensor::new(vec![data.len()], data)?
            }
            (2, 0) => {
                let cols = self.value(*first).cols();
                let mut data = Vec::new();
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 2 || t.cols() != cols {
                        return Err(mismatch(self, v));
                    }
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![data.len() / cols, cols], data)?
            }
            (2, 1) => {
                let rows = self.value(*first).rows();
                let mut total = 0;
                for &v in inputs {
                    let t = self.value(v);
                    if t.rank() != 2 || t.rows() != rows {
                        return Err(mismatch(self, v));
                    }
                    total += t.cols();
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                Tensor::new(vec![rows, total], data)?
            }
            _ => {
                return Err(TensorError::Invalid(format!(
                    "concat along axis {axis} of rank-{rank} tensors"
                )))
            }
        };
        self.push(Op::Concat(inputs.to_vec(), axis), value, "concat", inputs)
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let extent = match (ta.rank(), axis) {
            (1, 0) => ta.numel(),
            (2, 0) => ta.rows(),
            (2, 1) => ta.cols(),
            _ => {
                return Err(TensorError::Invalid(format!(
                    "slice along axis {axis} of shape {:?}",
                    ta.shape()
                )))
            }
        };
        if start >= end || end > extent {
            return Err(TensorError::Index {
                op: "slice",
                index: end,
                len: extent,
            });
        }
        let value = match (ta.rank(), axis) {
            (1, 0) => Tensor::vector(ta.data()[start..end].to_vec()),
            (2, 0) => {
                let c = ta.cols();
                Tensor::new(vec![end - start, c], ta.data()[start * c..end * c].to_vec())?
            }
            _ => {
                let mut data = Vec::with_capacity(ta.rows() * (end - start));
                for r in 0..ta.rows() {
                    data.extend_from_slice(&ta.row(r)[start..end]);
                }
                Tensor::new(vec![ta.rows(), end - start], data)?
            }
        };
        self.push(Op::Slice { input: a, axis, start }, value, "slice", &[a])
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.slice(a, 0, i, i + 1)?;
        let c = self.value(s).cols();
        self.reshape(s, vec![c])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), value, "reshape", &[a])
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| TensorError::Invalid("stack of zero vectors".into()))?;
        let d = self.value(*first).numel();
        let mut data = Vec::with_capacity(d * rows.len());
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.numel() != d {
                return Err(TensorError::Shape {
                    op: "stack",
                    lhs: vec![d],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows.len(), d], data)?;
        self.push(Op::Stack(rows.to_vec()), value, "stack", rows)
    }

    /// Rows `ids` of a `[V × d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let value = gather_rows(self.value(table), ids)?;
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            value,
            "gather",
            &[table],
        )
    }

    /// Rows of a parameter table. The backward pass records only the touched
    /// rows, scattering additively.
    pub fn gather_param(&mut self, param: ParamId, ids: &[usize]) -> Result<Var> {
        let value = gather_rows(self.store.value(param), ids)?;
        self.nodes.push(Node {
            op: Op::GatherParam {
                param,
                ids: ids.to_vec(),
            },
            value: Some(value),
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), value, "sum", &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`; otherwise
    /// the input is returned unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::DropoutRate(p));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let ta = self.value(a);
        let mask: Vec<f64> = (0..ta.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::Dropout(a, mask), value, "dropout", &[a])
    }

    /// Maximum over consecutive pairs of the last axis, halving its width.
    pub fn maxout(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        if !c.is_multiple_of(2) || ta.rank() > 2 {
            return Err(TensorError::Invalid(format!(
                "maxout needs an even last axis, got shape {:?}",
                ta.shape()
            )));
        }
        let mut out = Vec::with_capacity(ta.numel() / 2);
        let mut src = Vec::with_capacity(ta.numel() / 2);
        for (i, pair) in ta.data().chunks(2).enumerate() {
            let pick = if pair[1] > pair[0] { 1 } else { 0 };
            out.push(pair[pick]);
            src.push(2 * i + pick);
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = c / 2;
        let value = Tensor::new(shape, out)?;
        self.push(Op::Maxout(a, src), value, "maxout", &[a])
    }

    /// One-hot of the argmax along the last axis (ties to the lower index).
    /// The backward pass treats the op as the identity.
    pub fn straight_through(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        let mut out = vec![0.0; ta.numel()];
        for (r, row) in ta.data().chunks(c).enumerate() {
            out[r * c + argmax(row)] = 1.0;
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.push(Op::StraightThrough(a), value, "straight_through", &[a])
    }

    /// Sum of the entries at the given flat indices (repeats allowed).
    pub fn pick_sum(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let mut s = 0.0;
        for &i in indices {
            s += *ta.data().get(i).ok_or(TensorError::Index {
                op: "pick_sum",
                index: i,
                len: ta.numel(),
            })?;
        }
        self.push(Op::PickSum(a, indices.to_vec()), Tensor::scalar(s), "pick_sum", &[a])
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x.max(floor)).collect())?;
        self.push(Op::ClampMin(a, floor), value, "clamp_min", &[a])
    }

    /// Reverse sweep from a scalar `loss`, returning d loss / d parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(TensorError::NonFinite { op: "loss" });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let y = node.value.as_ref();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add_dense(*id, &g),
                Op::GatherParam { param, ids } => {
                    let d = self.store.value(*param).cols();
                    for (r, &id) in ids.iter().enumerate() {
                        out.add_row(*param, id, &g[r * d..(r + 1) * d]);
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = mat_dims(ta);
                    let n = if tb.rank() == 1 { 1 } else { tb.shape()[1] };
                    if self.needs_grad(*a) {
                        let da = matmul_a_bt(&g, tb.data(), m, n, k);
                        accumulate(&mut grads, *a, &da);
                    }
                    if self.needs_grad(*b) {
                        let db = matmul_at_b(ta.data(), &g, m, k, n);
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Binary(op, a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let n = g.len();
                    let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
                    let (mut da, mut db) = (vec![0.0; n], vec![0.0; n]);
                    for i in 0..n {
                        let (x, yv) = (at(ta, i), at(tb, i));
                        let (ga, gb) = match op {
                            Elementwise::Add => (g[i], g[i]),
                            Elementwise::Sub => (g[i], -g[i]),
                            _ => (g[i] * yv, g[i] * x),
                        };
                        da[i] = ga;
                        db[i] = gb;
                    }
                    for (v, d, t) in [(*a, da, ta), (*b, db, tb)] {
                        if self.needs_grad(v) {
                            if t.numel() == 1 && n != 1 {
                                accumulate(&mut grads, v, &[d.iter().sum()]);
                            } else {
                                accumulate(&mut grads, v, &d);
                            }
                        }
                    }
                }
                Op::Unary(op, a) => {
                    let x = self.value(*a).data();
                    let y = y.expect("computed node").data();
                    let d: Vec<f64> = (0..g.len())
                        .map(|i| {
                            g[i] * match op {
                                Elementwise::Tanh => 1.0 - y[i] * y[i],
                                Elementwise::Sigmoid => y[i] * (1.0 - y[i]),
                                Elementwise::Relu => {
                                    if x[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Elementwise::Exp => y[i],
                                Elementwise::Log => 1.0 / x[i],
                                Elementwise::Neg => -1.0,
                                _ => unreachable!(),
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *a, &d);
                }
                Op::AddRows(a, b) => {
                    if self.needs_grad(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if self.needs_grad(*b) {
                        let c = self.value(*b).numel();
                        let mut db = vec![0.0; c];
                        for (i, v) in g.iter().enumerate() {
                            db[i % c] += v;
                        }
                        accumulate(&mut grads, *b, &db);
                    }
                }
                Op::Scale(a, f) => {
                    let d: Vec<f64> = g.iter().map(|v| v * f).collect();
                    accumulate(&mut grads, *a, &d);
                }
                Op::Offset(a) | Op::Reshape(a) | Op::StraightThrough(a) => {
                    accumulate(&mut grads, *a, &g);
                }
                Op::Softmax(a) => {
                    let y = y.expect("computed node");
                    let c = y.cols();
                    let mut d = vec![0.0; g.len()];
                    for (r, (yr, gr)) in y.data().chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, &d);
                }
                Op::LogSoftmax(a) => {
                    let y = y.expect("computed node");
                    let c = y.cols();
                    let mut d = vec![0.0; g.len()];
                    for (r, (yr, gr)) in y.data().chunks(c).zip(g.chunks(c)).enumerate() {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[r * c + j] = gr[j] - yr[j].exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, &d);
                }
                Op::Concat(inputs, axis) => {
                    let rank = self.value(inputs[0]).rank();
                    if rank == 2 && *axis == 1 {
                        let total = y.expect("computed node").cols();
                        let rows = g.len() / total;
                        let mut offset = 0;
                        for &v in inputs {
                            let c = self.value(v).cols();
                            if self.needs_grad(v) {
                                let mut d = Vec::with_capacity(rows * c);
                                for r in 0..rows {
                                    d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                                }
                                accumulate(&mut grads, v, &d);
                            }
                            offset += c;
                        }
                    } else {
                        let mut offset = 0;
                        for &v in inputs {
                            let n = self.value(v).numel();
                            if self.needs_grad(v) {
                                accumulate(&mut grads, v, &g[offset..offset + n]);
                            }
                            offset += n;
                        }
                    }
                }
                Op::Slice { input, axis, start } => {
                    let t = self.value(*input);
                    let mut d = vec![0.0; t.numel()];
                    match (t.rank(), axis) {
                        (1, _) => d[*start..*start + g.len()].copy_from_slice(&g),
                        (_, 0) => {
                            let c = t.cols();
                            d[start * c..start * c + g.len()].copy_from_slice(&g);
                        }
                        _ => {
                            let c = t.cols();
                            let w = g.len() / t.rows();
                            for r in 0..t.rows() {
                                d[r * c + start..r * c + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                            }
                        }
                    }
                    accumulate(&mut grads, *input, &d);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let c = t.cols();
                    let mut d = vec![0.0; t.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            d[id * c + j] += g[r * c + j];
                        }
                    }
                    accumulate(&mut grads, *table, &d);
                }
                Op::Stack(rows) => {
                    let d = g.len() / rows.len();
                    for (r, &v) in rows.iter().enumerate() {
                        if self.needs_grad(v) {
                            accumulate(&mut grads, v, &g[r * d..(r + 1) * d]);
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    accumulate(&mut grads, *a, &vec![g[0]; n]);
                }
                Op::Dropout(a, mask) => {
                    let d: Vec<f64> = g.iter().zip(mask).map(|(v, m)| v * m).collect();
                    accumulate(&mut grads, *a, &d);
                }
                Op::Maxout(a, src) => {
                    let mut d = vec![0.0; self.value(*a).numel()];
                    for (i, &s) in src.iter().enumerate() {
                        d[s] += g[i];
                    }
                    accumulate(&mut grads, *a, &d);
                }
                Op::PickSum(a, indices) => {
                    let mut d = vec![0.0; self.value(*a).numel()];
                    for &i in indices {
                        d[i] += g[0];
                    }
                    accumulate(&mut grads, *a, &d);
                }
                Op::ClampMin(a, floor) => {
                    let x = self.value(*a).data();
                    let d: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(v, &xi)| if xi > *floor { *v } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, &d);
                }
            }
        }
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(buf) => {
            for (acc, x) in buf.iter_mut().zip(g) {
                *acc += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn mat_dims(t: &Tensor) -> (usize, usize) {
    if t.rank() == 1 {
        (1, t.numel())
    } else {
        (t.shape()[0], t.shape()[t.rank() - 1])
    }
}

fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(TensorError::Invalid(format!(
            "gather needs a matrix table, got shape {:?}",
            table.shape()
        )));
    }
    if ids.is_empty() {
        return Err(TensorError::Invalid("gather with no ids".into()));
    }
    let (v, d) = (table.rows(), table.cols());
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(TensorError::Index {
                op: "gather",
                index: id,
                len: v,
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), d], data)
}

/// `[m×k] · [k×n]`
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g[m×n] · bᵀ` where `b` is `[k×n]`.
fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `[m×k]` and `g` is `[m×n]`.
fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
