//! Reverse-mode automatic differentiation over [`DenseTensor`] values.
//!
//! A [`Tape`] records every operation eagerly: each node stores its primal
//! value next to the operation and input references, so nodes are always in
//! topological order. [`Tape::grad`] walks the tape backwards and emits the
//! adjoint computation as *new nodes on the same tape*. Gradients are
//! therefore ordinary [`Var`]s and can be differentiated again, which is how
//! Hessian-vector products are formed (tape-of-tape).
//!
//! [`Var::stop_gradient`] yields a node that is an identity in value but
//! never propagates adjoints, at any nesting level.
//!
//! ```
//! use ttriem::ad::Tape;
//! use ttriem::DenseTensor;
//!
//! let tape = Tape::new();
//! let x = tape.var(DenseTensor::scalar(2.0));
//! let y = x.mul(x).unwrap().mul(x).unwrap(); // x³
//! let dy = tape.grad(y, &[x]).unwrap()[0];
//! assert_eq!(dy.item(), 12.0);
//! let d2y = tape.grad(dy, &[x]).unwrap()[0];
//! assert_eq!(d2y.item(), 12.0);
//! ```

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{contract, inverse_perm, DenseTensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Contract(Vec<(usize, usize)>),
    Reshape,
    Permute(Vec<usize>),
    Slice { axis: usize, start: usize },
    Pad { axis: usize, before: usize },
    Gather { axis: usize, indices: Vec<usize> },
    ScatterAdd { axis: usize, indices: Vec<usize> },
    Concat { axis: usize },
    Broadcast,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    Shift,
    Exp,
    Log,
    Log1p,
    Sin,
    Cos,
    Sum,
    StopGradient,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: DenseTensor,
    requires_grad: bool,
}

/// Recorded computation graph. Confined to one thread.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.index, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn var(&self, value: DenseTensor) -> Var<'_> {
        self.push(Op::Leaf, Vec::new(), value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: DenseTensor) -> Var<'_> {
        self.push(Op::Constant, Vec::new(), value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(DenseTensor::scalar(value))
    }

    pub fn zeros(&self, shape: &[usize]) -> Var<'_> {
        self.constant(DenseTensor::zeros(shape))
    }

    fn push(&self, op: Op, inputs: Vec<usize>, value: DenseTensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        Var {
            tape: self,
            index: nodes.len() - 1,
        }
    }

    fn record(&self, op: Op, inputs: &[Var<'_>], value: DenseTensor) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            !matches!(op, Op::StopGradient) && inputs.iter().any(|v| nodes[v.index].requires_grad)
        };
        self.push(op, inputs.iter().map(|v| v.index).collect(), value, requires_grad)
    }

    fn own<'a>(&'a self, v: Var<'_>) -> Result<Var<'a>> {
        if !std::ptr::eq(v.tape, self) || v.tape.id != self.id {
            return Err(Error::InvalidVariable);
        }
        Ok(Var {
            tape: self,
            index: v.index,
        })
    }

    fn value_of(&self, index: usize) -> DenseTensor {
        self.nodes.borrow()[index].value.clone()
    }

    /// Concatenation along `axis`.
    pub fn concat<'a>(&'a self, parts: &[Var<'a>], axis: usize) -> Result<Var<'a>> {
        for p in parts {
            self.own(*p)?;
        }
        let out = {
            let nodes = self.nodes.borrow();
            let refs: Vec<&DenseTensor> = parts.iter().map(|p| &nodes[p.index].value).collect();
            DenseTensor::concat(&refs, axis)?
        };
        Ok(self.record(Op::Concat { axis }, parts, out))
    }

    /// Applies an operation by name. Unknown names (for example `"qr"` or
    /// `"svd"`, which are deliberately not differentiable here) produce
    /// [`Error::UnsupportedOperation`].
    pub fn apply<'a>(&'a self, name: &str, inputs: &[Var<'a>]) -> Result<Var<'a>> {
        let unary = |f: fn(Var<'a>) -> Result<Var<'a>>| -> Result<Var<'a>> {
            match inputs {
                [x] => f(*x),
                _ => Err(dim_err!("{name} takes one input, got {}", inputs.len())),
            }
        };
        let binary = |f: fn(Var<'a>, Var<'a>) -> Result<Var<'a>>| -> Result<Var<'a>> {
            match inputs {
                [x, y] => f(*x, *y),
                _ => Err(dim_err!("{name} takes two inputs, got {}", inputs.len())),
            }
        };
        match name {
            "add" => binary(|a, b| a.add(b)),
            "sub" => binary(|a, b| a.sub(b)),
            "mul" => binary(|a, b| a.mul(b)),
            "div" => binary(|a, b| a.div(b)),
            "dot" => binary(|a, b| a.dot(b)),
            "matmul" => binary(|a, b| a.matmul(b)),
            "neg" => unary(|a| Ok(a.neg())),
            "exp" => unary(|a| Ok(a.exp())),
            "log" => unary(|a| Ok(a.ln())),
            "log1p" => unary(|a| Ok(a.ln_1p())),
            "sin" => unary(|a| Ok(a.sin())),
            "cos" => unary(|a| Ok(a.cos())),
            "sum" => unary(|a| Ok(a.sum())),
            "transpose" => unary(|a| a.transpose()),
            "stop_gradient" => unary(|a| Ok(a.stop_gradient())),
            other => Err(Error::UnsupportedOperation(other.to_string())),
        }
    }

    /// Gradient of the scalar `output` with respect to each `wrt` node.
    ///
    /// The adjoint computation is recorded on this tape, so the returned
    /// variables can be differentiated again. Inputs that `output` does not
    /// depend on get a zero gradient.
    pub fn grad<'a>(&'a self, output: Var<'a>, wrt: &[Var<'a>]) -> Result<Vec<Var<'a>>> {
        let output = self.own(output)?;
        for w in wrt {
            self.own(*w)?;
        }
        let out_value = output.value();
        if out_value.len() != 1 {
            return Err(dim_err!("grad needs a scalar output, got shape {:?}", out_value.shape()));
        }
        let end = output.index + 1;
        // reach[i]: node i depends differentiably on some wrt node.
        let mut reach = vec![false; end];
        let mut is_target = vec![false; end];
        for w in wrt {
            if w.index < end {
                is_target[w.index] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..end {
                let n = &nodes[i];
                reach[i] = is_target[i]
                    || (!matches!(n.op, Op::StopGradient | Op::Leaf | Op::Constant)
                        && n.inputs.iter().any(|&j| reach[j]));
            }
        }
        let boxes = self.live_boxes(end, &reach, &is_target);
        let mut adjoint: Vec<Option<Var<'a>>> = vec![None; end];
        adjoint[output.index] =
            Some(self.constant(DenseTensor::ones(out_value.shape())));

        for i in (0..end).rev() {
            if !reach[i] || is_leafish(&self.nodes.borrow()[i].op) {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            let (op, inputs) = {
                let nodes = self.nodes.borrow();
                (nodes[i].op.clone(), nodes[i].inputs.clone())
            };
            let contributions = self.vjp(&op, &inputs, i, g, &reach, &boxes)?;
            for (j, c) in contributions {
                adjoint[j] = Some(match adjoint[j] {
                    None => c,
                    Some(prev) => prev.add(c)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match adjoint.get(w.index).copied().flatten() {
                Some(g) if reach[w.index] => g,
                _ => self.constant(DenseTensor::zeros(&w.shape())),
            })
            .collect())
    }

    /// For every node, the smallest axis-aligned block outside of which its
    /// adjoint is never needed (`None` when that is the whole value). Blocks
    /// only shrink below full size through concatenation and padding of
    /// partly constant data, as in tangent block cores.
    fn live_boxes(&self, end: usize, reach: &[bool], is_target: &[bool]) -> Vec<Option<Block>> {
        let nodes = self.nodes.borrow();
        let mut boxes: Vec<Option<Block>> = vec![None; end];
        for i in 0..end {
            if !reach[i] || is_target[i] {
                continue;
            }
            let n = &nodes[i];
            let full = |j: usize| -> Block { nodes[j].value.shape().iter().map(|&e| (0, e)).collect() };
            let block = match &n.op {
                Op::Concat { axis } => {
                    let mut acc: Option<Block> = None;
                    let mut offset = 0;
                    for &j in &n.inputs {
                        let len = nodes[j].value.shape()[*axis];
                        if reach[j] {
                            let mut b = boxes[j].clone().unwrap_or_else(|| full(j));
                            b[*axis].0 += offset;
                            acc = Some(match acc {
                                None => b,
                                Some(a) => hull(&a, &b),
                            });
                        }
                        offset += len;
                    }
                    acc
                }
                Op::Pad { axis, before } => {
                    let mut b = boxes[n.inputs[0]].clone().unwrap_or_else(|| full(n.inputs[0]));
                    b[*axis].0 += before;
                    Some(b)
                }
                _ => None,
            };
            boxes[i] = block.filter(|b| b.iter().zip(n.value.shape()).any(|(&(s, l), &e)| s != 0 || l != e));
        }
        boxes
    }

    /// Adjoint contributions of node `out` to each of its inputs that needs
    /// one.
    fn vjp<'a>(
        &'a self,
        op: &Op,
        inputs: &[usize],
        out: usize,
        g: Var<'a>,
        reach: &[bool],
        boxes: &[Option<Block>],
    ) -> Result<Vec<(usize, Var<'a>)>> {
        let var = |i: usize| Var { tape: self, index: i };
        let want = |k: usize| reach[inputs[k]];
        let mut res = Vec::with_capacity(inputs.len());
        match op {
            Op::Leaf | Op::Constant | Op::StopGradient => {}
            Op::Contract(axes) => {
                let a = var(inputs[0]);
                let b = var(inputs[1]);
                let (na, nb) = (a.ndim(), b.ndim());
                let free_a: Vec<usize> = (0..na).filter(|k| !axes.iter().any(|p| p.0 == *k)).collect();
                let free_b: Vec<usize> = (0..nb).filter(|k| !axes.iter().any(|p| p.1 == *k)).collect();
                let nfa = free_a.len();
                if want(0) {
                    // g[free_a, free_b] · b[...] over free_b → [free_a, con_b sorted]
                    let pairs: Vec<(usize, usize)> =
                        free_b.iter().enumerate().map(|(t, &kb)| (nfa + t, kb)).collect();
                    let live = &boxes[inputs[0]];
                    let (mut gs, mut bs) = (g, b);
                    if let Some(blk) = live {
                        for (t, &ka) in free_a.iter().enumerate() {
                            gs = narrow(gs, t, blk[ka])?;
                        }
                        for &(ka, kb) in axes.iter() {
                            bs = narrow(bs, kb, blk[ka])?;
                        }
                    }
                    let r = gs.contract(bs, &pairs)?;
                    // Axis order of r in terms of a's axes.
                    let mut order: Vec<usize> = free_a.clone();
                    let mut con_b_sorted: Vec<usize> = axes.iter().map(|p| p.1).collect();
                    con_b_sorted.sort_unstable();
                    for kb in con_b_sorted {
                        let ka = axes.iter().find(|p| p.1 == kb).unwrap().0;
                        order.push(ka);
                    }
                    let r = r.permute(&inverse_perm(&order))?;
                    res.push((inputs[0], widen(r, live.as_ref(), &a.shape())?));
                }
                if want(1) {
                    let pairs: Vec<(usize, usize)> =
                        free_a.iter().enumerate().map(|(t, &ka)| (ka, t)).collect();
                    let live = &boxes[inputs[1]];
                    let (mut as_, mut gs) = (a, g);
                    if let Some(blk) = live {
                        for (t, &kb) in free_b.iter().enumerate() {
                            gs = narrow(gs, nfa + t, blk[kb])?;
                        }
                        for &(ka, kb) in axes.iter() {
                            as_ = narrow(as_, ka, blk[kb])?;
                        }
                    }
                    let r = as_.contract(gs, &pairs)?;
                    let mut con_a_sorted: Vec<usize> = axes.iter().map(|p| p.0).collect();
                    con_a_sorted.sort_unstable();
                    let mut order: Vec<usize> = con_a_sorted
                        .iter()
                        .map(|&ka| axes.iter().find(|p| p.0 == ka).unwrap().1)
                        .collect();
                    order.extend(&free_b);
                    let r = r.permute(&inverse_perm(&order))?;
                    res.push((inputs[1], widen(r, live.as_ref(), &b.shape())?));
                }
            }
            Op::Reshape => {
                let shape = var(inputs[0]).shape();
                res.push((inputs[0], g.reshape(&shape)?));
            }
            Op::Permute(perm) => {
                res.push((inputs[0], g.permute(&inverse_perm(perm))?));
            }
            Op::Slice { axis, start } => {
                let full = var(inputs[0]).shape()[*axis];
                let len = g.shape()[*axis];
                res.push((inputs[0], g.pad(*axis, *start, full - start - len)?));
            }
            Op::Pad { axis, before } => {
                let len = var(inputs[0]).shape()[*axis];
                res.push((inputs[0], g.slice(*axis, *before, len)?));
            }
            Op::Gather { axis, indices } => {
                let extent = var(inputs[0]).shape()[*axis];
                res.push((inputs[0], g.scatter_add(*axis, indices, extent)?));
            }
            Op::ScatterAdd { axis, indices } => {
                res.push((inputs[0], g.gather(*axis, indices)?));
            }
            Op::Concat { axis } => {
                let mut offset = 0;
                for (k, &j) in inputs.iter().enumerate() {
                    let len = var(j).shape()[*axis];
                    if want(k) {
                        res.push((j, g.slice(*axis, offset, len)?));
                    }
                    offset += len;
                }
            }
            Op::Broadcast => res.push((inputs[0], g.sum())),
            Op::Add => {
                if want(0) {
                    res.push((inputs[0], g));
                }
                if want(1) {
                    res.push((inputs[1], g));
                }
            }
            Op::Sub => {
                if want(0) {
                    res.push((inputs[0], g));
                }
                if want(1) {
                    res.push((inputs[1], g.neg()));
                }
            }
            Op::Mul => {
                if want(0) {
                    res.push((inputs[0], g.mul(var(inputs[1]))?));
                }
                if want(1) {
                    res.push((inputs[1], g.mul(var(inputs[0]))?));
                }
            }
            Op::Div => {
                let b = var(inputs[1]);
                if want(0) {
                    res.push((inputs[0], g.div(b)?));
                }
                if want(1) {
                    res.push((inputs[1], g.mul(var(out))?.div(b)?.neg()));
                }
            }
            Op::Neg => res.push((inputs[0], g.neg())),
            Op::Scale(c) => res.push((inputs[0], g.scale(*c))),
            Op::Shift => res.push((inputs[0], g)),
            Op::Exp => res.push((inputs[0], g.mul(var(out))?)),
            Op::Log => res.push((inputs[0], g.div(var(inputs[0]))?)),
            Op::Log1p => res.push((inputs[0], g.div(var(inputs[0]).shift(1.0))?)),
            Op::Sin => res.push((inputs[0], g.mul(var(inputs[0]).cos())?)),
            Op::Cos => res.push((inputs[0], g.mul(var(inputs[0]).sin())?.neg())),
            Op::Sum => {
                let shape = var(inputs[0]).shape();
                res.push((inputs[0], g.broadcast(&shape)?));
            }
        }
        Ok(res)
    }
}

/// Per-axis `(start, len)` of a block inside a value.
type Block = Vec<(usize, usize)>;

fn hull(a: &Block, b: &Block) -> Block {
    a.iter()
        .zip(b)
        .map(|(&(sa, la), &(sb, lb))| {
            let start = sa.min(sb);
            (start, (sa + la).max(sb + lb) - start)
        })
        .collect()
}

fn narrow(v: Var<'_>, axis: usize, (start, len): (usize, usize)) -> Result<Var<'_>> {
    if start == 0 && len == v.shape()[axis] {
        Ok(v)
    } else {
        v.slice(axis, start, len)
    }
}

/// Zero-pads a block adjoint back to the full `shape`.
fn widen<'t>(mut v: Var<'t>, block: Option<&Block>, shape: &[usize]) -> Result<Var<'t>> {
    if let Some(blk) = block {
        for (axis, (&(start, len), &full)) in blk.iter().zip(shape).enumerate() {
            if start != 0 || len != full {
                v = v.pad(axis, start, full - start - len)?;
            }
        }
    }
    Ok(v)
}

fn is_leafish(op: &Op) -> bool {
    matches!(op, Op::Leaf | Op::Constant)
}

// Fallible arithmetic (shape checks) rules out the operator traits.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Position of the node on its tape.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn value(&self) -> DenseTensor {
        self.tape.value_of(self.index)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.index].value.shape().to_vec()
    }

    pub fn ndim(&self) -> usize {
        self.tape.nodes.borrow()[self.index].value.ndim()
    }

    /// Value of a single-entry node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.index].value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.index].requires_grad
    }

    fn peer(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.tape.own(other)
    }

    /// Runs `f` on the stored value without copying it.
    fn with_value<R>(&self, f: impl FnOnce(&DenseTensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.index].value)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.with_value(|x| x.map(f));
        self.tape.record(op, &[self], v)
    }

    /// Brings a scalar operand to the shape of the other side.
    fn align(self, other: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa == sb {
            Ok((self, other))
        } else if sa.is_empty() {
            Ok((self.broadcast(&sb)?, other))
        } else if sb.is_empty() {
            Ok((self, other.broadcast(&sa)?))
        } else {
            Err(dim_err!("elementwise shapes differ: {:?} vs {:?}", sa, sb))
        }
    }

    fn binary(self, other: Var<'_>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let other = self.peer(other)?;
        let (a, b) = self.align(other)?;
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[a.index].value.zip_with(&nodes[b.index].value, f)?
        };
        Ok(self.tape.record(op, &[a, b], v))
    }

    pub fn add(self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Op::Neg, |a| -a)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(c), |a| c * a)
    }

    /// Adds a constant to every entry.
    pub fn shift(self, c: f64) -> Var<'t> {
        self.unary(Op::Shift, |a| a + c)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn ln_1p(self) -> Var<'t> {
        self.unary(Op::Log1p, f64::ln_1p)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin, f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos, f64::cos)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let v = DenseTensor::scalar(self.with_value(|x| x.sum()));
        self.tape.record(Op::Sum, &[self], v)
    }

    /// Repeats a single-entry value over `shape`.
    pub fn broadcast(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value();
        if value.len() != 1 {
            return Err(dim_err!("only single-entry values broadcast, got {:?}", value.shape()));
        }
        let v = DenseTensor::full(shape, value.data()[0]);
        Ok(self.tape.record(Op::Broadcast, &[self], v))
    }

    pub fn stop_gradient(self) -> Var<'t> {
        let v = self.value();
        self.tape.record(Op::StopGradient, &[self], v)
    }

    pub fn contract(self, other: Var<'_>, axes: &[(usize, usize)]) -> Result<Var<'t>> {
        let other = self.peer(other)?;
        let v = {
            let nodes = self.tape.nodes.borrow();
            contract(&nodes[self.index].value, &nodes[other.index].value, axes)?
        };
        Ok(self.tape.record(Op::Contract(axes.to_vec()), &[self, other], v))
    }

    pub fn matmul(self, other: Var<'_>) -> Result<Var<'t>> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return Err(dim_err!("matmul needs matrices"));
        }
        self.contract(other, &[(1, 0)])
    }

    /// Full inner product `Σ a·b` of equally shaped values.
    pub fn dot(self, other: Var<'_>) -> Result<Var<'t>> {
        let other = self.peer(other)?;
        if self.shape() != other.shape() {
            return Err(dim_err!("dot shapes differ: {:?} vs {:?}", self.shape(), other.shape()));
        }
        let axes: Vec<(usize, usize)> = (0..self.ndim()).map(|k| (k, k)).collect();
        self.contract(other, &axes)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.with_value(|x| x.reshape(shape))?;
        Ok(self.tape.record(Op::Reshape, &[self], v))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let v = self.with_value(|x| x.permute(perm))?;
        Ok(self.tape.record(Op::Permute(perm.to_vec()), &[self], v))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        if self.ndim() != 2 {
            return Err(dim_err!("transpose needs a matrix"));
        }
        self.permute(&[1, 0])
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.with_value(|x| x.slice(axis, start, len))?;
        Ok(self.tape.record(Op::Slice { axis, start }, &[self], v))
    }

    /// Picks the listed positions along `axis` (repeats allowed).
    pub fn gather(self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let v = self.with_value(|x| x.gather(axis, indices))?;
        let op = Op::Gather {
            axis,
            indices: indices.to_vec(),
        };
        Ok(self.tape.record(op, &[self], v))
    }

    /// Adjoint of [`gather`](Self::gather).
    pub fn scatter_add(self, axis: usize, indices: &[usize], extent: usize) -> Result<Var<'t>> {
        let v = self.with_value(|x| x.scatter_add(axis, indices, extent))?;
        let op = Op::ScatterAdd {
            axis,
            indices: indices.to_vec(),
        };
        Ok(self.tape.record(op, &[self], v))
    }

    pub fn pad(self, axis: usize, before: usize, after: usize) -> Result<Var<'t>> {
        let v = self.with_value(|x| x.pad(axis, before, after))?;
        Ok(self.tape.record(Op::Pad { axis, before }, &[self], v))
    }
}

/// A finished recording: the tape plus the index of its scalar output.
#[derive(Debug)]
pub struct Recording {
    pub tape: Tape,
    output: usize,
    inputs: Vec<usize>,
}

impl Recording {
    pub fn value(&self) -> f64 {
        self.tape.value_of(self.output).data()[0]
    }

    pub fn output(&self) -> Var<'_> {
        Var {
            tape: &self.tape,
            index: self.output,
        }
    }

    pub fn inputs(&self) -> Vec<Var<'_>> {
        self.inputs
            .iter()
            .map(|&index| Var {
                tape: &self.tape,
                index,
            })
            .collect()
    }

    /// Gradients of the output with respect to all recorded inputs.
    pub fn gradients(&self) -> Result<Vec<DenseTensor>> {
        let grads = self.tape.grad(self.output(), &self.inputs())?;
        Ok(grads.iter().map(|g| g.value()).collect())
    }
}

/// Records `program` on a fresh tape with `inputs` as differentiable leaves.
/// The program must return a single-entry value.
pub fn record<F>(inputs: &[DenseTensor], program: F) -> Result<Recording>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let (output, input_ids) = {
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
        let out = program(&tape, &vars)?;
        let out = tape.own(out)?;
        if out.value().len() != 1 {
            return Err(dim_err!("program output must be scalar, got {:?}", out.shape()));
        }
        (out.index, vars.iter().map(|v| v.index).collect::<Vec<_>>())
    };
    Ok(Recording {
        tape,
        output,
        inputs: input_ids,
    })
}

/// Value and gradient of `program` at `inputs`.
pub fn value_and_grad<F>(inputs: &[DenseTensor], program: F) -> Result<(f64, Vec<DenseTensor>)>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let rec = record(inputs, program)?;
    Ok((rec.value(), rec.gradients()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn s(v: f64) -> DenseTensor {
        DenseTensor::scalar(v)
    }

    fn random(shape: &[usize], rng: &mut StdRng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Central differences of a scalar program with respect to input `k`.
    fn central_diff<F>(inputs: &[DenseTensor], k: usize, h: f64, program: F) -> DenseTensor
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Copy,
    {
        let base = inputs[k].to_vec();
        let mut out = vec![0.0; base.len()];
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut shifted = base.clone();
                shifted[i] += delta;
                let mut args = inputs.to_vec();
                args[k] = DenseTensor::new(inputs[k].shape().to_vec(), shifted).unwrap();
                record(&args, program).unwrap().value()
            };
            out[i] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        DenseTensor::new(inputs[k].shape().to_vec(), out).unwrap()
    }

    #[test]
    fn worked_example_value_and_gradient() {
        fn prog<'t>(_: &'t Tape, x: &[Var<'t>]) -> Result<Var<'t>> {
            let v1 = x[0].mul(x[1])?;
            v1.exp().add(x[1].sin())
        }
        let (f, g) = value_and_grad(&[s(1.0), s(0.0)], prog).unwrap();
        assert_eq!(f, 1.0);
        assert_eq!(g[0].item().unwrap(), 0.0);
        assert_eq!(g[1].item().unwrap(), 2.0);
    }

    #[test]
    fn constant_program_has_one_node() {
        let rec = record(&[], |t, _| Ok(t.scalar(3.0))).unwrap();
        assert_eq!(rec.tape.len(), 1);
        assert_eq!(rec.value(), 3.0);
    }

    #[test]
    fn sum_of_ones() {
        let rec = record(&[DenseTensor::ones(&[2, 2])], |_, x| Ok(x[0].sum())).unwrap();
        assert_eq!(rec.value(), 4.0);
    }

    #[test]
    fn quadratic_gradient_is_twice_input() {
        let mut rng = StdRng::seed_from_u64(3);
        let x = random(&[3, 4], &mut rng);
        let (_, g) = value_and_grad(std::slice::from_ref(&x), |_, v| v[0].dot(v[0])).unwrap();
        assert!(g[0].rel_diff(&x.scale(2.0)).unwrap() < 1e-15);
    }

    #[test]
    fn stop_gradient_semantics() {
        let mut rng = StdRng::seed_from_u64(4);
        let x = random(&[2, 3], &mut rng);
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let c = xv.stop_gradient();
        assert_eq!(c.value(), x);
        let f = c.dot(xv).unwrap();
        let g = tape.grad(f, &[xv]).unwrap()[0];
        assert!(g.value().rel_diff(&x).unwrap() < 1e-15);
        let g0 = tape.grad(c.sum(), &[xv]).unwrap()[0];
        assert_eq!(g0.value(), DenseTensor::zeros(&[2, 3]));
    }

    #[test]
    fn stop_gradient_blocks_nested_sweeps() {
        // f(x) = c(x)·x³ at x = 2: f' = 3x²·c = 24, and the frozen factor must
        // stay frozen in the second derivative: f'' = 6x·c = 24.
        let tape = Tape::new();
        let x = tape.var(s(2.0));
        let x3 = x.mul(x).unwrap().mul(x).unwrap();
        let f = x.stop_gradient().mul(x3).unwrap();
        let d1 = tape.grad(f, &[x]).unwrap()[0];
        assert_eq!(d1.item(), 24.0);
        let d2 = tape.grad(d1, &[x]).unwrap()[0];
        assert_eq!(d2.item(), 24.0);
    }

    #[test]
    fn nested_fourth_power() {
        let tape = Tape::new();
        let x = tape.var(s(2.0));
        let sq = x.mul(x).unwrap();
        let f = sq.mul(sq).unwrap();
        let d1 = tape.grad(f, &[x]).unwrap()[0];
        assert_eq!(d1.item(), 32.0);
        let d2 = tape.grad(d1, &[x]).unwrap()[0];
        assert_eq!(d2.item(), 48.0);
    }

    #[test]
    fn foreign_variable_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let x = t1.var(s(1.0));
        let y = t2.var(s(1.0));
        assert_eq!(t1.grad(x, &[y]).unwrap_err(), Error::InvalidVariable);
        assert_eq!(x.add(y).unwrap_err(), Error::InvalidVariable);
    }

    #[test]
    fn unsupported_named_op() {
        let tape = Tape::new();
        let x = tape.var(DenseTensor::eye(2));
        assert!(matches!(tape.apply("qr", &[x]), Err(Error::UnsupportedOperation(_))));
        assert!(tape.apply("exp", &[x]).is_ok());
    }

    #[test]
    fn unreached_input_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(s(1.0));
        let y = tape.var(DenseTensor::ones(&[2]));
        let g = tape.grad(x.exp(), &[y]).unwrap()[0];
        assert_eq!(g.value(), DenseTensor::zeros(&[2]));
    }

    fn check_fd<F>(inputs: &[DenseTensor], program: F)
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Copy,
    {
        let (_, grads) = value_and_grad(inputs, program).unwrap();
        for k in 0..inputs.len() {
            let fd = central_diff(inputs, k, 1e-6, program);
            let err = grads[k].sub(&fd).unwrap().norm() / fd.norm().max(1.0);
            assert!(err < 1e-6, "input {k}: relative error {err}");
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 5], &mut rng);
        let c = random(&[3, 4], &mut rng).map(|v| v.abs() + 0.5);
        check_fd(&[a.clone(), b.clone()], |_, x| Ok(x[0].matmul(x[1])?.sin().sum().exp()));
        check_fd(&[a.clone(), c.clone()], |_, x| Ok(x[0].div(x[1])?.mul(x[0])?.sum()));
        check_fd(&[a.clone(), c.clone()], |_, x| x[0].sub(x[1])?.cos().dot(x[1].ln()));
        check_fd(std::slice::from_ref(&c), |_, x| Ok(x[0].ln_1p().neg().shift(2.0).scale(0.3).sum()));
        check_fd(std::slice::from_ref(&a), |_, x| {
            let t = x[0].transpose()?.reshape(&[2, 6])?;
            let p = t.slice(1, 1, 3)?.pad(0, 1, 0)?;
            p.dot(p)
        });
        check_fd(&[a.clone(), c.clone()], |t, x| {
            let cat = t.concat(&[x[0], x[1]], 0)?;
            let w = cat.reshape(&[2, 3, 4])?.permute(&[2, 0, 1])?;
            let s = w.sum();
            w.mul(w)?.sum().mul(s)
        });
        check_fd(&[random(&[2, 3, 4], &mut rng), random(&[4, 3, 2], &mut rng)], |_, x| {
            let r = x[0].contract(x[1], &[(2, 0), (1, 1)])?;
            r.mul(r)?.sum().div(x[0].sum().exp())
        });
        check_fd(&[random(&[3, 4, 2], &mut rng)], |_, x| {
            let g = x[0].gather(1, &[3, 0, 3, 1, 2])?;
            let s = g.sin().scatter_add(1, &[0, 0, 1, 2, 1], 3)?;
            Ok(s.mul(s)?.sum())
        });
    }

    #[test]
    fn gather_scatter_second_order() {
        // f = Σ_t x[i_t]³ with a repeated index: ∂²f/∂x_j² = 6·count_j·x_j.
        let tape = Tape::new();
        let x = tape.var(DenseTensor::new(vec![3], vec![1.0, 2.0, -1.0]).unwrap());
        let g = x.gather(0, &[1, 1, 2]).unwrap();
        let f = g.mul(g).unwrap().mul(g).unwrap().sum();
        let df = tape.grad(f, &[x]).unwrap()[0];
        assert_eq!(df.value().to_vec(), vec![0.0, 24.0, 3.0]);
        let v = tape.constant(DenseTensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap());
        let hv = tape.grad(df.dot(v).unwrap(), &[x]).unwrap()[0];
        assert_eq!(hv.value().to_vec(), vec![0.0, 24.0, -6.0]);
    }

    #[test]
    fn random_program_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..5 {
            let a = random(&[3, 3], &mut rng);
            let b = random(&[3], &mut rng);
            check_fd(&[a, b], |_, x| {
                let v = x[0].contract(x[1], &[(1, 0)])?;
                let w = v.exp().mul(x[1])?;
                let z = w.sin().add(v)?;
                z.dot(z)
            });
        }
    }

    #[test]
    fn gradient_tape_growth_is_bounded() {
        let mut rng = StdRng::seed_from_u64(5);
        let tape = Tape::new();
        let x = tape.var(random(&[4, 4], &mut rng));
        let y = tape.var(random(&[4, 4], &mut rng));
        let mut acc = x;
        for _ in 0..6 {
            acc = acc.matmul(y).unwrap().sin().add(x).unwrap();
        }
        let f = acc.dot(acc).unwrap();
        let primal = tape.len();
        tape.grad(f, &[x, y]).unwrap();
        let adjoint = tape.len() - primal;
        assert!(adjoint <= 4 * primal, "{adjoint} adjoint nodes for {primal} primal");
    }
}
