//! Reverse-mode autodiff over a single-owner tape.
//!
//! Every operation appends one node; node ids increase in evaluation order, so
//! walking ids downwards from the root is a valid reverse topological order and
//! visits each node once.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{check_tau, log_sum_exp, Tensor};
use super::TensorError;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Gelu(usize),
    Softmax(usize, f64),
    LogSoftmax(usize, f64),
    LayerNorm { x: usize, xhat: Tensor, inv_std: Vec<f64> },
    Log(usize),
    Sqrt(usize),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    MeanRows(usize),
    SelectRows(usize, Vec<usize>),
    L2Normalize { x: usize, norms: Vec<f64> },
    ConcatRows(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records operations for one forward pass. Leaves created with
/// `requires_grad` receive accumulated gradients on [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
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

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad, grad: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let rg = self.requires(inputs);
        self.push(value, op, rg)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.nodes.borrow()[v.id].grad.clone()
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Propagates `d root / d leaf` into every trainable leaf, adding to any
    /// gradient left by earlier calls.
    pub fn backward(&self, root: Var<'_>) -> Result<(), TensorError> {
        let nodes = self.nodes.borrow();
        let rshape = nodes[root.id].value.shape().to_vec();
        if nodes[root.id].value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(rshape));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.id + 1];
        adj[root.id] = Some(Tensor::full(&rshape, 1.0));
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: usize, grad: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut adj[target] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(grad),
                }
            };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            match &node.op {
                Op::Leaf => leaf_grads.push((id, g)),
                Op::MatMul(a, b) => {
                    send(*a, g.matmul(&val(*b).transpose())?);
                    send(*b, val(*a).transpose().matmul(&g)?);
                }
                Op::Transpose(a) => send(*a, g.transpose().reshape(val(*a).shape().to_vec())?),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(a, b) => {
                    let (_, c) = g.dims2();
                    let mut gb = vec![0.0; c];
                    for (k, x) in g.data().iter().enumerate() {
                        gb[k % c] += x;
                    }
                    send(*b, Tensor::new(val(*b).shape().to_vec(), gb)?);
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.scale(-1.0));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(val(*b), "mul", |x, y| x * y)?);
                    send(*b, g.zip_map(val(*a), "mul", |x, y| x * y)?);
                }
                Op::MulRow(a, b) => {
                    let (_, c) = g.dims2();
                    let (av, bv) = (val(*a), val(*b));
                    let mut ga = g.clone();
                    let mut gb = vec![0.0; c];
                    for (k, x) in ga.data_mut().iter_mut().enumerate() {
                        gb[k % c] += *x * av.data()[k];
                        *x *= bv.data()[k % c];
                    }
                    send(*a, ga);
                    send(*b, Tensor::new(bv.shape().to_vec(), gb)?);
                }
                Op::Scale(a, c) => send(*a, g.scale(*c)),
                Op::Tanh(a) => send(*a, g.zip_map(&node.value, "tanh", |d, y| d * (1.0 - y * y))?),
                Op::Gelu(a) => send(*a, g.zip_map(val(*a), "gelu", |d, x| d * gelu_grad(x))?),
                Op::Softmax(a, tau) => {
                    let y = &node.value;
                    let (r, c) = y.dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            out[i * c + j] = yr[j] * (gr[j] - dot) / tau;
                        }
                    }
                    send(*a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::LogSoftmax(a, tau) => {
                    let y = &node.value;
                    let (r, c) = y.dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..c {
                            out[i * c + j] = (gr[j] - yr[j].exp() * gsum) / tau;
                        }
                    }
                    send(*a, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let (r, c) = xhat.dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let (hr, gr) = (xhat.row(i), g.row(i));
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgh = gr.iter().zip(hr).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                        for j in 0..c {
                            out[i * c + j] = inv_std[i] * (gr[j] - mg - hr[j] * mgh);
                        }
                    }
                    send(*x, Tensor::new(xhat.shape().to_vec(), out)?);
                }
                Op::Log(a) => send(*a, g.zip_map(val(*a), "log", |d, x| d / x)?),
                Op::Sqrt(a) => send(*a, g.zip_map(&node.value, "sqrt", |d, y| d / (2.0 * y))?),
                Op::ClampMin(a, floor) => {
                    send(*a, g.zip_map(val(*a), "clamp_min", |d, x| if x > *floor { d } else { 0.0 })?)
                }
                Op::Sum(a) => send(*a, Tensor::full(val(*a).shape(), g.item())),
                Op::Mean(a) => {
                    let v = val(*a);
                    send(*a, Tensor::full(v.shape(), g.item() / v.numel() as f64));
                }
                Op::SumCols(a) => {
                    let v = val(*a);
                    let (r, c) = v.dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        out[i * c..(i + 1) * c].fill(g.data()[i]);
                    }
                    send(*a, Tensor::new(v.shape().to_vec(), out)?);
                }
                Op::MeanRows(a) => {
                    let v = val(*a);
                    let (r, c) = v.dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[i * c + j] = g.data()[j] / r as f64;
                        }
                    }
                    send(*a, Tensor::new(v.shape().to_vec(), out)?);
                }
                Op::SelectRows(a, idx) => {
                    let v = val(*a);
                    let (_, c) = v.dims2();
                    let mut out = Tensor::zeros(v.shape());
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            out.data_mut()[i * c + j] += g.data()[k * c + j];
                        }
                    }
                    send(*a, out);
                }
                Op::L2Normalize { x, norms } => {
                    let y = &node.value;
                    let (r, c) = y.dims2();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        if norms[i] == 0.0 {
                            continue;
                        }
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            out[i * c + j] = (gr[j] - yr[j] * dot) / norms[i];
                        }
                    }
                    send(*x, Tensor::new(y.shape().to_vec(), out)?);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).numel();
                        let slice = g.data()[offset..offset + n].to_vec();
                        send(p, Tensor::new(val(p).shape().to_vec(), slice)?);
                        offset += n;
                    }
                }
            }
        }
        drop(nodes);

        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn row_broadcast_check(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(), TensorError> {
    let (_, c) = a.dims2();
    let ok = a.shape().len() == 2 && b.numel() == c && b.dims2().0 == 1;
    if ok {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Current forward value.
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Accumulated gradient (leaves only).
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.record(value, op, &[self.id])
    }

    fn binary(&self, other: &Var<'_>, value: Tensor, op: Op) -> Var<'t> {
        self.same_tape(other);
        self.tape.record(value, op, &[self.id, other.id])
    }

    pub fn matmul(&self, other: &Var<'_>) -> Result<Var<'t>, TensorError> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn add(&self, other: &Var<'_>) -> Result<Var<'t>, TensorError> {
        let v = self.value().zip_map(&other.value(), "add", |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    /// `[n, d] + [1, d]`, broadcasting the row.
    pub fn add_row(&self, row: &Var<'_>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), row.value());
        row_broadcast_check(&a, &b, "add_row")?;
        let c = b.numel();
        let mut out = (*a).clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            *x += b.data()[k % c];
        }
        Ok(self.binary(row, out, Op::AddRow(self.id, row.id)))
    }

    pub fn sub(&self, other: &Var<'_>) -> Result<Var<'t>, TensorError> {
        let v = self.value().zip_map(&other.value(), "sub", |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'_>) -> Result<Var<'t>, TensorError> {
        let v = self.value().zip_map(&other.value(), "mul", |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// `[n, d] * [1, d]`, broadcasting the row.
    pub fn mul_row(&self, row: &Var<'_>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), row.value());
        row_broadcast_check(&a, &b, "mul_row")?;
        let c = b.numel();
        let mut out = (*a).clone();
        for (k, x) in out.data_mut().iter_mut().enumerate() {
            *x *= b.data()[k % c];
        }
        Ok(self.binary(row, out, Op::MulRow(self.id, row.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn tanh(&self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        let v = self.value().map(gelu);
        self.unary(v, Op::Gelu(self.id))
    }

    /// Row-wise softmax of `x / tau`.
    pub fn softmax(&self, tau: f64) -> Result<Var<'t>, TensorError> {
        let v = self.value().softmax_rows(tau)?;
        Ok(self.unary(v, Op::Softmax(self.id, tau)))
    }

    /// Row-wise log-softmax of `x / tau`.
    pub fn log_softmax(&self, tau: f64) -> Result<Var<'t>, TensorError> {
        check_tau(tau)?;
        let x = self.value();
        let (r, c) = x.dims2();
        let mut out = x.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let lse = log_sum_exp(row, tau);
            row.iter_mut().for_each(|v| *v = *v / tau - lse);
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.unary(v, Op::LogSoftmax(self.id, tau)))
    }

    /// Row-wise standardization without affine parameters.
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let x = self.value();
        let (r, c) = x.dims2();
        let mut out = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let xhat = Tensor::new(x.shape().to_vec(), out).expect("shape preserved");
        self.unary(xhat.clone(), Op::LayerNorm { x: self.id, xhat, inv_std })
    }

    pub fn ln(&self) -> Var<'t> {
        let v = self.value().map(f64::ln);
        self.unary(v, Op::Log(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        let v = self.value().map(f64::sqrt);
        self.unary(v, Op::Sqrt(self.id))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&self, floor: f64) -> Var<'t> {
        let v = self.value().map(|x| x.max(floor));
        self.unary(v, Op::ClampMin(self.id, floor))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / x.numel() as f64);
        self.unary(v, Op::Mean(self.id))
    }

    /// Sum within each row: `[n, d] -> [n, 1]`.
    pub fn sum_cols(&self) -> Var<'t> {
        let x = self.value();
        let (r, _) = x.dims2();
        let data = (0..r).map(|i| x.row(i).iter().sum()).collect();
        let v = Tensor::new(vec![r, 1], data).expect("r entries");
        self.unary(v, Op::SumCols(self.id))
    }

    /// Mean over rows: `[n, d] -> [1, d]`.
    pub fn mean_rows(&self) -> Var<'t> {
        let v = self.value().mean_rows();
        self.unary(v, Op::MeanRows(self.id))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let (r, c) = x.dims2();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::IndexOutOfRange { index: i, len: r });
            }
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.unary(v, Op::SelectRows(self.id, idx.to_vec())))
    }

    /// Keeps the rows whose mask entry is true.
    pub fn mask_select(&self, mask: &[bool]) -> Result<Var<'t>, TensorError> {
        let (r, _) = self.value().dims2();
        if mask.len() != r {
            return Err(TensorError::ShapeMismatch { op: "mask_select", lhs: self.shape(), rhs: vec![mask.len()] });
        }
        let idx: Vec<usize> = (0..r).filter(|&i| mask[i]).collect();
        self.select_rows(&idx)
    }

    /// Row-wise l2 normalization; zero rows map to zero with zero gradient.
    pub fn l2_normalize(&self) -> Var<'t> {
        let x = self.value();
        let (r, _) = x.dims2();
        let norms = (0..r).map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let (v, _) = x.l2_normalize_rows();
        self.unary(v, Op::L2Normalize { x: self.id, norms })
    }

    /// Stacks row blocks with equal column counts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let (_, c) = first.value().dims2();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            first.same_tape(p);
            let v = p.value();
            let (r, pc) = v.dims2();
            if pc != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape(),
                    rhs: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
            rows += r;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let v = Tensor::new(vec![rows, c], data)?;
        Ok(first.tape.record(v, Op::ConcatRows(ids.clone()), &ids))
    }
}
