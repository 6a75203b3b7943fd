//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records every operation of a forward computation; [`grad`]
//! replays the record in reverse to accumulate adjoints. Handles ([`Var`]) are
//! `Copy` indices into the tape, so expressions read like plain arithmetic:
//!
//! ```
//! use dgflow::numerics::{Tape, Tensor, grad};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(&[3.0]));
//! let y = (x * x).sum();
//! let grads = grad(y, &[x]).unwrap();
//! assert!((grads[0].data()[0] - 6.0).abs() < 1e-12);
//! ```
//!
//! A tape is confined to one thread for its lifetime; tensors extracted from
//! it are plain values.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MulRow(usize, usize),
    ScaleRows(usize, usize),
    Matmul(usize, usize),
    Concat(usize, usize),
    GatherRows(usize, Rc<Vec<usize>>),
    RowBlockSum(usize, usize),
    PairTranspose(usize, usize),
    TriMul(usize, usize, usize),
    BatchedOuter(usize, usize),
    Exp(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Silu(usize),
    PowConst(usize, f64),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    Sum(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::ScaleRows(..) => "scale_rows",
            Op::Matmul(..) => "matmul",
            Op::Concat(..) => "concat",
            Op::GatherRows(..) => "gather_rows",
            Op::RowBlockSum(..) => "row_block_sum",
            Op::PairTranspose(..) => "pair_transpose",
            Op::TriMul(..) => "tri_mul",
            Op::BatchedOuter(..) => "batched_outer",
            Op::Exp(..) => "exp",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Sqrt(..) => "sqrt",
            Op::Sigmoid(..) => "sigmoid",
            Op::Silu(..) => "silu",
            Op::PowConst(..) => "pow",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recording tape for one forward computation. Single-threaded.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input tensor (parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn value_clone(&self, idx: usize) -> Tensor {
        self.nodes.borrow()[idx].value.clone()
    }

    fn with_value<R>(&self, idx: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[idx].value)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_clone(self.idx)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.idx, |v| v.shape().to_vec())
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    fn binary_elementwise(
        self,
        rhs: Var<'t>,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Var<'t> {
        self.same_tape(&rhs);
        let value = self
            .tape
            .with_value(self.idx, |a| {
                self.tape.with_value(rhs.idx, |b| a.zip_map(b, &f))
            })
            .expect("elementwise op: shape mismatch");
        self.tape.push(op(self.idx, rhs.idx), value)
    }

    /// Multiply every entry by a compile-time constant.
    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.tape.with_value(self.idx, |v| v.map(|x| x * c));
        self.tape.push(Op::Scale(self.idx, c), value)
    }

    /// Broadcast-add a vector `[d]` to every row of `[m, d]`.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.same_tape(&row);
        let value = self.tape.with_value(self.idx, |x| {
            self.tape.with_value(row.idx, |v| {
                let d = v.len();
                assert_eq!(x.cols(), d, "add_row: width mismatch");
                let mut out = x.clone();
                for r in 0..x.rows() {
                    for c in 0..d {
                        out.data_mut()[r * d + c] += v.data()[c];
                    }
                }
                out
            })
        });
        self.tape.push(Op::AddRow(self.idx, row.idx), value)
    }

    /// Broadcast-multiply every row of `[m, d]` by a vector `[d]`.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        self.same_tape(&row);
        let value = self.tape.with_value(self.idx, |x| {
            self.tape.with_value(row.idx, |v| {
                let d = v.len();
                assert_eq!(x.cols(), d, "mul_row: width mismatch");
                let mut out = x.clone();
                for r in 0..x.rows() {
                    for c in 0..d {
                        out.data_mut()[r * d + c] *= v.data()[c];
                    }
                }
                out
            })
        });
        self.tape.push(Op::MulRow(self.idx, row.idx), value)
    }

    /// Scale row r of `[m, d]` by entry r of `[m]` (or `[m, 1]`).
    pub fn scale_rows(self, s: Var<'t>) -> Var<'t> {
        self.same_tape(&s);
        let value = self.tape.with_value(self.idx, |x| {
            self.tape.with_value(s.idx, |sv| {
                assert_eq!(x.rows(), sv.len(), "scale_rows: row count mismatch");
                let d = x.cols();
                let mut out = x.clone();
                for r in 0..x.rows() {
                    let f = sv.data()[r];
                    for c in 0..d {
                        out.data_mut()[r * d + c] *= f;
                    }
                }
                out
            })
        });
        self.tape.push(Op::ScaleRows(self.idx, s.idx), value)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        let value = self
            .tape
            .with_value(self.idx, |a| {
                self.tape.with_value(rhs.idx, |b| a.matmul(b))
            })
            .expect("matmul: shape mismatch");
        self.tape.push(Op::Matmul(self.idx, rhs.idx), value)
    }

    /// Concatenate along the last dimension: `[m, a]` ++ `[m, b]` -> `[m, a+b]`.
    pub fn concat(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        let value = self.tape.with_value(self.idx, |a| {
            self.tape.with_value(rhs.idx, |b| {
                assert_eq!(a.rows(), b.rows(), "concat: row count mismatch");
                let (ca, cb) = (a.cols(), b.cols());
                let m = a.rows();
                let mut data = Vec::with_capacity(m * (ca + cb));
                for r in 0..m {
                    data.extend_from_slice(&a.data()[r * ca..(r + 1) * ca]);
                    data.extend_from_slice(&b.data()[r * cb..(r + 1) * cb]);
                }
                Tensor::new(vec![m, ca + cb], data).unwrap()
            })
        });
        self.tape.push(Op::Concat(self.idx, rhs.idx), value)
    }

    /// Select rows by index; an index may repeat.
    pub fn gather_rows(self, indices: Rc<Vec<usize>>) -> Var<'t> {
        let value = self.tape.with_value(self.idx, |x| {
            let d = x.cols();
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices.iter() {
                data.extend_from_slice(&x.data()[i * d..(i + 1) * d]);
            }
            Tensor::new(vec![indices.len(), d], data).unwrap()
        });
        self.tape.push(Op::GatherRows(self.idx, indices), value)
    }

    /// Sum consecutive blocks of `block` rows: `[b*block, d]` -> `[b, d]`.
    pub fn row_block_sum(self, block: usize) -> Var<'t> {
        let value = self.tape.with_value(self.idx, |x| {
            let m = x.rows();
            assert_eq!(m % block, 0, "row_block_sum: rows not divisible");
            let d = x.cols();
            let b = m / block;
            let mut data = vec![0.0; b * d];
            for r in 0..m {
                let target = (r / block) * d;
                for c in 0..d {
                    data[target + c] += x.data()[r * d + c];
                }
            }
            Tensor::new(vec![b, d], data).unwrap()
        });
        self.tape.push(Op::RowBlockSum(self.idx, block), value)
    }

    /// Swap the pair indices of an `[n*n, d]` tensor viewed as `[n, n, d]`.
    pub fn pair_transpose(self, n: usize) -> Var<'t> {
        let value = self.tape.with_value(self.idx, |x| {
            assert_eq!(x.rows(), n * n, "pair_transpose: wrong row count");
            let d = x.cols();
            let mut data = vec![0.0; n * n * d];
            for i in 0..n {
                for j in 0..n {
                    let src = (j * n + i) * d;
                    let dst = (i * n + j) * d;
                    data[dst..dst + d].copy_from_slice(&x.data()[src..src + d]);
                }
            }
            Tensor::new(vec![n * n, d], data).unwrap()
        });
        self.tape.push(Op::PairTranspose(self.idx, n), value)
    }

    /// Per-channel pair mixing: with both operands viewed as `[n, n, d]`,
    /// `out[i,j,c] = sum_k a[i,k,c] * b[j,k,c]`.
    pub fn tri_mul(self, rhs: Var<'t>, n: usize) -> Var<'t> {
        self.same_tape(&rhs);
        let value = self.tape.with_value(self.idx, |a| {
            self.tape.with_value(rhs.idx, |b| {
                assert_eq!(a.shape(), b.shape(), "tri_mul: shape mismatch");
                assert_eq!(a.rows(), n * n, "tri_mul: wrong row count");
                let d = a.cols();
                let mut data = vec![0.0; n * n * d];
                for i in 0..n {
                    for j in 0..n {
                        let dst = (i * n + j) * d;
                        for k in 0..n {
                            let ai = (i * n + k) * d;
                            let bj = (j * n + k) * d;
                            for c in 0..d {
                                data[dst + c] += a.data()[ai + c] * b.data()[bj + c];
                            }
                        }
                    }
                }
                Tensor::new(vec![n * n, d], data).unwrap()
            })
        });
        self.tape.push(Op::TriMul(self.idx, rhs.idx, n), value)
    }

    /// Row-wise outer product flattened: `[m, p]` x `[m, q]` -> `[m, p*q]`.
    pub fn batched_outer(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(&rhs);
        let value = self.tape.with_value(self.idx, |a| {
            self.tape.with_value(rhs.idx, |b| {
                assert_eq!(a.rows(), b.rows(), "batched_outer: row count mismatch");
                let (p, q) = (a.cols(), b.cols());
                let m = a.rows();
                let mut data = vec![0.0; m * p * q];
                for r in 0..m {
                    for i in 0..p {
                        let av = a.data()[r * p + i];
                        for j in 0..q {
                            data[r * p * q + i * q + j] = av * b.data()[r * q + j];
                        }
                    }
                }
                Tensor::new(vec![m, p * q], data).unwrap()
            })
        });
        self.tape.push(Op::BatchedOuter(self.idx, rhs.idx), value)
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Var<'t> {
        let value = self.tape.with_value(self.idx, |v| v.map(&f));
        self.tape.push(op(self.idx), value)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(f64::sin, Op::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(f64::cos, Op::Cos)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, Op::Sqrt)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid)
    }

    pub fn silu(self) -> Var<'t> {
        self.unary(|x| x * sigmoid(x), Op::Silu)
    }

    /// Elementwise power with a constant exponent.
    pub fn powc(self, p: f64) -> Var<'t> {
        let value = self.tape.with_value(self.idx, |v| v.map(|x| x.powf(p)));
        self.tape.push(Op::PowConst(self.idx, p), value)
    }

    /// Layer normalization over the last dimension with learned scale and
    /// offset (`eps = 1e-5`).
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>) -> Var<'t> {
        self.same_tape(&gamma);
        self.same_tape(&beta);
        let value = self.tape.with_value(self.idx, |x| {
            self.tape.with_value(gamma.idx, |g| {
                self.tape.with_value(beta.idx, |b| {
                    let d = x.cols();
                    assert_eq!(g.len(), d, "layer_norm: gamma width");
                    assert_eq!(b.len(), d, "layer_norm: beta width");
                    let mut out = x.clone();
                    for r in 0..x.rows() {
                        let row = &x.data()[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        for c in 0..d {
                            out.data_mut()[r * d + c] =
                                (row[c] - mean) * inv * g.data()[c] + b.data()[c];
                        }
                    }
                    out
                })
            })
        });
        self.tape.push(
            Op::LayerNorm {
                x: self.idx,
                gamma: gamma.idx,
                beta: beta.idx,
            },
            value,
        )
    }

    /// Sum of all entries -> scalar `[1]`.
    pub fn sum(self) -> Var<'t> {
        let value = self
            .tape
            .with_value(self.idx, |v| Tensor::scalar(v.data().iter().sum()));
        self.tape.push(Op::Sum(self.idx), value)
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary_elementwise(rhs, |a, b| a + b, Op::Add)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary_elementwise(rhs, |a, b| a - b, Op::Sub)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary_elementwise(rhs, |a, b| a * b, Op::Mul)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

/// Reverse-mode gradient of a scalar loss with respect to `params`.
///
/// Unused parameters receive zero gradients. Rejects a non-scalar loss, and
/// rejects NaN/infinity anywhere in the forward values reachable from it
/// (naming the offending operation).
pub fn grad(loss: Var<'_>, params: &[Var<'_>]) -> Result<Vec<Tensor>> {
    let tape = loss.tape;
    let nodes = tape.nodes.borrow();

    if nodes[loss.idx].value.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad target must be scalar, got shape {:?}",
            nodes[loss.idx].value.shape()
        )));
    }

    // Mark the sub-graph reachable from the loss.
    let mut reachable = vec![false; nodes.len()];
    reachable[loss.idx] = true;
    for idx in (0..=loss.idx).rev() {
        if !reachable[idx] {
            continue;
        }
        let mut mark = |i: usize| reachable[i] = true;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::ScaleRows(a, b)
            | Op::Matmul(a, b)
            | Op::Concat(a, b)
            | Op::BatchedOuter(a, b)
            | Op::TriMul(a, b, _) => {
                mark(*a);
                mark(*b);
            }
            Op::Scale(a, _)
            | Op::GatherRows(a, _)
            | Op::RowBlockSum(a, _)
            | Op::PairTranspose(a, _)
            | Op::Exp(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Sqrt(a)
            | Op::Sigmoid(a)
            | Op::Silu(a)
            | Op::PowConst(a, _)
            | Op::Sum(a) => mark(*a),
            Op::LayerNorm { x, gamma, beta } => {
                mark(*x);
                mark(*gamma);
                mark(*beta);
            }
        }
    }

    for (idx, node) in nodes.iter().enumerate() {
        if reachable[idx] && !node.value.all_finite() {
            return Err(Error::NonFinite(format!(
                "forward value of node {idx} ({}) is not finite",
                node.op.name()
            )));
        }
    }

    let mut adjoint: Vec<Option<Tensor>> = vec![None; nodes.len()];
    adjoint[loss.idx] = Some(Tensor::scalar(1.0));

    fn acc<'a>(slot: &'a mut Option<Tensor>, shape: &[usize]) -> &'a mut Tensor {
        slot.get_or_insert_with(|| Tensor::zeros(shape))
    }

    for idx in (0..=loss.idx).rev() {
        let g = match adjoint[idx].take() {
            Some(g) => g,
            None => continue,
        };
        // Leaf adjoints are kept for extraction.
        if matches!(nodes[idx].op, Op::Leaf) {
            adjoint[idx] = Some(g);
            continue;
        }
        match &nodes[idx].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                {
                    let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                    for x in 0..g.len() {
                        ga.data_mut()[x] += g.data()[x];
                    }
                }
                let gb = acc(&mut adjoint[*b], nodes[*b].value.shape());
                for x in 0..g.len() {
                    gb.data_mut()[x] += g.data()[x];
                }
            }
            Op::Sub(a, b) => {
                {
                    let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                    for x in 0..g.len() {
                        ga.data_mut()[x] += g.data()[x];
                    }
                }
                let gb = acc(&mut adjoint[*b], nodes[*b].value.shape());
                for x in 0..g.len() {
                    gb.data_mut()[x] -= g.data()[x];
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                {
                    let ga = acc(&mut adjoint[*a], av.shape());
                    for x in 0..g.len() {
                        ga.data_mut()[x] += g.data()[x] * bv.data()[x];
                    }
                }
                let gb = acc(&mut adjoint[*b], bv.shape());
                for x in 0..g.len() {
                    gb.data_mut()[x] += g.data()[x] * av.data()[x];
                }
            }
            Op::Scale(a, c) => {
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for x in 0..g.len() {
                    ga.data_mut()[x] += g.data()[x] * c;
                }
            }
            Op::AddRow(a, v) => {
                let d = nodes[*v].value.len();
                {
                    let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                    for x in 0..g.len() {
                        ga.data_mut()[x] += g.data()[x];
                    }
                }
                let gv = acc(&mut adjoint[*v], nodes[*v].value.shape());
                for (x, gx) in g.data().iter().enumerate() {
                    gv.data_mut()[x % d] += gx;
                }
            }
            Op::MulRow(a, v) => {
                let av = &nodes[*a].value;
                let vv = &nodes[*v].value;
                let d = vv.len();
                {
                    let ga = acc(&mut adjoint[*a], av.shape());
                    for x in 0..g.len() {
                        ga.data_mut()[x] += g.data()[x] * vv.data()[x % d];
                    }
                }
                let gv = acc(&mut adjoint[*v], vv.shape());
                for x in 0..g.len() {
                    gv.data_mut()[x % d] += g.data()[x] * av.data()[x];
                }
            }
            Op::ScaleRows(a, s) => {
                let av = &nodes[*a].value;
                let sv = &nodes[*s].value;
                let d = av.cols();
                {
                    let ga = acc(&mut adjoint[*a], av.shape());
                    for r in 0..av.rows() {
                        let f = sv.data()[r];
                        for c in 0..d {
                            ga.data_mut()[r * d + c] += g.data()[r * d + c] * f;
                        }
                    }
                }
                let gs = acc(&mut adjoint[*s], sv.shape());
                for r in 0..av.rows() {
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += g.data()[r * d + c] * av.data()[r * d + c];
                    }
                    gs.data_mut()[r] += dot;
                }
            }
            Op::Matmul(a, b) => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                // dA = G B^T ; dB = A^T G
                let da = g.matmul(&bv.transpose()).unwrap();
                let db = av.transpose().matmul(&g).unwrap();
                {
                    let ga = acc(&mut adjoint[*a], av.shape());
                    for x in 0..da.len() {
                        ga.data_mut()[x] += da.data()[x];
                    }
                }
                let gb = acc(&mut adjoint[*b], bv.shape());
                for x in 0..db.len() {
                    gb.data_mut()[x] += db.data()[x];
                }
            }
            Op::Concat(a, b) => {
                let (ca, cb) = (nodes[*a].value.cols(), nodes[*b].value.cols());
                let m = nodes[*a].value.rows();
                {
                    let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                    for r in 0..m {
                        for c in 0..ca {
                            ga.data_mut()[r * ca + c] += g.data()[r * (ca + cb) + c];
                        }
                    }
                }
                let gb = acc(&mut adjoint[*b], nodes[*b].value.shape());
                for r in 0..m {
                    for c in 0..cb {
                        gb.data_mut()[r * cb + c] += g.data()[r * (ca + cb) + ca + c];
                    }
                }
            }
            Op::GatherRows(a, indices) => {
                let d = nodes[*a].value.cols();
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for (r, &src) in indices.iter().enumerate() {
                    for c in 0..d {
                        ga.data_mut()[src * d + c] += g.data()[r * d + c];
                    }
                }
            }
            Op::RowBlockSum(a, block) => {
                let d = nodes[*a].value.cols();
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for r in 0..nodes[*a].value.rows() {
                    let src = (r / block) * d;
                    for c in 0..d {
                        ga.data_mut()[r * d + c] += g.data()[src + c];
                    }
                }
            }
            Op::PairTranspose(a, n) => {
                let d = nodes[*a].value.cols();
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for i in 0..*n {
                    for j in 0..*n {
                        let dst = (j * n + i) * d;
                        let src = (i * n + j) * d;
                        for c in 0..d {
                            ga.data_mut()[dst + c] += g.data()[src + c];
                        }
                    }
                }
            }
            Op::TriMul(a, b, n) => {
                let av = nodes[*a].value.clone();
                let bv = nodes[*b].value.clone();
                let d = av.cols();
                {
                    let ga = acc(&mut adjoint[*a], av.shape());
                    for i in 0..*n {
                        for k in 0..*n {
                            let dst = (i * n + k) * d;
                            for j in 0..*n {
                                let gij = (i * n + j) * d;
                                let bjk = (j * n + k) * d;
                                for c in 0..d {
                                    ga.data_mut()[dst + c] +=
                                        g.data()[gij + c] * bv.data()[bjk + c];
                                }
                            }
                        }
                    }
                }
                let gb = acc(&mut adjoint[*b], bv.shape());
                for j in 0..*n {
                    for k in 0..*n {
                        let dst = (j * n + k) * d;
                        for i in 0..*n {
                            let gij = (i * n + j) * d;
                            let aik = (i * n + k) * d;
                            for c in 0..d {
                                gb.data_mut()[dst + c] += g.data()[gij + c] * av.data()[aik + c];
                            }
                        }
                    }
                }
            }
            Op::BatchedOuter(a, b) => {
                let av = &nodes[*a].value;
                let bv = &nodes[*b].value;
                let (p, q) = (av.cols(), bv.cols());
                {
                    let ga = acc(&mut adjoint[*a], av.shape());
                    for r in 0..av.rows() {
                        for i in 0..p {
                            let mut dot = 0.0;
                            for j in 0..q {
                                dot += g.data()[r * p * q + i * q + j] * bv.data()[r * q + j];
                            }
                            ga.data_mut()[r * p + i] += dot;
                        }
                    }
                }
                let gb = acc(&mut adjoint[*b], bv.shape());
                for r in 0..av.rows() {
                    for j in 0..q {
                        let mut dot = 0.0;
                        for i in 0..p {
                            dot += g.data()[r * p * q + i * q + j] * av.data()[r * p + i];
                        }
                        gb.data_mut()[r * q + j] += dot;
                    }
                }
            }
            Op::Exp(a) => {
                let out = &nodes[idx].value;
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for x in 0..g.len() {
                    ga.data_mut()[x] += g.data()[x] * out.data()[x];
                }
            }
            Op::Sin(a) => {
                let xv = &nodes[*a].value;
                let ga = acc(&mut adjoint[*a], xv.shape());
                for x in 0..g.len() {
                    ga.data_mut()[x] += g.data()[x] * xv.data()[x].cos();
                }
            }
            Op::Cos(a) => {
                let xv = &nodes[*a].value;
                let ga = acc(&mut adjoint[*a], xv.shape());
                for x in 0..g.len() {
                    ga.data_mut()[x] -= g.data()[x] * xv.data()[x].sin();
                }
            }
            Op::Sqrt(a) => {
                let out = &nodes[idx].value;
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for x in 0..g.len() {
                    ga.data_mut()[x] += g.data()[x] * 0.5 / out.data()[x];
                }
            }
            Op::Sigmoid(a) => {
                let out = &nodes[idx].value;
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                for x in 0..g.len() {
                    let s = out.data()[x];
                    ga.data_mut()[x] += g.data()[x] * s * (1.0 - s);
                }
            }
            Op::Silu(a) => {
                let xv = &nodes[*a].value;
                let ga = acc(&mut adjoint[*a], xv.shape());
                for x in 0..g.len() {
                    let s = sigmoid(xv.data()[x]);
                    ga.data_mut()[x] += g.data()[x] * s * (1.0 + xv.data()[x] * (1.0 - s));
                }
            }
            Op::PowConst(a, p) => {
                let xv = &nodes[*a].value;
                let ga = acc(&mut adjoint[*a], xv.shape());
                for x in 0..g.len() {
                    ga.data_mut()[x] += g.data()[x] * p * xv.data()[x].powf(p - 1.0);
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = nodes[*x].value.clone();
                let gv = nodes[*gamma].value.clone();
                let d = xv.cols();
                let df = d as f64;
                // Recompute the per-row statistics used in the forward pass.
                {
                    let gx = acc(&mut adjoint[*x], xv.shape());
                    for r in 0..xv.rows() {
                        let row = &xv.data()[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / df;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        // dxhat_c = g_c * gamma_c
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for c in 0..d {
                            let xhat = (row[c] - mean) * inv;
                            let dxhat = g.data()[r * d + c] * gv.data()[c];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        for c in 0..d {
                            let xhat = (row[c] - mean) * inv;
                            let dxhat = g.data()[r * d + c] * gv.data()[c];
                            gx.data_mut()[r * d + c] += inv
                                * (dxhat - sum_dxhat / df - xhat * sum_dxhat_xhat / df);
                        }
                    }
                }
                {
                    let gg = acc(&mut adjoint[*gamma], gv.shape());
                    for r in 0..xv.rows() {
                        let row = &xv.data()[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / df;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / df;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        for c in 0..d {
                            gg.data_mut()[c] += g.data()[r * d + c] * (row[c] - mean) * inv;
                        }
                    }
                }
                let gb = acc(&mut adjoint[*beta], nodes[*beta].value.shape());
                for r in 0..xv.rows() {
                    for c in 0..d {
                        gb.data_mut()[c] += g.data()[r * d + c];
                    }
                }
            }
            Op::Sum(a) => {
                let ga = acc(&mut adjoint[*a], nodes[*a].value.shape());
                let gs = g.data()[0];
                for x in 0..ga.len() {
                    ga.data_mut()[x] += gs;
                }
            }
        }
    }

    Ok(params
        .iter()
        .map(|p| {
            adjoint[p.idx]
                .take()
                .unwrap_or_else(|| Tensor::zeros(nodes[p.idx].value.shape()))
        })
        .collect())
}
