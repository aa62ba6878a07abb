//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Operations append nodes in creation order, which is automatically a
//! topological order (inputs exist before outputs). `backward` walks the
//! tape once in reverse, so each recorded operation is visited exactly once.
//! A tape lives for one forward/backward pass; create a fresh one per step.
//!
//! Axis convention: axis-wise operations (softmax, layer_norm, add_bias)
//! act on the last axis, treating a tensor of shape `(d0, .., dn, C)` as
//! `(d0*..*dn, C)`. Row operations (gather, concat, slice_cols) require
//! rank 2, and `bmm` rank 3.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Result;

static TAPE_TAG: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`]. Cheap to copy; only valid on
/// the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tag: u64,
    id: usize,
}

#[derive(Debug)]
enum Op<F: Scalar> {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: F },
    AddScalar { a: usize },
    AddBias { a: usize, bias: usize },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, transpose_b: bool },
    Transpose { a: usize, rows: usize, cols: usize },
    Reshape { a: usize },
    ConcatRows { parts: Vec<usize>, cols: usize },
    ConcatCols { parts: Vec<usize>, rows: usize },
    GatherRows { a: usize, idx: Vec<usize>, cols: usize },
    GatherRowsOrZero { a: usize, idx: Vec<i64>, cols: usize },
    SliceCols { a: usize, start: usize, width: usize, cols: usize },
    Sum { a: usize },
    Mean { a: usize },
    Relu { a: usize },
    Sqrt { a: usize },
    Recip { a: usize },
    MulScalarVar { a: usize, s: usize },
    Softmax { a: usize, cols: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize, eps: f64, cols: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, weights: Option<Vec<F>>, classes: usize },
    UpsampleNearest { a: usize, h: usize, w: usize, c: usize, factor: usize },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Ordered record of primitive operations for one forward/backward pass.
pub struct Tape<F: Scalar> {
    tag: u64,
    nodes: RefCell<Vec<Node<F>>>,
    backward_done: Cell<bool>,
}

/// Gradients produced by [`Tape::backward`], addressable by the `Var`s of
/// grad-enabled leaves.
pub struct Gradients<F: Scalar> {
    tag: u64,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        if v.tag != self.tag {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient as an owned vector, zeros when the leaf was not reached.
    pub fn wrt_or_zeros(&self, v: Var, numel: usize) -> Vec<F> {
        match self.wrt(v) {
            Some(g) => g.to_vec(),
            None => vec![F::zero(); numel],
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            tag: TAPE_TAG.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    /// Number of operations recorded so far (leaves included).
    pub fn op_count(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes.borrow()[v.id].value.numel()
    }

    /// Clone of the value held by `v`.
    pub fn value(&self, v: Var) -> Tensor<F> {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Scalar value of a one-element var.
    pub fn scalar_value(&self, v: Var) -> F {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.id].value.numel(), 1);
        nodes[v.id].value.data()[0]
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.tag != self.tag {
            return Err(TensorError::TapeMismatch);
        }
        if v.id >= self.nodes.borrow().len() {
            return Err(TensorError::Shape { op, msg: "dangling var".into() });
        }
        Ok(())
    }

    fn push(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<F>,
        op: Op<F>,
        needs_grad: bool,
    ) -> Result<Var> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let value = Tensor::from_vec(shape, data).map_err(|e| match e {
            TensorError::NonFinite { .. } => TensorError::NonFinite { op: op_name },
            TensorError::Shape { msg, .. } => TensorError::Shape { op: op_name, msg },
            other => other,
        })?;
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op, needs_grad });
        Ok(Var { tag: self.tag, id })
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Var { tag: self.tag, id }
    }

    pub fn constant(&self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&self, c: F) -> Var {
        self.leaf(Tensor::from_vec(vec![1], vec![c]).expect("finite scalar"), false)
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn binary_same_shape(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
        op: impl Fn(usize, usize) -> Op<F>,
    ) -> Result<Var> {
        self.check(a, name)?;
        self.check(b, name)?;
        let (shape, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[b.id].value;
            if ta.shape() != tb.shape() {
                return Err(TensorError::Shape {
                    op: name,
                    msg: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
                });
            }
            let data: Vec<F> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            (ta.shape().to_vec(), data, nodes[a.id].needs_grad || nodes[b.id].needs_grad)
        };
        self.push(name, shape, data, op(a.id, b.id), needs)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn unary(
        &self,
        name: &'static str,
        a: Var,
        f: impl Fn(F) -> F,
        op: impl Fn(usize) -> Op<F>,
    ) -> Result<Var> {
        self.check(a, name)?;
        let (shape, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            (
                ta.shape().to_vec(),
                ta.data().iter().map(|&x| f(x)).collect(),
                nodes[a.id].needs_grad,
            )
        };
        self.push(name, shape, data, op(a.id), needs)
    }

    pub fn scale(&self, a: Var, c: F) -> Result<Var> {
        self.unary("scale", a, |x| x * c, |a| Op::Scale { a, c })
    }

    pub fn add_scalar(&self, a: Var, c: F) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, |a| Op::AddScalar { a })
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > F::zero() { x } else { F::zero() }, |a| Op::Relu { a })
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, |x| x.sqrt(), |a| Op::Sqrt { a })
    }

    pub fn recip(&self, a: Var) -> Result<Var> {
        self.unary("recip", a, |x| F::one() / x, |a| Op::Recip { a })
    }

    /// Broadcast multiply by a one-element var.
    pub fn mul_scalar_var(&self, a: Var, s: Var) -> Result<Var> {
        self.check(a, "mul_scalar_var")?;
        self.check(s, "mul_scalar_var")?;
        let (shape, data, needs) = {
            let nodes = self.nodes.borrow();
            let ts = &nodes[s.id].value;
            if ts.numel() != 1 {
                return Err(TensorError::Shape {
                    op: "mul_scalar_var",
                    msg: format!("scalar operand has shape {:?}", ts.shape()),
                });
            }
            let sv = ts.data()[0];
            let ta = &nodes[a.id].value;
            (
                ta.shape().to_vec(),
                ta.data().iter().map(|&x| x * sv).collect::<Vec<F>>(),
                nodes[a.id].needs_grad || nodes[s.id].needs_grad,
            )
        };
        self.push("mul_scalar_var", shape, data, Op::MulScalarVar { a: a.id, s: s.id }, needs)
    }

    /// Row-broadcast add: `(R, C) + (C)`.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        self.check(a, "add_bias")?;
        self.check(bias, "add_bias")?;
        let (shape, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[bias.id].value;
            let cols = ta.last_axis();
            if tb.numel() != cols {
                return Err(TensorError::Shape {
                    op: "add_bias",
                    msg: format!("bias len {} vs last axis {}", tb.numel(), cols),
                });
            }
            let bd = tb.data();
            let data: Vec<F> = ta
                .data()
                .chunks_exact(cols)
                .flat_map(|row| row.iter().zip(bd).map(|(&x, &b)| x + b))
                .collect();
            (ta.shape().to_vec(), data, nodes[a.id].needs_grad || nodes[bias.id].needs_grad)
        };
        self.push("add_bias", shape, data, Op::AddBias { a: a.id, bias: bias.id }, needs)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (m, k, n, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[b.id].value;
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 2 || sb.len() != 2 {
                return Err(TensorError::Shape {
                    op: "matmul",
                    msg: format!("rank-2 required, got {sa:?} x {sb:?}"),
                });
            }
            if sa[1] != sb[0] {
                return Err(TensorError::Shape {
                    op: "matmul",
                    msg: format!("inner extents differ: {sa:?} x {sb:?}"),
                });
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![F::zero(); m * n];
            mm(ta.data(), tb.data(), m, k, n, &mut out);
            (m, k, n, out, nodes[a.id].needs_grad || nodes[b.id].needs_grad)
        };
        self.push("matmul", vec![m, n], data, Op::Matmul { a: a.id, b: b.id, m, k, n }, needs)
    }

    /// Batched matmul on rank-3 tensors. With `transpose_b`, `b` has shape
    /// `(batch, n, k)` and each batch computes `a_i · b_iᵀ`.
    pub fn bmm(&self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        self.check(a, "bmm")?;
        self.check(b, "bmm")?;
        let (batch, m, k, n, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let tb = &nodes[b.id].value;
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                return Err(TensorError::Shape {
                    op: "bmm",
                    msg: format!("rank-3 with equal batch required, got {sa:?} x {sb:?}"),
                });
            }
            let (batch, m, k) = (sa[0], sa[1], sa[2]);
            let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
            if k != kb {
                return Err(TensorError::Shape {
                    op: "bmm",
                    msg: format!("inner extents differ: {sa:?} x {sb:?} (transpose_b={transpose_b})"),
                });
            }
            let mut out = vec![F::zero(); batch * m * n];
            for i in 0..batch {
                let av = &ta.data()[i * m * k..(i + 1) * m * k];
                let bv = &tb.data()[i * k * n..(i + 1) * k * n];
                let ov = &mut out[i * m * n..(i + 1) * m * n];
                if transpose_b {
                    mm_nt(av, bv, m, k, n, ov);
                } else {
                    mm(av, bv, m, k, n, ov);
                }
            }
            (batch, m, k, n, out, nodes[a.id].needs_grad || nodes[b.id].needs_grad)
        };
        self.push(
            "bmm",
            vec![batch, m, n],
            data,
            Op::Bmm { a: a.id, b: b.id, batch, m, k, n, transpose_b },
            needs,
        )
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.check(a, "transpose")?;
        let (rows, cols, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let s = ta.shape();
            if s.len() != 2 {
                return Err(TensorError::Shape {
                    op: "transpose",
                    msg: format!("rank-2 required, got {s:?}"),
                });
            }
            let (rows, cols) = (s[0], s[1]);
            let src = ta.data();
            let mut out = vec![F::zero(); rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
            (rows, cols, out, nodes[a.id].needs_grad)
        };
        self.push("transpose", vec![cols, rows], data, Op::Transpose { a: a.id, rows, cols }, needs)
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.check(a, "reshape")?;
        let (data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let numel: usize = shape.iter().product();
            if numel != ta.numel() {
                return Err(TensorError::Shape {
                    op: "reshape",
                    msg: format!("{:?} -> {shape:?}", ta.shape()),
                });
            }
            (ta.data().to_vec(), nodes[a.id].needs_grad)
        };
        self.push("reshape", shape, data, Op::Reshape { a: a.id }, needs)
    }

    // ── Row / column structure ──────────────────────────────────────

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Shape { op: "concat_rows", msg: "no parts".into() });
        }
        for &p in parts {
            self.check(p, "concat_rows")?;
        }
        let (rows, cols, data, needs) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].id].value.shape().last().copied().unwrap_or(0);
            let mut rows = 0;
            let mut data = Vec::new();
            let mut needs = false;
            for &p in parts {
                let t = &nodes[p.id].value;
                let s = t.shape();
                if s.len() != 2 || s[1] != cols {
                    return Err(TensorError::Shape {
                        op: "concat_rows",
                        msg: format!("part shape {s:?}, expected (_, {cols})"),
                    });
                }
                rows += s[0];
                data.extend_from_slice(t.data());
                needs |= nodes[p.id].needs_grad;
            }
            (rows, cols, data, needs)
        };
        self.push(
            "concat_rows",
            vec![rows, cols],
            data,
            Op::ConcatRows { parts: parts.iter().map(|p| p.id).collect(), cols },
            needs,
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Shape { op: "concat_cols", msg: "no parts".into() });
        }
        for &p in parts {
            self.check(p, "concat_cols")?;
        }
        let (rows, total_cols, data, needs) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.shape()[0];
            let mut widths = Vec::with_capacity(parts.len());
            let mut needs = false;
            for &p in parts {
                let s = nodes[p.id].value.shape();
                if s.len() != 2 || s[0] != rows {
                    return Err(TensorError::Shape {
                        op: "concat_cols",
                        msg: format!("part shape {s:?}, expected ({rows}, _)"),
                    });
                }
                widths.push(s[1]);
                needs |= nodes[p.id].needs_grad;
            }
            let total: usize = widths.iter().sum();
            let mut data = vec![F::zero(); rows * total];
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = nodes[p.id].value.data();
                for r in 0..rows {
                    data[r * total + offset..r * total + offset + w]
                        .copy_from_slice(&src[r * w..(r + 1) * w]);
                }
                offset += w;
            }
            (rows, total, data, needs)
        };
        self.push(
            "concat_cols",
            vec![rows, total_cols],
            data,
            Op::ConcatCols { parts: parts.iter().map(|p| p.id).collect(), rows },
            needs,
        )
    }

    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        self.check(a, "gather_rows")?;
        let (cols, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let s = ta.shape();
            if s.len() != 2 {
                return Err(TensorError::Shape {
                    op: "gather_rows",
                    msg: format!("rank-2 required, got {s:?}"),
                });
            }
            let (rows, cols) = (s[0], s[1]);
            if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
                return Err(TensorError::Shape {
                    op: "gather_rows",
                    msg: format!("row index {bad} out of {rows}"),
                });
            }
            let src = ta.data();
            let mut data = Vec::with_capacity(idx.len() * cols);
            for &i in idx {
                data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
            }
            (cols, data, nodes[a.id].needs_grad)
        };
        self.push(
            "gather_rows",
            vec![idx.len(), cols],
            data,
            Op::GatherRows { a: a.id, idx: idx.to_vec(), cols },
            needs,
        )
    }

    /// Gather with `-1` entries producing zero rows; used for zero-padded
    /// window shifts.
    pub fn gather_rows_or_zero(&self, a: Var, idx: &[i64]) -> Result<Var> {
        self.check(a, "gather_rows_or_zero")?;
        let (cols, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let s = ta.shape();
            if s.len() != 2 {
                return Err(TensorError::Shape {
                    op: "gather_rows_or_zero",
                    msg: format!("rank-2 required, got {s:?}"),
                });
            }
            let (rows, cols) = (s[0], s[1]);
            let src = ta.data();
            let mut data = vec![F::zero(); idx.len() * cols];
            for (r, &i) in idx.iter().enumerate() {
                if i < 0 {
                    continue;
                }
                let i = i as usize;
                if i >= rows {
                    return Err(TensorError::Shape {
                        op: "gather_rows_or_zero",
                        msg: format!("row index {i} out of {rows}"),
                    });
                }
                data[r * cols..(r + 1) * cols].copy_from_slice(&src[i * cols..(i + 1) * cols]);
            }
            (cols, data, nodes[a.id].needs_grad)
        };
        self.push(
            "gather_rows_or_zero",
            vec![idx.len(), cols],
            data,
            Op::GatherRowsOrZero { a: a.id, idx: idx.to_vec(), cols },
            needs,
        )
    }

    pub fn slice_cols(&self, a: Var, start: usize, width: usize) -> Result<Var> {
        self.check(a, "slice_cols")?;
        let (rows, cols, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let s = ta.shape();
            if s.len() != 2 || start + width > s[1] {
                return Err(TensorError::Shape {
                    op: "slice_cols",
                    msg: format!("cols {start}..{} of {s:?}", start + width),
                });
            }
            let (rows, cols) = (s[0], s[1]);
            let src = ta.data();
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                data.extend_from_slice(&src[r * cols + start..r * cols + start + width]);
            }
            (rows, cols, data, nodes[a.id].needs_grad)
        };
        self.push(
            "slice_cols",
            vec![rows, width],
            data,
            Op::SliceCols { a: a.id, start, width, cols },
            needs,
        )
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum(&self, a: Var) -> Result<Var> {
        self.check(a, "sum")?;
        let (total, needs) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.id].value;
            (t.data().iter().copied().sum::<F>(), nodes[a.id].needs_grad)
        };
        self.push("sum", vec![1], vec![total], Op::Sum { a: a.id }, needs)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        self.check(a, "mean")?;
        let (v, needs) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.id].value;
            let n = F::from_f64(t.numel() as f64);
            (t.data().iter().copied().sum::<F>() / n, nodes[a.id].needs_grad)
        };
        self.push("mean", vec![1], vec![v], Op::Mean { a: a.id }, needs)
    }

    // ── Axis-wise nonlinearities ────────────────────────────────────

    /// Softmax along the last axis.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        self.check(a, "softmax")?;
        let (shape, data, cols, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let cols = ta.last_axis();
            let mut data = vec![F::zero(); ta.numel()];
            for (out, row) in data.chunks_exact_mut(cols).zip(ta.data().chunks_exact(cols)) {
                softmax_row(row, out);
            }
            (ta.shape().to_vec(), data, cols, nodes[a.id].needs_grad)
        };
        self.push("softmax", shape, data, Op::Softmax { a: a.id, cols }, needs)
    }

    /// Softmax along a chosen axis of a rank-2 tensor.
    pub fn softmax_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a);
        match (s.len(), axis) {
            (_, ax) if ax + 1 == s.len() => self.softmax(a),
            (2, 0) => {
                let t = self.transpose(a)?;
                let sm = self.softmax(t)?;
                self.transpose(sm)
            }
            _ => Err(TensorError::Shape {
                op: "softmax",
                msg: format!("axis {axis} invalid for shape {s:?}"),
            }),
        }
    }

    /// Layer normalization along the last axis with learned gain and bias.
    pub fn layer_norm(&self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check(a, "layer_norm")?;
        self.check(gamma, "layer_norm")?;
        self.check(beta, "layer_norm")?;
        let (shape, data, cols, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let cols = ta.last_axis();
            let tg = &nodes[gamma.id].value;
            let tb = &nodes[beta.id].value;
            if tg.numel() != cols || tb.numel() != cols {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    msg: format!(
                        "gamma/beta len {}/{} vs last axis {cols}",
                        tg.numel(),
                        tb.numel()
                    ),
                });
            }
            let g = tg.data();
            let b = tb.data();
            let mut data = vec![F::zero(); ta.numel()];
            let epsf = F::from_f64(eps);
            for (out, row) in data.chunks_exact_mut(cols).zip(ta.data().chunks_exact(cols)) {
                let (mu, rstd) = row_moments(row, epsf);
                for j in 0..cols {
                    out[j] = (row[j] - mu) * rstd * g[j] + b[j];
                }
            }
            (
                ta.shape().to_vec(),
                data,
                cols,
                nodes[a.id].needs_grad || nodes[gamma.id].needs_grad || nodes[beta.id].needs_grad,
            )
        };
        self.push(
            "layer_norm",
            shape,
            data,
            Op::LayerNorm { a: a.id, gamma: gamma.id, beta: beta.id, eps, cols },
            needs,
        )
    }

    /// Mean over rows of `-log softmax(logits)[target]`, optionally
    /// class-weighted. `logits` is `(N, K)`; each target must be `< K`.
    pub fn cross_entropy(
        &self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[F]>,
    ) -> Result<Var> {
        self.check(logits, "cross_entropy")?;
        let (loss, weights, classes, needs) = {
            let nodes = self.nodes.borrow();
            let tl = &nodes[logits.id].value;
            let s = tl.shape();
            if s.len() != 2 || s[0] != targets.len() {
                return Err(TensorError::Shape {
                    op: "cross_entropy",
                    msg: format!("logits {s:?} vs {} targets", targets.len()),
                });
            }
            let (rows, classes) = (s[0], s[1]);
            if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
                return Err(TensorError::ClassOutOfRange { index: bad, classes });
            }
            if let Some(w) = class_weights {
                if w.len() != classes {
                    return Err(TensorError::Shape {
                        op: "cross_entropy",
                        msg: format!("{} class weights for {classes} classes", w.len()),
                    });
                }
            }
            let mut num = F::zero();
            let mut den = F::zero();
            for (r, row) in tl.data().chunks_exact(classes).enumerate() {
                let lse = log_sum_exp(row);
                let nll = lse - row[targets[r]];
                let w = class_weights.map_or(F::one(), |w| w[targets[r]]);
                num = num + w * nll;
                den = den + w;
            }
            let _ = rows;
            (num / den, class_weights.map(|w| w.to_vec()), classes, nodes[logits.id].needs_grad)
        };
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy { logits: logits.id, targets: targets.to_vec(), weights, classes },
            needs,
        )
    }

    /// Nearest-neighbor upsampling of an `(h*w, c)` grid by an integer
    /// factor, producing `(h*factor*w*factor, c)`.
    pub fn upsample_nearest(&self, a: Var, h: usize, w: usize, factor: usize) -> Result<Var> {
        self.check(a, "upsample_nearest")?;
        let (c, data, needs) = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.id].value;
            let s = ta.shape();
            if s.len() != 2 || s[0] != h * w || factor == 0 {
                return Err(TensorError::Shape {
                    op: "upsample_nearest",
                    msg: format!("shape {s:?} vs grid {h}x{w}, factor {factor}"),
                });
            }
            let c = s[1];
            let src = ta.data();
            let (oh, ow) = (h * factor, w * factor);
            let mut data = vec![F::zero(); oh * ow * c];
            for oi in 0..oh {
                for oj in 0..ow {
                    let si = oi / factor;
                    let sj = oj / factor;
                    let dst = (oi * ow + oj) * c;
                    let srco = (si * w + sj) * c;
                    data[dst..dst + c].copy_from_slice(&src[srco..srco + c]);
                }
            }
            (c, data, nodes[a.id].needs_grad)
        };
        self.push(
            "upsample_nearest",
            vec![h * factor * w * factor, c],
            data,
            Op::UpsampleNearest { a: a.id, h, w, c, factor },
            needs,
        )
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Populates gradients for every
    /// grad-enabled leaf reachable from `loss`. A second call on the same
    /// tape is an error.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        self.check(loss, "backward")?;
        if self.backward_done.get() {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_done.set(true);
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::NotScalar { numel: nodes[loss.id].value.numel() });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; nodes.len()];
        if nodes[loss.id].needs_grad {
            grads[loss.id] = Some(vec![F::one()]);
        }
        for id in (0..=loss.id).rev() {
            if grads[id].is_none() {
                continue;
            }
            if matches!(nodes[id].op, Op::Leaf) {
                continue; // keep leaf gradients
            }
            let g = grads[id].take().expect("present");
            propagate(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { tag: self.tag, grads })
    }
}

// ── Kernels ─────────────────────────────────────────────────────────

/// `out += a · b` with `a (m,k)`, `b (k,n)`.
fn mm<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

/// `out += a · bᵀ` with `a (m,k)`, `b (n,k)`.
fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            *o = *o + acc;
        }
    }
}

/// `out += aᵀ · b` with `a (k,m)`, `b (k,n)`.
fn mm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + api * bv;
            }
        }
    }
}

fn softmax_row<F: Scalar>(row: &[F], out: &mut [F]) {
    let mut mx = row[0];
    for &v in row {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - mx).exp();
        *o = e;
        sum = sum + e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let mut mx = row[0];
    for &v in row {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = F::zero();
    for &v in row {
        sum = sum + (v - mx).exp();
    }
    mx + sum.ln()
}

fn row_moments<F: Scalar>(row: &[F], eps: F) -> (F, F) {
    let n = F::from_f64(row.len() as f64);
    let mu = row.iter().copied().sum::<F>() / n;
    let mut var = F::zero();
    for &v in row {
        let d = v - mu;
        var = var + d * d;
    }
    var = var / n;
    (mu, F::one() / (var + eps).sqrt())
}

fn acc<F: Scalar>(grads: &mut [Option<Vec<F>>], id: usize, numel: usize) -> &mut [F] {
    grads[id].get_or_insert_with(|| vec![F::zero(); numel])
}

fn propagate<F: Scalar>(
    nodes: &[Node<F>],
    id: usize,
    g: &[F],
    grads: &mut Vec<Option<Vec<F>>>,
) {
    let numel_of = |i: usize| nodes[i].value.numel();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
            if nodes[*b].needs_grad {
                let gb = acc(grads, *b, numel_of(*b));
                for (o, &gv) in gb.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
        }
        Op::Sub { a, b } => {
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
            if nodes[*b].needs_grad {
                let gb = acc(grads, *b, numel_of(*b));
                for (o, &gv) in gb.iter_mut().zip(g) {
                    *o = *o - gv;
                }
            }
        }
        Op::Mul { a, b } => {
            if nodes[*a].needs_grad {
                let bv = nodes[*b].value.data().to_vec();
                let ga = acc(grads, *a, numel_of(*a));
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(&bv) {
                    *o = *o + gv * x;
                }
            }
            if nodes[*b].needs_grad {
                let av = nodes[*a].value.data().to_vec();
                let gb = acc(grads, *b, numel_of(*b));
                for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(&av) {
                    *o = *o + gv * x;
                }
            }
        }
        Op::Scale { a, c } => {
            if nodes[*a].needs_grad {
                let c = *c;
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv * c;
                }
            }
        }
        Op::AddScalar { a } => {
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
        }
        Op::AddBias { a, bias } => {
            let cols = nodes[*bias].value.numel();
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
            if nodes[*bias].needs_grad {
                let gb = acc(grads, *bias, cols);
                for row in g.chunks_exact(cols) {
                    for (o, &gv) in gb.iter_mut().zip(row) {
                        *o = *o + gv;
                    }
                }
            }
        }
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if nodes[*a].needs_grad {
                let bv = nodes[*b].value.data();
                let mut da = vec![F::zero(); m * k];
                mm_nt(g, bv, m, n, k, &mut da);
                let ga = acc(grads, *a, m * k);
                for (o, d) in ga.iter_mut().zip(da) {
                    *o = *o + d;
                }
            }
            if nodes[*b].needs_grad {
                let av = nodes[*a].value.data();
                let mut db = vec![F::zero(); k * n];
                mm_tn(av, g, k, m, n, &mut db);
                let gb = acc(grads, *b, k * n);
                for (o, d) in gb.iter_mut().zip(db) {
                    *o = *o + d;
                }
            }
        }
        Op::Bmm { a, b, batch, m, k, n, transpose_b } => {
            let (batch, m, k, n) = (*batch, *m, *k, *n);
            let an = m * k;
            let bn = k * n;
            let on = m * n;
            if nodes[*a].needs_grad {
                let bv = nodes[*b].value.data().to_vec();
                let ga = acc(grads, *a, batch * an);
                for i in 0..batch {
                    let gi = &g[i * on..(i + 1) * on];
                    let bi = &bv[i * bn..(i + 1) * bn];
                    let da = &mut ga[i * an..(i + 1) * an];
                    if *transpose_b {
                        // C = A·Bᵀ: dA = dC·B, B stored (n,k)
                        mm(gi, bi, m, n, k, da);
                    } else {
                        mm_nt(gi, bi, m, n, k, da);
                    }
                }
            }
            if nodes[*b].needs_grad {
                let av = nodes[*a].value.data().to_vec();
                let gb = acc(grads, *b, batch * bn);
                for i in 0..batch {
                    let gi = &g[i * on..(i + 1) * on];
                    let ai = &av[i * an..(i + 1) * an];
                    let db = &mut gb[i * bn..(i + 1) * bn];
                    if *transpose_b {
                        // dB (n,k) = dCᵀ·A
                        mm_tn(gi, ai, n, m, k, db);
                    } else {
                        mm_tn(ai, gi, k, m, n, db);
                    }
                }
            }
        }
        Op::Transpose { a, rows, cols } => {
            if nodes[*a].needs_grad {
                let (rows, cols) = (*rows, *cols);
                let ga = acc(grads, *a, rows * cols);
                // g has shape (cols, rows)
                for c in 0..cols {
                    for r in 0..rows {
                        ga[r * cols + c] = ga[r * cols + c] + g[c * rows + r];
                    }
                }
            }
        }
        Op::Reshape { a } => {
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
        }
        Op::ConcatRows { parts, cols } => {
            let mut offset = 0;
            for &p in parts {
                let rows = nodes[p].value.shape()[0];
                let span = rows * cols;
                if nodes[p].needs_grad {
                    let gp = acc(grads, p, span);
                    for (o, &gv) in gp.iter_mut().zip(&g[offset..offset + span]) {
                        *o = *o + gv;
                    }
                }
                offset += span;
            }
        }
        Op::ConcatCols { parts, rows } => {
            let rows = *rows;
            let total: usize = parts.iter().map(|&p| nodes[p].value.shape()[1]).sum();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.shape()[1];
                if nodes[p].needs_grad {
                    let gp = acc(grads, p, rows * w);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        for (o, &gv) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *o = *o + gv;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::GatherRows { a, idx, cols } => {
            if nodes[*a].needs_grad {
                let cols = *cols;
                let ga = acc(grads, *a, numel_of(*a));
                for (r, &i) in idx.iter().enumerate() {
                    let src = &g[r * cols..(r + 1) * cols];
                    for (o, &gv) in ga[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *o = *o + gv;
                    }
                }
            }
        }
        Op::GatherRowsOrZero { a, idx, cols } => {
            if nodes[*a].needs_grad {
                let cols = *cols;
                let ga = acc(grads, *a, numel_of(*a));
                for (r, &i) in idx.iter().enumerate() {
                    if i < 0 {
                        continue;
                    }
                    let i = i as usize;
                    let src = &g[r * cols..(r + 1) * cols];
                    for (o, &gv) in ga[i * cols..(i + 1) * cols].iter_mut().zip(src) {
                        *o = *o + gv;
                    }
                }
            }
        }
        Op::SliceCols { a, start, width, cols } => {
            if nodes[*a].needs_grad {
                let (start, width, cols) = (*start, *width, *cols);
                let rows = numel_of(*a) / cols;
                let ga = acc(grads, *a, rows * cols);
                for r in 0..rows {
                    let src = &g[r * width..(r + 1) * width];
                    for (o, &gv) in
                        ga[r * cols + start..r * cols + start + width].iter_mut().zip(src)
                    {
                        *o = *o + gv;
                    }
                }
            }
        }
        Op::Sum { a } => {
            if nodes[*a].needs_grad {
                let gv = g[0];
                let ga = acc(grads, *a, numel_of(*a));
                for o in ga.iter_mut() {
                    *o = *o + gv;
                }
            }
        }
        Op::Mean { a } => {
            if nodes[*a].needs_grad {
                let n = numel_of(*a);
                let gv = g[0] / F::from_f64(n as f64);
                let ga = acc(grads, *a, n);
                for o in ga.iter_mut() {
                    *o = *o + gv;
                }
            }
        }
        Op::Relu { a } => {
            if nodes[*a].needs_grad {
                let xv = nodes[*a].value.data().to_vec();
                let ga = acc(grads, *a, numel_of(*a));
                for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(&xv) {
                    if x > F::zero() {
                        *o = *o + gv;
                    }
                }
            }
        }
        Op::Sqrt { a } => {
            if nodes[*a].needs_grad {
                let yv = nodes[id].value.data().to_vec();
                let half = F::from_f64(0.5);
                let ga = acc(grads, *a, numel_of(*a));
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(&yv) {
                    *o = *o + gv * half / y;
                }
            }
        }
        Op::Recip { a } => {
            if nodes[*a].needs_grad {
                let yv = nodes[id].value.data().to_vec();
                let ga = acc(grads, *a, numel_of(*a));
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(&yv) {
                    *o = *o - gv * y * y;
                }
            }
        }
        Op::MulScalarVar { a, s } => {
            let sv = nodes[*s].value.data()[0];
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, numel_of(*a));
                for (o, &gv) in ga.iter_mut().zip(g) {
                    *o = *o + gv * sv;
                }
            }
            if nodes[*s].needs_grad {
                let av = nodes[*a].value.data();
                let mut dot = F::zero();
                for (&gv, &x) in g.iter().zip(av) {
                    dot = dot + gv * x;
                }
                let gs = acc(grads, *s, 1);
                gs[0] = gs[0] + dot;
            }
        }
        Op::Softmax { a, cols } => {
            if nodes[*a].needs_grad {
                let cols = *cols;
                let yv = nodes[id].value.data().to_vec();
                let ga = acc(grads, *a, numel_of(*a));
                for ((grow, yrow), garow) in g
                    .chunks_exact(cols)
                    .zip(yv.chunks_exact(cols))
                    .zip(ga.chunks_exact_mut(cols))
                {
                    let mut dot = F::zero();
                    for (&gv, &y) in grow.iter().zip(yrow) {
                        dot = dot + gv * y;
                    }
                    for ((o, &gv), &y) in garow.iter_mut().zip(grow).zip(yrow) {
                        *o = *o + y * (gv - dot);
                    }
                }
            }
        }
        Op::LayerNorm { a, gamma, beta, eps, cols } => {
            let cols = *cols;
            let xv = nodes[*a].value.data().to_vec();
            let gv_gamma = nodes[*gamma].value.data().to_vec();
            let epsf = F::from_f64(*eps);
            let nf = F::from_f64(cols as f64);
            if nodes[*a].needs_grad {
                let ga = acc(grads, *a, xv.len());
                for ((grow, xrow), garow) in g
                    .chunks_exact(cols)
                    .zip(xv.chunks_exact(cols))
                    .zip(ga.chunks_exact_mut(cols))
                {
                    let (mu, rstd) = row_moments(xrow, epsf);
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for j in 0..cols {
                        let xh = (xrow[j] - mu) * rstd;
                        let dyh = grow[j] * gv_gamma[j];
                        m1 = m1 + dyh;
                        m2 = m2 + dyh * xh;
                    }
                    m1 = m1 / nf;
                    m2 = m2 / nf;
                    for j in 0..cols {
                        let xh = (xrow[j] - mu) * rstd;
                        let dyh = grow[j] * gv_gamma[j];
                        garow[j] = garow[j] + rstd * (dyh - m1 - xh * m2);
                    }
                }
            }
            if nodes[*gamma].needs_grad {
                let gg = acc(grads, *gamma, cols);
                for (grow, xrow) in g.chunks_exact(cols).zip(xv.chunks_exact(cols)) {
                    let (mu, rstd) = row_moments(xrow, epsf);
                    for j in 0..cols {
                        let xh = (xrow[j] - mu) * rstd;
                        gg[j] = gg[j] + grow[j] * xh;
                    }
                }
            }
            if nodes[*beta].needs_grad {
                let gb = acc(grads, *beta, cols);
                for grow in g.chunks_exact(cols) {
                    for (o, &gvv) in gb.iter_mut().zip(grow) {
                        *o = *o + gvv;
                    }
                }
            }
        }
        Op::CrossEntropy { logits, targets, weights, classes } => {
            if nodes[*logits].needs_grad {
                let classes = *classes;
                let lv = nodes[*logits].value.data().to_vec();
                let gscalar = g[0];
                let den: F = targets
                    .iter()
                    .map(|&t| weights.as_ref().map_or(F::one(), |w| w[t]))
                    .sum();
                let gl = acc(grads, *logits, lv.len());
                let mut probs = vec![F::zero(); classes];
                for (r, row) in lv.chunks_exact(classes).enumerate() {
                    softmax_row(row, &mut probs);
                    let w = weights.as_ref().map_or(F::one(), |w| w[targets[r]]);
                    let coeff = gscalar * w / den;
                    let grow = &mut gl[r * classes..(r + 1) * classes];
                    for (c, o) in grow.iter_mut().enumerate() {
                        let ind = if c == targets[r] { F::one() } else { F::zero() };
                        *o = *o + coeff * (probs[c] - ind);
                    }
                }
            }
        }
        Op::UpsampleNearest { a, h, w, c, factor } => {
            if nodes[*a].needs_grad {
                let (h, w, c, factor) = (*h, *w, *c, *factor);
                let ow = w * factor;
                let ga = acc(grads, *a, h * w * c);
                for oi in 0..h * factor {
                    for oj in 0..ow {
                        let si = oi / factor;
                        let sj = oj / factor;
                        let srco = (si * w + sj) * c;
                        let dst = (oi * ow + oj) * c;
                        for off in 0..c {
                            ga[srco + off] = ga[srco + off] + g[dst + off];
                        }
                    }
                }
            }
        }
    }
}
