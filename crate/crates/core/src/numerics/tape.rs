//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Values of
//! parameters are read from a borrowed [`ParamStore`] without copying, so
//! large embedding tables cost nothing until rows are gathered from them.
//! [`Tape::backward`] walks the record in reverse and returns a
//! [`Gradients`] holding `∂loss/∂leaf` for every differentiable leaf and
//! parameter.

use std::collections::{BTreeMap, HashMap};

use super::{ParamId, ParamStore, Tensor};
use crate::error::{MoefError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise activations with registered derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Log1p,
}

/// Same-shape binary arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Geometry of a batched scaled-dot-product attention call.
///
/// Queries are `[batch * q_len, heads * d_k]`, keys `[batch * k_len, heads * d_k]`
/// and values `[batch * k_len, heads * d_v]`. A `false` entry in `key_mask`
/// removes that key from every softmax; a `false` entry in `query_mask`
/// forces that query's output row to zero. A query with no valid keys also
/// yields zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub batch: usize,
    pub heads: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub key_mask: Option<Vec<bool>>,
    pub query_mask: Option<Vec<bool>>,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Clip applied to predictions before taking logs in the loss.
pub const PRED_CLIP: f64 = 1e-7;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    AddRow { x: Var, bias: Var },
    Binary(Binary, Var, Var),
    MulCol { x: Var, col: Var },
    MulRow { x: Var, row: Var },
    Scale { x: Var, factor: f64 },
    Unary(Unary, Var),
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    Gather { table: ParamId, indices: Vec<Option<usize>> },
    Attention { q: Var, k: Var, v: Var, spec: AttentionSpec, probs: Vec<f64> },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    LogLoss { pred: Var, labels: Vec<f64> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradient of one parameter: dense, or sparse rows for gathered tables.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl ParamGrad {
    /// Materializes the gradient as a dense array of `len` values.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            ParamGrad::Dense(g) => g.clone(),
            ParamGrad::Rows { width, rows } => {
                let mut out = vec![0.0; len];
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(g);
                }
                out
            }
        }
    }

    fn add_dense(&mut self, g: &[f64]) {
        match self {
            ParamGrad::Dense(d) => add_into(d, g),
            ParamGrad::Rows { width, rows } => {
                let mut d = vec![0.0; g.len()];
                for (&r, row) in rows.iter() {
                    d[r * *width..(r + 1) * *width].copy_from_slice(row);
                }
                add_into(&mut d, g);
                *self = ParamGrad::Dense(d);
            }
        }
    }

    fn add_row(&mut self, r: usize, width: usize, g: &[f64]) {
        match self {
            ParamGrad::Dense(d) => add_into(&mut d[r * width..(r + 1) * width], g),
            ParamGrad::Rows { rows, .. } => match rows.get_mut(&r) {
                Some(existing) => add_into(existing, g),
                None => {
                    rows.insert(r, g.to_vec());
                }
            },
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, ParamGrad>,
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&ParamGrad> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &ParamGrad)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Gradient of a leaf created with [`Tape::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    backward_done: bool,
}

impl Default for Tape<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape<'static> {
    /// A tape with no parameter store; only constants and leaves.
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            backward_done: false,
        }
    }
}

impl<'p> Tape<'p> {
    pub fn with_params(params: &'p ParamStore) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn store(&self) -> &'p ParamStore {
        self.params.expect("tape was created without a parameter store")
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store().get(*id).value,
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node reading parameter `id`. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let rg = self.store().get(id).requires_grad;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: rg,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(MoefError::dim(format!("{what} must be a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// `a · b`, or `a · bᵀ` when `trans_b`.
    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (br, bc) = self.matrix_dims(b, "matmul rhs")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(MoefError::dim(format!(
                "matmul inner dimensions disagree: {:?} x {:?}{}",
                self.shape(a),
                self.shape(b),
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        let bs = if trans_b { (1, k) } else { (n, 1) };
        gemm(m, k, n, self.data(a), (k, 1), self.data(b), bs, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, trans_b },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`; the natural form for `[out, in]` weight matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` input.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2();
        if self.value(bias).len() != n {
            return Err(MoefError::dim(format!(
                "row broadcast of {:?} onto {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.data(bias);
        let data: Vec<f64> = self
            .data(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddRow { x, bias }, rg))
    }

    /// `x W ᵀ + b` for a `[out, in]` weight and length-`out` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        self.add_row(y, b)
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(MoefError::dim(format!(
                "{op:?} operands differ in shape: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let f = match op {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Scales each row `i` of `[m, n]` input `x` by `col[i]` (`col` is `[m, 1]`).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(col).len() != m {
            return Err(MoefError::dim(format!(
                "column broadcast of {:?} onto {:?}",
                self.shape(col),
                self.shape(x)
            )));
        }
        let c = self.data(col);
        let data: Vec<f64> = self
            .data(x)
            .chunks(n)
            .zip(c)
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x) || self.rg(col);
        Ok(self.push(t, Op::MulCol { x, col }, rg))
    }

    /// Multiplies every row of `[m, n]` input `x` elementwise by length-`n` `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2();
        if self.value(row).len() != n {
            return Err(MoefError::dim(format!(
                "row broadcast of {:?} onto {:?}",
                self.shape(row),
                self.shape(x)
            )));
        }
        let g = self.data(row);
        let data: Vec<f64> = self
            .data(x)
            .chunks(n)
            .flat_map(|r| r.iter().zip(g).map(|(v, g)| v * g))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(t, Op::MulRow { x, row }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Scale { x, factor }, rg)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let src = self.data(x);
        let data: Vec<f64> = match op {
            Unary::Sigmoid => src.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Tanh => src.iter().map(|v| v.tanh()).collect(),
            Unary::Relu => src.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(),
            Unary::Log1p => {
                if let Some(i) = src.iter().position(|&v| v <= -1.0) {
                    return Err(MoefError::Domain(format!(
                        "log1p undefined at index {i} (value {})",
                        src[i]
                    )));
                }
                src.iter().map(|v| v.ln_1p()).collect()
            }
        };
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Unary(op, x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x).expect("tanh is total")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x).expect("relu is total")
    }

    pub fn log1p(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log1p, x)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(MoefError::dim(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Column means of an `[L, d]` input as a `[1, d]` row.
    ///
    /// Each column is summed in ascending value order, so the result is
    /// bit-for-bit independent of the order of the rows.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (l, d) = self.matrix_dims(x, "mean_rows input")?;
        let src = self.data(x);
        let mut out = vec![0.0; d];
        let mut col = vec![0.0; l];
        for (j, o) in out.iter_mut().enumerate() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = src[i * d + j];
            }
            col.sort_by(f64::total_cmp);
            *o = col.iter().sum::<f64>() / l as f64;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, d], out)?, Op::MeanRows(x), rg))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MoefError::dim("concat of zero tensors"))?;
        let (m, _) = self.matrix_dims(first, "concat part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix_dims(p, "concat part")?;
            if pm != m {
                return Err(MoefError::dim(format!(
                    "concat row counts differ: {m} vs {pm}"
                )));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice input")?;
        if len == 0 || start + len > n {
            return Err(MoefError::dim(format!(
                "column slice {start}..{} out of range for width {n}",
                start + len
            )));
        }
        let src = self.data(x);
        let out: Vec<f64> = (0..m)
            .flat_map(|r| src[r * n + start..r * n + start + len].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![m, len], out)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    /// Gathers rows of a matrix node; rows may repeat.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "select_rows input")?;
        if rows.is_empty() {
            return Err(MoefError::dim("select_rows with no rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(MoefError::dim(format!("row {bad} out of range for {m} rows")));
        }
        let src = self.data(x);
        let out: Vec<f64> = rows
            .iter()
            .flat_map(|&r| src[r * n..(r + 1) * n].iter().copied())
            .collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![rows.len(), n], out)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Embedding lookup: row `i` of the output is row `indices[i]` of the
    /// `[vocab, width]` table, or zeros for `None`.
    pub fn gather(&mut self, table: ParamId, indices: &[Option<usize>]) -> Result<Var> {
        let p = self.store().get(table);
        let (vocab, width) = p.value.dims2();
        if indices.is_empty() {
            return Err(MoefError::dim("gather with no indices"));
        }
        let mut out = vec![0.0; indices.len() * width];
        for (i, idx) in indices.iter().enumerate() {
            if let Some(r) = *idx {
                if r >= vocab {
                    return Err(MoefError::dim(format!(
                        "row {r} out of range for table {} with {vocab} rows",
                        p.name
                    )));
                }
                out[i * width..(i + 1) * width].copy_from_slice(p.value.row(r));
            }
        }
        let rg = p.requires_grad;
        Ok(self.push(
            Tensor::new(vec![indices.len(), width], out)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Batched multi-head scaled-dot-product attention; see [`AttentionSpec`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let (qr, qc) = self.matrix_dims(q, "attention queries")?;
        let (kr, kc) = self.matrix_dims(k, "attention keys")?;
        let (vr, vc) = self.matrix_dims(v, "attention values")?;
        let AttentionSpec {
            batch,
            heads,
            q_len,
            k_len,
            ..
        } = spec;
        if heads == 0 || qc != kc || qc % heads != 0 || vc % heads != 0 {
            return Err(MoefError::dim(format!(
                "attention widths q={qc} k={kc} v={vc} incompatible with {heads} heads"
            )));
        }
        if qr != batch * q_len || kr != batch * k_len || vr != kr {
            return Err(MoefError::dim(format!(
                "attention rows q={qr} k={kr} v={vr} do not match batch {batch} x ({q_len}, {k_len})"
            )));
        }
        if spec.key_mask.as_ref().is_some_and(|m| m.len() != kr)
            || spec.query_mask.as_ref().is_some_and(|m| m.len() != qr)
        {
            return Err(MoefError::dim("attention mask length mismatch"));
        }
        let dk = qc / heads;
        let dv = vc / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; batch * heads * q_len * k_len];
        let mut out = vec![0.0; qr * vc];
        let mut scores = vec![0.0; k_len];
        for b in 0..batch {
            let key_ok =
                |j: usize| spec.key_mask.as_ref().map_or(true, |m| m[b * k_len + j]);
            for h in 0..heads {
                for i in 0..q_len {
                    let qi = b * q_len + i;
                    if !spec.query_mask.as_ref().map_or(true, |m| m[qi]) {
                        continue;
                    }
                    let qrow = &qd[qi * qc + h * dk..qi * qc + (h + 1) * dk];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        if key_ok(j) {
                            let kj = b * k_len + j;
                            let krow = &kd[kj * kc + h * dk..kj * kc + (h + 1) * dk];
                            *s = dot(qrow, krow) * scale;
                            max = max.max(*s);
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let p = &mut probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let mut sum = 0.0;
                    for j in 0..k_len {
                        if key_ok(j) {
                            p[j] = (scores[j] - max).exp();
                            sum += p[j];
                        }
                    }
                    let orow = &mut out[qi * vc + h * dv..qi * vc + (h + 1) * dv];
                    for j in 0..k_len {
                        if p[j] != 0.0 {
                            p[j] /= sum;
                            let kj = b * k_len + j;
                            let vrow = &vd[kj * vc + h * dv..kj * vc + (h + 1) * dv];
                            for (o, &x) in orow.iter_mut().zip(vrow) {
                                *o += p[j] * x;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::new(vec![qr, vc], out)?,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
            rg,
        ))
    }

    /// Normalizes each row to zero mean and unit variance (ε = 1e-5).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "layer_norm input")?;
        let src = self.data(x);
        let mut out = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mu) * is;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::LayerNorm { x, inv_std },
            rg,
        ))
    }

    /// Mean binary cross-entropy of `pred` against 0/1 `labels`; predictions
    /// are clipped to `[1e-7, 1 − 1e-7]` before taking logs.
    pub fn logloss(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let p = self.data(pred);
        if labels.is_empty() {
            return Err(MoefError::Contract("logloss of an empty batch".into()));
        }
        if p.len() != labels.len() {
            return Err(MoefError::dim(format!(
                "{} predictions for {} labels",
                p.len(),
                labels.len()
            )));
        }
        let loss = logloss(labels, p)?;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::LogLoss {
                pred,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Re-arms [`Tape::backward`] after it has been called once.
    pub fn reset_grads(&mut self) {
        self.backward_done = false;
    }

    /// Propagates `∂loss/∂·` to every differentiable leaf and parameter.
    ///
    /// Errors if `loss` is not a single value, or if backward already ran on
    /// this tape and [`Tape::reset_grads`] was not called in between.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(MoefError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if self.backward_done {
            return Err(MoefError::Contract(
                "backward already ran on this tape; reset gradients first".into(),
            ));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    let shape = node.value.as_ref().expect("leaf value").shape().to_vec();
                    out.leaves
                        .insert(Var(idx), Tensor::new(shape, g).expect("grad shape"));
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(pg) => pg.add_dense(&g),
                    None => {
                        out.params.insert(*id, ParamGrad::Dense(g));
                    }
                },
                Op::Gather { table, indices } => {
                    let width = self.store().get(*table).value.dims2().1;
                    let pg = out.params.entry(*table).or_insert_with(|| ParamGrad::Rows {
                        width,
                        rows: BTreeMap::new(),
                    });
                    for (i, r) in indices.iter().enumerate() {
                        if let Some(r) = *r {
                            pg.add_row(r, width, &g[i * width..(i + 1) * width]);
                        }
                    }
                }
                op => self.backprop(op, idx, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn backprop(&self, op: &Op, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.nodes[idx].value.as_ref().expect("computed node");
        match op {
            Op::Leaf | Op::Param(_) | Op::Gather { .. } => unreachable!(),
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = self.value(*a).dims2();
                let n = y.dims2().1;
                if self.rg(*a) {
                    // dA = dC · Bᵀ (or dC · B when B was transposed)
                    let bs = if *trans_b { (k, 1) } else { (1, n) };
                    let bd = self.data(*b);
                    self.acc_with(grads, *a, |ga| gemm(m, n, k, g, (n, 1), bd, bs, ga, 1.0));
                }
                if self.rg(*b) {
                    let ad = self.data(*a);
                    if *trans_b {
                        // dB = dCᵀ · A, shape [n, k]
                        self.acc_with(grads, *b, |gb| {
                            gemm(n, m, k, g, (1, n), ad, (k, 1), gb, 1.0)
                        });
                    } else {
                        // dB = Aᵀ · dC, shape [k, n]
                        self.acc_with(grads, *b, |gb| {
                            gemm(k, m, n, ad, (1, k), g, (n, 1), gb, 1.0)
                        });
                    }
                }
            }
            Op::AddRow { x, bias } => {
                let n = y.dims2().1;
                self.acc_with(grads, *x, |gx| add_into(gx, g));
                self.acc_with(grads, *bias, |gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    self.acc_with(grads, *a, |ga| add_into(ga, g));
                    self.acc_with(grads, *b, |gb| add_into(gb, g));
                }
                Binary::Sub => {
                    self.acc_with(grads, *a, |ga| add_into(ga, g));
                    self.acc_with(grads, *b, |gb| {
                        gb.iter_mut().zip(g).for_each(|(o, d)| *o -= d)
                    });
                }
                Binary::Mul => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    self.acc_with(grads, *a, |ga| {
                        for ((o, d), v) in ga.iter_mut().zip(g).zip(bd) {
                            *o += d * v;
                        }
                    });
                    self.acc_with(grads, *b, |gb| {
                        for ((o, d), v) in gb.iter_mut().zip(g).zip(ad) {
                            *o += d * v;
                        }
                    });
                }
            },
            Op::MulCol { x, col } => {
                let n = y.dims2().1;
                let (xd, cd) = (self.data(*x), self.data(*col));
                self.acc_with(grads, *x, |gx| {
                    for ((gr, dr), &s) in gx.chunks_mut(n).zip(g.chunks(n)).zip(cd) {
                        gr.iter_mut().zip(dr).for_each(|(o, d)| *o += d * s);
                    }
                });
                self.acc_with(grads, *col, |gc| {
                    for ((o, dr), xr) in gc.iter_mut().zip(g.chunks(n)).zip(xd.chunks(n)) {
                        *o += dot(dr, xr);
                    }
                });
            }
            Op::MulRow { x, row } => {
                let n = y.dims2().1;
                let (xd, rd) = (self.data(*x), self.data(*row));
                self.acc_with(grads, *x, |gx| {
                    for (gr, dr) in gx.chunks_mut(n).zip(g.chunks(n)) {
                        for ((o, d), s) in gr.iter_mut().zip(dr).zip(rd) {
                            *o += d * s;
                        }
                    }
                });
                self.acc_with(grads, *row, |gr| {
                    for (dr, xr) in g.chunks(n).zip(xd.chunks(n)) {
                        for ((o, d), v) in gr.iter_mut().zip(dr).zip(xr) {
                            *o += d * v;
                        }
                    }
                });
            }
            Op::Scale { x, factor } => {
                self.acc_with(grads, *x, |gx| {
                    gx.iter_mut().zip(g).for_each(|(o, d)| *o += d * factor)
                });
            }
            Op::Unary(kind, x) => {
                let (xd, yd) = (self.data(*x), y.data());
                self.acc_with(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        let dydx = match kind {
                            Unary::Sigmoid => yd[i] * (1.0 - yd[i]),
                            Unary::Tanh => 1.0 - yd[i] * yd[i],
                            Unary::Relu => {
                                if xd[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Log1p => 1.0 / (1.0 + xd[i]),
                        };
                        gx[i] += g[i] * dydx;
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let yd = y.data();
                self.acc_with(grads, *x, |gx| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let s: f64 = (0..*len).map(|j| g[idx(j)] * yd[idx(j)]).sum();
                            for j in 0..*len {
                                gx[idx(j)] += yd[idx(j)] * (g[idx(j)] - s);
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                self.acc_with(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc_with(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::MeanRows(x) => {
                let (l, _) = self.value(*x).dims2();
                self.acc_with(grads, *x, |gx| {
                    for row in gx.chunks_mut(g.len()) {
                        row.iter_mut().zip(g).for_each(|(o, d)| *o += d / l as f64);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    self.acc_with(grads, p, |gp| {
                        for (gr, dr) in gp.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(gr, &dr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).dims2().1;
                let w = y.dims2().1;
                self.acc_with(grads, *x, |gx| {
                    for (gr, dr) in gx.chunks_mut(n).zip(g.chunks(w)) {
                        add_into(&mut gr[*start..*start + w], dr);
                    }
                });
            }
            Op::SelectRows { x, rows } => {
                let n = y.dims2().1;
                self.acc_with(grads, *x, |gx| {
                    for (&r, dr) in rows.iter().zip(g.chunks(n)) {
                        add_into(&mut gx[r * n..(r + 1) * n], dr);
                    }
                });
            }
            Op::Reshape(x) => self.acc_with(grads, *x, |gx| add_into(gx, g)),
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => self.attention_backward(*q, *k, *v, spec, probs, g, grads),
            Op::LayerNorm { x, inv_std } => {
                let n = y.dims2().1;
                let yd = y.data();
                self.acc_with(grads, *x, |gx| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let dr = &g[r * n..(r + 1) * n];
                        let yr = &yd[r * n..(r + 1) * n];
                        let mean_d = dr.iter().sum::<f64>() / n as f64;
                        let mean_dy = dot(dr, yr) / n as f64;
                        for j in 0..n {
                            gx[r * n + j] += is * (dr[j] - mean_d - yr[j] * mean_dy);
                        }
                    }
                });
            }
            Op::LogLoss { pred, labels } => {
                let p = self.data(*pred);
                let n = labels.len() as f64;
                self.acc_with(grads, *pred, |gp| {
                    for ((o, &pi), &yi) in gp.iter_mut().zip(p).zip(labels) {
                        if pi > PRED_CLIP && pi < 1.0 - PRED_CLIP {
                            *o += -g[0] * (yi / pi - (1.0 - yi) / (1.0 - pi)) / n;
                        }
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let AttentionSpec {
            batch,
            heads,
            q_len,
            k_len,
            ..
        } = *spec;
        let qc = self.value(q).dims2().1;
        let vc = self.value(v).dims2().1;
        let (dk, dv) = (qc / heads, vc / heads);
        let scale = 1.0 / (dk as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dp = vec![0.0; k_len];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..q_len {
                    let qi = b * q_len + i;
                    let p = &probs[((b * heads + h) * q_len + i) * k_len..][..k_len];
                    let go = &g[qi * vc + h * dv..qi * vc + (h + 1) * dv];
                    let mut s = 0.0;
                    for j in 0..k_len {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let kj = b * k_len + j;
                        let vrow = &vd[kj * vc + h * dv..kj * vc + (h + 1) * dv];
                        dp[j] = dot(go, vrow);
                        s += dp[j] * p[j];
                        let gvrow = &mut gv[kj * vc + h * dv..kj * vc + (h + 1) * dv];
                        gvrow.iter_mut().zip(go).for_each(|(o, d)| *o += p[j] * d);
                    }
                    for j in 0..k_len {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - s) * scale;
                        let kj = b * k_len + j;
                        for t in 0..dk {
                            gq[qi * qc + h * dk + t] += ds * kd[kj * qc + h * dk + t];
                            gk[kj * qc + h * dk + t] += ds * qd[qi * qc + h * dk + t];
                        }
                    }
                }
            }
        }
        self.acc_with(grads, q, |o| add_into(o, &gq));
        self.acc_with(grads, k, |o| add_into(o, &gk));
        self.acc_with(grads, v, |o| add_into(o, &gv));
    }

    fn acc_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let n = self.value(v).len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with predictions clipped to `[1e-7, 1 − 1e-7]`.
pub fn logloss(labels: &[f64], preds: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(MoefError::Contract("logloss of an empty batch".into()));
    }
    if labels.len() != preds.len() {
        return Err(MoefError::dim(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let total: f64 = labels
        .iter()
        .zip(preds)
        .map(|(&y, &p)| {
            let p = p.clamp(PRED_CLIP, 1.0 - PRED_CLIP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / labels.len() as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// `C = A·B + beta·C` for strided `m×k` A and `k×n` B into row-major C.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
