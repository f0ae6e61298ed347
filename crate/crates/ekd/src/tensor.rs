//! Dense row-major f64 tensors and a tape-based reverse-mode
//! differentiation graph.
//!
//! A [`Graph`] records every operation it executes; [`Graph::backward`]
//! replays the tape in reverse and accumulates gradients into each node.
//! Reductions run left-to-right over the row-major index so repeated runs
//! are bit-identical. Every completed operation is checked for NaN/Inf;
//! non-finite values surface as [`Error::Numeric`] instead of propagating.

use crate::error::{Error, Result};

/// Dense n-dimensional tensor of 64-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, validating that `data` fills `shape` exactly.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements but {} values were supplied",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dimension("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("from_rows: ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(data, &[rows.len(), cols])
    }

    pub fn with_requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Number of rows of a 2-D tensor (1 for 1-D).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns of a 2-D tensor (its length for 1-D).
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Add `g` into the gradient buffer (allocating it on first use).
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        let buf = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (b, v) in buf.iter_mut().zip(g) {
            *b += v;
        }
    }

    /// Detached copy: same values, no gradient tracking.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }
}

/// Handle to a node inside one [`Graph`]. Ids are not transferable
/// between graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    AddRow { x: TensorId, row: TensorId },
    AddScalar { x: TensorId },
    Scale { x: TensorId, factor: f64 },
    Matmul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Softmax { x: TensorId },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f64 },
    Gelu { x: TensorId },
    LogSigmoid { x: TensorId },
    Abs { x: TensorId },
    Sqrt { x: TensorId },
    Sum { x: TensorId },
    Mean { x: TensorId },
    SumAxis1 { x: TensorId },
    MeanAxis0 { x: TensorId },
    ConcatCols { parts: Vec<TensorId> },
    SliceCols { x: TensorId, start: usize, len: usize },
    ScaleBy { x: TensorId, weights: TensorId, index: usize },
    CrossEntropy { logits: TensorId, targets: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow { .. } => "add_row",
            Op::AddScalar { .. } => "add_scalar",
            Op::Scale { .. } => "scale",
            Op::Matmul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::LogSigmoid { .. } => "log_sigmoid",
            Op::Abs { .. } => "abs",
            Op::Sqrt { .. } => "sqrt",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumAxis1 { .. } => "sum_axis1",
            Op::MeanAxis0 { .. } => "mean_axis0",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::ScaleBy { .. } => "scale_by",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Tape of executed operations. Inputs always precede their consumers,
/// so a single reverse sweep visits each node exactly once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Raw matrix product of row-major buffers: `a[m×k] · b[k×n]`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a copy of `t` as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape: t.shape.clone(),
                data: t.data.clone(),
                requires_grad: t.requires_grad,
                grad: None,
            },
            op: Op::Leaf,
        });
        id
    }

    /// Insert a detached copy of `t`: gradients never flow into it.
    pub fn constant(&mut self, t: &Tensor) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: t.detached(),
            op: Op::Leaf,
        });
        id
    }

    /// Insert raw values as a detached leaf, rejecting non-finite input.
    pub fn constant_data(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite values in constant input".into()));
        }
        let t = Tensor::new(data, shape)?;
        Ok(self.constant(&t))
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Value of a scalar (shape `[1]`) node.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].tensor.numel(), 1);
        self.nodes[id.0].tensor.data[0]
    }

    /// Detached snapshot of a node's value.
    pub fn detach(&self, id: TensorId) -> Tensor {
        self.nodes[id.0].tensor.detached()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Result<TensorId> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "operation '{}' produced a non-finite value at flat index {} (node {})",
                op.name(),
                pos,
                self.nodes.len()
            )));
        }
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            op,
        });
        Ok(id)
    }

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ── elementwise and shape ops ──────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(data, self.shape(a).to_vec(), rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(data, self.shape(a).to_vec(), rg, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(data, self.shape(a).to_vec(), rg, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "div")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x / y).collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(data, self.shape(a).to_vec(), rg, Op::Div(a, b))
    }

    /// Broadcast-add a row vector `row[d]` to every row of `x[t×d]`.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (t, d) = self.dims2(x, "add_row input")?;
        if self.shape(row) != [d] {
            return Err(Error::Dimension(format!(
                "add_row: row shape {:?} does not match width {d}",
                self.shape(row)
            )));
        }
        let mut data = self.data(x).to_vec();
        let rv = self.data(row);
        for r in 0..t {
            for j in 0..d {
                data[r * d + j] += rv[j];
            }
        }
        let rg = self.requires(x) || self.requires(row);
        self.push(data, vec![t, d], rg, Op::AddRow { x, row })
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let data = self.data(x).iter().map(|v| v + c).collect();
        let rg = self.requires(x);
        self.push(data, self.shape(x).to_vec(), rg, Op::AddScalar { x })
    }

    pub fn scale(&mut self, x: TensorId, factor: f64) -> Result<TensorId> {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let rg = self.requires(x);
        self.push(data, self.shape(x).to_vec(), rg, Op::Scale { x, factor })
    }

    fn dims2(&self, id: TensorId, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::Dimension(format!("{what}: expected a 2-D tensor, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner extents differ, lhs {:?} vs rhs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        let rg = self.requires(a) || self.requires(b);
        self.push(data, vec![m, n], rg, Op::Matmul { a, b })
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(x, "transpose")?;
        let data = transpose_raw(self.data(x), r, c);
        let rg = self.requires(x);
        self.push(data, vec![c, r], rg, Op::Transpose { x })
    }

    // ── nonlinear ops ──────────────────────────────────────────────────

    /// Softmax over the last axis, computed with max-subtraction.
    /// A 1-D input is one distribution; a 2-D input is treated row-wise.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::Domain("softmax: empty input".into()))?;
        if n == 0 {
            return Err(Error::Domain("softmax: empty input".into()));
        }
        let src = self.data(x);
        let mut data = vec![0.0; src.len()];
        for (row_out, row_in) in data.chunks_mut(n).zip(src.chunks(n)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let rg = self.requires(x);
        self.push(data, shape, rg, Op::Softmax { x })
    }

    /// Per-row layer normalization of `x[t×d]` followed by an affine map:
    /// `gain ∘ (x − mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let (t, d) = self.dims2(x, "layer_norm input")?;
        if d < 2 {
            return Err(Error::Domain(format!(
                "layer_norm: feature width must be at least 2, got {d}"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Domain("layer_norm: eps must be positive".into()));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm: gain {:?} / bias {:?} do not match width {d}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let src = self.data(x);
        let gv = self.data(gain);
        let bv = self.data(bias);
        let mut data = vec![0.0; src.len()];
        for r in 0..t {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data[r * d + j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push(data, vec![t, d], rg, Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let data = self.data(x).iter().map(|&v| gelu(v)).collect();
        let rg = self.requires(x);
        self.push(data, self.shape(x).to_vec(), rg, Op::Gelu { x })
    }

    /// Elementwise `log(sigmoid(x))` in its stable `-softplus(-x)` form.
    pub fn log_sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data = self.data(x).iter().map(|&v| -softplus(-v)).collect();
        let rg = self.requires(x);
        self.push(data, self.shape(x).to_vec(), rg, Op::LogSigmoid { x })
    }

    pub fn abs(&mut self, x: TensorId) -> Result<TensorId> {
        let data = self.data(x).iter().map(|v| v.abs()).collect();
        let rg = self.requires(x);
        self.push(data, self.shape(x).to_vec(), rg, Op::Abs { x })
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId> {
        let data = self.data(x).iter().map(|v| v.sqrt()).collect();
        let rg = self.requires(x);
        self.push(data, self.shape(x).to_vec(), rg, Op::Sqrt { x })
    }

    // ── reductions ─────────────────────────────────────────────────────

    /// Sum of all elements, left-to-right, as a `[1]` scalar.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let mut s = 0.0;
        for v in self.data(x) {
            s += v;
        }
        let rg = self.requires(x);
        self.push(vec![s], vec![1], rg, Op::Sum { x })
    }

    /// Mean of all elements as a `[1]` scalar.
    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.data(x).len() as f64;
        let mut s = 0.0;
        for v in self.data(x) {
            s += v;
        }
        let rg = self.requires(x);
        self.push(vec![s / n], vec![1], rg, Op::Mean { x })
    }

    /// Row sums of `x[t×d]` as a `[t]` vector.
    pub fn sum_axis1(&mut self, x: TensorId) -> Result<TensorId> {
        let (t, d) = self.dims2(x, "sum_axis1")?;
        let src = self.data(x);
        let mut data = vec![0.0; t];
        for r in 0..t {
            let mut s = 0.0;
            for j in 0..d {
                s += src[r * d + j];
            }
            data[r] = s;
        }
        let rg = self.requires(x);
        self.push(data, vec![t], rg, Op::SumAxis1 { x })
    }

    /// Column means of `x[t×d]` as a `[1×d]` row vector.
    pub fn mean_axis0(&mut self, x: TensorId) -> Result<TensorId> {
        let (t, d) = self.dims2(x, "mean_axis0")?;
        let src = self.data(x);
        let mut data = vec![0.0; d];
        for r in 0..t {
            for j in 0..d {
                data[j] += src[r * d + j];
            }
        }
        for v in data.iter_mut() {
            *v /= t as f64;
        }
        let rg = self.requires(x);
        self.push(data, vec![1, d], rg, Op::MeanAxis0 { x })
    }

    // ── structural ops ─────────────────────────────────────────────────

    /// Concatenate 2-D tensors along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat_cols: no inputs".into()));
        }
        let (t, _) = self.dims2(parts[0], "concat_cols input")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (tp, dp) = self.dims2(p, "concat_cols input")?;
            if tp != t {
                return Err(Error::Dimension(format!(
                    "concat_cols: row counts differ ({t} vs {tp})"
                )));
            }
            widths.push(dp);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; t * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.data(p);
            for r in 0..t {
                data[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(data, vec![t, total], rg, Op::ConcatCols { parts: parts.to_vec() })
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (t, d) = self.dims2(x, "slice_cols")?;
        if start + len > d || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_cols: columns {start}..{} out of range for width {d}",
                start + len
            )));
        }
        let src = self.data(x);
        let mut data = vec![0.0; t * len];
        for r in 0..t {
            data[r * len..(r + 1) * len].copy_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let rg = self.requires(x);
        self.push(data, vec![t, len], rg, Op::SliceCols { x, start, len })
    }

    /// Multiply `x` by entry `index` of the 1-D tensor `weights`.
    /// Differentiable with respect to both inputs.
    pub fn scale_by(&mut self, x: TensorId, weights: TensorId, index: usize) -> Result<TensorId> {
        let ws = self.shape(weights);
        if ws.len() != 1 || index >= ws[0] {
            return Err(Error::Dimension(format!(
                "scale_by: index {index} invalid for weight shape {ws:?}"
            )));
        }
        let w = self.data(weights)[index];
        let data = self.data(x).iter().map(|v| v * w).collect();
        let rg = self.requires(x) || self.requires(weights);
        self.push(data, self.shape(x).to_vec(), rg, Op::ScaleBy { x, weights, index })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax
    /// of `logits[b×c]`, as a `[1]` scalar.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (b, c) = self.dims2(logits, "cross_entropy logits")?;
        if targets.len() != b {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} targets for {b} logit rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Domain(format!(
                "cross_entropy: target class {bad} out of range for {c} classes"
            )));
        }
        let src = self.data(logits);
        let mut total = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            let row = &src[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &v in row {
                sum += (v - max).exp();
            }
            total -= row[tgt] - max - sum.ln();
        }
        let rg = self.requires(logits);
        self.push(
            vec![total / b as f64],
            vec![1],
            rg,
            Op::CrossEntropy { logits, targets: targets.to_vec() },
        )
    }

    // ── reverse sweep ──────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar `loss`. Fills the `grad` buffer of
    /// every node with `requires_grad`, accumulating (`+=`) where a node
    /// feeds multiple consumers.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].tensor.requires_grad {
                self.nodes[i].tensor.accumulate_grad(&g);
            }
            let op = self.nodes[i].op.clone();
            self.propagate(&op, i, &g, &mut grads);
        }
        Ok(())
    }

    fn slot<'a>(
        &self,
        grads: &'a mut [Option<Vec<f64>>],
        id: TensorId,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.requires(id) {
            return None;
        }
        let len = self.nodes[id.0].tensor.numel();
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, op: &Op, out: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    for (d, v) in da.iter_mut().zip(g) {
                        *d += v;
                    }
                }
                if let Some(db) = self.slot(grads, b) {
                    for (d, v) in db.iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    for (d, v) in da.iter_mut().zip(g) {
                        *d += v;
                    }
                }
                if let Some(db) = self.slot(grads, b) {
                    for (d, v) in db.iter_mut().zip(g) {
                        *d -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires(a) {
                    let bd: Vec<f64> = self.data(b).to_vec();
                    let da = self.slot(grads, a).expect("requires_grad");
                    for ((d, v), bv) in da.iter_mut().zip(g).zip(&bd) {
                        *d += v * bv;
                    }
                }
                if self.requires(b) {
                    let ad: Vec<f64> = self.data(a).to_vec();
                    let db = self.slot(grads, b).expect("requires_grad");
                    for ((d, v), av) in db.iter_mut().zip(g).zip(&ad) {
                        *d += v * av;
                    }
                }
            }
            Op::Div(a, b) => {
                if self.requires(a) {
                    let bd: Vec<f64> = self.data(b).to_vec();
                    let da = self.slot(grads, a).expect("requires_grad");
                    for ((d, v), bv) in da.iter_mut().zip(g).zip(&bd) {
                        *d += v / bv;
                    }
                }
                if self.requires(b) {
                    let ratio: Vec<f64> = self
                        .data(a)
                        .iter()
                        .zip(self.data(b))
                        .map(|(av, bv)| av / (bv * bv))
                        .collect();
                    let db = self.slot(grads, b).expect("requires_grad");
                    for ((d, v), r) in db.iter_mut().zip(g).zip(&ratio) {
                        *d -= v * r;
                    }
                }
            }
            Op::AddRow { x, row } => {
                let width = *self.nodes[out].tensor.shape.last().unwrap();
                if let Some(dx) = self.slot(grads, x) {
                    for (dv, v) in dx.iter_mut().zip(g) {
                        *dv += v;
                    }
                }
                if let Some(dr) = self.slot(grads, row) {
                    for (i, v) in g.iter().enumerate() {
                        dr[i % width] += v;
                    }
                }
            }
            Op::AddScalar { x } => {
                if let Some(dx) = self.slot(grads, x) {
                    for (d, v) in dx.iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(dx) = self.slot(grads, x) {
                    for (d, v) in dx.iter_mut().zip(g) {
                        *d += v * factor;
                    }
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.requires(a) {
                    // dA = G · Bᵀ
                    let bt = transpose_raw(self.data(b), k, n);
                    let da_contrib = matmul_raw(g, &bt, m, n, k);
                    let da = self.slot(grads, a).expect("requires_grad");
                    for (d, v) in da.iter_mut().zip(&da_contrib) {
                        *d += v;
                    }
                }
                if self.requires(b) {
                    // dB = Aᵀ · G
                    let at = transpose_raw(self.data(a), m, k);
                    let db_contrib = matmul_raw(&at, g, k, m, n);
                    let db = self.slot(grads, b).expect("requires_grad");
                    for (d, v) in db.iter_mut().zip(&db_contrib) {
                        *d += v;
                    }
                }
            }
            Op::Transpose { x } => {
                if self.requires(x) {
                    let (r, c) = (self.nodes[out].tensor.shape[0], self.nodes[out].tensor.shape[1]);
                    let gt = transpose_raw(g, r, c);
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for (d, v) in dx.iter_mut().zip(&gt) {
                        *d += v;
                    }
                }
            }
            Op::Softmax { x } => {
                if self.requires(x) {
                    let n = *self.nodes[out].tensor.shape.last().unwrap();
                    let y: Vec<f64> = self.nodes[out].tensor.data.clone();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for (row, (yrow, grow)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                        let dot: f64 = yrow.iter().zip(grow).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..n {
                            dx[row * n + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let d = *self.shape(x).last().unwrap();
                let t = self.shape(x)[0];
                let xv = self.data(x);
                let gv = self.data(gain);
                for r in 0..t {
                    let row = &xv[r * d..(r + 1) * d];
                    let grow = &g[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                    if self.requires(gain) {
                        let dg = self.slot(grads, gain).expect("requires_grad");
                        for j in 0..d {
                            dg[j] += grow[j] * xhat[j];
                        }
                    }
                    if self.requires(bias) {
                        let db = self.slot(grads, bias).expect("requires_grad");
                        for j in 0..d {
                            db[j] += grow[j];
                        }
                    }
                    if self.requires(x) {
                        let dxhat: Vec<f64> = (0..d).map(|j| grow[j] * gv[j]).collect();
                        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dxhat_xhat =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let dx = self.slot(grads, x).expect("requires_grad");
                        for j in 0..d {
                            dx[r * d + j] +=
                                inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                if self.requires(x) {
                    let xd: Vec<f64> = self.data(x).to_vec();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for ((d, v), xv) in dx.iter_mut().zip(g).zip(&xd) {
                        *d += v * gelu_deriv(*xv);
                    }
                }
            }
            Op::LogSigmoid { x } => {
                if self.requires(x) {
                    let xd: Vec<f64> = self.data(x).to_vec();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for ((d, v), xv) in dx.iter_mut().zip(g).zip(&xd) {
                        *d += v * sigmoid(-xv);
                    }
                }
            }
            Op::Abs { x } => {
                if self.requires(x) {
                    let xd: Vec<f64> = self.data(x).to_vec();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for ((d, v), xv) in dx.iter_mut().zip(g).zip(&xd) {
                        *d += v * if *xv > 0.0 {
                            1.0
                        } else if *xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            Op::Sqrt { x } => {
                if self.requires(x) {
                    // subgradient 0 at x == 0 (norms of all-zero rows)
                    let yd: Vec<f64> = self.nodes[out].tensor.data.clone();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for ((d, v), yv) in dx.iter_mut().zip(g).zip(&yd) {
                        if *yv > 0.0 {
                            *d += v / (2.0 * yv);
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = self.slot(grads, x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean { x } => {
                if self.requires(x) {
                    let n = self.nodes[x.0].tensor.numel() as f64;
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for d in dx.iter_mut() {
                        *d += g[0] / n;
                    }
                }
            }
            Op::SumAxis1 { x } => {
                if self.requires(x) {
                    let d = *self.shape(x).last().unwrap();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for (r, gv) in g.iter().enumerate() {
                        for j in 0..d {
                            dx[r * d + j] += gv;
                        }
                    }
                }
            }
            Op::MeanAxis0 { x } => {
                if self.requires(x) {
                    let t = self.shape(x)[0] as f64;
                    let d = *self.shape(x).last().unwrap();
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for r in 0..self.shape(x)[0] {
                        for j in 0..d {
                            dx[r * d + j] += g[j] / t;
                        }
                    }
                }
            }
            Op::ConcatCols { ref parts } => {
                let t = self.nodes[out].tensor.shape[0];
                let total = self.nodes[out].tensor.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.requires(p) {
                        let dp = self.slot(grads, p).expect("requires_grad");
                        for r in 0..t {
                            for j in 0..w {
                                dp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.requires(x) {
                    let d = self.shape(x)[1];
                    let t = self.shape(x)[0];
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for r in 0..t {
                        for j in 0..len {
                            dx[r * d + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::ScaleBy { x, weights, index } => {
                let w = self.data(weights)[index];
                if self.requires(x) {
                    let dx = self.slot(grads, x).expect("requires_grad");
                    for (d, v) in dx.iter_mut().zip(g) {
                        *d += v * w;
                    }
                }
                if self.requires(weights) {
                    let dot: f64 = self.data(x).iter().zip(g).map(|(xv, gv)| xv * gv).sum();
                    let dw = self.slot(grads, weights).expect("requires_grad");
                    dw[index] += dot;
                }
            }
            Op::CrossEntropy { logits, ref targets } => {
                if self.requires(logits) {
                    let (b, c) = (self.shape(logits)[0], self.shape(logits)[1]);
                    let src: Vec<f64> = self.data(logits).to_vec();
                    let dl = self.slot(grads, logits).expect("requires_grad");
                    for (r, &tgt) in targets.iter().enumerate() {
                        let row = &src[r * c..(r + 1) * c];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        let mut exps = vec![0.0; c];
                        for (j, &v) in row.iter().enumerate() {
                            exps[j] = (v - max).exp();
                            sum += exps[j];
                        }
                        for j in 0..c {
                            let soft = exps[j] / sum;
                            let onehot = if j == tgt { 1.0 } else { 0.0 };
                            dl[r * c + j] += g[0] * (soft - onehot) / b as f64;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn tensor_new_validates_shape_product() {
        let err = Tensor::new(vec![1.0, 2.0, 3.0], &[2, 2]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = g.constant(&t2(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero() {
        let mut g = Graph::new();
        let a = g.constant(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let z = g.constant(&t2(&[vec![0.0], vec![0.0]]));
        let c = g.matmul(a, z).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_hand_computed() {
        let mut g = Graph::new();
        let a = g.constant(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.constant(&t2(&[vec![5.0], vec![6.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(&[2, 3]));
        let b = g.constant(&Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "message: {msg}");
    }

    #[test]
    fn matmul_associativity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rand_mat = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
            Tensor::new((0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(), &[r, c]).unwrap()
        };
        let a = rand_mat(&mut rng, 4, 3);
        let b = rand_mat(&mut rng, 3, 5);
        let c = rand_mat(&mut rng, 5, 2);
        let mut g = Graph::new();
        let (ia, ib, ic) = (g.constant(&a), g.constant(&b), g.constant(&c));
        let ab = g.matmul(ia, ib).unwrap();
        let ab_c = g.matmul(ab, ic).unwrap();
        let bc = g.matmul(ib, ic).unwrap();
        let a_bc = g.matmul(ia, bc).unwrap();
        for (x, y) in g.value(ab_c).data().iter().zip(g.value(a_bc).data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::new(vec![0.0, 0.0], &[2]).unwrap());
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        let x = g.constant(&Tensor::new(vec![0.0, 3.0f64.ln()], &[2]).unwrap());
        let y = g.softmax(x).unwrap();
        let d = g.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_tensors_are_rejected_at_construction() {
        // softmax (and every other op) can therefore assume non-empty input
        assert!(matches!(
            Tensor::new(vec![], &[0]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Tensor::new(vec![], &[3, 0]),
            Err(Error::Dimension(_))
        ));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let mut g = Graph::new();
            let n = xs.len();
            let x = g.constant(&Tensor::new(xs, &[n]).unwrap());
            let y = g.softmax(x).unwrap();
            let sum: f64 = g.value(y).data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(g.value(y).data().iter().all(|&v| v > 0.0));
        }

        #[test]
        fn softmax_shift_invariance(xs in proptest::collection::vec(-20.0f64..20.0, 2..8), c in -30.0f64..30.0) {
            let mut g = Graph::new();
            let n = xs.len();
            let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
            let a = g.constant(&Tensor::new(xs, &[n]).unwrap());
            let b = g.constant(&Tensor::new(shifted, &[n]).unwrap());
            let ya = g.softmax(a).unwrap();
            let yb = g.softmax(b).unwrap();
            for (u, v) in g.value(ya).data().iter().zip(g.value(yb).data()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::new();
        let gain = g.constant(&Tensor::new(vec![1.0, 1.0, 1.0], &[3]).unwrap());
        let bias = g.constant(&Tensor::new(vec![0.0, 0.0, 0.0], &[3]).unwrap());

        // constant row maps to zeros
        let x = g.constant(&t2(&[vec![5.0, 5.0, 5.0]]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for v in g.value(y).data() {
            assert!(v.abs() < 1e-9);
        }

        let gain2 = g.constant(&Tensor::new(vec![1.0, 1.0], &[2]).unwrap());
        let bias2 = g.constant(&Tensor::new(vec![0.0, 0.0], &[2]).unwrap());

        // already normalized row stays put (up to eps)
        let x = g.constant(&t2(&[vec![1.0, -1.0]]));
        let y = g.layer_norm(x, gain2, bias2, 1e-5).unwrap();
        let d = g.value(y).data();
        assert!((d[0] - 1.0).abs() < 1e-4 && (d[1] + 1.0).abs() < 1e-4);

        // hand computation: mean 1, std 1
        let x = g.constant(&t2(&[vec![0.0, 2.0]]));
        let y = g.layer_norm(x, gain2, bias2, 1e-5).unwrap();
        let d = g.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-4 && (d[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_rejects_width_one() {
        let mut g = Graph::new();
        let x = g.constant(&t2(&[vec![1.0]]));
        let gain = g.constant(&Tensor::new(vec![1.0], &[1]).unwrap());
        let bias = g.constant(&Tensor::new(vec![0.0], &[1]).unwrap());
        assert!(matches!(g.layer_norm(x, gain, bias, 1e-5), Err(Error::Domain(_))));
    }

    #[test]
    fn backward_square() {
        // f(x) = x^2 at x = 3 -> grad 6
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).with_requires_grad(true));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_constant_leaves_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).with_requires_grad(true));
        let c = g.constant(&Tensor::scalar(5.0));
        // loss does not depend on x
        let y = g.mul(c, c).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(x).is_none());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn backward_product_rule() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(2.0).with_requires_grad(true));
        let y = g.leaf(&Tensor::scalar(5.0).with_requires_grad(true));
        let p = g.mul(x, y).unwrap();
        g.backward(p).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
        assert_eq!(g.grad(y).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_fan_out_accumulates_per_path() {
        // f(x) = a*x + b*x -> df/dx = a + b
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(1.5).with_requires_grad(true));
        let a = g.constant(&Tensor::scalar(3.0));
        let b = g.constant(&Tensor::scalar(4.0));
        let p1 = g.mul(a, x).unwrap();
        let p2 = g.mul(b, x).unwrap();
        let s = g.add(p1, p2).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(&t2(&[vec![1.0, 2.0]]).with_requires_grad(true));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_result_is_numeric_error() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::scalar(1.0));
        let b = g.constant(&Tensor::scalar(0.0));
        let err = g.div(a, b).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("div"));
    }

    #[test]
    fn concat_and_slice_round_trip_values() {
        let mut g = Graph::new();
        let a = g.constant(&t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.constant(&t2(&[vec![5.0], vec![6.0]]));
        let cat = g.concat_cols(&[a, b]).unwrap();
        assert_eq!(g.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = g.slice_cols(cat, 2, 1).unwrap();
        assert_eq!(g.value(back).data(), &[5.0, 6.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let logits = g.constant(&t2(&[vec![0.0, 0.0, 0.0, 0.0]]));
        let loss = g.cross_entropy(logits, &[2]).unwrap();
        assert!((g.scalar_value(loss) - 4.0f64.ln()).abs() < 1e-12);
    }
}
