//! Dynamic reverse-mode differentiation tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each primitive appends a node
//! holding its output value and enough saved state to run its backward rule;
//! parents always precede children, so a single reverse sweep visits every
//! node exactly once.

use super::array::{matmul_dims, matmul_kernel, Array};
use crate::error::{Error, Result};

/// Epsilon inside layer-norm's square root.
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowVector(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Softplus(Var),
    Log(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows {
        x: Var,
        inv_temperature: f64,
    },
    LogSoftmaxRows {
        x: Var,
        inv_temperature: f64,
        mask: Option<Vec<bool>>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Pick {
        x: Var,
        indices: Vec<usize>,
    },
    WeightedSum(Vec<(Var, f64)>),
    Im2Col3x3 {
        x: Var,
        height: usize,
        width: usize,
    },
}

struct Node {
    value: Array,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of primitive operations.
pub struct Tape {
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every `requires_grad` leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, panicking when `v` was not a differentiable leaf.
    pub fn wrt(&self, v: Var) -> &Array {
        self.get(v)
            .unwrap_or_else(|| panic!("no gradient recorded for {v:?}"))
    }

    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    /// A tape in checked mode: every op output is validated as finite.
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            checked: true,
        }
    }

    pub fn with_checks(checked: bool) -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            checked,
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, parents: &[Var]) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output of shape {:?} at tape position {}",
                value.shape(),
                self.nodes.len()
            )));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array, requires_grad: bool) -> Var {
        if requires_grad {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    fn binary_same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let av = self.value(a);
        let bv = self.value(b);
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Array::from_parts(av.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Array {
        let av = self.value(a);
        Array::from_parts(
            av.shape().to_vec(),
            av.data().iter().map(|&x| f(x)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// `x[rows × n] + b[n]`, broadcasting `b` over rows.
    pub fn add_row_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        let w = xv.row_width();
        if bv.len() != w {
            return Err(dim_err("add_row_vector", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(w) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let out = Array::from_parts(xv.shape().to_vec(), data);
        self.push(out, Op::AddRowVector(x, b), &[x, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        matmul_kernel(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.push(
            Array::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose expects a matrix, got {:?}",
                av.shape()
            )));
        }
        let (m, n) = (av.shape()[0], av.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = av.data()[i * n + j];
            }
        }
        self.push(Array::from_parts(vec![n, m], data), Op::Transpose(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, softplus);
        self.push(out, Op::Softplus(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {v}")));
        }
        let out = self.map(a, f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    /// Normalizes each row over its last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let w = *xv.shape().last().unwrap();
        if self.value(gamma).len() != w || self.value(beta).len() != w {
            return Err(dim_err("layer_norm", xv.shape(), self.shape(gamma)));
        }
        let rows = xv.len() / w;
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv.data()[r * w..(r + 1) * w];
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for (o, v) in normalized[r * w..(r + 1) * w].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = normalized.clone();
        for row in out.chunks_mut(w) {
            for ((o, gg), bb) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gg + bb;
            }
        }
        let out = Array::from_parts(xv.shape().to_vec(), out);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    fn check_matrix(&self, op: &str, a: Var) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "{op} expects a matrix, got {s:?}"
            )));
        }
        Ok((s[0], s[1]))
    }

    /// Row-wise softmax of `a / temperature`, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (m, n) = self.check_matrix("softmax_rows", a)?;
        let inv_t = 1.0 / temperature;
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &av[r * n..(r + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * n..(r + 1) * n];
            let mut z = 0.0;
            for (oo, v) in o.iter_mut().zip(row) {
                *oo = ((v - mx) * inv_t).exp();
                z += *oo;
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        self.push(
            Array::from_parts(vec![m, n], out),
            Op::SoftmaxRows {
                x: a,
                inv_temperature: inv_t,
            },
            &[a],
        )
    }

    /// Row-wise log-softmax of `a / temperature`. Entries whose mask is `false`
    /// are excluded from the normalizer; their output is 0 and receives no
    /// gradient. Every row must keep at least one entry.
    pub fn log_softmax_rows(
        &mut self,
        a: Var,
        temperature: f64,
        mask: Option<Vec<bool>>,
    ) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let (m, n) = self.check_matrix("log_softmax_rows", a)?;
        if let Some(mk) = &mask {
            if mk.len() != m * n {
                return Err(Error::Dimension(format!(
                    "mask of length {} for a {m}x{n} matrix",
                    mk.len()
                )));
            }
            for r in 0..m {
                if !mk[r * n..(r + 1) * n].iter().any(|&k| k) {
                    return Err(Error::Contract(format!("log_softmax row {r} fully masked")));
                }
            }
        }
        let keep = |i: usize| mask.as_ref().map_or(true, |mk| mk[i]);
        let inv_t = 1.0 / temperature;
        let av = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if keep(r * n + j) {
                    mx = mx.max(av[r * n + j] * inv_t);
                }
            }
            let mut z = 0.0;
            for j in 0..n {
                if keep(r * n + j) {
                    z += (av[r * n + j] * inv_t - mx).exp();
                }
            }
            let lse = mx + z.ln();
            for j in 0..n {
                if keep(r * n + j) {
                    out[r * n + j] = av[r * n + j] * inv_t - lse;
                }
            }
        }
        self.push(
            Array::from_parts(vec![m, n], out),
            Op::LogSoftmaxRows {
                x: a,
                inv_temperature: inv_t,
                mask,
            },
            &[a],
        )
    }

    /// Scales each row of a matrix to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.check_matrix("normalize_rows", a)?;
        let av = self.value(a).data();
        let mut norms = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &av[r * n..(r + 1) * n];
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nr == 0.0 {
                return Err(Error::DegenerateVector(format!(
                    "row {r} has zero norm and cannot be normalized"
                )));
            }
            norms[r] = nr;
            for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = v / nr;
            }
        }
        self.push(
            Array::from_parts(vec![m, n], out),
            Op::NormalizeRows { x: a, norms },
            &[a],
        )
    }

    /// Concatenates along the leading (token) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Parameter("concat_rows of nothing".into()))?;
        let tail: Vec<usize> = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s[1..] != tail[..] {
                return Err(dim_err("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(
            Array::from_parts(shape, data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if len == 0 || start + len > av.rows() {
            return Err(Error::Dimension(format!(
                "slice {start}..{} out of range for shape {:?}",
                start + len,
                av.shape()
            )));
        }
        let w = av.row_width();
        let data = av.data()[start * w..(start + len) * w].to_vec();
        let mut shape = av.shape().to_vec();
        shape[0] = len;
        self.push(
            Array::from_parts(shape, data),
            Op::SliceRows { x: a, start },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Array::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.sum() / av.len() as f64;
        self.push(Array::scalar(s), Op::Mean(a), &[a])
    }

    /// Picks entries by flat index into a vector.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if indices.is_empty() {
            return Err(Error::Parameter("pick of no indices".into()));
        }
        if let Some(i) = indices.iter().find(|&&i| i >= av.len()) {
            return Err(Error::Dimension(format!(
                "pick index {i} out of range for {} entries",
                av.len()
            )));
        }
        let data = indices.iter().map(|&i| av.data()[i]).collect();
        self.push(
            Array::from_parts(vec![indices.len()], data),
            Op::Pick {
                x: a,
                indices: indices.to_vec(),
            },
            &[a],
        )
    }

    /// `Σ wᵢ · xᵢ` over same-shaped operands with constant weights.
    pub fn weighted_sum(&mut self, parts: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *parts
            .first()
            .ok_or_else(|| Error::Parameter("weighted sum of nothing".into()))?;
        let shape = self.shape(first).to_vec();
        let mut data = vec![0.0; self.value(first).len()];
        for &(v, w) in parts {
            if self.shape(v) != shape.as_slice() {
                return Err(dim_err("weighted_sum", &shape, self.shape(v)));
            }
            for (o, x) in data.iter_mut().zip(self.value(v).data()) {
                *o += w * x;
            }
        }
        let vars: Vec<Var> = parts.iter().map(|p| p.0).collect();
        self.push(
            Array::from_parts(shape, data),
            Op::WeightedSum(parts.to_vec()),
            &vars,
        )
    }

    /// 3×3 zero-padded neighbourhood gather over a `[height·width × C]`
    /// feature map, producing `[height·width × 9C]` columns ordered
    /// `(dy, dx, channel)`.
    pub fn im2col3x3(&mut self, a: Var, height: usize, width: usize) -> Result<Var> {
        let (p, c) = self.check_matrix("im2col3x3", a)?;
        if p != height * width {
            return Err(Error::Dimension(format!(
                "im2col3x3: {p} rows for a {height}x{width} grid"
            )));
        }
        let av = self.value(a).data();
        let mut out = vec![0.0; p * 9 * c];
        for y in 0..height {
            for x in 0..width {
                let orow = &mut out[(y * width + x) * 9 * c..(y * width + x + 1) * 9 * c];
                for dy in 0..3 {
                    let yy = y as isize + dy as isize - 1;
                    if yy < 0 || yy >= height as isize {
                        continue;
                    }
                    for dx in 0..3 {
                        let xx = x as isize + dx as isize - 1;
                        if xx < 0 || xx >= width as isize {
                            continue;
                        }
                        let src = (yy as usize * width + xx as usize) * c;
                        let dst = (dy * 3 + dx) * c;
                        orow[dst..dst + c].copy_from_slice(&av[src..src + c]);
                    }
                }
            }
        }
        self.push(
            Array::from_parts(vec![p, 9 * c], out),
            Op::Im2Col3x3 {
                x: a,
                height,
                width,
            },
            &[a],
        )
    }

    /// Reverse sweep from a scalar `loss`. Every differentiable leaf gets a
    /// gradient (zeros when it does not influence `loss`); intermediate
    /// gradients are dropped.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }

        let mut out = Vec::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                if self.checked && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient for leaf {i}")));
                }
                out.push(Some(Array::from_parts(node.value.shape().to_vec(), g)));
            } else {
                out.push(None);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let len_of = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        let acc = accumulate(&mut grads[v.0], g.len());
                        acc.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    let acc = accumulate(&mut grads[a.0], g.len());
                    acc.iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
                if needs(*b) {
                    let acc = accumulate(&mut grads[b.0], g.len());
                    acc.iter_mut().zip(g).for_each(|(o, x)| *o -= x);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if needs(*a) {
                    let acc = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] * bv[i];
                    }
                }
                if needs(*b) {
                    let acc = accumulate(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRowVector(x, b) => {
                if needs(*x) {
                    let acc = accumulate(&mut grads[x.0], g.len());
                    acc.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if needs(*b) {
                    let w = len_of(*b);
                    let acc = accumulate(&mut grads[b.0], w);
                    for row in g.chunks(w) {
                        acc.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let acc = accumulate(&mut grads[a.0], g.len());
                    acc.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if needs(*a) {
                    // dA = dC · Bᵀ
                    let acc = accumulate(&mut grads[a.0], m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            acc[i * k + p] +=
                                grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if needs(*b) {
                    // dB = Aᵀ · dC
                    let acc = accumulate(&mut grads[b.0], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            let arow = &mut acc[p * n..(p + 1) * n];
                            arow.iter_mut().zip(grow).for_each(|(o, x)| *o += a_ip * x);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let acc = accumulate(&mut grads[a.0], m * n);
                    for i in 0..m {
                        for j in 0..n {
                            acc[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let av = self.value(*a).data();
                    let acc = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            acc[i] += g[i];
                        }
                    }
                }
            }
            Op::Softplus(a) => {
                if needs(*a) {
                    let av = self.value(*a).data();
                    let acc = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] * sigmoid(av[i]);
                    }
                }
            }
            Op::Log(a) => {
                if needs(*a) {
                    let av = self.value(*a).data();
                    let acc = accumulate(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        acc[i] += g[i] / av[i];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let w = len_of(*gamma);
                let gv = self.value(*gamma).data();
                if needs(*gamma) {
                    let acc = accumulate(&mut grads[gamma.0], w);
                    for (grow, nrow) in g.chunks(w).zip(normalized.chunks(w)) {
                        for j in 0..w {
                            acc[j] += grow[j] * nrow[j];
                        }
                    }
                }
                if needs(*beta) {
                    let acc = accumulate(&mut grads[beta.0], w);
                    for grow in g.chunks(w) {
                        acc.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                }
                if needs(*x) {
                    let acc = accumulate(&mut grads[x.0], g.len());
                    let mut dn = vec![0.0; w];
                    for (r, is) in inv_std.iter().enumerate() {
                        let grow = &g[r * w..(r + 1) * w];
                        let nrow = &normalized[r * w..(r + 1) * w];
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for j in 0..w {
                            dn[j] = grow[j] * gv[j];
                            mean_dn += dn[j];
                            mean_dn_n += dn[j] * nrow[j];
                        }
                        mean_dn /= w as f64;
                        mean_dn_n /= w as f64;
                        let arow = &mut acc[r * w..(r + 1) * w];
                        for j in 0..w {
                            arow[j] += is * (dn[j] - mean_dn - nrow[j] * mean_dn_n);
                        }
                    }
                }
            }
            Op::SoftmaxRows { x, inv_temperature } => {
                if needs(*x) {
                    let y = node.value.data();
                    let n = node.value.shape()[1];
                    let acc = accumulate(&mut grads[x.0], g.len());
                    for r in 0..node.value.shape()[0] {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            acc[r * n + j] += inv_temperature * yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows {
                x,
                inv_temperature,
                mask,
            } => {
                if needs(*x) {
                    let y = node.value.data();
                    let n = node.value.shape()[1];
                    let keep = |i: usize| mask.as_ref().map_or(true, |mk| mk[i]);
                    let acc = accumulate(&mut grads[x.0], g.len());
                    for r in 0..node.value.shape()[0] {
                        let mut gsum = 0.0;
                        for j in 0..n {
                            if keep(r * n + j) {
                                gsum += g[r * n + j];
                            }
                        }
                        for j in 0..n {
                            let i = r * n + j;
                            if keep(i) {
                                acc[i] += inv_temperature * (g[i] - y[i].exp() * gsum);
                            }
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                if needs(*x) {
                    let y = node.value.data();
                    let n = node.value.shape()[1];
                    let acc = accumulate(&mut grads[x.0], g.len());
                    for (r, nr) in norms.iter().enumerate() {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            acc[r * n + j] += (gr[j] - yr[j] * dot) / nr;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let l = len_of(*p);
                    if needs(*p) {
                        let acc = accumulate(&mut grads[p.0], l);
                        acc.iter_mut()
                            .zip(&g[offset..offset + l])
                            .for_each(|(o, v)| *o += v);
                    }
                    offset += l;
                }
            }
            Op::SliceRows { x, start } => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let w = xv.row_width();
                    let acc = accumulate(&mut grads[x.0], xv.len());
                    acc[start * w..start * w + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, v)| *o += v);
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    let acc = accumulate(&mut grads[a.0], g.len());
                    acc.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let l = len_of(*a);
                    let acc = accumulate(&mut grads[a.0], l);
                    acc.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let l = len_of(*a);
                    let acc = accumulate(&mut grads[a.0], l);
                    let s = g[0] / l as f64;
                    acc.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::Pick { x, indices } => {
                if needs(*x) {
                    let acc = accumulate(&mut grads[x.0], len_of(*x));
                    for (k, &i) in indices.iter().enumerate() {
                        acc[i] += g[k];
                    }
                }
            }
            Op::WeightedSum(parts) => {
                for &(v, w) in parts {
                    if needs(v) {
                        let acc = accumulate(&mut grads[v.0], g.len());
                        acc.iter_mut().zip(g).for_each(|(o, x)| *o += w * x);
                    }
                }
            }
            Op::Im2Col3x3 { x, height, width } => {
                if needs(*x) {
                    let c = self.shape(*x)[1];
                    let (height, width) = (*height, *width);
                    let acc = accumulate(&mut grads[x.0], height * width * c);
                    for y in 0..height {
                        for xx0 in 0..width {
                            let grow = &g[(y * width + xx0) * 9 * c..(y * width + xx0 + 1) * 9 * c];
                            for dy in 0..3 {
                                let yy = y as isize + dy as isize - 1;
                                if yy < 0 || yy >= height as isize {
                                    continue;
                                }
                                for dx in 0..3 {
                                    let xx = xx0 as isize + dx as isize - 1;
                                    if xx < 0 || xx >= width as isize {
                                        continue;
                                    }
                                    let dst = (yy as usize * width + xx as usize) * c;
                                    let src = (dy * 3 + dx) * c;
                                    for ch in 0..c {
                                        acc[dst + ch] += grow[src + ch];
                                    }
                                }
                            }
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

    fn scalar_fn(tape: &mut Tape, x: Var) -> Var {
        let sq = tape.mul(x, x).unwrap();
        tape.sum(sq).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Array::scalar(3.0));
        let loss = scalar_fn(&mut tape, x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Array::full(&[2, 3, 4], 0.7));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x), &Array::ones(&[2, 3, 4]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Array::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Array::ones(&[2]));
        let y = tape.param(Array::ones(&[3]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(y), &Array::zeros(&[3]));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Array::matrix(2, 3, vec![0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]).unwrap());
        let s = tape.softmax_rows(a, 1.0).unwrap();
        let v = tape.value(s).data().to_vec();
        for p in &v[..3] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v[3] - 1.0).abs() < 1e-12 && v[4] < 1e-300);

        let b = tape.constant(Array::matrix(1, 2, vec![2f64.ln(), 0.0]).unwrap());
        let s = tape.softmax_rows(b, 1.0).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);

        assert!(matches!(
            tape.softmax_rows(b, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            tape.softmax_rows(b, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn checked_mode_rejects_overflow() {
        let mut tape = Tape::new();
        let x = tape.constant(Array::scalar(1e200));
        let y = tape.mul(x, x);
        assert!(matches!(y, Err(Error::Numeric(_))));

        let mut unchecked = Tape::with_checks(false);
        let x = unchecked.constant(Array::scalar(1e200));
        assert!(unchecked.mul(x, x).is_ok());
    }

    #[test]
    fn concat_then_slice_is_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(Array::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap());
        let b = tape.constant(Array::matrix(4, 3, (6..18).map(f64::from).collect()).unwrap());
        let c = tape.concat_rows(&[a, b]).unwrap();
        let a2 = tape.slice_rows(c, 0, 2).unwrap();
        let b2 = tape.slice_rows(c, 2, 4).unwrap();
        assert!(tape.value(a2).bit_eq(tape.value(a)));
        assert!(tape.value(b2).bit_eq(tape.value(b)));
        assert!(tape.slice_rows(c, 5, 2).is_err());
    }

    #[test]
    fn normalize_zero_row_is_degenerate() {
        let mut tape = Tape::new();
        let a = tape.constant(Array::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        assert!(matches!(
            tape.normalize_rows(a),
            Err(Error::DegenerateVector(_))
        ));
    }
}
