use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Act(Var, Activation),
    Exp(Var),
    Softmax { input: Var, axis: usize },
    LogSoftmax { input: Var, axis: usize },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout { input: Var, mask: Vec<f64> },
    GatherRows { input: Var, rows: Vec<usize> },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    RepeatRows(Var),
    Sum(Vec<Var>),
    SumAll(Var),
    MeanRows(Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    Pick { input: Var, flat: Vec<usize> },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of primitive applications for one forward pass.
///
/// Nodes are appended in evaluation order, so the tape is topologically sorted
/// by construction. A graph supports exactly one [`Graph::backward`] call.
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    param_sizes: Vec<usize>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            param_sizes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut value = value;
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.rows_cols()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Records a leaf; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// Constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        if self.param_sizes.len() < store.len() {
            self.param_sizes = store.iter().map(|(_, _, t)| t.numel()).collect();
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), rg))
    }

    /// `x · wᵀ + b` for `x[m×k]`, `w[n×k]`, `b[n]` or `b[1×n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        self.add_row(y, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), rg))
    }

    /// Broadcast-add a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).numel() != n {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.data(row);
        let mut out = self.data(a).to_vec();
        for i in 0..m {
            for (o, &rv) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += rv;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x + c).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::AddScalar(a), rg)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .map(|&x| match act {
                Activation::Gelu => gelu(x),
                Activation::Relu => x.max(0.0),
            })
            .collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Act(a, act), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x.exp()).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Exp(a), rg)
    }

    fn axis_layout(&self, a: Var, axis: usize) -> Result<(usize, usize, usize)> {
        let s = self.shape(a);
        if axis >= s.len() {
            return Err(Error::config(format!("axis {axis} out of range for shape {s:?}")));
        }
        let outer = s[..axis].iter().product();
        let inner = s[axis + 1..].iter().product();
        Ok((outer, s[axis], inner))
    }

    fn check_finite(&self, a: Var, op: &str) -> Result<()> {
        if !self.value(a).is_finite() {
            return Err(Error::NonFinite(format!("{op} input")));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_finite(a, "softmax")?;
        let layout = self.axis_layout(a, axis)?;
        let mut out = self.data(a).to_vec();
        for_each_lane(&mut out, layout, |lane| {
            let max = lane.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for x in lane.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            lane.iter_mut().for_each(|x| *x /= sum);
        });
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { input: a, axis }, rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_finite(a, "log_softmax")?;
        let layout = self.axis_layout(a, axis)?;
        let mut out = self.data(a).to_vec();
        for_each_lane(&mut out, layout, |lane| {
            let max = lane.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + lane.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            lane.iter_mut().for_each(|x| *x -= lse);
        });
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::LogSoftmax { input: a, axis }, rg))
    }

    /// Row-wise layer normalization with affine `gain`/`bias` of width `cols`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::config("layer_norm eps must be positive"));
        }
        let (m, n) = self.dims(x);
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let src = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity when `p == 0` or outside training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability must be in [0,1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dropout { input: a, mask }, rg))
    }

    /// Selects rows (with repetition allowed) of a matrix.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if rows.is_empty() {
            return Err(Error::config("gather_rows needs at least one row"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: self.shape(a).to_vec(),
                rhs: vec![bad],
            });
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), n], out),
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: self.shape(a).to_vec(),
                rhs: vec![start, len],
            });
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, len], out), Op::SliceCols { input: a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => self.dims(p).0,
            None => return Err(Error::config("concat_cols of nothing")),
        };
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != m) {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: self.shape(parts[0]).to_vec(),
                rhs: self.shape(bad).to_vec(),
            });
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let n = self.dims(p).1;
                out.extend_from_slice(&self.data(p)[i * n..(i + 1) * n]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![m, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Tiles a single row `times` times into `[times × n]`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m != 1 || times == 0 {
            return Err(Error::Shape {
                op: "repeat_rows",
                lhs: self.shape(a).to_vec(),
                rhs: vec![times],
            });
        }
        let out = self.data(a).repeat(times);
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![times, n], out), Op::RepeatRows(a), rg))
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::config("sum of nothing"))?;
        for &p in &parts[1..] {
            self.same_shape("sum", first, p)?;
        }
        let mut out = vec![0.0; self.value(first).numel()];
        for &p in parts {
            for (o, v) in out.iter_mut().zip(self.data(p)) {
                *o += v;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let shape = self.shape(first).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Sum(parts.to_vec()), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Column-wise mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.data(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|x| *x /= m as f64);
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![1, n], out), Op::MeanRows(a), rg)
    }

    /// Column-wise max over rows: `[m×n] → [1×n]`. Ties go to the earliest row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.data(a);
        let mut out = src[..n].to_vec();
        let mut argmax = vec![0usize; n];
        for i in 1..m {
            for j in 0..n {
                let v = src[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![1, n], out), Op::MaxRows { input: a, argmax }, rg)
    }

    /// Gathers individual `(row, col)` entries into a `[k]` vector.
    pub fn pick(&mut self, a: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if entries.is_empty() {
            return Err(Error::config("pick needs at least one entry"));
        }
        let mut flat = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            if r >= m || c >= n {
                return Err(Error::Shape {
                    op: "pick",
                    lhs: self.shape(a).to_vec(),
                    rhs: vec![r, c],
                });
            }
            flat.push(r * n + c);
        }
        let src = self.data(a);
        let out: Vec<f64> = flat.iter().map(|&i| src[i]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![out.len()], out), Op::Pick { input: a, flat }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.data(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::Reshape(a), rg))
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Every reachable node that requires a gradient gets its `grad` buffer
    /// filled; parameter gradients are returned sized to the largest store
    /// seen by [`Graph::param`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Graph("backward called twice on the same graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        let mut param_grads: Vec<Vec<f64>> = Vec::new();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            if let Op::Param(pid) = self.nodes[idx].op {
                if param_grads.len() <= pid.0 {
                    param_grads.resize(pid.0 + 1, Vec::new());
                }
                param_grads[pid.0] = g.clone();
            }
            self.nodes[idx].value.grad = Some(g);
        }

        let out = self
            .param_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| match param_grads.get_mut(i) {
                Some(g) if !g.is_empty() => std::mem::take(g),
                _ => vec![0.0; n],
            })
            .collect();
        Ok(Gradients::from_vecs(out))
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.rg(*a) {
                    let buf = self.buf(grads, *a);
                    gemm_nt_acc(g, self.data(*b), buf, m, n, k);
                }
                if self.rg(*b) {
                    let buf = self.buf(grads, *b);
                    gemm_tn_acc(self.data(*a), g, buf, m, k, n);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let buf = self.buf(grads, *a);
                for i in 0..m {
                    for j in 0..n {
                        buf[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_into(self.buf(grads, v), g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    add_into(self.buf(grads, *a), g);
                }
                if self.rg(*row) {
                    let (m, n) = self.dims(*a);
                    let buf = self.buf(grads, *row);
                    for i in 0..m {
                        add_into(buf, &g[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let other = self.data(*b);
                    let buf = self.buf(grads, *a);
                    for ((o, gv), bv) in buf.iter_mut().zip(g).zip(other) {
                        *o += gv * bv;
                    }
                }
                if self.rg(*b) {
                    let other = self.data(*a);
                    let buf = self.buf(grads, *b);
                    for ((o, gv), av) in buf.iter_mut().zip(g).zip(other) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                let buf = self.buf(grads, *a);
                for (o, gv) in buf.iter_mut().zip(g) {
                    *o += gv * c;
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => add_into(self.buf(grads, *a), g),
            Op::Act(a, act) => {
                let x = self.data(*a);
                let buf = self.buf(grads, *a);
                for ((o, gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                    let d = match act {
                        Activation::Gelu => gelu_grad(xv),
                        Activation::Relu => {
                            if xv > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    *o += gv * d;
                }
            }
            Op::Exp(a) => {
                let buf = self.buf(grads, *a);
                for ((o, gv), y) in buf.iter_mut().zip(g).zip(out) {
                    *o += gv * y;
                }
            }
            Op::Softmax { input, axis } => {
                let layout = self.axis_layout(*input, *axis).expect("recorded axis");
                let mut d = vec![0.0; g.len()];
                for_each_lane_idx(layout, |ix| {
                    let dot: f64 = ix.clone().map(|i| g[i] * out[i]).sum();
                    for i in ix {
                        d[i] = out[i] * (g[i] - dot);
                    }
                });
                add_into(self.buf(grads, *input), &d);
            }
            Op::LogSoftmax { input, axis } => {
                let layout = self.axis_layout(*input, *axis).expect("recorded axis");
                let mut d = vec![0.0; g.len()];
                for_each_lane_idx(layout, |ix| {
                    let gsum: f64 = ix.clone().map(|i| g[i]).sum();
                    for i in ix {
                        d[i] = g[i] - out[i].exp() * gsum;
                    }
                });
                add_into(self.buf(grads, *input), &d);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*input);
                if self.rg(*gain) {
                    let buf = self.buf(grads, *gain);
                    for i in 0..m {
                        for j in 0..n {
                            buf[j] += g[i * n + j] * xhat[i * n + j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let buf = self.buf(grads, *bias);
                    for i in 0..m {
                        add_into(buf, &g[i * n..(i + 1) * n]);
                    }
                }
                if self.rg(*input) {
                    let gain_v = self.data(*gain);
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let row = i * n..(i + 1) * n;
                        let dxhat: Vec<f64> = g[row.clone()]
                            .iter()
                            .zip(gain_v)
                            .map(|(gv, gn)| gv * gn)
                            .collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxhat
                            .iter()
                            .zip(&xhat[row.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / n as f64;
                        for j in 0..n {
                            d[i * n + j] =
                                inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
                        }
                    }
                    add_into(self.buf(grads, *input), &d);
                }
            }
            Op::Dropout { input, mask } => {
                let buf = self.buf(grads, *input);
                for ((o, gv), mv) in buf.iter_mut().zip(g).zip(mask) {
                    *o += gv * mv;
                }
            }
            Op::GatherRows { input, rows } => {
                let n = self.dims(*input).1;
                let buf = self.buf(grads, *input);
                for (k, &r) in rows.iter().enumerate() {
                    add_into(&mut buf[r * n..(r + 1) * n], &g[k * n..(k + 1) * n]);
                }
            }
            Op::SliceCols { input, start } => {
                let (m, n) = self.dims(*input);
                let len = g.len() / m;
                let buf = self.buf(grads, *input);
                for i in 0..m {
                    add_into(
                        &mut buf[i * n + start..i * n + start + len],
                        &g[i * len..(i + 1) * len],
                    );
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.rows_cols().1;
                let m = node.value.rows_cols().0;
                let mut offset = 0;
                for &p in parts {
                    let n = self.dims(p).1;
                    if self.rg(p) {
                        let buf = self.buf(grads, p);
                        for i in 0..m {
                            add_into(
                                &mut buf[i * n..(i + 1) * n],
                                &g[i * total + offset..i * total + offset + n],
                            );
                        }
                    }
                    offset += n;
                }
            }
            Op::RepeatRows(a) => {
                let n = self.dims(*a).1;
                let buf = self.buf(grads, *a);
                for chunk in g.chunks(n) {
                    add_into(buf, chunk);
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    if self.rg(p) {
                        add_into(self.buf(grads, p), g);
                    }
                }
            }
            Op::SumAll(a) => {
                let buf = self.buf(grads, *a);
                buf.iter_mut().for_each(|o| *o += g[0]);
            }
            Op::MeanRows(a) => {
                let (m, n) = self.dims(*a);
                let buf = self.buf(grads, *a);
                for i in 0..m {
                    for j in 0..n {
                        buf[i * n + j] += g[j] / m as f64;
                    }
                }
            }
            Op::MaxRows { input, argmax } => {
                let n = self.dims(*input).1;
                let buf = self.buf(grads, *input);
                for (j, &r) in argmax.iter().enumerate() {
                    buf[r * n + j] += g[j];
                }
            }
            Op::Pick { input, flat } => {
                let buf = self.buf(grads, *input);
                for (k, &i) in flat.iter().enumerate() {
                    buf[i] += g[k];
                }
            }
        }
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn for_each_lane(data: &mut [f64], (outer, n, inner): (usize, usize, usize), mut f: impl FnMut(&mut [f64])) {
    let mut lane = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for k in 0..n {
                lane[k] = data[base + k * inner];
            }
            f(&mut lane);
            for k in 0..n {
                data[base + k * inner] = lane[k];
            }
        }
    }
}

fn for_each_lane_idx(
    (outer, n, inner): (usize, usize, usize),
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            f((base..base + n * inner).step_by(inner));
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
