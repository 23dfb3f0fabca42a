use super::tensor::{gemm, gemm_nt, gemm_tn, transpose, Tensor};
use super::NumericsError;

type Result<T> = std::result::Result<T, NumericsError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    ShiftedSoftplus(Var),
    Abs(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    ScatterSum(Var, Vec<usize>),
    ConcatCols(Var, Var),
    Interpolate { from: Var, to: Var, weight: Var },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order, so the node index is a
/// topological order; [`Tape::backward`] walks it in reverse exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every differentiable node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(NumericsError::Rank {
            op,
            shape: t.shape().to_vec(),
        }),
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(0.5 e^x + 0.5)`, evaluated as `softplus(x) - ln 2` without overflow.
pub(crate) fn shifted_softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = matrix("matmul", ta)?;
        let (k2, p) = matrix("matmul", tb)?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = Tensor::new(vec![m, p], gemm(ta.data(), tb.data(), m, k, p))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = matrix("transpose", ta)?;
        let out = Tensor::new(vec![c, r], transpose(ta.data(), r, c))?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// `x * w^T`, the usual dense layer with `w` stored `out x in`.
    pub fn linear_t(&mut self, x: Var, w: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        self.matmul(x, wt)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`p` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, c) = ta.rows_cols().ok_or_else(|| shape_err("add_row", ta, tb))?;
        if tb.len() != c || tb.rank() > 2 {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow(a, bias), &[a, bias])
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(a).map(|x| scale * x + shift);
        self.push("affine", out, Op::Affine(a, scale), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid_scalar);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn shifted_softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(shifted_softplus_scalar);
        self.push("shifted_softplus", out, Op::ShiftedSoftplus(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        self.push("abs", out, Op::Abs(a), &[a])
    }

    /// Row-wise layer normalization with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let (rows, n) = tx
            .rows_cols()
            .ok_or_else(|| shape_err("layer_norm", tx, self.value(gamma)))?;
        if n < 2 {
            return Err(NumericsError::Degenerate {
                op: "layer_norm",
                reason: "needs at least two features per row".into(),
            });
        }
        if eps <= 0.0 {
            return Err(NumericsError::Degenerate {
                op: "layer_norm",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        for p in [gamma, beta] {
            if self.value(p).len() != n {
                return Err(shape_err("layer_norm", tx, self.value(p)));
            }
        }
        let (tg, tb) = (self.value(gamma), self.value(beta));
        let mut xhat = Vec::with_capacity(rows * n);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * tg.data()[j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Selects rows of `x` by index (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, c) = matrix("gather_rows", tx)?;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= rows {
                return Err(NumericsError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            data.extend_from_slice(&tx.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        self.push("gather_rows", out, Op::GatherRows(x, index.to_vec()), &[x])
    }

    /// Sums message rows into `n_nodes` output rows by target index.
    ///
    /// Each output row accumulates its messages in ascending message order.
    pub fn scatter_sum(&mut self, messages: Var, targets: &[usize], n_nodes: usize) -> Result<Var> {
        let out = scatter_sum(self.value(messages), targets, n_nodes)?;
        self.push("scatter_sum", out, Op::ScatterSum(messages, targets.to_vec()), &[messages])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, ca) = matrix("concat_cols", ta)?;
        let (rb, cb) = matrix("concat_cols", tb)?;
        if ra != rb {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::new(vec![ra, ca + cb], data)?;
        self.push("concat_cols", out, Op::ConcatCols(a, b), &[a, b])
    }

    /// `from + weight * (to - from)`, elementwise, clamped to the closed
    /// interval spanned by `from` and `to` so rounding never leaves it.
    pub fn interpolate(&mut self, from: Var, to: Var, weight: Var) -> Result<Var> {
        let (tf, tt, tw) = (self.value(from), self.value(to), self.value(weight));
        if tf.shape() != tt.shape() {
            return Err(shape_err("interpolate", tf, tt));
        }
        if tf.shape() != tw.shape() {
            return Err(shape_err("interpolate", tf, tw));
        }
        let data = tf
            .data()
            .iter()
            .zip(tt.data())
            .zip(tw.data())
            .map(|((&a, &b), &w)| (a + w * (b - a)).clamp(a.min(b), a.max(b)))
            .collect();
        let out = Tensor::new(tf.shape().to_vec(), data)?;
        self.push("interpolate", out, Op::Interpolate { from, to, weight }, &[from, to, weight])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(NumericsError::Degenerate {
                op: "mean",
                reason: "empty tensor".into(),
            });
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(NumericsError::NotScalar {
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out_val.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let shaped = |like: &Tensor, data: Vec<f64>| {
            Tensor::new(like.shape().to_vec(), data).expect("gradient shape follows its value")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let p = tb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let da = gemm_nt(gout.data(), tb.data(), m, p, k);
                    self.accumulate(grads, *a, shaped(ta, da));
                }
                if self.nodes[b.0].requires_grad {
                    let db = gemm_tn(ta.data(), gout.data(), m, k, p);
                    self.accumulate(grads, *b, shaped(tb, db));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let g = transpose(gout.data(), r, c);
                self.accumulate(grads, *a, shaped(self.value(*a), g));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = gout.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let db = gout.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, shaped(ta, da));
                self.accumulate(grads, *b, shaped(tb, db));
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, gout.clone());
                let tb = self.value(*bias);
                let c = tb.len();
                let mut db = vec![0.0; c];
                for row in gout.data().chunks(c) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                self.accumulate(grads, *bias, shaped(tb, db));
            }
            Op::Affine(a, scale) => {
                self.accumulate(grads, *a, gout.map(|g| g * scale));
            }
            Op::Sigmoid(a) => {
                let d = gout
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *a, shaped(gout, d));
            }
            Op::ShiftedSoftplus(a) => {
                let tx = self.value(*a);
                let d = gout
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &x)| g * sigmoid_scalar(x))
                    .collect();
                self.accumulate(grads, *a, shaped(tx, d));
            }
            Op::Abs(a) => {
                let tx = self.value(*a);
                let d = gout
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, shaped(tx, d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tx = self.value(*x);
                let tg = self.value(*gamma);
                let n = tg.len();
                let mut dx = vec![0.0; tx.len()];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for (r, inv) in inv_std.iter().enumerate() {
                    let go = &gout.data()[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..n {
                        dgamma[j] += go[j] * xh[j];
                        dbeta[j] += go[j];
                        let dxh = go[j] * tg.data()[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let nf = n as f64;
                    for j in 0..n {
                        let dxh = go[j] * tg.data()[j];
                        dx[r * n + j] = inv / nf * (nf * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                self.accumulate(grads, *x, shaped(tx, dx));
                self.accumulate(grads, *gamma, shaped(tg, dgamma));
                let tb = self.value(*beta);
                self.accumulate(grads, *beta, shaped(tb, dbeta));
            }
            Op::GatherRows(x, index) => {
                let tx = self.value(*x);
                let c = tx.shape()[1];
                let mut d = vec![0.0; tx.len()];
                for (e, &i) in index.iter().enumerate() {
                    for (o, g) in d[i * c..(i + 1) * c].iter_mut().zip(&gout.data()[e * c..(e + 1) * c]) {
                        *o += g;
                    }
                }
                self.accumulate(grads, *x, shaped(tx, d));
            }
            Op::ScatterSum(messages, targets) => {
                let tm = self.value(*messages);
                let c = tm.shape()[1];
                let mut d = Vec::with_capacity(tm.len());
                for &t in targets {
                    d.extend_from_slice(&gout.data()[t * c..(t + 1) * c]);
                }
                self.accumulate(grads, *messages, shaped(tm, d));
            }
            Op::ConcatCols(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (ca, cb) = (ta.shape()[1], tb.shape()[1]);
                let mut da = Vec::with_capacity(ta.len());
                let mut db = Vec::with_capacity(tb.len());
                for row in gout.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, shaped(ta, da));
                self.accumulate(grads, *b, shaped(tb, db));
            }
            Op::Interpolate { from, to, weight } => {
                let (tf, tt, tw) = (self.value(*from), self.value(*to), self.value(*weight));
                let mut df = Vec::with_capacity(tf.len());
                let mut dt = Vec::with_capacity(tf.len());
                let mut dw = Vec::with_capacity(tf.len());
                for (((g, a), b), w) in gout.data().iter().zip(tf.data()).zip(tt.data()).zip(tw.data()) {
                    df.push(g * (1.0 - w));
                    dt.push(g * w);
                    dw.push(g * (b - a));
                }
                self.accumulate(grads, *from, shaped(tf, df));
                self.accumulate(grads, *to, shaped(tt, dt));
                self.accumulate(grads, *weight, shaped(tw, dw));
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(ta.shape(), gout.data()[0]));
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                let g = gout.data()[0] / ta.len() as f64;
                self.accumulate(grads, *a, Tensor::filled(ta.shape(), g));
            }
        }
    }
}

/// Tape-free scatter sum, shared by the recorded op and by inference paths.
pub fn scatter_sum(messages: &Tensor, targets: &[usize], n_nodes: usize) -> Result<Tensor> {
    let (e, c) = matrix("scatter_sum", messages)?;
    if targets.len() != e {
        return Err(NumericsError::Shape {
            op: "scatter_sum",
            left: messages.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let mut out = vec![0.0; n_nodes * c];
    for (m, &t) in targets.iter().enumerate() {
        if t >= n_nodes {
            return Err(NumericsError::Index {
                op: "scatter_sum",
                index: t,
                bound: n_nodes,
            });
        }
        let src = &messages.data()[m * c..(m + 1) * c];
        for (o, v) in out[t * c..(t + 1) * c].iter_mut().zip(src) {
            *o += v;
        }
    }
    Tensor::new(vec![n_nodes, c], out)
}
