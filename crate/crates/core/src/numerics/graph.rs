use std::collections::BTreeMap;
use std::sync::Arc;

use super::backend::Backend;
use super::kernels::{self, Discretization, ScanDims, ScanGrads};
use super::ops::{self, BatchNormMode, BatchStats, ScanInputs, Unary};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBroadcast(Var, Var),
    MulPrefix(Var, Var),
    Unary(Var, Unary),
    LayerNorm(Var, Var, Var),
    BatchNormTrain(Var, Var, Var),
    BatchNormEval { x: Var, gain: Var, bias: Var, mean: Vec<f64>, var: Vec<f64> },
    CausalConv(Var, Var),
    Scan { x: Var, delta: Var, a: Var, b: Var, c: Var, skip: Var, mode: Discretization },
    ReverseTime(Var),
    ConcatLast(Vec<Var>),
    WrapTokens(Var, Var, Option<Var>),
    TakeRows(Var),
    MeanTime(Var),
    SampleMean(Var),
    StackColumns(Vec<Var>),
    Column(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape of primitive operations.
///
/// Nodes are stored in creation order, which is a topological order since
/// an op can only reference nodes that already exist.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    /// Gradient of `v`, or zeros of its shape when no path reaches it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_leaf(Arc::new(t), true)
    }

    fn push_leaf(&mut self, t: Arc<Tensor>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Parameters bound into this graph so far, in id order.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn t(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Reverse sweep from a scalar `loss`; every node is visited once, in
    /// reverse creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.t(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.t(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (v, contrib) in self.local_grads(node, &g) {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn zeros_like(&self, v: Var) -> Vec<f64> {
        vec![0.0; self.t(v).len()]
    }

    fn local_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.t(a), self.t(b));
                let (m, k, n) = ops::matmul_dims(ta, tb).expect("validated in forward");
                if self.wants(a) {
                    let mut ga = self.zeros_like(a);
                    kernels::matmul_backward(m, k, n, ta.data(), tb.data(), g, Some(&mut ga), None);
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = self.zeros_like(b);
                    kernels::matmul_backward(m, k, n, ta.data(), tb.data(), g, None, Some(&mut gb));
                    out.push((b, gb));
                }
            }
            &Op::Add(a, b) => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (self.t(a).data(), self.t(b).data());
                out.push((a, g.iter().zip(tb).map(|(g, y)| g * y).collect()));
                out.push((b, g.iter().zip(ta).map(|(g, x)| g * x).collect()));
            }
            &Op::Scale(x, c) => out.push((x, g.iter().map(|v| v * c).collect())),
            &Op::AddBroadcast(x, y) => {
                out.push((x, g.to_vec()));
                if self.wants(y) {
                    let mut gy = self.zeros_like(y);
                    for chunk in g.chunks(gy.len()) {
                        gy.iter_mut().zip(chunk).for_each(|(a, c)| *a += c);
                    }
                    out.push((y, gy));
                }
            }
            &Op::MulPrefix(x, w) => {
                let (tx, tw) = (self.t(x).data(), self.t(w).data());
                let inner = tx.len() / tw.len();
                if self.wants(x) {
                    let gx = g
                        .chunks(inner)
                        .zip(tw)
                        .flat_map(|(c, &s)| c.iter().map(move |v| v * s))
                        .collect();
                    out.push((x, gx));
                }
                if self.wants(w) {
                    let gw = g
                        .chunks(inner)
                        .zip(tx.chunks(inner))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                        .collect();
                    out.push((w, gw));
                }
            }
            &Op::Unary(x, kind) => {
                let mut gx = vec![0.0; g.len()];
                kind.grad_slice(self.t(x).data(), node.value.data(), g, &mut gx);
                out.push((x, gx));
            }
            &Op::LayerNorm(x, gain, bias) => {
                let tx = self.t(x);
                let dim = tx.last_dim();
                let mut xhat = vec![0.0; tx.len()];
                let inv = kernels::normalize_rows(tx.data(), dim, &mut xhat);
                let gd = self.t(gain).data();
                if self.wants(x) {
                    let gxhat: Vec<f64> = g
                        .chunks(dim)
                        .flat_map(|row| row.iter().zip(gd).map(|(a, b)| a * b))
                        .collect();
                    let mut gx = vec![0.0; tx.len()];
                    kernels::normalize_rows_backward(&xhat, &inv, dim, &gxhat, &mut gx);
                    out.push((x, gx));
                }
                out.push((gain, column_sums(dim, g.iter().zip(&xhat).map(|(a, b)| a * b))));
                out.push((bias, column_sums(dim, g.iter().copied())));
            }
            &Op::BatchNormTrain(x, gain, bias) => {
                let tx = self.t(x);
                let (rows, f) = (tx.shape()[0], tx.shape()[1]);
                let xt = kernels::transpose(rows, f, tx.data());
                let mut xhat_t = vec![0.0; xt.len()];
                let inv = kernels::normalize_rows(&xt, rows, &mut xhat_t);
                let xhat = kernels::transpose(f, rows, &xhat_t);
                let gd = self.t(gain).data();
                if self.wants(x) {
                    let gt = kernels::transpose(rows, f, g);
                    let gxhat_t: Vec<f64> = gt
                        .chunks(rows)
                        .zip(gd)
                        .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
                        .collect();
                    let mut gx_t = vec![0.0; xt.len()];
                    kernels::normalize_rows_backward(&xhat_t, &inv, rows, &gxhat_t, &mut gx_t);
                    out.push((x, kernels::transpose(f, rows, &gx_t)));
                }
                out.push((gain, column_sums(f, g.iter().zip(&xhat).map(|(a, b)| a * b))));
                out.push((bias, column_sums(f, g.iter().copied())));
            }
            Op::BatchNormEval { x, gain, bias, mean, var } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let tx = self.t(x).data();
                let f = mean.len();
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + kernels::NORM_EPS).sqrt()).collect();
                let gd = self.t(gain).data();
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(i, gv)| gv * gd[i % f] * inv[i % f])
                    .collect();
                out.push((x, gx));
                let xhat = tx.iter().enumerate().map(|(i, v)| (v - mean[i % f]) * inv[i % f]);
                out.push((gain, column_sums(f, g.iter().zip(xhat).map(|(a, b)| a * b))));
                out.push((bias, column_sums(f, g.iter().copied())));
            }
            &Op::CausalConv(x, w) => {
                let (tx, tw) = (self.t(x), self.t(w));
                let (b, t, c) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let k = tw.shape()[1];
                let mut gx = self.wants(x).then(|| self.zeros_like(x));
                let mut gw = self.wants(w).then(|| self.zeros_like(w));
                kernels::causal_conv_backward(b, t, c, k, tx.data(), tw.data(), g, gx.as_deref_mut(), gw.as_deref_mut());
                out.extend(gx.map(|v| (x, v)));
                out.extend(gw.map(|v| (w, v)));
            }
            &Op::Scan { x, delta, a, b, c, skip, mode } => {
                let inputs = ScanInputs {
                    x: self.t(x),
                    delta: self.t(delta),
                    a: self.t(a),
                    b: self.t(b),
                    c: self.t(c),
                    skip: self.t(skip),
                };
                let dims: ScanDims = ops::scan_dims(&inputs).expect("validated in forward");
                let mut gx = self.zeros_like(x);
                let mut gd = self.zeros_like(delta);
                let mut ga = self.zeros_like(a);
                let mut gb = self.zeros_like(b);
                let mut gc = self.zeros_like(c);
                let mut gs = self.zeros_like(skip);
                kernels::selective_scan_backward(
                    dims,
                    mode,
                    inputs.x.data(),
                    inputs.delta.data(),
                    inputs.a.data(),
                    inputs.b.data(),
                    inputs.c.data(),
                    inputs.skip.data(),
                    g,
                    ScanGrads {
                        x: &mut gx,
                        delta: &mut gd,
                        a: &mut ga,
                        bm: &mut gb,
                        cm: &mut gc,
                        skip: &mut gs,
                    },
                );
                out.extend([(x, gx), (delta, gd), (a, ga), (b, gb), (c, gc), (skip, gs)]);
            }
            &Op::ReverseTime(x) => {
                let gt = Tensor::from_parts(node.value.shape().to_vec(), g.to_vec());
                out.push((x, ops::reverse_time(&gt).expect("rank checked").into_data()));
            }
            Op::ConcatLast(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.t(*p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut bufs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for row in g.chunks(total) {
                    let mut off = 0;
                    for (buf, &w) in bufs.iter_mut().zip(&widths) {
                        buf.extend_from_slice(&row[off..off + w]);
                        off += w;
                    }
                }
                out.extend(parts.iter().copied().zip(bufs));
            }
            &Op::WrapTokens(x, start, end) => {
                let tx = self.t(x);
                let (b, n, d) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let total = node.value.shape()[1];
                let mut gx = Vec::with_capacity(tx.len());
                let mut gs = vec![0.0; d];
                let mut ge = vec![0.0; d];
                for bi in 0..b {
                    let seq = &g[bi * total * d..(bi + 1) * total * d];
                    gs.iter_mut().zip(&seq[..d]).for_each(|(a, v)| *a += v);
                    gx.extend_from_slice(&seq[d..(n + 1) * d]);
                    if end.is_some() {
                        ge.iter_mut().zip(&seq[(n + 1) * d..]).for_each(|(a, v)| *a += v);
                    }
                }
                out.push((x, gx));
                out.push((start, gs));
                if let Some(e) = end {
                    out.push((e, ge));
                }
            }
            &Op::TakeRows(x) => {
                let mut gx = self.zeros_like(x);
                gx[..g.len()].copy_from_slice(g);
                out.push((x, gx));
            }
            &Op::MeanTime(x) => {
                let tx = self.t(x);
                let (b, t, d) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                let mut gx = Vec::with_capacity(tx.len());
                for bi in 0..b {
                    for _ in 0..t {
                        gx.extend(g[bi * d..(bi + 1) * d].iter().map(|v| v / t as f64));
                    }
                }
                out.push((x, gx));
            }
            &Op::SampleMean(x) => {
                let inner = self.t(x).len() / g.len();
                let gx = g
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v / inner as f64, inner))
                    .collect();
                out.push((x, gx));
            }
            Op::StackColumns(cols) => {
                let k = cols.len();
                for (j, &c) in cols.iter().enumerate() {
                    out.push((c, g.iter().skip(j).step_by(k).copied().collect()));
                }
            }
            &Op::Column(x, j) => {
                let k = self.t(x).shape()[1];
                let mut gx = self.zeros_like(x);
                for (i, v) in g.iter().enumerate() {
                    gx[i * k + j] = *v;
                }
                out.push((x, gx));
            }
            &Op::SumAll(x) => out.push((x, vec![g[0]; self.t(x).len()])),
            &Op::MeanAll(x) => {
                let n = self.t(x).len();
                out.push((x, vec![g[0] / n as f64; n]));
            }
            Op::CrossEntropy(logits, labels) => {
                let tl = self.t(*logits);
                let classes = tl.last_dim();
                let (_, mut probs) = kernels::softmax_cross_entropy(tl.data(), classes, labels);
                let scale = g[0] / labels.len() as f64;
                for (r, &l) in labels.iter().enumerate() {
                    probs[r * classes + l] -= 1.0;
                }
                probs.iter_mut().for_each(|p| *p *= scale);
                out.push((*logits, probs));
            }
        }
        out
    }
}

fn column_sums(width: usize, values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut sums = vec![0.0; width];
    for (i, v) in values.enumerate() {
        sums[i % width] += v;
    }
    sums
}

impl Backend for Graph {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(Arc::new(t), false)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.t(*v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::matmul(self.t(*a), self.t(*b))?;
        Ok(self.push(y, Op::MatMul(*a, *b), &[*a, *b]))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::add(self.t(*a), self.t(*b))?;
        Ok(self.push(y, Op::Add(*a, *b), &[*a, *b]))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = ops::mul(self.t(*a), self.t(*b))?;
        Ok(self.push(y, Op::Mul(*a, *b), &[*a, *b]))
    }

    fn scale(&mut self, x: &Var, c: f64) -> Result<Var> {
        let y = ops::scale(self.t(*x), c)?;
        Ok(self.push(y, Op::Scale(*x, c), &[*x]))
    }

    fn add_broadcast(&mut self, x: &Var, y: &Var) -> Result<Var> {
        let out = ops::add_broadcast(self.t(*x), self.t(*y))?;
        Ok(self.push(out, Op::AddBroadcast(*x, *y), &[*x, *y]))
    }

    fn mul_prefix(&mut self, x: &Var, w: &Var) -> Result<Var> {
        let out = ops::mul_prefix(self.t(*x), self.t(*w))?;
        Ok(self.push(out, Op::MulPrefix(*x, *w), &[*x, *w]))
    }

    fn unary(&mut self, x: &Var, kind: Unary) -> Result<Var> {
        let y = ops::unary(self.t(*x), kind)?;
        Ok(self.push(y, Op::Unary(*x, kind), &[*x]))
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var) -> Result<Var> {
        let y = ops::layer_norm(self.t(*x), self.t(*gain), self.t(*bias))?;
        Ok(self.push(y, Op::LayerNorm(*x, *gain, *bias), &[*x, *gain, *bias]))
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        gain: &Var,
        bias: &Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (y, stats) = ops::batch_norm(self.t(*x), self.t(*gain), self.t(*bias), mode)?;
        let op = match mode {
            BatchNormMode::Train => Op::BatchNormTrain(*x, *gain, *bias),
            BatchNormMode::Eval { mean, var } => Op::BatchNormEval {
                x: *x,
                gain: *gain,
                bias: *bias,
                mean: mean.to_vec(),
                var: var.to_vec(),
            },
        };
        Ok((self.push(y, op, &[*x, *gain, *bias]), stats))
    }

    fn causal_conv(&mut self, x: &Var, kernel: &Var) -> Result<Var> {
        let y = ops::causal_conv(self.t(*x), self.t(*kernel))?;
        Ok(self.push(y, Op::CausalConv(*x, *kernel), &[*x, *kernel]))
    }

    fn selective_scan(&mut self, s: ScanInputs<'_, Var>, mode: Discretization) -> Result<Var> {
        let y = ops::selective_scan_fused(
            ScanInputs {
                x: self.t(*s.x),
                delta: self.t(*s.delta),
                a: self.t(*s.a),
                b: self.t(*s.b),
                c: self.t(*s.c),
                skip: self.t(*s.skip),
            },
            mode,
        )?;
        let op = Op::Scan {
            x: *s.x,
            delta: *s.delta,
            a: *s.a,
            b: *s.b,
            c: *s.c,
            skip: *s.skip,
            mode,
        };
        Ok(self.push(y, op, &[*s.x, *s.delta, *s.a, *s.b, *s.c, *s.skip]))
    }

    fn reverse_time(&mut self, x: &Var) -> Result<Var> {
        let y = ops::reverse_time(self.t(*x))?;
        Ok(self.push(y, Op::ReverseTime(*x), &[*x]))
    }

    fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.t(*p)).collect();
        let y = ops::concat_last(&refs)?;
        Ok(self.push(y, Op::ConcatLast(parts.to_vec()), parts))
    }

    fn wrap_tokens(&mut self, x: &Var, start: &Var, end: Option<&Var>) -> Result<Var> {
        let y = ops::wrap_tokens(self.t(*x), self.t(*start), end.map(|e| self.t(*e)))?;
        let mut inputs = vec![*x, *start];
        inputs.extend(end.copied());
        Ok(self.push(y, Op::WrapTokens(*x, *start, end.copied()), &inputs))
    }

    fn take_rows(&mut self, x: &Var, n: usize) -> Result<Var> {
        let y = ops::take_rows(self.t(*x), n)?;
        Ok(self.push(y, Op::TakeRows(*x), &[*x]))
    }

    fn mean_time(&mut self, x: &Var) -> Result<Var> {
        let y = ops::mean_time(self.t(*x))?;
        Ok(self.push(y, Op::MeanTime(*x), &[*x]))
    }

    fn sample_mean(&mut self, x: &Var) -> Result<Var> {
        let y = ops::sample_mean(self.t(*x))?;
        Ok(self.push(y, Op::SampleMean(*x), &[*x]))
    }

    fn stack_columns(&mut self, cols: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = cols.iter().map(|p| self.t(*p)).collect();
        let y = ops::stack_columns(&refs)?;
        Ok(self.push(y, Op::StackColumns(cols.to_vec()), cols))
    }

    fn column(&mut self, x: &Var, j: usize) -> Result<Var> {
        let y = ops::column(self.t(*x), j)?;
        Ok(self.push(y, Op::Column(*x, j), &[*x]))
    }

    fn sum_all(&mut self, x: &Var) -> Result<Var> {
        let y = ops::sum_all(self.t(*x));
        Ok(self.push(y, Op::SumAll(*x), &[*x]))
    }

    fn mean_all(&mut self, x: &Var) -> Result<Var> {
        let y = ops::mean_all(self.t(*x));
        Ok(self.push(y, Op::MeanAll(*x), &[*x]))
    }

    fn cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let y = ops::cross_entropy(self.t(*logits), labels)?;
        Ok(self.push(y, Op::CrossEntropy(*logits, labels.to_vec()), &[*logits]))
    }
}
