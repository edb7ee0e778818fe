//! Value-level tensor operations. The taped [`Graph`](super::Graph) reuses
//! these for its forward pass and adds the matching backward rules.

use super::kernels::{self, Discretization, ScanDims};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Silu,
    Softplus,
    Sigmoid,
    Exp,
    Neg,
}

impl Unary {
    /// `out = f(x)` elementwise.
    pub(crate) fn apply_slice(self, x: &[f64], out: &mut [f64]) {
        match self {
            Unary::Silu => kernels::silu_slice(x, out),
            Unary::Softplus => kernels::softplus_slice(x, out),
            Unary::Sigmoid => kernels::sigmoid_slice(x, out),
            Unary::Exp => {
                out.copy_from_slice(x);
                kernels::exp_in_place(out);
            }
            Unary::Neg => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -v;
                }
            }
        }
    }

    /// `out = g · f'(x)` given the input `x` and output `y`.
    pub(crate) fn grad_slice(self, x: &[f64], y: &[f64], g: &[f64], out: &mut [f64]) {
        match self {
            Unary::Silu => kernels::silu_grad_slice(x, g, out),
            Unary::Softplus => kernels::softplus_grad_slice(x, g, out),
            Unary::Sigmoid => {
                for ((o, &y), &g) in out.iter_mut().zip(y).zip(g) {
                    *o = g * y * (1.0 - y);
                }
            }
            Unary::Exp => {
                for ((o, &y), &g) in out.iter_mut().zip(y).zip(g) {
                    *o = g * y;
                }
            }
            Unary::Neg => {
                for (o, &g) in out.iter_mut().zip(g) {
                    *o = -g;
                }
            }
        }
    }
}

pub fn unary(x: &Tensor, kind: Unary) -> Result<Tensor> {
    let mut data = vec![0.0; x.len()];
    kind.apply_slice(x.data(), &mut data);
    // exp can overflow on extreme inputs
    Tensor::new(x.shape().to_vec(), data)
}

pub fn silu(x: &Tensor) -> Tensor {
    unary(x, Unary::Silu).expect("silu is finite for finite input")
}

pub fn softplus(x: &Tensor) -> Tensor {
    unary(x, Unary::Softplus).expect("guarded softplus is finite for finite input")
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary(x, Unary::Sigmoid).expect("sigmoid is bounded")
}

/// Splits `a[.., k]` into `(m, k)` rows for a matmul against `b[k, n]`.
pub(crate) fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if b.rank() != 2 {
        return Err(Error::shape("matmul", format!("right operand must be 2-D, got {:?}", b.shape())));
    }
    let k = a.last_dim();
    if b.shape()[0] != k {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    Ok((a.len() / k, k, b.shape()[1]))
}

/// Matrix product over the last axis of `a` and the first axis of `b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a, b)?;
    let mut out = vec![0.0; m * n];
    kernels::matmul(m, k, n, a.data(), b.data(), &mut out, false);
    let mut shape = a.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = n;
    Tensor::new(shape, out)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale(x: &Tensor, c: f64) -> Result<Tensor> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())
}

/// `x + y` where `y`'s shape is a suffix of `x`'s (bias rows, positional
/// tables).
pub fn add_broadcast(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if !x.shape().ends_with(y.shape()) {
        return Err(Error::shape(
            "add_broadcast",
            format!("{:?} is not a suffix of {:?}", y.shape(), x.shape()),
        ));
    }
    let yd = y.data();
    let data = x
        .data()
        .chunks(yd.len())
        .flat_map(|c| c.iter().zip(yd).map(|(a, b)| a + b))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `x * w` where `w`'s shape is a prefix of `x`'s (per-sample scaling).
pub fn mul_prefix(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    if !x.shape().starts_with(w.shape()) {
        return Err(Error::shape(
            "mul_prefix",
            format!("{:?} is not a prefix of {:?}", w.shape(), x.shape()),
        ));
    }
    let inner = x.len() / w.len();
    let data = x
        .data()
        .chunks(inner)
        .zip(w.data())
        .flat_map(|(c, &s)| c.iter().map(move |v| v * s))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn check_affine(op: &'static str, dim: usize, gain: &Tensor, bias: &Tensor) -> Result<()> {
    if gain.shape() != [dim] || bias.shape() != [dim] {
        return Err(Error::shape(
            op,
            format!("affine parameters {:?}/{:?} for width {dim}", gain.shape(), bias.shape()),
        ));
    }
    Ok(())
}

/// Per-token normalization over the last axis (variance + 1e-5), then
/// affine.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let dim = x.last_dim();
    check_affine("layer_norm", dim, gain, bias)?;
    let mut out = vec![0.0; x.len()];
    kernels::normalize_rows(x.data(), dim, &mut out);
    affine_rows(&mut out, dim, gain.data(), bias.data());
    Tensor::new(x.shape().to_vec(), out)
}

fn affine_rows(x: &mut [f64], dim: usize, gain: &[f64], bias: &[f64]) {
    for row in x.chunks_mut(dim) {
        for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
}

/// Per-feature mean and biased variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// Exponential running estimates used by batch normalization at eval time.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Blends in one batch; the running variance tracks the unbiased
    /// estimate.
    pub fn update(&mut self, batch: &BatchStats) {
        let m = Self::MOMENTUM;
        let n = batch.count as f64;
        let correction = if batch.count > 1 { n / (n - 1.0) } else { 1.0 };
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }

    pub fn mode(&self) -> BatchNormMode<'_> {
        BatchNormMode::Eval {
            mean: &self.mean,
            var: &self.var,
        }
    }
}

pub(crate) fn batch_stats(x: &Tensor) -> BatchStats {
    let f = x.last_dim();
    let rows = x.len() / f;
    let mut mean = vec![0.0; f];
    for row in x.data().chunks(f) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; f];
    for row in x.data().chunks(f) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= rows as f64);
    BatchStats { mean, var, count: rows }
}

/// Batch normalization over `[batch, features]`. Training mode returns the
/// batch statistics so the caller can update its running estimates.
pub fn batch_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    mode: BatchNormMode<'_>,
) -> Result<(Tensor, Option<BatchStats>)> {
    if x.rank() != 2 {
        return Err(Error::shape("batch_norm", format!("expected [batch, features], got {:?}", x.shape())));
    }
    let f = x.last_dim();
    check_affine("batch_norm", f, gain, bias)?;
    let (mean, var, stats) = match mode {
        BatchNormMode::Train => {
            if x.shape()[0] < 2 {
                return Err(Error::InvalidArgument(
                    "batch norm in training mode needs a batch of at least 2".into(),
                ));
            }
            let s = batch_stats(x);
            (s.mean.clone(), s.var.clone(), Some(s))
        }
        BatchNormMode::Eval { mean, var } => {
            if mean.len() != f || var.len() != f {
                return Err(Error::shape("batch_norm", "running statistics width"));
            }
            (mean.to_vec(), var.to_vec(), None)
        }
    };
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + kernels::NORM_EPS).sqrt()).collect();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(f) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv[j] * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, stats))
}

fn btc(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::shape(op, format!("expected [batch, time, channels], got {:?}", x.shape()))),
    }
}

/// Depthwise causal convolution on `[batch, time, channels]` data.
pub fn causal_conv(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (b, t, c) = btc("causal_conv", x)?;
    if kernel.rank() != 2 || kernel.shape()[0] != c {
        return Err(Error::shape(
            "causal_conv",
            format!("kernel {:?} for {c} channels", kernel.shape()),
        ));
    }
    let k = kernel.shape()[1];
    let mut out = vec![0.0; x.len()];
    kernels::causal_conv(b, t, c, k, x.data(), kernel.data(), &mut out);
    Tensor::new(x.shape().to_vec(), out)
}

/// Depthwise causal convolution of a `[channels, time]` signal with a
/// `[channels, k]` kernel: `out[c,t] = Σ_j kernel[c,j]·x[c,t−j]`, with zeros
/// before the first sample, so `out[c,t]` never reads past `t`.
pub fn depthwise_causal_conv1d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("depthwise_causal_conv1d", format!("expected [channels, time], got {:?}", x.shape())));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let btc_in = Tensor::from_parts(vec![1, t, c], kernels::transpose(c, t, x.data()));
    let out = causal_conv(&btc_in, kernel)?;
    Tensor::new(vec![c, t], kernels::transpose(t, c, out.data()))
}

/// Inputs of the fused discretize-and-scan operation.
#[derive(Clone, Copy, Debug)]
pub struct ScanInputs<'a, T> {
    /// `[batch, time, dim]`
    pub x: &'a T,
    /// Positive step sizes, `[batch, time, dim]`.
    pub delta: &'a T,
    /// Diagonal continuous-time state matrix, `[dim, state]`.
    pub a: &'a T,
    /// `[batch, time, state]`
    pub b: &'a T,
    /// `[batch, time, state]`
    pub c: &'a T,
    /// Skip (`D`) vector, `[dim]`.
    pub skip: &'a T,
}

pub(crate) fn scan_dims(s: &ScanInputs<'_, Tensor>) -> Result<ScanDims> {
    let (batch, time, dim) = btc("selective_scan", s.x)?;
    if s.delta.shape() != s.x.shape() {
        return Err(Error::shape("selective_scan", "delta must match x"));
    }
    if s.a.rank() != 2 || s.a.shape()[0] != dim {
        return Err(Error::shape("selective_scan", format!("A {:?} for dim {dim}", s.a.shape())));
    }
    let state = s.a.shape()[1];
    for m in [s.b, s.c] {
        if m.shape() != [batch, time, state] {
            return Err(Error::shape(
                "selective_scan",
                format!("B/C {:?}, expected {:?}", m.shape(), [batch, time, state]),
            ));
        }
    }
    if s.skip.shape() != [dim] {
        return Err(Error::shape("selective_scan", "skip vector width"));
    }
    Ok(ScanDims { batch, time, dim, state })
}

pub fn selective_scan_fused(inputs: ScanInputs<'_, Tensor>, mode: Discretization) -> Result<Tensor> {
    let dims = scan_dims(&inputs)?;
    let mut y = vec![0.0; inputs.x.len()];
    kernels::selective_scan_forward(
        dims,
        mode,
        inputs.x.data(),
        inputs.delta.data(),
        inputs.a.data(),
        inputs.b.data(),
        inputs.c.data(),
        inputs.skip.data(),
        &mut y,
        None,
    );
    Tensor::new(inputs.x.shape().to_vec(), y)
}

/// Reverses the time axis of `[batch, time, channels]` data.
pub fn reverse_time(x: &Tensor) -> Result<Tensor> {
    let (b, t, c) = btc("reverse_time", x)?;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        for ti in 0..t {
            let src = (bi * t + ti) * c;
            let dst = (bi * t + (t - 1 - ti)) * c;
            out[dst..dst + c].copy_from_slice(&x.data()[src..src + c]);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::shape("concat_last", "no inputs"))?;
    let lead = &first.shape()[..first.rank() - 1];
    if parts.iter().any(|p| &p.shape()[..p.rank() - 1] != lead) {
        return Err(Error::shape("concat_last", "leading axes differ"));
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.last_dim()).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::from_parts(shape, out))
}

/// Surrounds each `[batch, n, dim]` sequence with a leading token and an
/// optional trailing token.
pub fn wrap_tokens(x: &Tensor, start: &Tensor, end: Option<&Tensor>) -> Result<Tensor> {
    let (b, n, d) = btc("wrap_tokens", x)?;
    if start.shape() != [d] || end.is_some_and(|e| e.shape() != [d]) {
        return Err(Error::shape("wrap_tokens", format!("marker tokens must be [{d}]")));
    }
    let total = n + 1 + usize::from(end.is_some());
    let mut out = Vec::with_capacity(b * total * d);
    for bi in 0..b {
        out.extend_from_slice(start.data());
        out.extend_from_slice(&x.data()[bi * n * d..(bi + 1) * n * d]);
        if let Some(e) = end {
            out.extend_from_slice(e.data());
        }
    }
    Ok(Tensor::from_parts(vec![b, total, d], out))
}

/// First `n` rows of a `[rows, dim]` table.
pub fn take_rows(x: &Tensor, n: usize) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] < n || n == 0 {
        return Err(Error::shape(
            "take_rows",
            format!("table {:?} cannot supply {n} rows", x.shape()),
        ));
    }
    let d = x.shape()[1];
    Ok(Tensor::from_parts(vec![n, d], x.data()[..n * d].to_vec()))
}

/// Mean over the time axis: `[batch, time, dim] -> [batch, dim]`.
pub fn mean_time(x: &Tensor) -> Result<Tensor> {
    let (b, t, d) = btc("mean_time", x)?;
    let mut out = vec![0.0; b * d];
    for bi in 0..b {
        for ti in 0..t {
            let row = &x.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
            for (o, v) in out[bi * d..(bi + 1) * d].iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    Ok(Tensor::from_parts(vec![b, d], out))
}

/// Mean over every axis but the first: `[batch, ...] -> [batch]`.
pub fn sample_mean(x: &Tensor) -> Result<Tensor> {
    let b = x.shape()[0];
    let inner = x.len() / b;
    let out = x.data().chunks(inner).map(|c| c.iter().sum::<f64>() / inner as f64).collect();
    Ok(Tensor::from_parts(vec![b], out))
}

/// Stacks `[batch]` vectors into the columns of a `[batch, k]` matrix.
pub fn stack_columns(cols: &[&Tensor]) -> Result<Tensor> {
    let first = cols.first().ok_or_else(|| Error::shape("stack_columns", "no inputs"))?;
    let b = first.len();
    if cols.iter().any(|c| c.shape() != [b]) {
        return Err(Error::shape("stack_columns", "columns must all be [batch]"));
    }
    let k = cols.len();
    let mut out = vec![0.0; b * k];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.data().iter().enumerate() {
            out[i * k + j] = *v;
        }
    }
    Ok(Tensor::from_parts(vec![b, k], out))
}

pub fn column(x: &Tensor, j: usize) -> Result<Tensor> {
    if x.rank() != 2 || j >= x.shape()[1] {
        return Err(Error::shape("column", format!("column {j} of {:?}", x.shape())));
    }
    let k = x.shape()[1];
    Ok(Tensor::from_parts(vec![x.shape()[0]], x.data().iter().skip(j).step_by(k).copied().collect()))
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

pub fn mean_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
}

pub(crate) fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {:?} for {} labels", logits.shape(), labels.len()),
        ));
    }
    let classes = logits.shape()[1];
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(classes)
}

/// Mean negative log-softmax at the true class, max-shifted for stability.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let classes = check_labels(logits, labels)?;
    let (loss, _) = kernels::softmax_cross_entropy(logits.data(), classes, labels);
    Ok(Tensor::scalar(loss))
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let classes = logits.last_dim();
    Tensor::new(logits.shape().to_vec(), kernels::softmax_rows(logits.data(), classes))
}
