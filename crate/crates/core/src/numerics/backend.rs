use std::sync::Arc;

use super::kernels::Discretization;
use super::ops::{self, BatchNormMode, BatchStats, ScanInputs, Unary};
use super::{ParamId, ParamStore, Tensor};
use crate::error::Result;

/// The operation set every model forward pass is written against.
///
/// [`Eager`] evaluates immediately and keeps nothing; [`Graph`](super::Graph)
/// records a tape for reverse-mode differentiation. Model code is generic
/// over the backend so inference and training share one definition.
pub trait Backend {
    type Value: Clone;

    fn constant(&mut self, t: Tensor) -> Self::Value;
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::Value;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, c: f64) -> Result<Self::Value>;
    fn add_broadcast(&mut self, x: &Self::Value, y: &Self::Value) -> Result<Self::Value>;
    fn mul_prefix(&mut self, x: &Self::Value, w: &Self::Value) -> Result<Self::Value>;
    fn unary(&mut self, x: &Self::Value, kind: Unary) -> Result<Self::Value>;
    fn layer_norm(&mut self, x: &Self::Value, gain: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gain: &Self::Value,
        bias: &Self::Value,
        mode: BatchNormMode<'_>,
    ) -> Result<(Self::Value, Option<BatchStats>)>;
    fn causal_conv(&mut self, x: &Self::Value, kernel: &Self::Value) -> Result<Self::Value>;
    fn selective_scan(&mut self, inputs: ScanInputs<'_, Self::Value>, mode: Discretization) -> Result<Self::Value>;
    fn reverse_time(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat_last(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn wrap_tokens(
        &mut self,
        x: &Self::Value,
        start: &Self::Value,
        end: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn take_rows(&mut self, x: &Self::Value, n: usize) -> Result<Self::Value>;
    fn mean_time(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sample_mean(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn stack_columns(&mut self, cols: &[Self::Value]) -> Result<Self::Value>;
    fn column(&mut self, x: &Self::Value, j: usize) -> Result<Self::Value>;
    fn sum_all(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn mean_all(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn cross_entropy(&mut self, logits: &Self::Value, labels: &[usize]) -> Result<Self::Value>;

    fn silu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(x, Unary::Silu)
    }

    fn softplus(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(x, Unary::Softplus)
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(x, Unary::Sigmoid)
    }

    /// `x · w + b` over the last axis.
    fn linear(&mut self, x: &Self::Value, w: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_broadcast(&y, b),
            None => Ok(y),
        }
    }
}

/// Immediate evaluation with no tape; intermediates are dropped as soon as
/// the caller lets go of them.
#[derive(Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type Value = Arc<Tensor>;

    fn constant(&mut self, t: Tensor) -> Self::Value {
        Arc::new(t)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::Value {
        store.get(id).clone()
    }

    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::matmul(a, b).map(Arc::new)
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::add(a, b).map(Arc::new)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        ops::mul(a, b).map(Arc::new)
    }

    fn scale(&mut self, x: &Self::Value, c: f64) -> Result<Self::Value> {
        ops::scale(x, c).map(Arc::new)
    }

    fn add_broadcast(&mut self, x: &Self::Value, y: &Self::Value) -> Result<Self::Value> {
        ops::add_broadcast(x, y).map(Arc::new)
    }

    fn mul_prefix(&mut self, x: &Self::Value, w: &Self::Value) -> Result<Self::Value> {
        ops::mul_prefix(x, w).map(Arc::new)
    }

    fn unary(&mut self, x: &Self::Value, kind: Unary) -> Result<Self::Value> {
        ops::unary(x, kind).map(Arc::new)
    }

    fn layer_norm(&mut self, x: &Self::Value, gain: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        ops::layer_norm(x, gain, bias).map(Arc::new)
    }

    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gain: &Self::Value,
        bias: &Self::Value,
        mode: BatchNormMode<'_>,
    ) -> Result<(Self::Value, Option<BatchStats>)> {
        ops::batch_norm(x, gain, bias, mode).map(|(t, s)| (Arc::new(t), s))
    }

    fn causal_conv(&mut self, x: &Self::Value, kernel: &Self::Value) -> Result<Self::Value> {
        ops::causal_conv(x, kernel).map(Arc::new)
    }

    fn selective_scan(&mut self, s: ScanInputs<'_, Self::Value>, mode: Discretization) -> Result<Self::Value> {
        let inputs = ScanInputs {
            x: s.x.as_ref(),
            delta: s.delta.as_ref(),
            a: s.a.as_ref(),
            b: s.b.as_ref(),
            c: s.c.as_ref(),
            skip: s.skip.as_ref(),
        };
        ops::selective_scan_fused(inputs, mode).map(Arc::new)
    }

    fn reverse_time(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::reverse_time(x).map(Arc::new)
    }

    fn concat_last(&mut self, parts: &[Self::Value]) -> Result<Self::Value> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        ops::concat_last(&refs).map(Arc::new)
    }

    fn wrap_tokens(
        &mut self,
        x: &Self::Value,
        start: &Self::Value,
        end: Option<&Self::Value>,
    ) -> Result<Self::Value> {
        ops::wrap_tokens(x, start, end.map(|e| e.as_ref())).map(Arc::new)
    }

    fn take_rows(&mut self, x: &Self::Value, n: usize) -> Result<Self::Value> {
        ops::take_rows(x, n).map(Arc::new)
    }

    fn mean_time(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::mean_time(x).map(Arc::new)
    }

    fn sample_mean(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::sample_mean(x).map(Arc::new)
    }

    fn stack_columns(&mut self, cols: &[Self::Value]) -> Result<Self::Value> {
        let refs: Vec<&Tensor> = cols.iter().map(|p| p.as_ref()).collect();
        ops::stack_columns(&refs).map(Arc::new)
    }

    fn column(&mut self, x: &Self::Value, j: usize) -> Result<Self::Value> {
        ops::column(x, j).map(Arc::new)
    }

    fn sum_all(&mut self, x: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(ops::sum_all(x)))
    }

    fn mean_all(&mut self, x: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(ops::mean_all(x)))
    }

    fn cross_entropy(&mut self, logits: &Self::Value, labels: &[usize]) -> Result<Self::Value> {
        ops::cross_entropy(logits, labels).map(Arc::new)
    }
}
