//! Segment tokenization: fixed-length windows per lead, a learned
//! projection, CLS markers and absolute positional embeddings.

use crate::error::{Error, Result};
use crate::numerics::{ops, Tensor};
use crate::ssm::Direction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClsPolicy {
    /// A CLS token at the start and another at the end of the sequence.
    #[default]
    BothEnds,
    StartOnly,
}

impl ClsPolicy {
    pub fn count(self) -> usize {
        match self {
            ClsPolicy::BothEnds => 2,
            ClsPolicy::StartOnly => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub patch_len: usize,
    pub step: usize,
    pub model_dim: usize,
    pub cls_policy: ClsPolicy,
}

impl TokenizerConfig {
    pub fn validate(&self, signal_len: usize) -> Result<()> {
        if self.step < 1 || self.step > self.patch_len || self.patch_len > signal_len {
            return Err(Error::Config(format!(
                "need 1 <= step ({}) <= patch_len ({}) <= signal length ({signal_len})",
                self.step, self.patch_len
            )));
        }
        if self.model_dim < 8 {
            return Err(Error::Config(format!("model_dim {} is below 8", self.model_dim)));
        }
        Ok(())
    }

    /// Raw token count `N = ⌊(L − p)/s⌋ + 1`.
    pub fn token_count(&self, signal_len: usize) -> usize {
        (signal_len - self.patch_len) / self.step + 1
    }

    /// `N` plus the CLS tokens.
    pub fn total_tokens(&self, signal_len: usize) -> usize {
        self.token_count(signal_len) + self.cls_policy.count()
    }
}

/// Window start offsets `0, s, 2s, …`; samples past the last full window
/// are dropped.
pub fn window_starts(len: usize, patch_len: usize, step: usize) -> Result<Vec<usize>> {
    if patch_len == 0 || step == 0 {
        return Err(Error::InvalidArgument("patch length and step must be positive".into()));
    }
    if len < patch_len {
        return Err(Error::TooShort { len, min: patch_len });
    }
    Ok((0..=(len - patch_len) / step).map(|i| i * step).collect())
}

/// Slices one lead into an `[N, p]` matrix of windows.
pub fn segment(signal: &[f64], patch_len: usize, step: usize) -> Result<Tensor> {
    let starts = window_starts(signal.len(), patch_len, step)?;
    let mut data = Vec::with_capacity(starts.len() * patch_len);
    for &s in &starts {
        data.extend_from_slice(&signal[s..s + patch_len]);
    }
    Tensor::new(vec![starts.len(), patch_len], data)
}

/// Row-wise affine projection `patches · weight + bias`.
pub fn embed(patches: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    ops::add_broadcast(&ops::matmul(patches, weight)?, bias)
}

/// Embedded tokens of one lead in one scan direction.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub lead_index: usize,
    /// `[N_total, dim]`
    pub tokens: Tensor,
    pub cls_positions: Vec<usize>,
    pub direction: Direction,
}

impl TokenSequence {
    /// Same tokens in reverse order, viewed from the opposite direction.
    pub fn reversed(&self) -> Self {
        let n = self.tokens.shape()[0];
        let d = self.tokens.shape()[1];
        let rows: Vec<f64> = self
            .tokens
            .data()
            .chunks(d)
            .rev()
            .flat_map(|r| r.iter().copied())
            .collect();
        let mut cls: Vec<usize> = self.cls_positions.iter().map(|&p| n - 1 - p).collect();
        cls.sort_unstable();
        Self {
            lead_index: self.lead_index,
            tokens: Tensor::from_parts(vec![n, d], rows),
            cls_positions: cls,
            direction: match self.direction {
                Direction::Forward => Direction::Reverse,
                Direction::Reverse => Direction::Forward,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Places the CLS token(s) around the embedded windows and adds the first
/// `N_total` rows of the positional table.
pub fn assemble(
    embedded: &Tensor,
    cls_start: &Tensor,
    cls_end: Option<&Tensor>,
    positional: &Tensor,
    lead_index: usize,
) -> Result<TokenSequence> {
    if embedded.rank() != 2 {
        return Err(Error::shape("assemble", format!("expected [N, dim], got {:?}", embedded.shape())));
    }
    let (n, d) = (embedded.shape()[0], embedded.shape()[1]);
    let batched = embedded.reshape(vec![1, n, d])?;
    let wrapped = ops::wrap_tokens(&batched, cls_start, cls_end)?;
    let total = wrapped.shape()[1];
    if positional.rank() != 2 || positional.shape()[0] < total {
        return Err(Error::shape(
            "assemble",
            format!("positional table {:?} shorter than {total} tokens", positional.shape()),
        ));
    }
    let pos = ops::take_rows(positional, total)?;
    let tokens = ops::add_broadcast(&wrapped, &pos)?.reshape(vec![total, d])?;
    let mut cls_positions = vec![0];
    if cls_end.is_some() {
        cls_positions.push(total - 1);
    }
    Ok(TokenSequence {
        lead_index,
        tokens,
        cls_positions,
        direction: Direction::Forward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(2500, 50, 25).unwrap().len(), 99);
        assert_eq!(window_starts(2500, 25, 25).unwrap().len(), 100);
        let whole = segment(&[1.0, 2.0, 3.0], 3, 3).unwrap();
        assert_eq!(whole.shape(), &[1, 3]);
        assert_eq!(whole.data(), &[1.0, 2.0, 3.0]);
        assert!(matches!(segment(&[1.0], 2, 1), Err(Error::TooShort { .. })));
    }

    #[test]
    fn trailing_samples_dropped() {
        let sig: Vec<f64> = (0..10).map(f64::from).collect();
        let p = segment(&sig, 4, 3).unwrap();
        assert_eq!(p.shape(), &[3, 4]);
        assert_eq!(p.get(&[2, 3]), 9.0);
        let p = segment(&sig, 4, 4).unwrap();
        assert_eq!(p.shape(), &[2, 4]);
    }

    #[test]
    fn embed_identity_and_bias() {
        let patches = Tensor::from_fn(vec![3, 8], |i| i as f64).unwrap();
        let eye = Tensor::from_fn(vec![8, 8], |i| if i / 8 == i % 8 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(embed(&patches, &eye, &Tensor::zeros(vec![8])).unwrap(), patches);
        let bias = Tensor::from_fn(vec![8], |i| i as f64 - 2.0).unwrap();
        let y = embed(&Tensor::zeros(vec![3, 8]), &eye, &bias).unwrap();
        for row in y.data().chunks(8) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn assemble_layout() {
        let d = 8;
        let emb = Tensor::from_fn(vec![99, d], |i| i as f64).unwrap();
        let s = Tensor::full(vec![d], -1.0);
        let e = Tensor::full(vec![d], -2.0);
        let pos = Tensor::zeros(vec![128, d]);
        let seq = assemble(&emb, &s, Some(&e), &pos, 3).unwrap();
        assert_eq!(seq.len(), 101);
        assert_eq!(seq.cls_positions, vec![0, 100]);
        assert_eq!(&seq.tokens.data()[d..100 * d], emb.data());

        let start_only = assemble(&emb, &s, None, &pos, 3).unwrap();
        assert_eq!(start_only.len(), 100);
        assert!(assemble(&emb, &s, Some(&e), &Tensor::zeros(vec![100, d]), 0).is_err());

        let rev = seq.reversed();
        assert_eq!(rev.direction, Direction::Reverse);
        assert_eq!(&rev.tokens.data()[..d], e.data());
        assert_eq!(rev.reversed(), seq);
    }
}
