//! Model backends: the interface the engine drives, a hash-based reference
//! implementation and an adapter for exported networks.

pub mod golden;
pub mod neural;
#[cfg(feature = "onnx")]
pub mod onnx;
pub mod reference;

use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

pub use neural::{GraphInputs, LogitsModel, LogitsTensor, ModelKind, NeuralBackend};
pub use reference::{ReferenceBackend, ReferenceBackendConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub masked: bool,
    pub causal: bool,
}

/// A right-padded batch of token rows. `attention_mask[r][p] == 0` marks
/// padding that the model must not attend to.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchInput {
    pub ids: Vec<Vec<TokenId>>,
    pub attention_mask: Vec<Vec<u8>>,
}

impl BatchInput {
    /// Pads `rows` to a common length with `pad_id`.
    pub fn padded(rows: Vec<Vec<TokenId>>, pad_id: TokenId) -> Self {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len());
        let mut attention_mask = Vec::with_capacity(rows.len());
        for mut row in rows {
            let real = row.len();
            row.resize(width, pad_id);
            let mut mask = vec![1u8; real];
            mask.resize(width, 0);
            ids.push(row);
            attention_mask.push(mask);
        }
        BatchInput { ids, attention_mask }
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Checks shape consistency, target bounds and the id range.
    pub fn validate(&self, targets: &[Target], vocab_size: usize) -> Result<()> {
        let width = self.width();
        if self.attention_mask.len() != self.ids.len() {
            return Err(Error::Shape(format!(
                "{} id rows but {} attention-mask rows",
                self.ids.len(),
                self.attention_mask.len()
            )));
        }
        for (r, (ids, mask)) in self.ids.iter().zip(&self.attention_mask).enumerate() {
            if ids.len() != width || mask.len() != width {
                return Err(Error::Shape(format!("row {r} is not {width} wide")));
            }
            if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::VocabularyMismatch(format!(
                    "row {r} contains id {bad} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        for t in targets {
            if t.row >= self.rows() || t.position >= width {
                return Err(Error::Shape(format!(
                    "target ({}, {}) outside batch of {} x {width}",
                    t.row,
                    t.position,
                    self.rows()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub row: usize,
    pub position: usize,
}

/// Anything that can return log-distributions over the vocabulary.
///
/// `mlm_logprobs` returns, per target, `log P(token at position | row)` for
/// every vocabulary entry. `causal_logprobs` returns, per target, the
/// next-token distribution after reading positions `0..=position`.
/// Every returned vector is a normalized natural-log distribution and
/// identical inputs give identical outputs.
pub trait Backend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    fn vocab_size(&self) -> usize;

    fn max_batch(&self) -> usize;

    fn max_sequence_length(&self) -> usize;

    /// Whether calls may be issued from several threads at once.
    fn concurrent(&self) -> bool {
        false
    }

    /// Beginning-of-sentence id prepended for causal scoring when the
    /// sentence does not already start with one.
    fn bos_id(&self) -> Option<TokenId> {
        None
    }

    fn mlm_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>>;

    fn causal_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
    fn max_sequence_length(&self) -> usize {
        (**self).max_sequence_length()
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
    fn bos_id(&self) -> Option<TokenId> {
        (**self).bos_id()
    }
    fn mlm_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        (**self).mlm_logprobs(input, targets)
    }
    fn causal_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        (**self).causal_logprobs(input, targets)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn max_batch(&self) -> usize {
        (**self).max_batch()
    }
    fn max_sequence_length(&self) -> usize {
        (**self).max_sequence_length()
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
    fn bos_id(&self) -> Option<TokenId> {
        (**self).bos_id()
    }
    fn mlm_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        (**self).mlm_logprobs(input, targets)
    }
    fn causal_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        (**self).causal_logprobs(input, targets)
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax.
pub fn log_softmax(xs: &mut [f64]) {
    let lse = logsumexp(xs);
    xs.iter_mut().for_each(|x| *x -= lse);
}
