//! Adapter from an exported network to [`Backend`].
//!
//! Exported graphs take two `int64` tensors of shape `[batch, seq]`,
//! `input_ids` and `attention_mask`, and return `logits` of shape
//! `[batch, seq, vocab]`. A [`LogitsModel`] runs such a graph; the adapter
//! gathers the target rows and normalizes them in `f64`.

use crate::backend::{log_softmax, Backend, BatchInput, Capabilities, Target};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenizerSpec};

pub const INPUT_IDS: &str = "input_ids";
pub const ATTENTION_MASK: &str = "attention_mask";
pub const LOGITS: &str = "logits";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Masked,
    Causal,
}

/// Row-major `[batch, seq, vocab]` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsTensor {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl LogitsTensor {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "logits of shape {shape:?} need {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(LogitsTensor { shape, data })
    }

    pub fn row(&self, batch: usize, position: usize) -> &[f32] {
        let [_, seq, vocab] = self.shape;
        let start = (batch * seq + position) * vocab;
        &self.data[start..start + vocab]
    }
}

/// Flattened `int64` inputs in the exported graph's layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphInputs {
    pub shape: [usize; 2],
    pub input_ids: Vec<i64>,
    pub attention_mask: Vec<i64>,
}

impl GraphInputs {
    pub fn from_batch(input: &BatchInput) -> Self {
        GraphInputs {
            shape: [input.rows(), input.width()],
            input_ids: input.ids.iter().flatten().map(|&id| i64::from(id)).collect(),
            attention_mask: input.attention_mask.iter().flatten().map(|&m| i64::from(m)).collect(),
        }
    }
}

/// A runnable exported graph.
pub trait LogitsModel: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn vocab_size(&self) -> usize;

    fn max_sequence_length(&self) -> usize;

    fn run(&self, inputs: &GraphInputs) -> Result<LogitsTensor>;

    /// Whether `run` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        false
    }
}

pub struct NeuralBackend<M> {
    model: M,
    spec: TokenizerSpec,
    max_batch: usize,
}

impl<M: LogitsModel> NeuralBackend<M> {
    /// Pairs a model with the tokenizer it was exported with. The two
    /// must agree on vocabulary size, and masked models need a mask token.
    pub fn new(model: M, spec: TokenizerSpec, max_batch: usize) -> Result<Self> {
        if model.vocab_size() != spec.vocab_size() {
            return Err(Error::VocabularyMismatch(format!(
                "model has {} logits per position but tokenizer has {} entries",
                model.vocab_size(),
                spec.vocab_size()
            )));
        }
        if model.kind() == ModelKind::Masked && !spec.supports_masked() {
            return Err(Error::Config("masked model needs a tokenizer with a mask token".into()));
        }
        if max_batch == 0 {
            return Err(Error::Config("max_batch must be positive".into()));
        }
        Ok(NeuralBackend { model, spec, max_batch })
    }

    pub fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    fn gather(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        input.validate(targets, self.spec.vocab_size())?;
        if input.width() > self.model.max_sequence_length() {
            return Err(Error::SequenceTooLong {
                len: input.width(),
                max: self.model.max_sequence_length(),
            });
        }
        let inputs = GraphInputs::from_batch(input);
        let logits = self
            .model
            .run(&inputs)
            .map_err(|e| Error::backend_with_context("model run", e))?;
        let expected = [input.rows(), input.width(), self.spec.vocab_size()];
        if logits.shape != expected {
            return Err(Error::Shape(format!(
                "model returned logits of shape {:?}, expected {expected:?}",
                logits.shape
            )));
        }
        targets
            .iter()
            .map(|t| {
                let mut row: Vec<f64> = logits.row(t.row, t.position).iter().map(|&v| f64::from(v)).collect();
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Backend(format!(
                        "non-finite logit at row {} position {}",
                        t.row, t.position
                    )));
                }
                log_softmax(&mut row);
                Ok(row)
            })
            .collect()
    }

    fn require(&self, kind: ModelKind) -> Result<()> {
        if self.model.kind() == kind {
            Ok(())
        } else {
            Err(Error::UnsupportedStrategy {
                strategy: match kind {
                    ModelKind::Masked => "masked".into(),
                    ModelKind::Causal => "causal".into(),
                },
                capability: match self.model.kind() {
                    ModelKind::Masked => "masked",
                    ModelKind::Causal => "causal",
                },
            })
        }
    }
}

impl<M: LogitsModel> Backend for NeuralBackend<M> {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            masked: self.model.kind() == ModelKind::Masked,
            causal: self.model.kind() == ModelKind::Causal,
        }
    }

    fn vocab_size(&self) -> usize {
        self.spec.vocab_size()
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn max_sequence_length(&self) -> usize {
        self.model.max_sequence_length()
    }

    fn concurrent(&self) -> bool {
        self.model.concurrent()
    }

    fn bos_id(&self) -> Option<TokenId> {
        self.spec.special.bos
    }

    fn mlm_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        self.require(ModelKind::Masked)?;
        self.gather(input, targets)
    }

    fn causal_logprobs(&self, input: &BatchInput, targets: &[Target]) -> Result<Vec<Vec<f64>>> {
        self.require(ModelKind::Causal)?;
        self.gather(input, targets)
    }
}
