//! Sentence scoring under masked and autoregressive language models.
//!
//! Masked models are scored with pseudo-log-likelihood under four masking
//! strategies (`original`, `word-l2r`, `whole-word`, `sentence-l2r`);
//! autoregressive models with the chain rule (`causal`). On top of the
//! scores sit a minimal-pair benchmark harness and correlation analyses.

pub mod align;
pub mod analysis;
pub mod backend;
pub mod engine;
pub mod error;
pub mod harness;
pub mod schedule;
pub mod tokenizer;

pub use align::{align, oov_ratio, AlignedSentence, WordSpan};
pub use backend::{Backend, NeuralBackend, ReferenceBackend, ReferenceBackendConfig};
pub use engine::{ContextTemplate, Engine, EngineOptions, ErrorPolicy, ScoreReport, Scorer, TokenScore, WordScore};
pub use error::{Error, Result};
pub use schedule::{request_count, schedule, InferenceRequest, MaskingStrategy};
pub use tokenizer::{HashTokenizer, RawToken, Tokenizer, TokenizerSpec, VocabTokenizer};
