//! Masked-inference schedules for the pseudo-log-likelihood strategies.
//!
//! Every strategy issues one request per scored token, left to right. They
//! differ only in which other positions of the sentence are hidden while the
//! target is predicted, and each of those mask sets is a contiguous range:
//!
//! | strategy       | masked positions for target `t`            |
//! |----------------|--------------------------------------------|
//! | `original`     | `t`                                        |
//! | `word-l2r`     | `t` and the rest of its word               |
//! | `whole-word`   | every token of the word containing `t`     |
//! | `sentence-l2r` | `t` and every later scored token           |
//!
//! Special tokens sit outside the scored range and are never masked, so the
//! trailing `[SEP]` stays visible under `sentence-l2r`.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::AlignedSentence;
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MaskingStrategy {
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "word-l2r")]
    WordL2r,
    #[serde(rename = "whole-word")]
    WholeWord,
    #[serde(rename = "sentence-l2r")]
    SentenceL2r,
    /// Chain-rule log-likelihood under an autoregressive model.
    #[serde(rename = "causal")]
    Causal,
}

impl MaskingStrategy {
    pub const ALL: [MaskingStrategy; 5] = [
        MaskingStrategy::Original,
        MaskingStrategy::WordL2r,
        MaskingStrategy::WholeWord,
        MaskingStrategy::SentenceL2r,
        MaskingStrategy::Causal,
    ];

    pub const MASKED: [MaskingStrategy; 4] = [
        MaskingStrategy::Original,
        MaskingStrategy::WordL2r,
        MaskingStrategy::WholeWord,
        MaskingStrategy::SentenceL2r,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MaskingStrategy::Original => "original",
            MaskingStrategy::WordL2r => "word-l2r",
            MaskingStrategy::WholeWord => "whole-word",
            MaskingStrategy::SentenceL2r => "sentence-l2r",
            MaskingStrategy::Causal => "causal",
        }
    }

    pub fn is_masked(self) -> bool {
        self != MaskingStrategy::Causal
    }
}

impl fmt::Display for MaskingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskingStrategy::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidStrategy(format!(
                "unknown strategy {s:?}; expected one of original, word-l2r, whole-word, sentence-l2r, causal"
            ))
        })
    }
}

/// One masked forward pass: hide `masked`, read the distribution at
/// `target_position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceRequest<'a> {
    pub sentence: &'a AlignedSentence,
    pub masked: Range<usize>,
    pub target_position: usize,
    pub target_id: TokenId,
    pub word_index: usize,
}

impl InferenceRequest<'_> {
    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked.clone()
    }

    /// Token ids with the masked range replaced by `mask_id`.
    pub fn materialize(&self, mask_id: TokenId) -> Vec<TokenId> {
        let mut ids = self.sentence.token_ids.clone();
        ids[self.masked.clone()].fill(mask_id);
        ids
    }
}

#[derive(Serialize)]
struct DebugLine {
    target: usize,
    masked: Vec<usize>,
}

/// Emits the requests whose answers sum to the sentence score under a
/// masked strategy.
pub fn schedule(s: &AlignedSentence, strategy: MaskingStrategy) -> Result<Vec<InferenceRequest<'_>>> {
    if strategy == MaskingStrategy::Causal {
        return Err(Error::InvalidStrategy("causal scoring has no masking schedule".into()));
    }
    let scored = s.scored_range();
    if scored.is_empty() {
        return Err(Error::EmptyInput("sentence has no scored tokens".into()));
    }
    let mut out = Vec::with_capacity(scored.len());
    for (w, span) in s.word_spans.iter().enumerate() {
        for t in span.range() {
            let masked = match strategy {
                MaskingStrategy::Original => t..t + 1,
                MaskingStrategy::WordL2r => t..span.end,
                MaskingStrategy::WholeWord => span.range(),
                MaskingStrategy::SentenceL2r => t..scored.end,
                MaskingStrategy::Causal => unreachable!(),
            };
            out.push(InferenceRequest {
                sentence: s,
                masked,
                target_position: t,
                target_id: s.token_ids[t],
                word_index: w,
            });
        }
    }
    Ok(out)
}

/// Number of forward passes a strategy needs; one per scored token for
/// every strategy, causal included when counted per target.
pub fn request_count(s: &AlignedSentence, _strategy: MaskingStrategy) -> usize {
    s.n_scored()
}

/// JSONL lines `{"target": i, "masked": [...]}` for inspection.
pub fn schedule_debug_lines(s: &AlignedSentence, strategy: MaskingStrategy) -> Result<Vec<String>> {
    schedule(s, strategy)?
        .iter()
        .map(|r| {
            Ok(serde_json::to_string(&DebugLine {
                target: r.target_position,
                masked: r.masked_positions().collect(),
            })?)
        })
        .collect()
}
