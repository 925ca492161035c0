//! Grouping of subword tokens into word spans.
//!
//! A word is the maximal run of tokens whose character offsets fall in one
//! whitespace-delimited chunk of the source text, so punctuation attached to
//! a word ("souvenir.") belongs to that word. Hyphenated and apostrophe
//! forms are single words for the same reason. Tokens without usable offsets
//! fall back to the tokenizer's continuation marker.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokenizer::{whitespace_chunks, RawToken, TokenId, TokenizerSpec};

/// `[start, end)` token indices of one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

impl WordSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSentence {
    pub text: String,
    pub token_ids: Vec<TokenId>,
    /// Character ranges into `text`; `None` for special or offset-less tokens.
    pub offsets: Vec<Option<(usize, usize)>>,
    pub word_spans: Vec<WordSpan>,
    pub special_prefix_len: usize,
    pub special_suffix_len: usize,
}

impl AlignedSentence {
    /// Token positions that contribute to the score.
    pub fn scored_range(&self) -> Range<usize> {
        self.special_prefix_len..self.token_ids.len() - self.special_suffix_len
    }

    pub fn n_scored(&self) -> usize {
        self.token_ids.len() - self.special_prefix_len - self.special_suffix_len
    }

    pub fn n_words(&self) -> usize {
        self.word_spans.len()
    }

    /// Index of the word containing token position `pos`.
    pub fn word_index(&self, pos: usize) -> Option<usize> {
        let i = self.word_spans.partition_point(|w| w.end <= pos);
        self.word_spans.get(i).filter(|w| w.contains(pos)).map(|_| i)
    }

    /// Surface text of a word, taken from the offsets of its first and last
    /// tokens. Falls back to an empty string if the word has no offsets.
    pub fn word_text(&self, word: usize) -> String {
        let span = self.word_spans[word];
        let start = span.range().find_map(|p| self.offsets[p].map(|o| o.0));
        let end = span.range().rev().find_map(|p| self.offsets[p].map(|o| o.1));
        match (start, end) {
            (Some(s), Some(e)) if s <= e => self.text.chars().skip(s).take(e - s).collect(),
            _ => String::new(),
        }
    }
}

/// Builds an [`AlignedSentence`] from a tokenization of `text`.
///
/// Leading and trailing tokens whose ids are special (cls, sep, bos, pad,
/// mask) become the unscored prefix and suffix.
pub fn align(text: &str, spec: &TokenizerSpec, tokens: &[RawToken]) -> Result<AlignedSentence> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("sentence text is empty".into()));
    }
    let char_len = text.chars().count();

    let mut last_start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if tok.id as usize >= spec.vocab_size() {
            return Err(Error::VocabularyMismatch(format!(
                "token {i} has id {} but the vocabulary has {} entries",
                tok.id,
                spec.vocab_size()
            )));
        }
        if let Some((s, e)) = tok.offsets {
            if s > e || e > char_len {
                return Err(Error::MalformedTokenization(format!(
                    "token {i} offsets ({s}, {e}) outside text of {char_len} chars"
                )));
            }
            if s < last_start {
                return Err(Error::MalformedTokenization(format!(
                    "token {i} starts at {s}, before the previous token start {last_start}"
                )));
            }
            last_start = s;
        }
    }

    let is_special = |t: &RawToken| spec.special.contains(t.id);
    let prefix = tokens.iter().take_while(|t| is_special(t)).count();
    let suffix = tokens[prefix..].iter().rev().take_while(|t| is_special(t)).count();
    let scored = prefix..tokens.len() - suffix;
    if scored.is_empty() {
        return Err(Error::EmptyInput("tokenization has no scoreable tokens".into()));
    }
    if let Some(p) = scored.clone().find(|&p| is_special(&tokens[p])) {
        return Err(Error::MalformedTokenization(format!(
            "special token id {} at position {p} inside the sentence body",
            tokens[p].id
        )));
    }

    let mut chunk_of = vec![None; char_len];
    for (ci, (s, e)) in whitespace_chunks(text).into_iter().enumerate() {
        chunk_of[s..e].iter_mut().for_each(|c| *c = Some(ci));
    }
    let token_chunk = |tok: &RawToken| -> Option<usize> {
        let (s, e) = tok.offsets?;
        (s..e).find_map(|c| chunk_of[c])
    };

    let mut spans = Vec::new();
    let mut word_start = scored.start;
    let mut word_chunk: Option<usize> = None;
    for p in scored.clone() {
        let chunk = token_chunk(&tokens[p]);
        let starts_word = if p == scored.start {
            true
        } else {
            match (chunk, word_chunk) {
                (Some(c), Some(w)) => c != w,
                _ => spec.marker_starts_word(tokens[p].id).unwrap_or(true),
            }
        };
        if starts_word && p != scored.start {
            spans.push(WordSpan {
                start: word_start,
                end: p,
            });
            word_start = p;
            word_chunk = None;
        }
        if chunk.is_some() {
            word_chunk = chunk;
        }
    }
    spans.push(WordSpan {
        start: word_start,
        end: scored.end,
    });

    Ok(AlignedSentence {
        text: text.to_string(),
        token_ids: tokens.iter().map(|t| t.id).collect(),
        offsets: tokens
            .iter()
            .map(|t| if is_special(t) { None } else { t.offsets })
            .collect(),
        word_spans: spans,
        special_prefix_len: prefix,
        special_suffix_len: suffix,
    })
}

/// Fraction of words split into at least two tokens.
pub fn oov_ratio<'a, I>(corpus: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a AlignedSentence>,
{
    let (mut multi, mut total) = (0usize, 0usize);
    for s in corpus {
        total += s.word_spans.len();
        multi += s.word_spans.iter().filter(|w| w.len() >= 2).count();
    }
    if total == 0 {
        return Err(Error::EmptyInput("corpus has no words".into()));
    }
    Ok(multi as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{Continuation, SpecialTokens, Tokenizer, VocabTokenizer};
    use std::collections::HashMap;

    fn spec() -> TokenizerSpec {
        let words = [
            "[PAD]", "[CLS]", "[SEP]", "[MASK]", "The", "travel", "##er", "lost", "the", "so", "##uven", "##ir", "Hi",
            ".",
        ];
        let vocab: HashMap<String, TokenId> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), i as TokenId))
            .collect();
        TokenizerSpec::new(
            vocab,
            Continuation::PrefixContinuation,
            SpecialTokens {
                pad: 0,
                cls: Some(1),
                sep: Some(2),
                mask: Some(3),
                bos: None,
                unk: None,
            },
            true,
        )
        .unwrap()
    }

    fn spans(pairs: &[(usize, usize)]) -> Vec<WordSpan> {
        pairs.iter().map(|&(start, end)| WordSpan { start, end }).collect()
    }

    #[test]
    fn souvenir_subtokens_form_one_word() {
        let text = "The traveler lost the souvenir";
        let toks = vec![
            RawToken::special(1),
            RawToken::new(4, 0, 3),
            RawToken::new(5, 4, 10),
            RawToken::new(6, 10, 12),
            RawToken::new(7, 13, 17),
            RawToken::new(8, 18, 21),
            RawToken::new(9, 22, 24),
            RawToken::new(10, 24, 28),
            RawToken::new(11, 28, 30),
            RawToken::special(2),
        ];
        let s = align(text, &spec(), &toks).unwrap();
        assert_eq!(s.word_spans, spans(&[(1, 2), (2, 4), (4, 5), (5, 6), (6, 9)]));
        assert_eq!(s.special_prefix_len, 1);
        assert_eq!(s.special_suffix_len, 1);
        assert_eq!(s.n_scored(), 8);
        assert_eq!(s.word_text(4), "souvenir");
        assert_eq!(s.word_index(7), Some(4));
        assert_eq!(s.word_index(0), None);
    }

    #[test]
    fn single_token_sentence() {
        let s = align(
            "Hi",
            &spec(),
            &[RawToken::special(1), RawToken::new(12, 0, 2), RawToken::special(2)],
        )
        .unwrap();
        assert_eq!(s.word_spans, spans(&[(1, 2)]));
    }

    #[test]
    fn one_token_per_word_is_identity_grouping() {
        let text = "The lost the The lost Hi";
        let tok = VocabTokenizer::new(spec());
        let toks = tok.encode_framed(text, crate::tokenizer::Framing::Masked).unwrap();
        let s = align(text, &spec(), &toks).unwrap();
        assert_eq!(s.word_spans, spans(&[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]));
    }

    #[test]
    fn offsets_override_markers_for_punctuation() {
        // "." is marker-initial but sits in the same chunk as "souvenir"
        let toks = vec![
            RawToken::new(9, 0, 2),
            RawToken::new(10, 2, 6),
            RawToken::new(11, 6, 8),
            RawToken::new(13, 8, 9),
        ];
        let s = align("souvenir.", &spec(), &toks).unwrap();
        assert_eq!(s.word_spans, spans(&[(0, 4)]));
    }

    #[test]
    fn markers_used_without_offsets() {
        let toks: Vec<_> = [4, 9, 10, 11, 7].iter().map(|&i| RawToken::special(i)).collect();
        let s = align("The souvenir lost", &spec(), &toks).unwrap();
        assert_eq!(s.word_spans, spans(&[(0, 1), (1, 4), (4, 5)]));
    }

    #[test]
    fn error_cases() {
        let sp = spec();
        assert!(matches!(
            align("   ", &sp, &[RawToken::new(4, 0, 1)]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            align("Hi", &sp, &[RawToken::new(12, 0, 3)]),
            Err(Error::MalformedTokenization(_))
        ));
        assert!(matches!(
            align("Hi Hi", &sp, &[RawToken::new(12, 3, 5), RawToken::new(12, 0, 2)]),
            Err(Error::MalformedTokenization(_))
        ));
        assert!(matches!(
            align("Hi", &sp, &[RawToken::new(99, 0, 2)]),
            Err(Error::VocabularyMismatch(_))
        ));
        assert!(matches!(
            align("Hi", &sp, &[RawToken::special(1), RawToken::special(2)]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            align(
                "Hi Hi",
                &sp,
                &[RawToken::new(12, 0, 2), RawToken::special(3), RawToken::new(12, 3, 5)]
            ),
            Err(Error::MalformedTokenization(_))
        ));
    }

    #[test]
    fn oov_ratio_counts_multi_token_words() {
        let single = align("Hi Hi", &spec(), &[RawToken::new(12, 0, 2), RawToken::new(12, 3, 5)]).unwrap();
        assert_eq!(oov_ratio([&single]).unwrap(), 0.0);
        assert!(matches!(
            oov_ratio(std::iter::empty::<&AlignedSentence>()),
            Err(Error::EmptyInput(_))
        ));
    }
}
