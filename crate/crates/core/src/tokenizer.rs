//! Tokenizer metadata and the tokenizers used to turn raw text into
//! `(id, char-range)` sequences.
//!
//! Real model tokenizations are expected to arrive pre-computed (see
//! [`read_tokenization_jsonl`]). The two in-crate tokenizers exist so that
//! plain-text corpora can be scored without leaving the process:
//! [`VocabTokenizer`] does greedy longest-match against a [`TokenizerSpec`]
//! vocabulary, and [`HashTokenizer`] produces a synthetic segmentation for
//! the reference backend.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Continuation {
    /// Non-initial subwords carry a marker, e.g. `##uven`.
    #[serde(rename = "prefix-continuation")]
    PrefixContinuation,
    /// Word-initial tokens carry a marker, e.g. a leading-space `Ġ`.
    #[serde(rename = "prefix-word-start")]
    PrefixWordStart,
}

impl Continuation {
    pub fn default_marker(self) -> &'static str {
        match self {
            Continuation::PrefixContinuation => "##",
            Continuation::PrefixWordStart => "\u{0120}",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    #[serde(default)]
    pub mask: Option<TokenId>,
    #[serde(default)]
    pub cls: Option<TokenId>,
    #[serde(default)]
    pub sep: Option<TokenId>,
    #[serde(default)]
    pub bos: Option<TokenId>,
    pub pad: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unk: Option<TokenId>,
}

impl SpecialTokens {
    pub fn contains(&self, id: TokenId) -> bool {
        [self.mask, self.cls, self.sep, self.bos, Some(self.pad)]
            .into_iter()
            .flatten()
            .any(|s| s == id)
    }

    pub fn mask_id(&self) -> Result<TokenId> {
        self.mask
            .ok_or_else(|| Error::Config("tokenizer spec has no mask token".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecFile {
    vocab: HashMap<String, TokenId>,
    continuation: Continuation,
    special: SpecialTokens,
    cased: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab_size: Option<usize>,
}

/// Vocabulary, subword convention and special ids of one tokenizer.
#[derive(Debug, Clone)]
pub struct TokenizerSpec {
    vocab: HashMap<String, TokenId>,
    id_to_token: HashMap<TokenId, String>,
    vocab_size: usize,
    pub continuation: Continuation,
    pub marker: String,
    pub special: SpecialTokens,
    pub cased: bool,
}

impl TokenizerSpec {
    pub fn new(
        vocab: HashMap<String, TokenId>,
        continuation: Continuation,
        special: SpecialTokens,
        cased: bool,
    ) -> Result<Self> {
        Self::build(vocab, continuation, None, special, cased, None)
    }

    fn build(
        vocab: HashMap<String, TokenId>,
        continuation: Continuation,
        marker: Option<String>,
        special: SpecialTokens,
        cased: bool,
        declared_size: Option<usize>,
    ) -> Result<Self> {
        let max_id = vocab.values().copied().max().map_or(0, |m| m as usize + 1);
        let vocab_size = max_id.max(vocab.len()).max(declared_size.unwrap_or(0));
        let id_to_token: HashMap<TokenId, String> = vocab.iter().map(|(t, &id)| (id, t.clone())).collect();
        let spec = TokenizerSpec {
            vocab,
            id_to_token,
            vocab_size,
            continuation,
            marker: marker.unwrap_or_else(|| continuation.default_marker().to_string()),
            special,
            cased,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("mask", self.special.mask),
            ("cls", self.special.cls),
            ("sep", self.special.sep),
            ("bos", self.special.bos),
            ("pad", Some(self.special.pad)),
            ("unk", self.special.unk),
        ];
        for (name, id) in named {
            if let Some(id) = id {
                if id as usize >= self.vocab_size {
                    return Err(Error::VocabularyMismatch(format!(
                        "{name} id {id} outside vocabulary of size {}",
                        self.vocab_size
                    )));
                }
            }
        }
        let mlm = [self.special.mask, self.special.cls, self.special.sep];
        for (i, a) in mlm.iter().enumerate() {
            for b in &mlm[i + 1..] {
                if a.is_some() && a == b {
                    return Err(Error::Config("mask, cls and sep ids must be distinct".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SpecFile = serde_json::from_str(s)?;
        Self::build(
            file.vocab,
            file.continuation,
            file.marker,
            file.special,
            file.cased,
            file.vocab_size,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SpecFile {
            vocab: self.vocab.clone(),
            continuation: self.continuation,
            special: self.special,
            cased: self.cased,
            marker: Some(self.marker.clone()),
            vocab_size: Some(self.vocab_size),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.vocab.get(token).copied()
    }

    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(&id).map(String::as_str)
    }

    /// True when all of mask, cls and sep are defined.
    pub fn supports_masked(&self) -> bool {
        self.special.mask.is_some() && self.special.cls.is_some() && self.special.sep.is_some()
    }

    /// Whether the token string marks the start of a new word, judged by the
    /// continuation marker alone. `None` if the id has no known surface form.
    pub fn marker_starts_word(&self, id: TokenId) -> Option<bool> {
        let s = self.token_str(id)?;
        Some(match self.continuation {
            Continuation::PrefixContinuation => !s.starts_with(&self.marker),
            Continuation::PrefixWordStart => s.starts_with(&self.marker),
        })
    }

    /// Applies the casing rule used for vocabulary and frequency lookups.
    pub fn normalize_case(&self, s: &str) -> String {
        if self.cased {
            s.to_string()
        } else {
            s.to_lowercase()
        }
    }
}

/// One token of a tokenization. Offsets are `[start, end)` in characters
/// (Unicode scalar values) of the source text; special tokens have none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawToken {
    pub id: TokenId,
    pub offsets: Option<(usize, usize)>,
}

impl RawToken {
    pub fn new(id: TokenId, start: usize, end: usize) -> Self {
        RawToken {
            id,
            offsets: Some((start, end)),
        }
    }

    pub fn special(id: TokenId) -> Self {
        RawToken { id, offsets: None }
    }
}

/// Which special tokens wrap a sentence before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framing {
    /// `[CLS] ... [SEP]`
    Masked,
    /// `<bos> ...`
    Causal,
    None,
}

pub trait Tokenizer: Send + Sync {
    fn spec(&self) -> &TokenizerSpec;

    /// Tokenizes `text` without adding special tokens.
    fn encode(&self, text: &str) -> Result<Vec<RawToken>>;

    fn encode_framed(&self, text: &str, framing: Framing) -> Result<Vec<RawToken>> {
        let body = self.encode(text)?;
        let special = &self.spec().special;
        let missing = |name: &str| Error::Config(format!("tokenizer spec has no {name} token"));
        let mut out = Vec::with_capacity(body.len() + 2);
        match framing {
            Framing::Masked => {
                out.push(RawToken::special(special.cls.ok_or_else(|| missing("cls"))?));
                out.extend(body);
                out.push(RawToken::special(special.sep.ok_or_else(|| missing("sep"))?));
            }
            Framing::Causal => {
                out.push(RawToken::special(special.bos.ok_or_else(|| missing("bos"))?));
                out.extend(body);
            }
            Framing::None => out.extend(body),
        }
        Ok(out)
    }
}

/// Splits text into whitespace-delimited chunks, returned as char ranges.
pub fn whitespace_chunks(text: &str) -> Vec<(usize, usize)> {
    let mut chunks = Vec::new();
    let mut start = None;
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                chunks.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
        n = i + 1;
    }
    if let Some(s) = start {
        chunks.push((s, n));
    }
    chunks
}

/// Splits one chunk into runs of alphanumerics and single punctuation chars.
fn pre_tokens(chars: &[char], chunk: (usize, usize)) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = chunk.0;
    while i < chunk.1 {
        if chars[i].is_alphanumeric() {
            let s = i;
            while i < chunk.1 && chars[i].is_alphanumeric() {
                i += 1;
            }
            out.push((s, i));
        } else {
            out.push((i, i + 1));
            i += 1;
        }
    }
    out
}

/// Greedy longest-match tokenizer over a [`TokenizerSpec`] vocabulary.
///
/// This is not a faithful WordPiece or byte-level BPE implementation; it
/// reproduces their segmentation only when greedy matching happens to agree.
/// Use exported tokenizations for real-model runs.
#[derive(Debug, Clone)]
pub struct VocabTokenizer {
    spec: TokenizerSpec,
}

impl VocabTokenizer {
    pub fn new(spec: TokenizerSpec) -> Self {
        VocabTokenizer { spec }
    }

    fn match_pre_token(
        &self,
        chars: &[char],
        range: (usize, usize),
        word_initial: bool,
        out: &mut Vec<RawToken>,
    ) -> Result<()> {
        let normalized: Vec<char> = chars[range.0..range.1]
            .iter()
            .map(|&c| {
                if self.spec.cased {
                    c
                } else {
                    c.to_lowercase().next().unwrap_or(c)
                }
            })
            .collect();
        let marker = self.spec.marker.as_str();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < normalized.len() {
            let mut found = None;
            for end in (start + 1..=normalized.len()).rev() {
                let body: String = normalized[start..end].iter().collect();
                let candidate = match self.spec.continuation {
                    Continuation::PrefixContinuation if start > 0 => format!("{marker}{body}"),
                    Continuation::PrefixWordStart if start == 0 && word_initial => {
                        format!("{marker}{body}")
                    }
                    _ => body,
                };
                if let Some(id) = self.spec.token_id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(RawToken::new(id, range.0 + start, range.0 + end));
                    start = end;
                }
                None => {
                    let word: String = chars[range.0..range.1].iter().collect();
                    let unk = self.spec.special.unk.ok_or_else(|| {
                        Error::VocabularyMismatch(format!(
                            "no vocabulary entry covers {word:?} and the spec has no unk token"
                        ))
                    })?;
                    out.push(RawToken::new(unk, range.0, range.1));
                    return Ok(());
                }
            }
        }
        out.extend(pieces);
        Ok(())
    }
}

impl Tokenizer for VocabTokenizer {
    fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    fn encode(&self, text: &str) -> Result<Vec<RawToken>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        for (ci, chunk) in whitespace_chunks(text).into_iter().enumerate() {
            for (pi, pre) in pre_tokens(&chars, chunk).into_iter().enumerate() {
                // byte-level BPE marks the leading space, which only exists
                // before the first pre-token of a non-initial chunk
                let word_initial = ci > 0 && pi == 0;
                self.match_pre_token(&chars, pre, word_initial, &mut out)?;
            }
        }
        Ok(out)
    }
}

const HASH_SPECIALS: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "<bos>"];

/// Synthetic tokenizer for the reference backend.
///
/// Each alphanumeric run is cut into pieces of at most `piece_chars`
/// characters and every piece is hashed into the non-special id range, so
/// long words become multi-token words deterministically.
#[derive(Debug, Clone)]
pub struct HashTokenizer {
    spec: TokenizerSpec,
    piece_chars: usize,
}

impl HashTokenizer {
    pub const DEFAULT_PIECE_CHARS: usize = 4;

    pub fn new(vocab_size: usize, piece_chars: usize) -> Result<Self> {
        if vocab_size <= HASH_SPECIALS.len() {
            return Err(Error::Config(format!(
                "hash tokenizer needs a vocabulary larger than {}",
                HASH_SPECIALS.len()
            )));
        }
        if piece_chars == 0 {
            return Err(Error::Config("piece length must be at least 1".into()));
        }
        let vocab = HASH_SPECIALS
            .iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i as TokenId))
            .collect();
        let special = SpecialTokens {
            pad: 0,
            cls: Some(1),
            sep: Some(2),
            mask: Some(3),
            bos: Some(4),
            unk: None,
        };
        let spec = TokenizerSpec::build(
            vocab,
            Continuation::PrefixContinuation,
            None,
            special,
            true,
            Some(vocab_size),
        )?;
        Ok(HashTokenizer { spec, piece_chars })
    }

    fn piece_id(&self, piece: &str, continuation: bool) -> TokenId {
        let mut h = crate::backend::reference::Fnv64::new();
        h.write(&[u8::from(continuation)]);
        h.write(piece.as_bytes());
        let body = (self.spec.vocab_size - HASH_SPECIALS.len()) as u64;
        (HASH_SPECIALS.len() as u64 + h.finish() % body) as TokenId
    }
}

impl Tokenizer for HashTokenizer {
    fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    fn encode(&self, text: &str) -> Result<Vec<RawToken>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        for chunk in whitespace_chunks(text) {
            for (s, e) in pre_tokens(&chars, chunk) {
                let mut i = s;
                while i < e {
                    let j = (i + self.piece_chars).min(e);
                    let piece: String = chars[i..j].iter().collect();
                    out.push(RawToken::new(self.piece_id(&piece, i > s), i, j));
                    i = j;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct TokenizationLine {
    text: String,
    tokens: Vec<Vec<i64>>,
}

/// One pre-tokenized sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenization {
    pub text: String,
    pub tokens: Vec<RawToken>,
}

fn parse_token(raw: &[i64]) -> std::result::Result<RawToken, String> {
    let id = |v: i64| TokenId::try_from(v).map_err(|_| format!("token id {v} out of range"));
    let off = |v: i64| usize::try_from(v).map_err(|_| format!("negative offset {v}"));
    match raw {
        [i] => Ok(RawToken::special(id(*i)?)),
        [i, s, e] => Ok(RawToken::new(id(*i)?, off(*s)?, off(*e)?)),
        other => Err(format!(
            "token entries must be [id] or [id, start, end], got {} values",
            other.len()
        )),
    }
}

/// Parses one line of the tokenization fixture format
/// `{"text": ..., "tokens": [[id, start, end], ...]}`. A bare `[id]` entry is
/// a token without offsets.
pub fn parse_tokenization_line(line: &str) -> std::result::Result<Tokenization, String> {
    let parsed: TokenizationLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tokens = parsed
        .tokens
        .iter()
        .map(|t| parse_token(t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Tokenization {
        text: parsed.text,
        tokens,
    })
}

pub fn read_tokenization_jsonl(path: impl AsRef<Path>) -> Result<Vec<Tokenization>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_tokenization_line(&line).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

pub fn tokenization_to_json(t: &Tokenization) -> Result<String> {
    let tokens = t
        .tokens
        .iter()
        .map(|tok| match tok.offsets {
            Some((s, e)) => vec![tok.id as i64, s as i64, e as i64],
            None => vec![tok.id as i64],
        })
        .collect();
    Ok(serde_json::to_string(&TokenizationLine {
        text: t.text.clone(),
        tokens,
    })?)
}
