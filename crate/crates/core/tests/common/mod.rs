//! Fixture generators and naive oracles shared by the integration tests.
#![allow(dead_code)]

use pllbench_core::align::WordSpan;
use pllbench_core::backend::{BatchInput, Target};
use pllbench_core::engine::{framing_for, tokenize_and_align};
use pllbench_core::tokenizer::TokenId;
use pllbench_core::{
    AlignedSentence, Backend, HashTokenizer, MaskingStrategy, ReferenceBackend, ReferenceBackendConfig, Tokenizer,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 500;

pub fn reference(seed: u64) -> ReferenceBackend {
    ReferenceBackend::new(ReferenceBackendConfig::new(VOCAB, seed)).unwrap()
}

pub fn hash_tokenizer(piece_chars: usize) -> HashTokenizer {
    HashTokenizer::new(VOCAB, piece_chars).unwrap()
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

pub fn random_word(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| *LETTERS.choose(rng).unwrap() as char).collect()
}

/// Random lowercase text, optionally with trailing punctuation on words.
pub fn random_text(rng: &mut ChaCha8Rng, max_words: usize, max_word_len: usize, punctuation: bool) -> String {
    let n = rng.gen_range(1..=max_words);
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        let mut w = random_word(rng, max_word_len);
        if punctuation && rng.gen_bool(0.15) {
            w.push(*[',', '.', '!'].choose(rng).unwrap());
        }
        words.push(w);
    }
    words.join(" ")
}

/// A tokenized random sentence framed for `strategy`.
pub fn random_sentence(rng: &mut ChaCha8Rng, strategy: MaskingStrategy) -> AlignedSentence {
    let tok = hash_tokenizer(rng.gen_range(2..=5));
    let text = random_text(rng, 8, 10, true);
    tokenize_and_align(&text, &tok, framing_for(strategy)).unwrap()
}

/// An aligned sentence built directly from word lengths, without a
/// tokenizer. Ids avoid the hash tokenizer's special range.
pub fn synthetic(prefix: &[TokenId], word_lens: &[usize], suffix: &[TokenId], ids: &[TokenId]) -> AlignedSentence {
    let mut token_ids: Vec<TokenId> = prefix.to_vec();
    let mut spans = Vec::new();
    let mut k = 0;
    for &len in word_lens {
        let start = token_ids.len();
        for _ in 0..len {
            token_ids.push(ids[k % ids.len()]);
            k += 1;
        }
        spans.push(WordSpan {
            start,
            end: token_ids.len(),
        });
    }
    token_ids.extend_from_slice(suffix);
    let n = token_ids.len();
    AlignedSentence {
        text: "synthetic".into(),
        token_ids,
        offsets: vec![None; n],
        word_spans: spans,
        special_prefix_len: prefix.len(),
        special_suffix_len: suffix.len(),
    }
}

fn word_of(s: &AlignedSentence, t: usize) -> (usize, usize) {
    let w = s
        .word_spans
        .iter()
        .find(|w| w.start <= t && t < w.end)
        .expect("scored token belongs to a word");
    (w.start, w.end)
}

/// Positions hidden when scoring `t`, written from the strategy definitions.
pub fn oracle_hidden(s: &AlignedSentence, strategy: MaskingStrategy, t: usize, p: usize) -> bool {
    let body_start = s.special_prefix_len;
    let body_end = s.token_ids.len() - s.special_suffix_len;
    if p < body_start || p >= body_end {
        return false;
    }
    let (ws, we) = word_of(s, t);
    match strategy {
        MaskingStrategy::Original => p == t,
        MaskingStrategy::WordL2r => p >= t && p < we,
        MaskingStrategy::WholeWord => p >= ws && p < we,
        MaskingStrategy::SentenceL2r => p >= t,
        MaskingStrategy::Causal => panic!("causal has no mask"),
    }
}

/// One unbatched forward pass per token, masks built position by position.
pub fn naive_token_logprobs<B: Backend>(
    backend: &B,
    s: &AlignedSentence,
    strategy: MaskingStrategy,
    mask_id: TokenId,
    bos_id: TokenId,
) -> Vec<f64> {
    let body_start = s.special_prefix_len;
    let body_end = s.token_ids.len() - s.special_suffix_len;
    let mut out = Vec::new();
    for t in body_start..body_end {
        let target = s.token_ids[t] as usize;
        let lp = if strategy == MaskingStrategy::Causal {
            let mut ctx = Vec::new();
            if body_start == 0 {
                ctx.push(bos_id);
            }
            ctx.extend_from_slice(&s.token_ids[..t]);
            let n = ctx.len();
            let input = BatchInput {
                ids: vec![ctx],
                attention_mask: vec![vec![1; n]],
            };
            backend
                .causal_logprobs(
                    &input,
                    &[Target {
                        row: 0,
                        position: n - 1,
                    }],
                )
                .unwrap()[0][target]
        } else {
            let mut ids = s.token_ids.clone();
            for (p, id) in ids.iter_mut().enumerate() {
                if oracle_hidden(s, strategy, t, p) {
                    *id = mask_id;
                }
            }
            let n = ids.len();
            let input = BatchInput {
                ids: vec![ids],
                attention_mask: vec![vec![1; n]],
            };
            backend.mlm_logprobs(&input, &[Target { row: 0, position: t }]).unwrap()[0][target]
        };
        out.push(lp);
    }
    out
}

pub fn naive_sentence_score<B: Backend>(
    backend: &B,
    s: &AlignedSentence,
    strategy: MaskingStrategy,
    tokenizer: &dyn Tokenizer,
) -> f64 {
    let special = tokenizer.spec().special;
    naive_token_logprobs(backend, s, strategy, special.mask.unwrap(), special.bos.unwrap())
        .iter()
        .sum()
}

/// Pearson's r from the textbook two-pass formula.
pub fn two_pass_pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}
