mod common;

use pllbench_core::align::WordSpan;
use pllbench_core::engine::tokenize_and_align;
use pllbench_core::tokenizer::{read_tokenization_jsonl, whitespace_chunks, Framing};
use pllbench_core::{align, oov_ratio, Error, RawToken, Tokenizer, TokenizerSpec, VocabTokenizer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn wordpiece() -> TokenizerSpec {
    TokenizerSpec::load(fixture("wordpiece.json")).unwrap()
}

fn spans(pairs: &[(usize, usize)]) -> Vec<WordSpan> {
    pairs.iter().map(|&(start, end)| WordSpan { start, end }).collect()
}

#[test]
fn souvenir_groups_subtokens() {
    let rows = read_tokenization_jsonl(fixture("oov_tokenized.jsonl")).unwrap();
    let s = align(&rows[0].text, &wordpiece(), &rows[0].tokens).unwrap();
    assert_eq!(s.word_spans, spans(&[(1, 2), (2, 4), (4, 5), (5, 6), (6, 9)]));
    assert_eq!(s.special_prefix_len, 1);
    assert_eq!(s.special_suffix_len, 1);
    assert_eq!(s.word_text(4), "souvenir");
}

#[test]
fn vocab_tokenizer_matches_exported_tokenization() {
    let tok = VocabTokenizer::new(wordpiece());
    for row in read_tokenization_jsonl(fixture("oov_tokenized.jsonl")).unwrap() {
        assert_eq!(
            tok.encode_framed(&row.text, Framing::Masked).unwrap(),
            row.tokens,
            "{}",
            row.text
        );
    }
}

#[test]
fn marker_fallback_without_offsets() {
    let spec = wordpiece();
    let id = |t: &str| spec.token_id(t).unwrap();
    let tokens: Vec<RawToken> = [
        "[CLS]", "The", "travel", "##er", "lost", "the", "so", "##uven", "##ir", "[SEP]",
    ]
    .iter()
    .map(|t| RawToken::special(id(t)))
    .collect();
    let s = align("The traveler lost the souvenir", &spec, &tokens).unwrap();
    assert_eq!(s.word_spans, spans(&[(1, 2), (2, 4), (4, 5), (5, 6), (6, 9)]));
}

#[test]
fn single_and_all_single_token_words() {
    let tok = VocabTokenizer::new(wordpiece());
    let s = tokenize_and_align("Hi", &tok, Framing::Masked).unwrap();
    assert_eq!(s.word_spans, spans(&[(1, 2)]));

    let s = tokenize_and_align("The cat sat on the mat", &tok, Framing::Masked).unwrap();
    assert_eq!(s.word_spans, spans(&[(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7)]));
    assert_eq!(oov_ratio([&s]).unwrap(), 0.0);
}

#[test]
fn oov_ratio_fixture() {
    let spec = wordpiece();
    let corpus: Vec<_> = read_tokenization_jsonl(fixture("oov_tokenized.jsonl"))
        .unwrap()
        .iter()
        .map(|r| align(&r.text, &spec, &r.tokens).unwrap())
        .collect();
    // hand count: traveler, souvenir, unbelievable out of 10 words
    let words: usize = corpus.iter().map(|s| s.n_words()).sum();
    assert_eq!(words, 10);
    assert_eq!(oov_ratio(&corpus).unwrap(), 3.0 / 10.0);
    assert!(matches!(oov_ratio(&[]), Err(Error::EmptyInput(_))));
}

#[test]
fn tokenizer_spec_json_round_trips() {
    let spec = wordpiece();
    let back = TokenizerSpec::from_json_str(&spec.to_json().unwrap()).unwrap();
    assert_eq!(back.vocab_size(), spec.vocab_size());
    assert_eq!(back.special, spec.special);
    assert_eq!(back.marker, "##");
    for id in 0..spec.vocab_size() as u32 {
        assert_eq!(back.token_str(id), spec.token_str(id));
    }
}

#[test]
fn malformed_tokenizations_are_rejected() {
    let spec = wordpiece();
    let text = "Hi there";
    let bad_offsets = [RawToken::new(13, 0, 2), RawToken::new(14, 3, 99)];
    assert!(matches!(
        align(text, &spec, &bad_offsets),
        Err(Error::MalformedTokenization(_))
    ));
    let backwards = [RawToken::new(14, 3, 8), RawToken::new(13, 0, 2)];
    assert!(matches!(
        align(text, &spec, &backwards),
        Err(Error::MalformedTokenization(_))
    ));
    let out_of_vocab = [RawToken::new(10_000, 0, 2)];
    assert!(matches!(
        align(text, &spec, &out_of_vocab),
        Err(Error::VocabularyMismatch(_))
    ));
    let only_specials = [RawToken::special(1), RawToken::special(2)];
    assert!(matches!(align(text, &spec, &only_specials), Err(Error::EmptyInput(_))));
    assert!(matches!(align("  ", &spec, &bad_offsets), Err(Error::EmptyInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn spans_reconstruct_whitespace_chunks(seed in any::<u64>(), piece in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = common::random_text(&mut rng, 10, 12, true);
        let tok = common::hash_tokenizer(piece);
        let s = tokenize_and_align(&text, &tok, Framing::Masked).unwrap();
        let chars: Vec<char> = text.chars().collect();
        let chunks: Vec<String> = whitespace_chunks(&text)
            .into_iter()
            .map(|(a, b)| chars[a..b].iter().collect())
            .collect();
        let words: Vec<String> = (0..s.n_words()).map(|w| s.word_text(w)).collect();
        prop_assert_eq!(words, chunks);
        prop_assert_eq!(text.split_whitespace().count(), s.n_words());
    }

    #[test]
    fn spans_partition_the_scored_range(seed in any::<u64>(), piece in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = common::random_text(&mut rng, 10, 12, true);
        let tok = common::hash_tokenizer(piece);
        let s = tokenize_and_align(&text, &tok, Framing::Masked).unwrap();
        let flat: Vec<usize> = s.word_spans.iter().flat_map(|w| w.start..w.end).collect();
        prop_assert_eq!(flat, s.scored_range().collect::<Vec<_>>());
        prop_assert!(s.word_spans.iter().all(|w| !w.is_empty()));
    }

    #[test]
    fn align_is_pure(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = common::random_text(&mut rng, 6, 9, true);
        let tok = common::hash_tokenizer(3);
        let tokens = tok.encode_framed(&text, Framing::Masked).unwrap();
        prop_assert_eq!(
            align(&text, tok.spec(), &tokens).unwrap(),
            align(&text, tok.spec(), &tokens).unwrap()
        );
    }
}
