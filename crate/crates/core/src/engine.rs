//! Materializes inference requests, drives a [`Backend`] in padded batches
//! and aggregates per-token log-probabilities into word and sentence scores.
//!
//! Scores are natural logs. Token scores are summed left to right inside
//! each word and word scores left to right into the sentence score, so the
//! sentence score equals the sum of the word scores exactly.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align, AlignedSentence};
use crate::backend::{Backend, BatchInput, Target};
use crate::error::{Error, Result};
use crate::schedule::{schedule, MaskingStrategy};
use crate::tokenizer::{Framing, SpecialTokens, TokenId, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPolicy {
    #[default]
    FailFast,
    SkipAndLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenScore {
    pub position: usize,
    pub token_id: TokenId,
    pub word_index: usize,
    pub logprob: f64,
    pub strategy: MaskingStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordScore {
    pub word: String,
    pub tokens: Range<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub text: String,
    pub strategy: MaskingStrategy,
    pub token_scores: Vec<TokenScore>,
    pub word_scores: Vec<WordScore>,
    pub sentence_score: f64,
}

impl ScoreReport {
    pub fn n_tokens(&self) -> usize {
        self.token_scores.len()
    }

    pub fn to_line(&self) -> ReportLine {
        ReportLine {
            text: self.text.clone(),
            strategy: self.strategy,
            sentence_score: self.sentence_score,
            words: self
                .word_scores
                .iter()
                .map(|w| WordLine {
                    word: w.word.clone(),
                    score: w.score,
                })
                .collect(),
            tokens: self
                .token_scores
                .iter()
                .map(|t| TokenLine {
                    pos: t.position,
                    id: t.token_id,
                    logprob: t.logprob,
                })
                .collect(),
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_line())?)
    }
}

/// Serialized form of a [`ScoreReport`], one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub text: String,
    pub strategy: MaskingStrategy,
    pub sentence_score: f64,
    pub words: Vec<WordLine>,
    pub tokens: Vec<TokenLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordLine {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLine {
    pub pos: usize,
    pub id: TokenId,
    pub logprob: f64,
}

pub fn write_reports_jsonl<'a, W: Write>(mut out: W, reports: impl IntoIterator<Item = &'a ScoreReport>) -> Result<()> {
    for r in reports {
        writeln!(out, "{}", r.to_json_line()?)?;
    }
    Ok(())
}

pub fn read_report_lines(text: &str) -> Result<Vec<ReportLine>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// `(text, strategy, score)` rows.
pub fn write_reports_csv<'a, W: Write>(out: W, reports: impl IntoIterator<Item = &'a ScoreReport>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["text", "strategy", "score"])?;
    for r in reports {
        w.write_record([r.text.as_str(), r.strategy.name(), &r.sentence_score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Neutral frames for scoring isolated words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextTemplate {
    MyWordIs,
    Dictionary,
    None,
}

impl ContextTemplate {
    pub fn prefix(self) -> &'static str {
        match self {
            ContextTemplate::MyWordIs => "My word is ",
            ContextTemplate::Dictionary => "I opened the dictionary and randomly picked a word. It was ",
            ContextTemplate::None => "",
        }
    }

    pub fn render(self, word: &str) -> String {
        format!("{}{}", self.prefix(), word)
    }
}

impl std::str::FromStr for ContextTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "my-word-is" => Ok(ContextTemplate::MyWordIs),
            "dictionary" => Ok(ContextTemplate::Dictionary),
            "none" => Ok(ContextTemplate::None),
            other => Err(Error::Config(format!(
                "unknown context template {other:?}; expected my-word-is, dictionary or none"
            ))),
        }
    }
}

pub fn framing_for(strategy: MaskingStrategy) -> Framing {
    if strategy.is_masked() {
        Framing::Masked
    } else {
        Framing::Causal
    }
}

/// One backend row plus the targets read from it.
struct Unit {
    sentence: usize,
    ids: Vec<TokenId>,
    causal: bool,
    /// `(position to read, id to gather, original token position, word)`
    reads: Vec<(usize, TokenId, usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    pub batch_size: usize,
    pub policy: ErrorPolicy,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            batch_size: 32,
            policy: ErrorPolicy::FailFast,
        }
    }
}

pub struct Engine<B> {
    backend: B,
    special: SpecialTokens,
    options: EngineOptions,
}

impl<B: Backend> Engine<B> {
    pub fn new(backend: B, special: SpecialTokens) -> Self {
        Engine {
            backend,
            special,
            options: EngineOptions::default(),
        }
    }

    pub fn with_options(mut self, options: EngineOptions) -> Result<Self> {
        if options.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.options = options;
        Ok(self)
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn special(&self) -> &SpecialTokens {
        &self.special
    }

    fn check_capability(&self, strategy: MaskingStrategy) -> Result<()> {
        let caps = self.backend.capabilities();
        let (ok, capability) = if strategy.is_masked() {
            (caps.masked, "masked")
        } else {
            (caps.causal, "causal")
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedStrategy {
                strategy: strategy.to_string(),
                capability,
            })
        }
    }

    fn plan(&self, index: usize, s: &AlignedSentence, strategy: MaskingStrategy) -> Result<Vec<Unit>> {
        if s.n_scored() == 0 {
            return Err(Error::EmptyInput("sentence has no scored tokens".into()));
        }
        let vocab = self.backend.vocab_size();
        if let Some(&bad) = s.token_ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::VocabularyMismatch(format!(
                "token id {bad} outside backend vocabulary of size {vocab}"
            )));
        }
        let max = self.backend.max_sequence_length();
        if strategy.is_masked() {
            if s.token_ids.len() > max {
                return Err(Error::SequenceTooLong {
                    len: s.token_ids.len(),
                    max,
                });
            }
            let mask_id = self.special.mask_id()?;
            Ok(schedule(s, strategy)?
                .into_iter()
                .map(|r| Unit {
                    sentence: index,
                    ids: r.materialize(mask_id),
                    causal: false,
                    reads: vec![(r.target_position, r.target_id, r.target_position, r.word_index)],
                })
                .collect())
        } else {
            let body = &s.token_ids[..s.token_ids.len() - s.special_suffix_len];
            let mut ids = Vec::with_capacity(body.len() + 1);
            let shift = if s.special_prefix_len == 0 {
                let bos = self
                    .special
                    .bos
                    .or_else(|| self.backend.bos_id())
                    .ok_or_else(|| Error::Alignment("causal scoring needs a beginning-of-sentence token".into()))?;
                ids.push(bos);
                1
            } else {
                0
            };
            ids.extend_from_slice(body);
            if ids.len() > max {
                return Err(Error::SequenceTooLong { len: ids.len(), max });
            }
            let reads = s
                .word_spans
                .iter()
                .enumerate()
                .flat_map(|(w, span)| span.range().map(move |p| (p, w)))
                .map(|(p, w)| (p + shift - 1, s.token_ids[p], p, w))
                .collect();
            Ok(vec![Unit {
                sentence: index,
                ids,
                causal: true,
                reads,
            }])
        }
    }

    fn run_batch(&self, units: &[&Unit]) -> Result<Vec<Vec<f64>>> {
        let input = BatchInput::padded(units.iter().map(|u| u.ids.clone()).collect(), self.special.pad);
        let targets: Vec<Target> = units
            .iter()
            .enumerate()
            .flat_map(|(row, u)| u.reads.iter().map(move |&(position, ..)| Target { row, position }))
            .collect();
        let dists = if units[0].causal {
            self.backend.causal_logprobs(&input, &targets)?
        } else {
            self.backend.mlm_logprobs(&input, &targets)?
        };
        if dists.len() != targets.len() {
            return Err(Error::Backend(format!(
                "backend returned {} distributions for {} targets",
                dists.len(),
                targets.len()
            )));
        }
        // gather immediately so full distributions are dropped per batch
        let mut it = dists.into_iter();
        let mut out = Vec::with_capacity(units.len());
        for u in units {
            let mut row = Vec::with_capacity(u.reads.len());
            for &(_, id, ..) in &u.reads {
                let dist = it.next().expect("length checked above");
                let lp = *dist.get(id as usize).ok_or_else(|| {
                    Error::Backend(format!(
                        "distribution of length {} has no entry for id {id}",
                        dist.len()
                    ))
                })?;
                if lp.is_nan() || lp > 1e-9 {
                    return Err(Error::Backend(format!("invalid log-probability {lp}")));
                }
                row.push(lp);
            }
            out.push(row);
        }
        Ok(out)
    }

    /// Scores one sentence.
    pub fn score_sentence(&self, s: &AlignedSentence, strategy: MaskingStrategy) -> Result<ScoreReport> {
        self.check_capability(strategy)?;
        let units = self.plan(0, s, strategy)?;
        let per_batch = self.options.batch_size.min(self.backend.max_batch()).max(1);
        let refs: Vec<&Unit> = units.iter().collect();
        let mut logprobs = Vec::with_capacity(units.len());
        for (bi, chunk) in refs.chunks(per_batch).enumerate() {
            let rows = self
                .run_batch(chunk)
                .map_err(|e| Error::backend_with_context(format!("batch {bi}"), e))?;
            logprobs.extend(rows);
        }
        Ok(assemble(s, strategy, &units, &logprobs))
    }

    /// Scores a corpus in packed batches. Results keep corpus order; under
    /// [`ErrorPolicy::FailFast`] the first failure aborts the call.
    pub fn score_batch(
        &self,
        corpus: &[AlignedSentence],
        strategy: MaskingStrategy,
    ) -> Result<Vec<Result<ScoreReport>>> {
        self.check_capability(strategy)?;
        let mut failed: Vec<Option<Error>> = Vec::with_capacity(corpus.len());
        let mut units = Vec::new();
        let mut unit_ranges = Vec::with_capacity(corpus.len());
        for (i, s) in corpus.iter().enumerate() {
            match self.plan(i, s, strategy) {
                Ok(us) => {
                    unit_ranges.push(units.len()..units.len() + us.len());
                    units.extend(us);
                    failed.push(None);
                }
                Err(e) => {
                    if self.options.policy == ErrorPolicy::FailFast {
                        return Err(e);
                    }
                    unit_ranges.push(units.len()..units.len());
                    failed.push(Some(e));
                }
            }
        }

        let per_batch = self.options.batch_size.min(self.backend.max_batch()).max(1);
        let refs: Vec<&Unit> = units.iter().collect();
        let batches: Vec<&[&Unit]> = refs.chunks(per_batch).collect();
        let run = |(bi, chunk): (usize, &&[&Unit])| {
            self.run_batch(chunk)
                .map_err(|e| Error::backend_with_context(format!("batch {bi}"), e))
        };
        let outputs: Vec<Result<Vec<Vec<f64>>>> = if self.backend.concurrent() {
            batches.par_iter().enumerate().map(run).collect()
        } else {
            batches.iter().enumerate().map(run).collect()
        };

        let mut logprobs: Vec<Option<Vec<f64>>> = Vec::with_capacity(units.len());
        for (chunk, out) in batches.iter().zip(outputs) {
            match out {
                Ok(rows) => logprobs.extend(rows.into_iter().map(Some)),
                Err(e) => {
                    if self.options.policy == ErrorPolicy::FailFast {
                        return Err(e);
                    }
                    for u in chunk.iter() {
                        if failed[u.sentence].is_none() {
                            failed[u.sentence] = Some(Error::Backend(e.to_string()));
                        }
                    }
                    logprobs.extend(chunk.iter().map(|_| None));
                }
            }
        }

        Ok(corpus
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if let Some(e) = failed[i].take() {
                    return Err(e);
                }
                let range = unit_ranges[i].clone();
                let rows: Vec<Vec<f64>> = logprobs[range.clone()]
                    .iter()
                    .map(|r| r.clone().expect("failed batches mark their sentences"))
                    .collect();
                Ok(assemble(s, strategy, &units[range], &rows))
            })
            .collect())
    }

    /// Scores `word` inside a neutral frame and returns the summed score of
    /// the word's own tokens.
    pub fn score_word_in_context(
        &self,
        word: &str,
        template: ContextTemplate,
        strategy: MaskingStrategy,
        tokenizer: &dyn Tokenizer,
    ) -> Result<f64> {
        let mut out = self.score_words_in_context(&[word], template, strategy, tokenizer)?;
        out.pop().expect("one result per word")
    }

    pub fn score_words_in_context<S: AsRef<str>>(
        &self,
        words: &[S],
        template: ContextTemplate,
        strategy: MaskingStrategy,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Vec<Result<f64>>> {
        let word_start = template.prefix().chars().count();
        let mut sentences = Vec::new();
        let mut slots: Vec<Result<usize>> = Vec::with_capacity(words.len());
        for word in words {
            let word = word.as_ref();
            if word.trim().is_empty() {
                let e = Error::EmptyInput("word is empty".into());
                if self.options.policy == ErrorPolicy::FailFast {
                    return Err(e);
                }
                slots.push(Err(e));
                continue;
            }
            let text = template.render(word);
            match tokenize_and_align(&text, tokenizer, framing_for(strategy)) {
                Ok(s) => {
                    slots.push(Ok(sentences.len()));
                    sentences.push(s);
                }
                Err(e) if self.options.policy == ErrorPolicy::SkipAndLog => slots.push(Err(e)),
                Err(e) => return Err(e),
            }
        }
        let mut reports: Vec<Option<Result<ScoreReport>>> =
            self.score_batch(&sentences, strategy)?.into_iter().map(Some).collect();
        let result = slots
            .into_iter()
            .map(|slot| {
                let idx = slot?;
                let report = reports[idx].take().expect("each report consumed once")?;
                word_span_score(&sentences[idx], &report, word_start)
            })
            .collect::<Vec<_>>();
        if self.options.policy == ErrorPolicy::FailFast {
            let scores = result.into_iter().collect::<Result<Vec<f64>>>()?;
            return Ok(scores.into_iter().map(Ok).collect());
        }
        Ok(result)
    }
}

/// Sum of the scores of words starting at or after `word_start` (chars).
fn word_span_score(s: &AlignedSentence, report: &ScoreReport, word_start: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut found = false;
    for (w, span) in s.word_spans.iter().enumerate() {
        let start = span.range().find_map(|p| s.offsets[p].map(|o| o.0));
        if start.is_some_and(|c| c >= word_start) {
            total += report.word_scores[w].score;
            found = true;
        }
    }
    if found {
        Ok(total)
    } else {
        Err(Error::Alignment(format!(
            "no word of {:?} starts after the template prefix",
            s.text
        )))
    }
}

fn assemble(s: &AlignedSentence, strategy: MaskingStrategy, units: &[Unit], logprobs: &[Vec<f64>]) -> ScoreReport {
    let mut token_scores: Vec<TokenScore> = units
        .iter()
        .zip(logprobs)
        .flat_map(|(u, lps)| {
            u.reads.iter().zip(lps).map(move |(&(_, id, pos, w), &lp)| TokenScore {
                position: pos,
                token_id: id,
                word_index: w,
                logprob: lp,
                strategy,
            })
        })
        .collect();
    token_scores.sort_by_key(|t| t.position);

    let word_scores: Vec<WordScore> = s
        .word_spans
        .iter()
        .enumerate()
        .map(|(w, span)| WordScore {
            word: s.word_text(w),
            tokens: span.range(),
            score: token_scores[span.start - s.special_prefix_len..span.end - s.special_prefix_len]
                .iter()
                .fold(0.0, |acc, t| acc + t.logprob),
        })
        .collect();
    let sentence_score = word_scores.iter().fold(0.0, |acc, w| acc + w.score);
    ScoreReport {
        text: s.text.clone(),
        strategy,
        token_scores,
        word_scores,
        sentence_score,
    }
}

pub fn tokenize_and_align(text: &str, tokenizer: &dyn Tokenizer, framing: Framing) -> Result<AlignedSentence> {
    if text.trim().is_empty() {
        return Err(Error::EmptyInput("sentence text is empty".into()));
    }
    let tokens = tokenizer.encode_framed(text, framing)?;
    align(text, tokenizer.spec(), &tokens)
}

/// A tokenizer, an engine and a strategy: everything needed to turn raw
/// text into reports.
pub struct Scorer<'a, B> {
    pub engine: &'a Engine<B>,
    pub tokenizer: &'a dyn Tokenizer,
    pub strategy: MaskingStrategy,
}

impl<'a, B: Backend> Scorer<'a, B> {
    pub fn new(engine: &'a Engine<B>, tokenizer: &'a dyn Tokenizer, strategy: MaskingStrategy) -> Self {
        Scorer {
            engine,
            tokenizer,
            strategy,
        }
    }

    pub fn align_texts<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Result<AlignedSentence>> {
        texts
            .iter()
            .map(|t| tokenize_and_align(t.as_ref(), self.tokenizer, framing_for(self.strategy)))
            .collect()
    }

    /// Scores raw sentences, keeping input order. Alignment failures are
    /// reported per sentence under skip-and-log.
    pub fn score_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Result<ScoreReport>>> {
        let policy = self.engine.options().policy;
        let mut aligned = Vec::new();
        let mut slots = Vec::with_capacity(texts.len());
        for r in self.align_texts(texts) {
            match r {
                Ok(s) => {
                    slots.push(Ok(aligned.len()));
                    aligned.push(s);
                }
                Err(e) if policy == ErrorPolicy::SkipAndLog => slots.push(Err(e)),
                Err(e) => return Err(e),
            }
        }
        let mut reports: Vec<Option<Result<ScoreReport>>> = self
            .engine
            .score_batch(&aligned, self.strategy)?
            .into_iter()
            .map(Some)
            .collect();
        Ok(slots
            .into_iter()
            .map(|slot| reports[slot?].take().expect("each report consumed once"))
            .collect())
    }
}
