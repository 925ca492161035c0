//! Forced-choice evaluation on minimal pairs.
//!
//! A pair is correct when the acceptable sentence scores strictly higher
//! than the unacceptable one; ties count as wrong. Overall accuracy is
//! weighted by pairs, not by paradigms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::engine::{ErrorPolicy, Scorer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub sentence_good: String,
    pub sentence_bad: String,
    #[serde(rename = "UID")]
    pub paradigm_id: String,
    #[serde(rename = "linguistics_term", default, skip_serializing_if = "Option::is_none")]
    pub phenomenon: Option<String>,
}

impl PairRecord {
    pub fn new(good: &str, bad: &str, paradigm: &str) -> Self {
        PairRecord {
            sentence_good: good.to_string(),
            sentence_bad: bad.to_string(),
            paradigm_id: paradigm.to_string(),
            phenomenon: None,
        }
    }

    pub fn with_phenomenon(mut self, phenomenon: &str) -> Self {
        self.phenomenon = Some(phenomenon.to_string());
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.sentence_good.trim().is_empty() || self.sentence_bad.trim().is_empty() {
            return Err("both sentences must be non-empty".into());
        }
        if self.paradigm_id.trim().is_empty() {
            return Err("paradigm id must be non-empty".into());
        }
        Ok(())
    }
}

/// A record that could not be read, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

fn parse_tsv_pair(line: &str) -> std::result::Result<PairRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    match fields.as_slice() {
        [good, bad, paradigm] => Ok(PairRecord::new(good, bad, paradigm)),
        [good, bad, paradigm, phenomenon] => Ok(PairRecord::new(good, bad, paradigm).with_phenomenon(phenomenon)),
        _ => Err(format!(
            "expected good<TAB>bad<TAB>paradigm[<TAB>phenomenon], got {} fields",
            fields.len()
        )),
    }
}

/// Reads pairs from JSONL (`sentence_good`, `sentence_bad`, `UID`,
/// `linguistics_term`) or, for `.tsv` files, `good \t bad \t paradigm`.
pub fn read_pairs(path: impl AsRef<Path>, policy: ErrorPolicy) -> Result<(Vec<PairRecord>, Vec<RecordError>)> {
    let path = path.as_ref();
    let tsv = path.extension().is_some_and(|e| e == "tsv");
    let reader = BufReader::new(fs::File::open(path)?);
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (tsv && line.starts_with('#')) {
            continue;
        }
        let parsed = if tsv {
            parse_tsv_pair(&line)
        } else {
            serde_json::from_str::<PairRecord>(&line).map_err(|e| e.to_string())
        }
        .and_then(|p| p.validate().map(|_| p));
        match parsed {
            Ok(p) => pairs.push(p),
            Err(message) => {
                if policy == ErrorPolicy::FailFast {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        message,
                    });
                }
                errors.push(RecordError { line: i + 1, message });
            }
        }
    }
    Ok((pairs, errors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "TallyJson", from = "TallyJson")]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct TallyJson {
    correct: usize,
    total: usize,
    accuracy: f64,
}

impl From<Tally> for TallyJson {
    fn from(t: Tally) -> Self {
        TallyJson {
            correct: t.correct,
            total: t.total,
            accuracy: t.accuracy(),
        }
    }
}

// accuracy is derived, so it is written for readers but ignored on load
impl From<TallyJson> for Tally {
    fn from(t: TallyJson) -> Self {
        Tally {
            correct: t.correct,
            total: t.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub index: usize,
    pub paradigm_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    #[serde(default)]
    pub label: String,
    pub overall: Tally,
    pub paradigms: BTreeMap<String, Tally>,
    pub phenomena: BTreeMap<String, Tally>,
    #[serde(default)]
    pub failures: Vec<PairFailure>,
}

impl BenchmarkResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOutcome {
    pub index: usize,
    pub paradigm_id: String,
    pub good_score: f64,
    pub bad_score: f64,
    pub correct: bool,
}

/// Aggregates already-scored pairs. `outcomes` need not be in input order.
pub fn aggregate(
    label: &str,
    pairs: &[PairRecord],
    outcomes: &[PairOutcome],
    failures: Vec<PairFailure>,
) -> BenchmarkResult {
    let mut paradigms: BTreeMap<String, Tally> = BTreeMap::new();
    let mut phenomena: BTreeMap<String, Tally> = BTreeMap::new();
    let mut overall = Tally::default();
    for o in outcomes {
        overall.add(o.correct);
        paradigms.entry(o.paradigm_id.clone()).or_default().add(o.correct);
        if let Some(ph) = &pairs[o.index].phenomenon {
            phenomena.entry(ph.clone()).or_default().add(o.correct);
        }
    }
    BenchmarkResult {
        label: label.to_string(),
        overall,
        paradigms,
        phenomena,
        failures,
    }
}

/// Scores every pair and returns per-pair outcomes plus the aggregate.
pub fn evaluate_pairs<B: Backend>(
    pairs: &[PairRecord],
    scorer: &Scorer<'_, B>,
) -> Result<(BenchmarkResult, Vec<PairOutcome>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no pairs to evaluate".into()));
    }
    let texts: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.sentence_good.as_str(), p.sentence_bad.as_str()])
        .collect();
    let mut reports = scorer.score_texts(&texts)?.into_iter();
    let mut outcomes = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    for (index, pair) in pairs.iter().enumerate() {
        let good = reports.next().expect("two reports per pair");
        let bad = reports.next().expect("two reports per pair");
        match (good, bad) {
            (Ok(g), Ok(b)) => outcomes.push(PairOutcome {
                index,
                paradigm_id: pair.paradigm_id.clone(),
                good_score: g.sentence_score,
                bad_score: b.sentence_score,
                correct: g.sentence_score > b.sentence_score,
            }),
            (Err(e), _) | (_, Err(e)) => failures.push(PairFailure {
                index,
                paradigm_id: pair.paradigm_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok((aggregate(scorer.strategy.name(), pairs, &outcomes, failures), outcomes))
}

pub fn evaluate<B: Backend>(pairs: &[PairRecord], scorer: &Scorer<'_, B>) -> Result<BenchmarkResult> {
    Ok(evaluate_pairs(pairs, scorer)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub key: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    pub overall: Delta,
    /// Sorted by decreasing `|delta|`, then key.
    pub paradigms: Vec<Delta>,
}

/// Accuracy change from `a` to `b` per paradigm and overall.
pub fn diff_report(a: &BenchmarkResult, b: &BenchmarkResult) -> Result<DiffReport> {
    if !a.paradigms.keys().eq(b.paradigms.keys()) {
        let only_a: Vec<_> = a.paradigms.keys().filter(|k| !b.paradigms.contains_key(*k)).collect();
        let only_b: Vec<_> = b.paradigms.keys().filter(|k| !a.paradigms.contains_key(*k)).collect();
        return Err(Error::Shape(format!(
            "paradigm sets differ: only in first {only_a:?}, only in second {only_b:?}"
        )));
    }
    let delta = |key: &str, ta: &Tally, tb: &Tally| Delta {
        key: key.to_string(),
        a: ta.accuracy(),
        b: tb.accuracy(),
        delta: tb.accuracy() - ta.accuracy(),
    };
    let mut paradigms: Vec<Delta> = a
        .paradigms
        .iter()
        .map(|(k, ta)| delta(k, ta, &b.paradigms[k]))
        .collect();
    paradigms.sort_by(|x, y| y.delta.abs().total_cmp(&x.delta.abs()).then_with(|| x.key.cmp(&y.key)));
    Ok(DiffReport {
        overall: delta("overall", &a.overall, &b.overall),
        paradigms,
    })
}

/// A rendered summary table; `best[r][c]` marks the column maximum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub best: Vec<Vec<bool>>,
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

impl Table {
    pub fn to_text(&self) -> String {
        let cell = |r: usize, c: usize| -> String {
            let v = &self.rows[r][c];
            if self.best[r][c] {
                format!("{v}*")
            } else {
                v.clone()
            }
        };
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in 0..self.rows.len() {
            for (c, w) in widths.iter_mut().enumerate() {
                *w = (*w).max(cell(r, c).chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<String>| -> String {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(
                    |(i, (c, w))| {
                        if i == 0 {
                            format!("{c:<w$}")
                        } else {
                            format!("{c:>w$}")
                        }
                    },
                )
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let _ = writeln!(out, "{}", line(self.header.clone()));
        for r in 0..self.rows.len() {
            let _ = writeln!(out, "{}", line((0..widths.len()).map(|c| cell(r, c)).collect()));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One row per paradigm plus an overall row.
pub fn paradigm_table(result: &BenchmarkResult) -> Table {
    let header = ["paradigm", "correct", "total", "accuracy"].map(String::from).to_vec();
    let mut rows: Vec<Vec<String>> = result
        .paradigms
        .iter()
        .map(|(k, t)| vec![k.clone(), t.correct.to_string(), t.total.to_string(), pct(t.accuracy())])
        .collect();
    let o = result.overall;
    rows.push(vec![
        "overall".into(),
        o.correct.to_string(),
        o.total.to_string(),
        pct(o.accuracy()),
    ]);
    let best = rows.iter().map(|r| vec![false; r.len()]).collect();
    Table { header, rows, best }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Paradigm,
    Phenomenon,
}

/// One row per run and one column per group, with the best run marked in
/// every column.
pub fn comparison_table(runs: &[BenchmarkResult], grouping: Grouping) -> Result<Table> {
    let groups = |r: &BenchmarkResult| -> Vec<String> {
        match grouping {
            Grouping::Paradigm => r.paradigms.keys().cloned().collect(),
            Grouping::Phenomenon => r.phenomena.keys().cloned().collect(),
        }
    };
    let first = runs
        .first()
        .ok_or_else(|| Error::EmptyInput("no results to tabulate".into()))?;
    let keys = groups(first);
    if runs.iter().any(|r| groups(r) != keys) {
        return Err(Error::Shape("results cover different groups".into()));
    }
    let mut header = vec!["metric".to_string(), "overall".to_string()];
    header.extend(keys.iter().cloned());
    let values: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let map = match grouping {
                Grouping::Paradigm => &r.paradigms,
                Grouping::Phenomenon => &r.phenomena,
            };
            std::iter::once(r.overall.accuracy())
                .chain(keys.iter().map(|k| map[k].accuracy()))
                .collect()
        })
        .collect();
    let n_cols = keys.len() + 1;
    let col_max: Vec<f64> = (0..n_cols)
        .map(|c| values.iter().map(|v| v[c]).fold(f64::MIN, f64::max))
        .collect();
    let rows = runs
        .iter()
        .zip(&values)
        .map(|(r, v)| {
            std::iter::once(r.label.clone())
                .chain(v.iter().map(|&x| pct(x)))
                .collect()
        })
        .collect();
    let best = values
        .iter()
        .map(|v| {
            std::iter::once(false)
                .chain(v.iter().zip(&col_max).map(|(x, m)| x == m))
                .collect()
        })
        .collect();
    Ok(Table { header, rows, best })
}
