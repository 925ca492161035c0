//! Diagnostics over score reports: sentence-length effects, word-frequency
//! effects and cross-model agreement, all measured with Pearson's r.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::engine::{ContextTemplate, ScoreReport, Scorer};
use crate::error::{Error, Result};
use crate::tokenizer::TokenizerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
    pub x_label: String,
    pub y_label: String,
}

impl CorrelationResult {
    pub fn with_labels(mut self, x: impl Into<String>, y: impl Into<String>) -> Self {
        self.x_label = x.into();
        self.y_label = y.into();
        self
    }
}

/// Pearson's r, accumulated in a single pass over centered co-moments.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "pearson needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "pearson needs at least 2 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationResult {
        r,
        n: xs.len(),
        x_label: "x".into(),
        y_label: "y".into(),
    })
}

/// Raw word counts from a reference corpus.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
    pub source: String,
    lowercase: bool,
}

impl FrequencyTable {
    pub fn new(counts: HashMap<String, u64>, source: impl Into<String>) -> Self {
        FrequencyTable {
            counts,
            source: source.into(),
            lowercase: false,
        }
    }

    /// Reads `word \t count` lines. Blank lines and `#` comments are skipped.
    pub fn from_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut counts = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>count".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count {count:?}: {e}")))?;
            *counts.entry(word.to_string()).or_insert(0) += count;
        }
        Ok(Self::new(counts, path.display().to_string()))
    }

    /// Folds keys to lowercase when the tokenizer is uncased.
    pub fn matching_case(mut self, spec: &TokenizerSpec) -> Self {
        if !spec.cased && !self.lowercase {
            let mut folded = HashMap::new();
            for (w, c) in self.counts.drain() {
                *folded.entry(w.to_lowercase()).or_insert(0) += c;
            }
            self.counts = folded;
            self.lowercase = true;
        }
        self
    }

    pub fn count(&self, word: &str) -> u64 {
        if self.lowercase {
            self.counts.get(&word.to_lowercase()).copied().unwrap_or(0)
        } else {
            self.counts.get(word).copied().unwrap_or(0)
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Laplace-smoothed natural-log frequency, `ln(count + 1)`.
pub fn log_frequency(word: &str, table: &FrequencyTable) -> f64 {
    (table.count(word) as f64 + 1.0).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

/// A correlation together with the points it was computed from and the
/// inputs that could not be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub name: String,
    pub result: CorrelationResult,
    pub points: Vec<Point>,
    pub failures: Vec<(usize, String)>,
}

fn correlate_points(
    name: &str,
    points: Vec<Point>,
    failures: Vec<(usize, String)>,
    x_label: &str,
    y_label: &str,
) -> Result<Analysis> {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let result = pearson(&xs, &ys)?.with_labels(x_label, y_label);
    Ok(Analysis {
        name: name.to_string(),
        result,
        points,
        failures,
    })
}

type Indexed<T> = Vec<(usize, T)>;

fn split_outcomes(outcomes: Vec<Result<ScoreReport>>) -> (Indexed<ScoreReport>, Indexed<String>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => ok.push((i, r)),
            Err(e) => failed.push((i, e.to_string())),
        }
    }
    (ok, failed)
}

/// Points `(scored-token count, -sentence score)` for a set of reports.
pub fn length_points<'a>(reports: impl IntoIterator<Item = &'a ScoreReport>) -> Vec<Point> {
    reports
        .into_iter()
        .map(|r| Point {
            label: r.text.clone(),
            x: r.n_tokens() as f64,
            y: -r.sentence_score,
        })
        .collect()
}

/// Correlation between sentence length in tokens and negative score.
pub fn length_effect<B: Backend, S: AsRef<str>>(scorer: &Scorer<'_, B>, corpus: &[S]) -> Result<Analysis> {
    let (ok, failures) = split_outcomes(scorer.score_texts(corpus)?);
    let points = length_points(ok.iter().map(|(_, r)| r));
    correlate_points(
        "length",
        points,
        failures,
        "tokens",
        &format!("-{} score", scorer.strategy),
    )
}

/// Correlation between log frequency and in-context word score over the
/// unique words of `words`.
pub fn frequency_effect<B: Backend, S: AsRef<str>>(
    scorer: &Scorer<'_, B>,
    words: &[S],
    table: &FrequencyTable,
    template: ContextTemplate,
) -> Result<Analysis> {
    let mut seen = HashSet::new();
    let unique: Vec<&str> = words.iter().map(AsRef::as_ref).filter(|w| seen.insert(*w)).collect();
    let scores = scorer
        .engine
        .score_words_in_context(&unique, template, scorer.strategy, scorer.tokenizer)?;
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (i, (w, s)) in unique.iter().zip(scores).enumerate() {
        match s {
            Ok(score) => points.push(Point {
                label: w.to_string(),
                x: log_frequency(w, table),
                y: score,
            }),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    correlate_points(
        "frequency",
        points,
        failures,
        "log frequency",
        &format!("{} word score", scorer.strategy),
    )
}

/// Correlation between per-sentence scores of two scorers. Sentences that
/// fail on either side are left out.
pub fn cross_model_correlation<A: Backend, B: Backend, S: AsRef<str>>(
    corpus: &[S],
    a: &Scorer<'_, A>,
    b: &Scorer<'_, B>,
) -> Result<Analysis> {
    let left = a.score_texts(corpus)?;
    let right = b.score_texts(corpus)?;
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (i, (l, r)) in left.into_iter().zip(right).enumerate() {
        match (l, r) {
            (Ok(l), Ok(r)) => points.push(Point {
                label: l.text.clone(),
                x: l.sentence_score,
                y: r.sentence_score,
            }),
            (Err(e), _) | (_, Err(e)) => failures.push((i, e.to_string())),
        }
    }
    correlate_points(
        "cross-model",
        points,
        failures,
        &format!("{} score", a.strategy),
        &format!("{} score", b.strategy),
    )
}

/// Summary written next to the points CSV and the SVG plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub analysis: String,
    pub r: f64,
    pub n: usize,
    pub points_csv_path: String,
    pub svg_path: String,
}

pub fn write_points_csv(path: &Path, points: &[Point], result: &CorrelationResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", result.x_label.as_str(), result.y_label.as_str()])?;
    for p in points {
        w.write_record([p.label.as_str(), &p.x.to_string(), &p.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Static scatter plot with the correlation in the title.
pub fn scatter_svg(title: &str, points: &[Point], result: &CorrelationResult) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 == 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 == 0.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{} (r = {:.3}, n = {})</text>"#,
        W / 2.0,
        escape_xml(title),
        result.r,
        result.n
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD
    );
    for (v, anchor_x, anchor_y, align) in [
        (x0, sx(x0), H - PAD + 18.0, "start"),
        (x1, sx(x1), H - PAD + 18.0, "end"),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{anchor_x:.2}" y="{anchor_y:.2}" text-anchor="{align}" font-family="sans-serif" font-size="11">{v:.3}</text>"#
        );
    }
    for (v, anchor_y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{anchor_y:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            PAD - 6.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        W / 2.0,
        H - 15.0,
        escape_xml(&result.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape_xml(&result.y_label)
    );
    for p in points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" fill-opacity="0.6"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            escape_xml(&p.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `<prefix>.csv`, `<prefix>.svg` and `<prefix>.json`.
pub fn write_analysis(prefix: &Path, analysis: &Analysis) -> Result<AnalysisReport> {
    let with_ext = |ext: &str| -> PathBuf {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    let csv_path = with_ext(".csv");
    let svg_path = with_ext(".svg");
    let json_path = with_ext(".json");
    write_points_csv(&csv_path, &analysis.points, &analysis.result)?;
    fs::write(
        &svg_path,
        scatter_svg(&analysis.name, &analysis.points, &analysis.result),
    )?;
    let report = AnalysisReport {
        analysis: analysis.name.clone(),
        r: analysis.result.r,
        n: analysis.result.n,
        points_csv_path: csv_path.display().to_string(),
        svg_path: svg_path.display().to_string(),
    };
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
