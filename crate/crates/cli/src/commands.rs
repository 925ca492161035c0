use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pllbench_core::analysis::{
    frequency_effect, length_effect, pearson, write_analysis, Analysis, AnalysisReport, FrequencyTable, Point,
};
use pllbench_core::backend::golden::{check_parity, read_fixtures};
use pllbench_core::engine::{
    framing_for, read_report_lines, tokenize_and_align, write_reports_csv, write_reports_jsonl,
};
use pllbench_core::harness::{
    comparison_table, diff_report, evaluate, read_pairs, BenchmarkResult, DiffReport, Grouping,
};
use pllbench_core::schedule::schedule_debug_lines;
use pllbench_core::tokenizer::{read_tokenization_jsonl, Framing};
use pllbench_core::{
    align, oov_ratio, AlignedSentence, Backend, ContextTemplate, Engine, ErrorPolicy, ScoreReport, Scorer, Tokenizer,
};
use serde::Serialize;

use crate::config::{KindChoice, ModelArgs, RunConfig, Settings, TokenizerArgs, TokenizerSettings};
use crate::error::{CliError, CliResult};

pub struct Ctx {
    pub cfg: RunConfig,
    pub json_errors: bool,
}

impl Ctx {
    /// Logs a record dropped under skip-and-log. `line` is 1-based.
    fn skipped(&self, what: &str, line: usize, message: &str) {
        log::warn!("{what}: skipped line {line}: {message}");
        if self.json_errors {
            let v = serde_json::json!({"warning": "skipped", "input": what, "line": line, "message": message});
            eprintln!("{v}");
        }
    }
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Writes to `out`, or stdout when no path is given.
fn emit(out: Option<&Path>, body: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| CliError::from(e).context(path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn destination(out: Option<&Path>) -> String {
    out.map_or_else(|| "stdout".to_string(), |p| p.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct ScoreArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Plain text, one sentence per line
    #[arg(long = "in", group = "source")]
    input: Option<PathBuf>,

    /// Pre-tokenized sentences as JSONL (`text`, `tokens`)
    #[arg(long, group = "source")]
    tokens: Option<PathBuf>,

    #[arg(long)]
    out: Option<PathBuf>,

    /// Defaults to csv for `.csv` outputs and jsonl otherwise
    #[arg(long, value_enum)]
    format: Option<ScoreFormat>,
}

/// Aligns exported tokenizations, keeping one slot per input row.
fn align_rows<B: Backend>(
    engine: &Engine<B>,
    tokenizer: &dyn Tokenizer,
    path: &Path,
) -> CliResult<(Vec<AlignedSentence>, Vec<pllbench_core::Result<usize>>)> {
    let rows = read_tokenization_jsonl(path)?;
    let mut aligned = Vec::new();
    let mut slots = Vec::with_capacity(rows.len());
    for row in rows {
        match align(&row.text, tokenizer.spec(), &row.tokens) {
            Ok(s) => {
                slots.push(Ok(aligned.len()));
                aligned.push(s);
            }
            Err(e) if engine.options().policy == ErrorPolicy::SkipAndLog => slots.push(Err(e)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok((aligned, slots))
}

pub fn score(ctx: &Ctx, a: ScoreArgs) -> CliResult<()> {
    let settings = Settings::resolve(&a.model, &ctx.cfg)?;
    let (tok, engine) = settings.build()?;
    let outcomes: Vec<pllbench_core::Result<ScoreReport>> = if let Some(path) = &a.input {
        let lines = read_lines(path)?;
        Scorer::new(&engine, tok.as_ref(), settings.strategy).score_texts(&lines)?
    } else {
        let path = a.tokens.as_ref().expect("clap enforces one source");
        let (aligned, slots) = align_rows(&engine, tok.as_ref(), path)?;
        let mut reports: Vec<Option<_>> = engine
            .score_batch(&aligned, settings.strategy)?
            .into_iter()
            .map(Some)
            .collect();
        slots
            .into_iter()
            .map(|slot| reports[slot?].take().expect("each report consumed once"))
            .collect()
    };

    let total = outcomes.len();
    let mut reports = Vec::with_capacity(total);
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => reports.push(r),
            Err(e) => ctx.skipped("score", i + 1, &e.to_string()),
        }
    }
    let format = a.format.unwrap_or(match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => ScoreFormat::Csv,
        _ => ScoreFormat::Jsonl,
    });
    let mut body = Vec::new();
    match format {
        ScoreFormat::Jsonl => write_reports_jsonl(&mut body, &reports)?,
        ScoreFormat::Csv => write_reports_csv(&mut body, &reports)?,
    }
    emit(a.out.as_deref(), &body)?;
    eprintln!(
        "score: {} of {total} sentences scored with {}, {} skipped, written to {}",
        reports.len(),
        settings.strategy,
        total - reports.len(),
        destination(a.out.as_deref())
    );
    Ok(())
}

fn parse_template(s: &str) -> Result<ContextTemplate, String> {
    s.parse().map_err(|e: pllbench_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct ScoreWordsArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// One word per line
    #[arg(long = "in")]
    input: PathBuf,

    /// my-word-is, dictionary or none
    #[arg(long, value_parser = parse_template, default_value = "my-word-is")]
    template: ContextTemplate,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct WordRecord<'a> {
    word: &'a str,
    score: f64,
}

pub fn score_words(ctx: &Ctx, a: ScoreWordsArgs) -> CliResult<()> {
    let settings = Settings::resolve(&a.model, &ctx.cfg)?;
    let (tok, engine) = settings.build()?;
    let words = read_lines(&a.input)?;
    let scores = engine.score_words_in_context(&words, a.template, settings.strategy, tok.as_ref())?;
    let mut body = String::new();
    let mut scored = 0;
    for (i, (word, s)) in words.iter().zip(scores).enumerate() {
        match s {
            Ok(score) => {
                scored += 1;
                body.push_str(&serde_json::to_string(&WordRecord { word, score })?);
                body.push('\n');
            }
            Err(e) => ctx.skipped("score-words", i + 1, &e.to_string()),
        }
    }
    emit(a.out.as_deref(), body.as_bytes())?;
    eprintln!(
        "score-words: {scored} of {} words scored with {}, written to {}",
        words.len(),
        settings.strategy,
        destination(a.out.as_deref())
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// JSONL pairs, or good/bad/paradigm[/phenomenon] TSV for `.tsv` files
    #[arg(long)]
    pairs: PathBuf,

    /// Run name stored in the result; defaults to the strategy name
    #[arg(long)]
    label: Option<String>,

    /// Result JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn benchmark(ctx: &Ctx, a: BenchmarkArgs) -> CliResult<()> {
    let settings = Settings::resolve(&a.model, &ctx.cfg)?;
    let (tok, engine) = settings.build()?;
    let (pairs, bad_records) = read_pairs(&a.pairs, settings.options.policy)?;
    for r in &bad_records {
        ctx.skipped("benchmark", r.line, &r.message);
    }
    let mut result = evaluate(&pairs, &Scorer::new(&engine, tok.as_ref(), settings.strategy))?;
    for f in &result.failures {
        ctx.skipped("benchmark", f.index + 1, &f.message);
    }
    result.label = a.label.unwrap_or_else(|| settings.strategy.to_string());
    emit(a.out.as_deref(), (result.to_json()? + "\n").as_bytes())?;
    eprintln!(
        "benchmark: {} {}/{} correct ({:.1}%) over {} paradigms, written to {}",
        result.label,
        result.overall.correct,
        result.overall.total,
        100.0 * result.overall.accuracy(),
        result.paradigms.len(),
        destination(a.out.as_deref())
    );
    Ok(())
}

fn load_result(path: &Path) -> CliResult<BenchmarkResult> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    BenchmarkResult::from_json(&text).map_err(|e| CliError::from(e).context(path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Baseline result JSON
    a: PathBuf,
    /// Compared result JSON; deltas are b minus a
    b: PathBuf,

    #[arg(long, value_enum, default_value = "text")]
    format: TableFormat,

    #[arg(long)]
    out: Option<PathBuf>,
}

fn diff_rows(d: &DiffReport) -> Vec<[String; 4]> {
    std::iter::once(&d.overall)
        .chain(&d.paradigms)
        .map(|x| {
            [
                x.key.clone(),
                format!("{:.1}", 100.0 * x.a),
                format!("{:.1}", 100.0 * x.b),
                format!("{:+.1}", 100.0 * x.delta),
            ]
        })
        .collect()
}

fn render_diff(d: &DiffReport, format: TableFormat) -> CliResult<String> {
    let header = ["paradigm", "a", "b", "delta"];
    Ok(match format {
        TableFormat::Json => serde_json::to_string_pretty(d)? + "\n",
        TableFormat::Csv => {
            let mut out = header.join(",") + "\n";
            for row in diff_rows(d) {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        TableFormat::Text => {
            let rows = diff_rows(d);
            let key_width = rows.iter().map(|r| r[0].len()).max().unwrap_or(0).max(header[0].len());
            let mut out = format!(
                "{:<key_width$}  {:>6}  {:>6}  {:>6}\n",
                header[0], header[1], header[2], header[3]
            );
            for r in rows {
                out.push_str(&format!(
                    "{:<key_width$}  {:>6}  {:>6}  {:>6}\n",
                    r[0], r[1], r[2], r[3]
                ));
            }
            out
        }
    })
}

pub fn diff(a: DiffArgs) -> CliResult<()> {
    let (ra, rb) = (load_result(&a.a)?, load_result(&a.b)?);
    let report = diff_report(&ra, &rb)?;
    emit(a.out.as_deref(), render_diff(&report, a.format)?.as_bytes())?;
    eprintln!(
        "diff: overall {:.1}% -> {:.1}% ({:+.1} points) over {} paradigms",
        100.0 * report.overall.a,
        100.0 * report.overall.b,
        100.0 * report.overall.delta,
        report.paradigms.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupChoice {
    Paradigm,
    Phenomenon,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Result JSON files, one row each
    #[arg(required = true)]
    results: Vec<PathBuf>,

    #[arg(long, value_enum, default_value = "paradigm")]
    group: GroupChoice,

    #[arg(long, value_enum, default_value = "text")]
    format: TableFormat,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TableJson<'a> {
    header: &'a [String],
    rows: &'a [Vec<String>],
    best: &'a [Vec<bool>],
}

pub fn table(a: TableArgs) -> CliResult<()> {
    let runs = a
        .results
        .iter()
        .map(|p| load_result(p))
        .collect::<CliResult<Vec<_>>>()?;
    let grouping = match a.group {
        GroupChoice::Paradigm => Grouping::Paradigm,
        GroupChoice::Phenomenon => Grouping::Phenomenon,
    };
    let t = comparison_table(&runs, grouping)?;
    let body = match a.format {
        TableFormat::Text => t.to_text(),
        TableFormat::Csv => t.to_csv()?,
        TableFormat::Json => {
            serde_json::to_string_pretty(&TableJson {
                header: &t.header,
                rows: &t.rows,
                best: &t.best,
            })? + "\n"
        }
    };
    emit(a.out.as_deref(), body.as_bytes())?;
    eprintln!(
        "table: {} runs x {} columns, written to {}",
        t.rows.len(),
        t.header.len().saturating_sub(1),
        destination(a.out.as_deref())
    );
    Ok(())
}

fn finish_analysis(ctx: Option<&Ctx>, prefix: &Path, analysis: &Analysis) -> CliResult<()> {
    if let Some(ctx) = ctx {
        for (i, message) in &analysis.failures {
            ctx.skipped(&analysis.name, i + 1, message);
        }
    }
    let AnalysisReport { r, n, .. } = write_analysis(prefix, analysis)?;
    eprintln!(
        "analyze {}: r = {r:.4} over {n} points, written to {}.{{csv,svg,json}}",
        analysis.name,
        prefix.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct LengthArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Plain text, one sentence per line
    #[arg(long = "in")]
    input: PathBuf,

    /// Output prefix; `.csv`, `.svg` and `.json` are appended
    #[arg(long)]
    out: PathBuf,
}

pub fn length(ctx: &Ctx, a: LengthArgs) -> CliResult<()> {
    let settings = Settings::resolve(&a.model, &ctx.cfg)?;
    let (tok, engine) = settings.build()?;
    let corpus = read_lines(&a.input)?;
    let analysis = length_effect(&Scorer::new(&engine, tok.as_ref(), settings.strategy), &corpus)?;
    finish_analysis(Some(ctx), &a.out, &analysis)
}

#[derive(Debug, Args)]
pub struct FrequencyArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// One word per line; repeats are scored once
    #[arg(long)]
    words: PathBuf,

    /// `word<TAB>count` lines
    #[arg(long)]
    frequencies: PathBuf,

    #[arg(long, value_parser = parse_template, default_value = "my-word-is")]
    template: ContextTemplate,

    #[arg(long)]
    out: PathBuf,
}

pub fn frequency(ctx: &Ctx, a: FrequencyArgs) -> CliResult<()> {
    let settings = Settings::resolve(&a.model, &ctx.cfg)?;
    let (tok, engine) = settings.build()?;
    let words = read_lines(&a.words)?;
    let table = FrequencyTable::from_tsv(&a.frequencies)?.matching_case(tok.spec());
    let scorer = Scorer::new(&engine, tok.as_ref(), settings.strategy);
    let analysis = frequency_effect(&scorer, &words, &table, a.template)?;
    finish_analysis(Some(ctx), &a.out, &analysis)
}

#[derive(Debug, Args)]
pub struct CrossModelArgs {
    /// Score JSONL written by `score`
    #[arg(long)]
    a: PathBuf,

    /// Score JSONL over the same sentences in the same order
    #[arg(long)]
    b: PathBuf,

    #[arg(long)]
    out: PathBuf,
}

pub fn cross_model(a: CrossModelArgs) -> CliResult<()> {
    let read = |p: &Path| -> CliResult<_> {
        let text = fs::read_to_string(p).map_err(|e| CliError::from(e).context(p.display()))?;
        read_report_lines(&text).map_err(|e| CliError::from(e).context(p.display()))
    };
    let (left, right) = (read(&a.a)?, read(&a.b)?);
    if left.len() != right.len() {
        return Err(CliError::input(
            "ShapeError",
            format!("score files have {} and {} lines", left.len(), right.len()),
        ));
    }
    let mut points = Vec::with_capacity(left.len());
    for (i, (l, r)) in left.iter().zip(&right).enumerate() {
        if l.text != r.text {
            return Err(CliError::input(
                "ShapeError",
                format!("line {}: texts differ ({:?} vs {:?})", i + 1, l.text, r.text),
            ));
        }
        points.push(Point {
            label: l.text.clone(),
            x: l.sentence_score,
            y: r.sentence_score,
        });
    }
    let label = |lines: &[pllbench_core::engine::ReportLine], fallback: &str| {
        lines
            .first()
            .map_or(fallback.to_string(), |l| format!("{} score", l.strategy))
    };
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let result = pearson(&xs, &ys)?.with_labels(label(&left, "a"), label(&right, "b"));
    let analysis = Analysis {
        name: "cross-model".to_string(),
        result,
        points,
        failures: Vec::new(),
    };
    finish_analysis(None, &a.out, &analysis)
}

#[derive(Debug, Args)]
pub struct ScheduleDebugArgs {
    #[command(flatten)]
    tokenizer: TokenizerArgs,

    #[arg(long, value_parser = crate::config::parse_strategy)]
    strategy: Option<pllbench_core::MaskingStrategy>,

    #[arg(long)]
    text: String,

    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn schedule_debug(ctx: &Ctx, a: ScheduleDebugArgs) -> CliResult<()> {
    let strategy = match (a.strategy, &ctx.cfg.strategy) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse()?,
        (None, None) => pllbench_core::MaskingStrategy::Original,
    };
    let tok = TokenizerSettings::resolve(&a.tokenizer, &ctx.cfg).build()?;
    let s = tokenize_and_align(&a.text, tok.as_ref(), framing_for(strategy))?;
    let lines = schedule_debug_lines(&s, strategy)?;
    let mut body = String::new();
    for l in &lines {
        body.push_str(l);
        body.push('\n');
    }
    emit(a.out.as_deref(), body.as_bytes())?;
    eprintln!(
        "schedule-debug: {} requests for {} tokens in {} words with {strategy}",
        lines.len(),
        s.n_scored(),
        s.n_words()
    );
    Ok(())
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct OovArgs {
    #[command(flatten)]
    tokenizer: TokenizerArgs,

    /// Plain text, one sentence per line
    #[arg(long = "in", group = "source")]
    input: Option<PathBuf>,

    /// Pre-tokenized sentences as JSONL (`text`, `tokens`)
    #[arg(long, group = "source")]
    tokens: Option<PathBuf>,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct OovSummary {
    sentences: usize,
    words: usize,
    multi_token_words: usize,
    oov_ratio: f64,
}

pub fn oov(ctx: &Ctx, a: OovArgs) -> CliResult<()> {
    let tok = TokenizerSettings::resolve(&a.tokenizer, &ctx.cfg).build()?;
    let corpus: Vec<AlignedSentence> = if let Some(path) = &a.input {
        read_lines(path)?
            .iter()
            .map(|t| tokenize_and_align(t, tok.as_ref(), Framing::Masked))
            .collect::<pllbench_core::Result<_>>()?
    } else {
        let path = a.tokens.as_ref().expect("clap enforces one source");
        read_tokenization_jsonl(path)?
            .iter()
            .map(|row| align(&row.text, tok.spec(), &row.tokens))
            .collect::<pllbench_core::Result<_>>()?
    };
    let summary = OovSummary {
        sentences: corpus.len(),
        words: corpus.iter().map(|s| s.n_words()).sum(),
        multi_token_words: corpus
            .iter()
            .flat_map(|s| &s.word_spans)
            .filter(|w| w.end - w.start > 1)
            .count(),
        oov_ratio: oov_ratio(&corpus)?,
    };
    emit(a.out.as_deref(), (serde_json::to_string(&summary)? + "\n").as_bytes())?;
    eprintln!(
        "oov: {} of {} words split ({:.4})",
        summary.multi_token_words, summary.words, summary.oov_ratio
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ParityArgs {
    /// Exported ONNX graph
    #[arg(long)]
    model: PathBuf,

    /// TokenizerSpec JSON exported with the graph
    #[arg(long)]
    tokenizer_spec: PathBuf,

    #[arg(long, value_enum)]
    kind: KindChoice,

    /// Golden fixture JSONL
    #[arg(long)]
    fixtures: PathBuf,

    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,

    #[arg(long)]
    max_seq_len: Option<usize>,

    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn parity(ctx: &Ctx, a: ParityArgs) -> CliResult<()> {
    let strategy = match a.kind {
        KindChoice::Masked => "original",
        KindChoice::Causal => "causal",
    };
    let model = ModelArgs {
        tokenizer: TokenizerArgs {
            tokenizer_spec: Some(a.tokenizer_spec),
            vocab_size: None,
            piece_chars: None,
        },
        backend: Some(crate::config::BackendChoice::Neural),
        seed: None,
        model: Some(a.model),
        kind: Some(a.kind),
        max_seq_len: a.max_seq_len,
        strategy: Some(strategy.parse()?),
        batch_size: None,
        error_policy: None,
    };
    let (_, engine) = Settings::resolve(&model, &ctx.cfg)?.build()?;
    let fixtures = read_fixtures(&a.fixtures)?;
    let report = check_parity(engine.backend(), &fixtures, a.tolerance)?;
    emit(
        a.out.as_deref(),
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    eprintln!(
        "parity: {} fixtures, {} values, max |diff| {:.3e}, {} outside {:e}",
        report.fixtures,
        report.values_checked,
        report.max_abs_diff,
        report.failures.len(),
        a.tolerance
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::backend(format!(
            "{} of {} values differ from the fixtures by more than {:e}",
            report.failures.len(),
            report.values_checked,
            a.tolerance
        )))
    }
}
