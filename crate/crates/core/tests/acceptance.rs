//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on failure.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use pllbench_core::analysis::pearson;
use pllbench_core::backend::{logsumexp, BatchInput, Target};
use pllbench_core::engine::{framing_for, tokenize_and_align, write_reports_jsonl};
use pllbench_core::harness::{diff_report, evaluate, read_pairs, BenchmarkResult};
use pllbench_core::tokenizer::TokenId;
use pllbench_core::{
    schedule, Backend, Engine, EngineOptions, ErrorPolicy, MaskingStrategy, ScoreReport, Scorer, Tokenizer,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCHEDULE_CASES: u32 = 1000;
const SCHEDULE_BUDGET: Duration = Duration::from_secs(5);
const COINCIDENCE_BUDGET: Duration = Duration::from_secs(1);
const ORACLE_FIXTURES: usize = 200;
const ORACLE_BATCH_SIZES: [usize; 4] = [1, 2, 7, 32];
const ORACLE_TOLERANCE: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const NORMALIZATION_TOLERANCE: f64 = 1e-6;
const PEARSON_TOLERANCE: f64 = 1e-12;
const PEARSON_VECTORS: usize = 100;
const HARNESS_RUNS: [(u64, MaskingStrategy); 2] = [(1, MaskingStrategy::Original), (9, MaskingStrategy::WordL2r)];

type Outcome = Result<String, String>;

fn within(budget: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < budget {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, budget {budget:.2?}"))
    }
}

fn check_schedule(s: &pllbench_core::AlignedSentence) -> Result<(), TestCaseError> {
    let scored = s.scored_range();
    for strategy in MaskingStrategy::MASKED {
        let reqs = schedule(s, strategy).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(reqs.len(), s.n_scored(), "{} cardinality", strategy);
        let targets: Vec<usize> = reqs.iter().map(|r| r.target_position).collect();
        prop_assert_eq!(targets, scored.clone().collect::<Vec<_>>());
        for r in &reqs {
            let t = r.target_position;
            let span = s.word_spans[s.word_index(t).unwrap()];
            let expected = match strategy {
                MaskingStrategy::Original => t..t + 1,
                MaskingStrategy::WordL2r => t..span.end,
                MaskingStrategy::WholeWord => span.start..span.end,
                MaskingStrategy::SentenceL2r => t..scored.end,
                MaskingStrategy::Causal => unreachable!(),
            };
            prop_assert_eq!(r.masked.clone(), expected.clone(), "{} shape at {}", strategy, t);
            let by_definition: Vec<usize> = (0..s.token_ids.len())
                .filter(|&p| common::oracle_hidden(s, strategy, t, p))
                .collect();
            prop_assert_eq!(r.masked_positions().collect::<Vec<_>>(), by_definition);
            prop_assert_eq!(r.target_id, s.token_ids[t]);
            let ids = r.materialize(3);
            for p in (0..scored.start).chain(scored.end..s.token_ids.len()) {
                prop_assert_eq!(ids[p], s.token_ids[p], "special position {} masked", p);
            }
        }
    }
    Ok(())
}

fn schedule_laws() -> Outcome {
    let start = Instant::now();
    let input = (
        0usize..=2,
        prop::collection::vec(1usize..=6, 1..=12),
        0usize..=2,
        any::<u64>(),
    );
    let mut runner = TestRunner::new(Config {
        cases: SCHEDULE_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&input, |(prefix, lens, suffix, seed)| {
            let ids: Vec<TokenId> = (0..64).map(|i| 5 + ((seed >> (i % 56)) as TokenId + i) % 400).collect();
            let pre: Vec<TokenId> = vec![1; prefix];
            let suf: Vec<TokenId> = vec![2; suffix];
            check_schedule(&common::synthetic(&pre, &lens, &suf, &ids))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_schedule(&common::random_sentence(&mut rng, MaskingStrategy::Original))
        })
        .map_err(|e| e.to_string())?;
    let took = within(SCHEDULE_BUDGET, start)?;
    Ok(format!(
        "{SCHEDULE_CASES} cases x 2 sentences x 4 strategies in {took:.2?}"
    ))
}

fn metric_coincidence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tok = common::hash_tokenizer(16);
    let engine = Engine::new(common::reference(5), tok.spec().special);
    let mut sentences = 0;
    for _ in 0..50 {
        let text = common::random_text(&mut rng, 10, 12, false);
        let s = tokenize_and_align(&text, &tok, framing_for(MaskingStrategy::Original)).map_err(|e| e.to_string())?;
        if s.word_spans.iter().any(|w| w.len() != 1) {
            return Err(format!("fixture {text:?} has a multi-token word"));
        }
        let score = |st| engine.score_sentence(&s, st).map_err(|e| e.to_string());
        let original = score(MaskingStrategy::Original)?;
        for strategy in [MaskingStrategy::WordL2r, MaskingStrategy::WholeWord] {
            let mut other: ScoreReport = score(strategy)?;
            // the strategy label is the one field that must differ
            other.strategy = MaskingStrategy::Original;
            for t in &mut other.token_scores {
                t.strategy = MaskingStrategy::Original;
            }
            if other != original || other.sentence_score.to_bits() != original.sentence_score.to_bits() {
                return Err(format!("{strategy} differs from original on {text:?}"));
            }
        }
        sentences += 1;
    }
    let took = within(COINCIDENCE_BUDGET, start)?;
    Ok(format!("{sentences} single-token sentences identical in {took:.2?}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let backend = common::reference(99);
    let texts: Vec<(String, usize)> = (0..ORACLE_FIXTURES)
        .map(|_| (common::random_text(&mut rng, 8, 10, true), rng.gen_range(2..=5)))
        .collect();
    let mut worst = 0.0f64;
    for strategy in MaskingStrategy::ALL {
        let mut corpus = Vec::new();
        let mut expected = Vec::new();
        for (text, piece) in &texts {
            let tok = common::hash_tokenizer(*piece);
            let s = tokenize_and_align(text, &tok, framing_for(strategy)).map_err(|e| e.to_string())?;
            expected.push(common::naive_sentence_score(&backend, &s, strategy, &tok));
            corpus.push(s);
        }
        let special = common::hash_tokenizer(4).spec().special;
        for batch_size in ORACLE_BATCH_SIZES {
            let engine = Engine::new(&backend, special)
                .with_options(EngineOptions {
                    batch_size,
                    policy: ErrorPolicy::FailFast,
                })
                .map_err(|e| e.to_string())?;
            let reports = engine.score_batch(&corpus, strategy).map_err(|e| e.to_string())?;
            for (i, (r, want)) in reports.into_iter().zip(&expected).enumerate() {
                let got = r.map_err(|e| e.to_string())?.sentence_score;
                let diff = (got - want).abs();
                worst = worst.max(diff);
                if diff > ORACLE_TOLERANCE {
                    return Err(format!(
                        "{strategy} batch {batch_size} fixture {i}: engine {got} vs oracle {want}"
                    ));
                }
            }
        }
    }
    let took = within(ORACLE_BUDGET, start)?;
    Ok(format!(
        "{ORACLE_FIXTURES} fixtures x 5 strategies x batch sizes {ORACLE_BATCH_SIZES:?}, max |diff| {worst:.1e}, {took:.2?}"
    ))
}

fn backend_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = common::reference(17);
    let b = common::reference(17);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let rows: Vec<Vec<TokenId>> = (0..rng.gen_range(1..=4))
            .map(|_| {
                (0..rng.gen_range(1..=24))
                    .map(|_| rng.gen_range(0..common::VOCAB as TokenId))
                    .collect()
            })
            .collect();
        let input = BatchInput::padded(rows.clone(), 0);
        let targets: Vec<Target> = rows
            .iter()
            .enumerate()
            .map(|(row, r)| Target {
                row,
                position: rng.gen_range(0..r.len()),
            })
            .collect();
        for causal in [false, true] {
            let call = |be: &pllbench_core::ReferenceBackend| {
                if causal {
                    be.causal_logprobs(&input, &targets)
                } else {
                    be.mlm_logprobs(&input, &targets)
                }
                .map_err(|e| e.to_string())
            };
            let first = call(&a)?;
            let again = call(&a)?;
            let fresh = call(&b)?;
            for ((d, e), f) in first.iter().zip(&again).zip(&fresh) {
                let lse = logsumexp(d);
                worst = worst.max(lse.abs());
                if lse.abs() > NORMALIZATION_TOLERANCE {
                    return Err(format!("logsumexp {lse}"));
                }
                let bits = |v: &Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                if bits(d) != bits(e) || bits(d) != bits(f) {
                    return Err("repeated call not bit-identical".into());
                }
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} distributions, max |logsumexp| {worst:.1e}, repeats bit-identical"
    ))
}

fn pearson_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let r = |x: &[f64], y: &[f64]| pearson(x, y).map(|c| c.r).map_err(|e| e.to_string());
    let check = |what: &str, got: f64, want: f64| -> Result<f64, String> {
        let d = (got - want).abs();
        if d <= PEARSON_TOLERANCE {
            Ok(d)
        } else {
            Err(format!("{what}: {got} vs {want}"))
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..PEARSON_VECTORS {
        let n = rng.gen_range(2..=200);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let k = rng.gen_range(-3.0..3.0);
        let y: Vec<f64> = x.iter().map(|v| k * v + rng.gen_range(-150.0..150.0)).collect();
        let rxy = r(&x, &y)?;
        worst = worst.max(check("two-pass oracle", rxy, common::two_pass_pearson(&x, &y))?);
        worst = worst.max(check("symmetry", r(&y, &x)?, rxy)?);

        let mut signed = |lo: f64, hi: f64| {
            let v = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        };
        let (a, c) = (signed(0.5, 20.0), signed(0.5, 20.0));
        let (b, d) = (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let cy: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        worst = worst.max(check("affine invariance", r(&ax, &cy)?, (a * c).signum() * rxy)?);

        worst = worst.max(check("+1 extreme", r(&x, &ax)?, a.signum())?);
        worst = worst.max(check(
            "-1 extreme",
            r(&x, &ax.iter().map(|v| -v).collect::<Vec<_>>())?,
            -a.signum(),
        )?);
    }
    Ok(format!("{PEARSON_VECTORS} vectors, max |diff| {worst:.1e}"))
}

/// `(correct, total)` per paradigm.
type Tallies = BTreeMap<String, (usize, usize)>;

struct HandWalk {
    per: Tallies,
    overall: (usize, usize),
    /// `(good, bad)` score per pair
    scored: Vec<(f64, f64)>,
}

/// Recomputes a benchmark result from emitted report JSONL and the raw TSV.
fn walk_by_hand(tsv: &str, jsonl: &[u8]) -> Result<HandWalk, String> {
    let scores: Vec<f64> = String::from_utf8_lossy(jsonl)
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["sentence_score"]
                .as_f64()
                .unwrap()
        })
        .collect();
    let mut per = BTreeMap::new();
    let mut overall = (0, 0);
    let mut pairs = Vec::new();
    for (i, line) in tsv.lines().enumerate() {
        let paradigm = line.split('\t').nth(2).ok_or("short tsv line")?.to_string();
        let (good, bad) = (scores[2 * i], scores[2 * i + 1]);
        let hit = usize::from(good > bad);
        let e = per.entry(paradigm).or_insert((0, 0));
        e.0 += hit;
        e.1 += 1;
        overall.0 += hit;
        overall.1 += 1;
        pairs.push((good, bad));
    }
    Ok(HandWalk {
        per,
        overall,
        scored: pairs,
    })
}

fn harness_fixture() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/pairs4.tsv");
    let tsv = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let (pairs, errors) = read_pairs(path, ErrorPolicy::FailFast).map_err(|e| e.to_string())?;
    if pairs.len() != 4 || !errors.is_empty() {
        return Err(format!("read {} pairs, {} errors", pairs.len(), errors.len()));
    }
    let tok = common::hash_tokenizer(3);
    let texts: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.sentence_good.as_str(), p.sentence_bad.as_str()])
        .collect();

    let mut runs: Vec<(BenchmarkResult, Tallies)> = Vec::new();
    for (seed, strategy) in HARNESS_RUNS {
        let engine = Engine::new(common::reference(seed), tok.spec().special);
        let scorer = Scorer::new(&engine, &tok, strategy);
        let reports: Vec<ScoreReport> = scorer
            .score_texts(&texts)
            .map_err(|e| e.to_string())?
            .into_iter()
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mut jsonl = Vec::new();
        write_reports_jsonl(&mut jsonl, &reports).map_err(|e| e.to_string())?;
        let HandWalk { per, overall, scored } = walk_by_hand(&tsv, &jsonl)?;

        let result = evaluate(&pairs, &scorer).map_err(|e| e.to_string())?;
        if (result.overall.correct, result.overall.total) != overall {
            return Err(format!("{strategy}: overall {:?} vs hand {overall:?}", result.overall));
        }
        if result.overall.accuracy() != overall.0 as f64 / overall.1 as f64 {
            return Err(format!("{strategy}: overall accuracy mismatch"));
        }
        for (k, &(c, t)) in &per {
            let got = result.paradigms.get(k).ok_or(format!("missing paradigm {k}"))?;
            if (got.correct, got.total) != (c, t) || got.accuracy() != c as f64 / t as f64 {
                return Err(format!("{strategy} {k}: {got:?} vs hand ({c}, {t})"));
            }
        }
        if result.paradigms.len() != per.len() {
            return Err("paradigm sets differ".into());
        }
        let (good, bad) = scored[3];
        if good.to_bits() != bad.to_bits() || result.paradigms["identical"].correct != 0 {
            return Err(format!("{strategy}: identical pair not scored as a tie counted wrong"));
        }
        runs.push((result, per));
    }

    let (a, hand_a) = &runs[0];
    let (b, hand_b) = &runs[1];
    let diff = diff_report(a, b).map_err(|e| e.to_string())?;
    let acc = |(c, t): (usize, usize)| c as f64 / t as f64;
    let mut want: Vec<(String, f64, f64, f64)> = hand_a
        .iter()
        .map(|(k, &ta)| {
            let (x, y) = (acc(ta), acc(hand_b[k]));
            (k.clone(), x, y, y - x)
        })
        .collect();
    want.sort_by(|p, q| q.3.abs().partial_cmp(&p.3.abs()).unwrap().then(p.0.cmp(&q.0)));
    let got: Vec<(String, f64, f64, f64)> = diff
        .paradigms
        .iter()
        .map(|d| (d.key.clone(), d.a, d.b, d.delta))
        .collect();
    if got != want {
        return Err(format!("diff {got:?} vs hand {want:?}"));
    }
    let overall_delta = acc((b.overall.correct, b.overall.total)) - acc((a.overall.correct, a.overall.total));
    if diff.overall.delta != overall_delta {
        return Err("overall delta mismatch".into());
    }
    Ok(format!(
        "accuracy {}/{} and {}/{}, paradigm deltas {:?} match, tie counted wrong",
        a.overall.correct,
        a.overall.total,
        b.overall.correct,
        b.overall.total,
        got.iter().map(|d| (d.0.as_str(), d.3)).collect::<Vec<_>>()
    ))
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 6] = [
        ("schedule laws", schedule_laws),
        ("metric coincidence", metric_coincidence),
        ("oracle equivalence", oracle_equivalence),
        ("backend normalization and determinism", backend_normalization),
        ("pearson suite", pearson_suite),
        ("harness fixture", harness_fixture),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
