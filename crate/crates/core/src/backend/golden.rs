//! Golden parity fixtures written by the model exporter.
//!
//! One JSON object per line:
//!
//! ```text
//! {"kind": "masked", "masked_ids": [101, 103, 2003, 102],
//!  "targets": [1],
//!  "logprobs": [[[2023, -0.12], [1996, -2.4], ...]],
//!  "remainder": [-3.91]}
//! ```
//!
//! `logprobs[i]` holds the top-k `(id, logprob)` pairs for `targets[i]`;
//! `remainder[i]`, when present, is the log of the probability mass outside
//! those k ids. For `"kind": "causal"` the row is an unmasked sequence and
//! each target is the position whose next-token distribution was recorded.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{logsumexp, Backend, BatchInput, Target};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

pub const DEFAULT_TOP_K: usize = 32;
pub const PARITY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    #[default]
    Masked,
    Causal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFixture {
    #[serde(default)]
    pub kind: FixtureKind,
    pub masked_ids: Vec<TokenId>,
    pub targets: Vec<usize>,
    pub logprobs: Vec<Vec<(TokenId, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remainder: Option<Vec<f64>>,
}

impl GoldenFixture {
    /// Builds a fixture from full distributions, keeping the `k` most
    /// likely ids per target.
    pub fn from_distributions(
        kind: FixtureKind,
        ids: Vec<TokenId>,
        targets: Vec<usize>,
        distributions: &[Vec<f64>],
        k: usize,
    ) -> Self {
        let mut logprobs = Vec::new();
        let mut remainder = Vec::new();
        for dist in distributions {
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            let top: Vec<(TokenId, f64)> = order.iter().take(k).map(|&i| (i as TokenId, dist[i])).collect();
            let rest: Vec<f64> = order.iter().skip(k).map(|&i| dist[i]).collect();
            logprobs.push(top);
            remainder.push(logsumexp(&rest));
        }
        GoldenFixture {
            kind,
            masked_ids: ids,
            targets,
            logprobs,
            remainder: Some(remainder),
        }
    }
}

pub fn read_fixtures(path: impl AsRef<Path>) -> Result<Vec<GoldenFixture>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fixture: GoldenFixture = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if fixture.targets.len() != fixture.logprobs.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "targets and logprobs differ in length".into(),
            });
        }
        out.push(fixture);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParityReport {
    pub fixtures: usize,
    pub values_checked: usize,
    pub max_abs_diff: f64,
    pub failures: Vec<String>,
}

impl ParityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Replays fixtures through `backend` and compares every recorded logprob
/// (and remainder mass) within `tolerance`.
pub fn check_parity<B: Backend + ?Sized>(
    backend: &B,
    fixtures: &[GoldenFixture],
    tolerance: f64,
) -> Result<ParityReport> {
    let mut report = ParityReport::default();
    for (fi, fixture) in fixtures.iter().enumerate() {
        let input = BatchInput::padded(vec![fixture.masked_ids.clone()], 0);
        let targets: Vec<Target> = fixture
            .targets
            .iter()
            .map(|&position| Target { row: 0, position })
            .collect();
        let dists = match fixture.kind {
            FixtureKind::Masked => backend.mlm_logprobs(&input, &targets)?,
            FixtureKind::Causal => backend.causal_logprobs(&input, &targets)?,
        };
        for (ti, (dist, expected)) in dists.iter().zip(&fixture.logprobs).enumerate() {
            let mut seen = HashSet::new();
            for &(id, want) in expected {
                let got = *dist
                    .get(id as usize)
                    .ok_or_else(|| Error::VocabularyMismatch(format!("fixture {fi} references id {id}")))?;
                seen.insert(id as usize);
                let diff = (got - want).abs();
                report.values_checked += 1;
                report.max_abs_diff = report.max_abs_diff.max(diff);
                if diff > tolerance {
                    report
                        .failures
                        .push(format!("fixture {fi} target {ti} id {id}: expected {want}, got {got}"));
                }
            }
            if let Some(want) = fixture.remainder.as_ref().and_then(|r| r.get(ti)) {
                let rest: Vec<f64> = dist
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !seen.contains(i))
                    .map(|(_, &v)| v)
                    .collect();
                let got = logsumexp(&rest);
                let diff = if got == *want { 0.0 } else { (got - want).abs() };
                report.values_checked += 1;
                report.max_abs_diff = report.max_abs_diff.max(diff);
                if diff > tolerance {
                    report.failures.push(format!(
                        "fixture {fi} target {ti} remainder: expected {want}, got {got}"
                    ));
                }
            }
        }
        report.fixtures += 1;
    }
    Ok(report)
}
