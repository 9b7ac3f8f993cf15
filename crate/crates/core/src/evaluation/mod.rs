//! Exact and boundary-tolerant matching, micro P/R/F1 and the coverage
//! sweep.

mod sweep;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{KvAnnotation, Page, Span};
use crate::extractor::{ExtractError, ExtractedPair};
use crate::inventory::InventoryError;

pub use sweep::{coverage_sweep, extract_corpus, read_sweep_csv, write_sweep_csv, SweepConfig, SweepRow};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("duplicate prediction for page {page_id:?}, key {canonical_key:?}")]
    DuplicatePrediction { page_id: String, canonical_key: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Em,
    Btm,
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "em" => Ok(Self::Em),
            "btm" => Ok(Self::Btm),
            other => Err(format!("unknown match mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchCriterion {
    pub mode: MatchMode,
    /// Boundary tolerance in chars; ignored under EM.
    pub delta: usize,
}

impl MatchCriterion {
    pub const EM: Self = Self { mode: MatchMode::Em, delta: 0 };

    pub const fn btm(delta: usize) -> Self {
        Self { mode: MatchMode::Btm, delta }
    }
}

pub fn em_match(pred: &str, gold: &str) -> bool {
    pred == gold
}

pub fn btm_match(pred: Span, gold: Span, delta: usize) -> bool {
    pred.start.abs_diff(gold.start) <= delta && pred.end.abs_diff(gold.end) <= delta
}

fn value_matches(pred: &ExtractedPair, gold: &KvAnnotation, c: MatchCriterion) -> bool {
    match c.mode {
        MatchMode::Em => pred.value.as_deref().is_some_and(|v| em_match(v, &gold.value)),
        MatchMode::Btm => pred.value_span.is_some_and(|s| btm_match(s, gold.value_span, c.delta)),
    }
}

fn key_matches(pred: &ExtractedPair, gold: &KvAnnotation, c: MatchCriterion) -> bool {
    match c.mode {
        MatchMode::Em => pred.surface_key.as_deref().is_some_and(|k| em_match(k, &gold.surface_key)),
        MatchMode::Btm => pred.key_span.is_some_and(|s| btm_match(s, gold.key_span, c.delta)),
    }
}

/// An extracted pair tagged with its page, one line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagePrediction {
    pub page_id: String,
    #[serde(flatten)]
    pub pair: ExtractedPair,
}

pub fn read_predictions(reader: impl BufRead) -> Result<Vec<PagePrediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|source| EvalError::Parse { line: i + 1, source })?);
        }
    }
    Ok(out)
}

pub fn write_predictions(mut w: impl Write, preds: &[PagePrediction]) -> Result<(), EvalError> {
    for p in preds {
        serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Value,
    Pair,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    /// Precision is 0 when there are no predictions, recall 0 when there
    /// is no gold.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1, tp, fp, fn_ }
    }
}

pub const PRECISION_CONVENTION: &str = "precision is reported as 0 when there are no predictions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub criterion: MatchCriterion,
    #[serde(flatten)]
    pub metrics: Prf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    pub convention: String,
}

impl EvalReport {
    fn new(level: Level, criterion: MatchCriterion, metrics: Prf) -> Self {
        Self { level, criterion, metrics, coverage: None, convention: PRECISION_CONVENTION.into() }
    }
}

/// Value-level micro P/R/F1 joined on (page, canonical key).
///
/// Predictions without a value are ignored. Gold pairs whose key got no
/// prediction, or that lack a canonical key, are false negatives.
pub fn value_prf(preds: &[PagePrediction], gold: &[Page], c: MatchCriterion) -> Result<EvalReport, EvalError> {
    let mut by_key: HashMap<(&str, &str), &ExtractedPair> = HashMap::new();
    for p in preds.iter().filter(|p| p.pair.value.is_some()) {
        if by_key.insert((&p.page_id, &p.pair.canonical_key), &p.pair).is_some() {
            return Err(EvalError::DuplicatePrediction {
                page_id: p.page_id.clone(),
                canonical_key: p.pair.canonical_key.clone(),
            });
        }
    }
    let mut golds: BTreeMap<(&str, &str), Vec<&KvAnnotation>> = BTreeMap::new();
    let mut fn_ = 0;
    for page in gold {
        for a in &page.annotations {
            match &a.canonical_key {
                Some(k) => golds.entry((&page.page_id, k)).or_default().push(a),
                None => fn_ += 1,
            }
        }
    }
    let (mut tp, mut fp) = (0, 0);
    for (key, pred) in &by_key {
        let hit = golds.get(key).is_some_and(|gs| gs.iter().any(|g| value_matches(pred, g, c)));
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    let total_gold: usize = golds.values().map(Vec::len).sum::<usize>() + fn_;
    Ok(EvalReport::new(Level::Value, c, Prf::from_counts(tp, fp, total_gold - tp)))
}

/// Maximum bipartite matching size (Kuhn's augmenting paths).
pub fn max_matching(n_left: usize, n_right: usize, edge: impl Fn(usize, usize) -> bool) -> usize {
    let adj: Vec<Vec<usize>> = (0..n_left).map(|i| (0..n_right).filter(|&j| edge(i, j)).collect()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    fn augment(i: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|o| augment(o, adj, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    (0..n_left).filter(|&i| augment(i, &adj, &mut vec![false; n_right], &mut owner)).count()
}

/// Pair-level micro P/R/F1: a prediction is correct when both its surface
/// key and its value match one gold pair of the same page under the same
/// criterion; each gold pair is used at most once.
pub fn pair_prf(preds: &[PagePrediction], gold: &[Page], c: MatchCriterion) -> Result<EvalReport, EvalError> {
    let mut by_page: BTreeMap<&str, Vec<&ExtractedPair>> = BTreeMap::new();
    for p in preds {
        by_page.entry(&p.page_id).or_default().push(&p.pair);
    }
    let total_gold: usize = gold.iter().map(|p| p.annotations.len()).sum();
    let mut tp = 0;
    for page in gold {
        let Some(ps) = by_page.get(page.page_id.as_str()) else { continue };
        let gs = &page.annotations;
        tp += max_matching(ps.len(), gs.len(), |i, j| key_matches(ps[i], &gs[j], c) && value_matches(ps[i], &gs[j], c));
    }
    Ok(EvalReport::new(Level::Pair, c, Prf::from_counts(tp, preds.len() - tp, total_gold - tp)))
}
