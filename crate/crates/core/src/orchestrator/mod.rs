//! Batch loop over a versioned inventory store.
//!
//! Each iteration extracts pairs with the current inventory, collects the
//! surface keys seen in the batch, turns the unknown ones into review
//! proposals and, in auto mode, accepts them all.

mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonicalizer::{
    normalize_key, propose_clusters, CanonicalizerError, EmbeddingProvider, ReviewAction, ReviewDecision, DEFAULT_TAU,
};
use crate::corpus::Page;
use crate::evaluation::{extract_corpus, EvalError, PagePrediction};
use crate::extractor::{ExtractorConfig, LogitBackend};
use crate::inventory::{coverage, CoverageMode, InventoryError, KeyInventory};

pub use store::{AliasEdit, DecisionOrigin, DecisionRecord, InventoryStore};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("no inventory store at {0}")]
    NotInitialized(PathBuf),
    #[error("inventory store at {0} already exists")]
    AlreadyInitialized(PathBuf),
    #[error("unknown inventory version {0}")]
    UnknownVersion(u64),
    #[error("{0}")]
    Invalid(String),
    #[error("refresh hook {command:?} failed: {reason}")]
    Refresh { command: Vec<String>, reason: String },
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Canonicalizer(#[from] CanonicalizerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl OrchestratorError {
    /// Whether the error reflects a clash with the current store state
    /// rather than a malformed request.
    pub fn is_conflict(&self) -> bool {
        matches!(
            self,
            Self::Inventory(InventoryError::Conflict { .. })
                | Self::Canonicalizer(CanonicalizerError::NotPending { .. })
                | Self::Canonicalizer(CanonicalizerError::Inventory(InventoryError::Conflict { .. }))
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    /// Proposals wait in the queue for a reviewer.
    #[default]
    Interactive,
    /// Every new proposal is accepted and logged.
    Auto,
}

impl std::str::FromStr for DecisionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactive" => Ok(Self::Interactive),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown decision mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub extractor: ExtractorConfig,
    pub tau: f64,
    pub mode: DecisionMode,
    pub coverage_mode: CoverageMode,
    /// Also treat `header：` line prefixes as observed keys.
    pub mine_headers: bool,
    pub max_header_chars: usize,
    /// Program and leading arguments; the new snapshot path is appended.
    pub refresh_command: Option<Vec<String>>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorConfig::default(),
            tau: DEFAULT_TAU,
            mode: DecisionMode::Interactive,
            coverage_mode: CoverageMode::Surface,
            mine_headers: true,
            max_header_chars: 24,
            refresh_command: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchIterationRecord {
    pub batch_id: String,
    pub pages_processed: usize,
    pub extracted_pairs: usize,
    pub novel_keys: Vec<String>,
    pub proposals_created: usize,
    pub decisions_applied: usize,
    pub inventory_version_before: u64,
    pub inventory_version_after: u64,
    /// `None` when the evaluation pages carry no gold pairs.
    pub coverage_before: Option<f64>,
    pub coverage_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub record: BatchIterationRecord,
    pub pairs: Vec<PagePrediction>,
}

const HEADER_DELIMS: &[char] = &['：', ':', '=', '＝'];

/// Line prefixes that look like field headers: the text before the first
/// delimiter, trimmed, at most `max_chars` long.
pub fn mine_line_keys(text: &str, max_chars: usize) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let (head, _) = line.split_once(HEADER_DELIMS)?;
            let head = head.trim();
            let n = head.chars().count();
            (n > 0 && n <= max_chars).then(|| head.to_string())
        })
        .collect()
}

/// Normalized surface keys observed in a batch with their counts: extracted
/// keys plus, optionally, mined line headers.
pub fn observed_keys(pages: &[Page], pairs: &[PagePrediction], cfg: &LoopConfig) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut add = |raw: &str| {
        let k = normalize_key(raw);
        if !k.is_empty() {
            *counts.entry(k).or_default() += 1;
        }
    };
    for p in pairs {
        if let Some(k) = &p.pair.surface_key {
            add(k);
        }
    }
    if cfg.mine_headers {
        for page in pages {
            mine_line_keys(&page.text, cfg.max_header_chars).iter().for_each(|h| add(h));
        }
    }
    counts
}

fn coverage_of(inv: &KeyInventory, pages: &[Page], mode: CoverageMode) -> Result<Option<f64>, OrchestratorError> {
    match coverage(inv, pages, mode) {
        Ok(c) => Ok(Some(c)),
        Err(InventoryError::NoGold) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn run_refresh(command: &[String], snapshot: &std::path::Path) -> Result<(), OrchestratorError> {
    let fail = |reason: String| OrchestratorError::Refresh { command: command.to_vec(), reason };
    let (program, args) = command.split_first().ok_or_else(|| fail("empty command".into()))?;
    let status = Command::new(program).args(args).arg(snapshot).status().map_err(|e| fail(e.to_string()))?;
    if status.success() {
        Ok(())
    } else {
        Err(fail(status.to_string()))
    }
}

/// One pass of the expansion loop over `batch`.
///
/// Coverage is measured on `eval` when given, else on the batch itself.
/// Proposals get ids `b{batch_id}-p{n}`. Nothing is persisted unless the
/// whole iteration succeeds; the refresh hook runs after persistence and
/// only when the version advanced.
pub fn run_batch_iteration(
    store: &mut InventoryStore,
    batch_id: &str,
    batch: &[Page],
    backend: &dyn LogitBackend,
    provider: &dyn EmbeddingProvider,
    cfg: &LoopConfig,
    eval: Option<&[Page]>,
) -> Result<BatchOutcome, OrchestratorError> {
    let inv = store.current().clone();
    let eval = eval.unwrap_or(batch);
    let coverage_before = coverage_of(&inv, eval, cfg.coverage_mode)?;

    let pairs = extract_corpus(batch, &inv, backend, &cfg.extractor)?;
    let observed = observed_keys(batch, &pairs, cfg);
    let novel: Vec<(String, u64)> = inv
        .detect_novel_keys(observed.keys().map(String::as_str))
        .into_iter()
        .map(|k| {
            let n = observed[&k];
            (k, n)
        })
        .collect();
    let proposals = propose_clusters(&novel, &inv, provider, cfg.tau, &format!("b{batch_id}-p"))?;

    let mut queue = store.queue().clone();
    queue.enqueue(proposals.iter().cloned())?;
    let mut current = inv.clone();
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    if cfg.mode == DecisionMode::Auto {
        for p in &proposals {
            let decision = ReviewDecision::new(p.proposal_id.clone(), ReviewAction::Accept);
            let next = queue.decide(&current, &decision)?;
            records.push(DecisionRecord {
                seq: store.next_seq() + records.len() as u64,
                origin: DecisionOrigin::Auto,
                batch_id: Some(batch_id.to_string()),
                decision: Some(decision),
                alias: None,
                version_before: current.version(),
                version_after: next.version(),
            });
            if next.version() != current.version() {
                snapshots.push(next.clone());
            }
            current = next;
        }
    }
    let decisions_applied = records.len();
    store.commit(snapshots, queue, records)?;
    if current.version() != inv.version() {
        if let Some(cmd) = &cfg.refresh_command {
            run_refresh(cmd, &store.snapshot_path(current.version()))?;
        }
    }

    let record = BatchIterationRecord {
        batch_id: batch_id.to_string(),
        pages_processed: batch.len(),
        extracted_pairs: pairs.len(),
        novel_keys: novel.into_iter().map(|(k, _)| k).collect(),
        proposals_created: proposals.len(),
        decisions_applied,
        inventory_version_before: inv.version(),
        inventory_version_after: current.version(),
        coverage_before,
        coverage_after: coverage_of(&current, eval, cfg.coverage_mode)?,
    };
    Ok(BatchOutcome { record, pairs })
}
