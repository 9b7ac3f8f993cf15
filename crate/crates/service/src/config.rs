use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use keycov::canonicalizer::{BigramEmbedder, EmbeddingProvider, ExternalEmbeddings, DEFAULT_TAU};
use keycov::corpus::{SplitRatios, SynthesisConfig};
use keycov::evaluation::{MatchMode, SweepConfig};
use keycov::extractor::{ExtractorConfig, LogitBackend, ProcessBackend, RuleBackend};
use keycov::inventory::CoverageMode;
use keycov::orchestrator::{DecisionMode, LoopConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: Option<u64>,
    pub synthesis: SynthesisConfig,
    pub split: SplitRatios,
    pub extractor: ExtractorConfig,
    pub backend: BackendSection,
    pub canonicalizer: CanonicalizerSection,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
    pub loss: LossSection,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub server: ServerSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// External scorer; the rule backend is used when unset.
    pub command: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanonicalizerSection {
    pub tau: f64,
    pub buckets: usize,
    /// JSONL of `{key, vector}`; bigram embeddings are used when unset.
    pub embeddings: Option<PathBuf>,
}

impl Default for CanonicalizerSection {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, buckets: 256, embeddings: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub mode: MatchMode,
    pub delta: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { mode: MatchMode::Em, delta: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub fractions: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { fractions: SweepConfig::default().fractions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub cases: usize,
    pub max_len: usize,
    pub h: f64,
    pub tolerance: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { cases: 100, max_len: 32, h: 1e-5, tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub mode: DecisionMode,
    pub coverage_mode: CoverageMode,
    pub mine_headers: bool,
    pub max_header_chars: usize,
    pub refresh_command: Option<Vec<String>>,
}

impl Default for LoopSection {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            mode: d.mode,
            coverage_mode: d.coverage_mode,
            mine_headers: d.mine_headers,
            max_header_chars: d.max_header_chars,
            refresh_command: d.refresh_command,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub store: PathBuf,
    /// Seeds the store when it does not exist yet.
    pub inventory: Option<PathBuf>,
    /// Gold corpus and split used by the coverage endpoint.
    pub corpus: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    /// Sweep table served by the metrics endpoint (CSV or JSON rows).
    pub sweep_file: Option<PathBuf>,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            store: PathBuf::from("keycov-store"),
            inventory: None,
            corpus: None,
            split_file: None,
            sweep_file: None,
        }
    }
}

/// Sets `path = value` in a TOML tree, creating tables on the way. The
/// value is parsed as TOML and taken as a plain string if that fails.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let Some((path, raw)) = assignment.split_once('=') else {
        bail!("override {assignment:?} is not of the form section.key=value");
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override {assignment:?} has an empty key");
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut table = root;
    for k in parents {
        let slot = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = slot.as_table_mut().with_context(|| format!("override {assignment:?}: {k:?} is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl AppConfig {
    /// Reads the optional config file and applies `section.key=value`
    /// overrides on top of it.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table).try_into().context("invalid configuration")
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            extractor: self.extractor,
            tau: self.canonicalizer.tau,
            mode: self.loop_.mode,
            coverage_mode: self.loop_.coverage_mode,
            mine_headers: self.loop_.mine_headers,
            max_header_chars: self.loop_.max_header_chars,
            refresh_command: self.loop_.refresh_command.clone(),
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig { fractions: self.sweep.fractions.clone(), delta: self.evaluation.delta, extractor: self.extractor }
    }

    pub fn backend(&self) -> anyhow::Result<Box<dyn LogitBackend>> {
        match &self.backend.command {
            None => Ok(Box::new(RuleBackend::new())),
            Some(cmd) => {
                let (program, args) = cmd.split_first().context("backend.command is empty")?;
                Ok(Box::new(ProcessBackend::spawn(program, args).context("starting backend process")?))
            }
        }
    }

    pub fn embedder(&self) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
        match &self.canonicalizer.embeddings {
            None => Ok(Box::new(BigramEmbedder::new(self.canonicalizer.buckets))),
            Some(p) => Ok(Box::new(ExternalEmbeddings::load(p).with_context(|| format!("loading embeddings {}", p.display()))?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(AppConfig::load(None, &[]).unwrap(), AppConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 4\n[extractor]\nbudget = 100\n[extractor.decoder]\ntop_n = 5\n").unwrap();
        let cfg = AppConfig::load(Some(&path), &["extractor.budget=200".into(), "loop.mode=auto".into()]).unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!((cfg.extractor.budget, cfg.extractor.decoder.top_n, cfg.extractor.overlap), (200, 5, 64));
        assert_eq!(cfg.loop_.mode, DecisionMode::Auto);
    }

    #[test]
    fn unknown_keys_and_bad_overrides_fail() {
        assert!(AppConfig::load(None, &["nosuch.key=1".into()]).is_err());
        assert!(AppConfig::load(None, &["seed".into()]).is_err());
        assert!(AppConfig::load(None, &["seed=2".into(), "seed.x=1".into()]).is_err());
        assert!(AppConfig::load(None, &["extractor.budget=\"big\"".into()]).is_err());
    }
}
