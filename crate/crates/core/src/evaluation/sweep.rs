use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{pair_prf, EvalError, MatchCriterion, PagePrediction, Prf};
use crate::corpus::{CorpusSplit, Page, SplitName};
use crate::extractor::{extract_page, ExtractorConfig, LogitBackend};
use crate::inventory::{coverage, CoverageMode, KeyInventory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Percent of canonical keys kept, most frequent first.
    pub fractions: Vec<f64>,
    pub delta: usize,
    pub extractor: ExtractorConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: vec![10.0, 20.0, 50.0, 80.0, 90.0, 95.0, 100.0],
            delta: 3,
            extractor: ExtractorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub coverage: f64,
    pub em: Prf,
    pub btm: Prf,
}

/// Runs the extractor with `view` over `pages`.
pub fn extract_corpus<'a>(
    pages: impl IntoIterator<Item = &'a Page>,
    view: &KeyInventory,
    backend: &dyn LogitBackend,
    cfg: &ExtractorConfig,
) -> Result<Vec<PagePrediction>, EvalError> {
    let mut out = Vec::new();
    for page in pages {
        for pair in extract_page(&page.text, view, backend, cfg)? {
            out.push(PagePrediction { page_id: page.page_id.clone(), pair });
        }
    }
    Ok(out)
}

/// Pair-level EM and BTM scores on the test split for each top-fraction
/// view, with key frequencies taken from the training split.
pub fn coverage_sweep(
    pages: &[Page],
    split: &CorpusSplit,
    inv: &KeyInventory,
    backend: &dyn LogitBackend,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    if cfg.fractions.is_empty() {
        return Err(EvalError::Config("no fractions to sweep".into()));
    }
    let ranked = inv.with_frequencies_from(split.pages(SplitName::Train, pages));
    let test: Vec<Page> = split.pages(SplitName::Test, pages).into_iter().cloned().collect();
    let mut rows = Vec::with_capacity(cfg.fractions.len());
    for &fraction in &cfg.fractions {
        let view = ranked.top_fraction_keys(fraction)?;
        let preds = extract_corpus(&test, &view, backend, &cfg.extractor)?;
        rows.push(SweepRow {
            fraction,
            coverage: coverage(&view, &test, CoverageMode::Occurrence)?,
            em: pair_prf(&preds, &test, MatchCriterion::EM)?.metrics,
            btm: pair_prf(&preds, &test, MatchCriterion::btm(cfg.delta))?.metrics,
        });
    }
    Ok(rows)
}

const CSV_HEADER: &str = "fraction,coverage,em_p,em_r,em_f1,btm_p,btm_r,btm_f1";

pub fn write_sweep_csv(mut w: impl Write, rows: &[SweepRow]) -> Result<(), EvalError> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.fraction, r.coverage, r.em.precision, r.em.recall, r.em.f1, r.btm.precision, r.btm.recall, r.btm.f1
        )?;
    }
    Ok(())
}

/// Reads the table written by [`write_sweep_csv`]. Counts are not stored
/// there and come back as zero.
pub fn read_sweep_csv(reader: impl BufRead) -> Result<Vec<SweepRow>, EvalError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || EvalError::Config(format!("line {}: malformed sweep row {line:?}", i + 1));
        let v: Vec<f64> = line.split(',').map(|f| f.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let [fraction, coverage, ep, er, ef, bp, br, bf] = v[..] else { return Err(bad()) };
        let prf = |precision, recall, f1| Prf { precision, recall, f1, ..Default::default() };
        rows.push(SweepRow { fraction, coverage, em: prf(ep, er, ef), btm: prf(bp, br, bf) });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, split_by_report_hash, SplitRatios, SynthesisConfig};
    use crate::extractor::RuleBackend;

    fn setup() -> (Vec<Page>, CorpusSplit, KeyInventory) {
        let c = generate_synthetic_corpus(&SynthesisConfig { num_keys: 30, pages: 120, seed: 3, ..Default::default() }).unwrap();
        let split = split_by_report_hash(&c.pages, SplitRatios::default(), 3).unwrap();
        (c.pages, split, c.inventory)
    }

    #[test]
    fn sweep_rows_and_csv() {
        let (pages, split, inv) = setup();
        let cfg = SweepConfig { fractions: vec![20.0, 100.0], ..Default::default() };
        let rows = coverage_sweep(&pages, &split, &inv, &RuleBackend::new(), &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].coverage < rows[1].coverage);
        assert!(rows[0].em.recall <= rows[1].em.recall);
        assert!(rows[1].btm.f1 >= rows[1].em.f1);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        let back = read_sweep_csv(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].em.f1 - rows[1].em.f1).abs() < 1e-6);
    }

    #[test]
    fn empty_fraction_list_rejected() {
        let (pages, split, inv) = setup();
        let cfg = SweepConfig { fractions: vec![], ..Default::default() };
        assert!(matches!(coverage_sweep(&pages, &split, &inv, &RuleBackend::new(), &cfg), Err(EvalError::Config(_))));
    }

    #[test]
    fn malformed_csv_row() {
        assert!(read_sweep_csv(format!("{CSV_HEADER}\n1,2,3\n").as_bytes()).is_err());
    }
}
