use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Page};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" | "val" | "dev" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 7, validation: 1, test: 2 }
    }
}

impl SplitRatios {
    fn total(&self) -> u32 {
        self.train + self.validation + self.test
    }
}

/// Report-level partition of a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ratios: Option<SplitRatios>,
}

/// Bucket of one report: FNV-1a over `report_id ∥ seed_le_bytes`, reduced
/// modulo the ratio total.
pub fn assign_split(report_id: &str, ratios: SplitRatios, seed: u64) -> SplitName {
    let mut bytes = Vec::with_capacity(report_id.len() + 8);
    bytes.extend_from_slice(report_id.as_bytes());
    bytes.extend_from_slice(&seed.to_le_bytes());
    let bucket = (fnv1a_64(&bytes) % u64::from(ratios.total())) as u32;
    if bucket < ratios.train {
        SplitName::Train
    } else if bucket < ratios.train + ratios.validation {
        SplitName::Validation
    } else {
        SplitName::Test
    }
}

/// Splits pages by a stable hash of their report id. Report ids appear in
/// each list in first-seen order.
pub fn split_by_report_hash(pages: &[Page], ratios: SplitRatios, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if ratios.train == 0 || ratios.validation == 0 || ratios.test == 0 {
        return Err(CorpusError::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let mut split = CorpusSplit {
        seed,
        ratios: Some(ratios),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for page in pages {
        if !seen.insert(page.report_id.as_str()) {
            continue;
        }
        let id = page.report_id.clone();
        match assign_split(&page.report_id, ratios, seed) {
            SplitName::Train => split.train.push(id),
            SplitName::Validation => split.validation.push(id),
            SplitName::Test => split.test.push(id),
        }
    }
    Ok(split)
}

impl CorpusSplit {
    pub fn reports(&self, name: SplitName) -> &[String] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn split_of(&self, report_id: &str) -> Option<SplitName> {
        [SplitName::Train, SplitName::Validation, SplitName::Test]
            .into_iter()
            .find(|&n| self.reports(n).iter().any(|r| r == report_id))
    }

    /// Pages whose report belongs to `name`, in corpus order.
    pub fn pages<'a>(&self, name: SplitName, pages: &'a [Page]) -> Vec<&'a Page> {
        let ids: HashSet<&str> = self.reports(name).iter().map(String::as_str).collect();
        pages.iter().filter(|p| ids.contains(p.report_id.as_str())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(report: &str, page: &str) -> Page {
        Page {
            report_id: report.into(),
            page_id: page.into(),
            text: String::new(),
            annotations: vec![],
        }
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a_64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn pages_of_one_report_share_a_split() {
        let pages: Vec<Page> = (0..200)
            .flat_map(|r| (0..3).map(move |p| page(&format!("r{r}"), &format!("r{r}-p{p}"))))
            .collect();
        let split = split_by_report_hash(&pages, SplitRatios::default(), 7).unwrap();
        let total = split.train.len() + split.validation.len() + split.test.len();
        assert_eq!(total, 200);
        for p in &pages {
            let name = split.split_of(&p.report_id).unwrap();
            assert!(split.pages(name, &pages).iter().any(|q| q.page_id == p.page_id));
        }
    }

    #[test]
    fn deterministic_and_order_independent() {
        let mut pages: Vec<Page> = (0..50).map(|r| page(&format!("rep-{r}"), "p")).collect();
        let a = split_by_report_hash(&pages, SplitRatios::default(), 3).unwrap();
        let b = split_by_report_hash(&pages, SplitRatios::default(), 3).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        pages.reverse();
        pages.truncate(20);
        let c = split_by_report_hash(&pages, SplitRatios::default(), 3).unwrap();
        for p in &pages {
            assert_eq!(a.split_of(&p.report_id), c.split_of(&p.report_id));
        }
    }

    #[test]
    fn empty_corpus_gives_empty_split() {
        let s = split_by_report_hash(&[], SplitRatios::default(), 0).unwrap();
        assert!(s.train.is_empty() && s.validation.is_empty() && s.test.is_empty());
    }

    #[test]
    fn ten_thousand_reports_match_ratios() {
        let pages: Vec<Page> = (0..10_000).map(|r| page(&format!("report-{r:05}"), "p1")).collect();
        let s = split_by_report_hash(&pages, SplitRatios::default(), 42).unwrap();
        let frac = |n: usize| n as f64 / 10_000.0;
        assert!((frac(s.train.len()) - 0.7).abs() <= 0.02, "{}", s.train.len());
        assert!((frac(s.validation.len()) - 0.1).abs() <= 0.02, "{}", s.validation.len());
        assert!((frac(s.test.len()) - 0.2).abs() <= 0.02, "{}", s.test.len());
    }

    #[test]
    fn zero_ratio_is_rejected() {
        let r = SplitRatios { train: 7, validation: 0, test: 3 };
        assert!(split_by_report_hash(&[], r, 0).is_err());
    }
}
