//! Synthetic long-tail corpora with exact gold spans.
//!
//! Each page is a block of `surface_key⟨delim⟩value` lines. Canonical keys
//! are named `k0001…`, sampled with Zipf weights over their ranks; each key
//! owns a geometric number of surface forms (the canonical name plus
//! suffixed aliases).

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{deidentify, fnv1a_64, inject_ocr_noise, CorpusError, NoiseConfig, Page, Span};
use crate::inventory::{CanonicalKeyEntry, KeyInventory};

const ALIAS_SUFFIXES: &[&str] =
    &["情况", "所见", "记录", "经过", "病史", "检查", "结果", "描述", "说明", "信息", "概况", "摘要"];
const VALUE_HAN: &str = "高血压糖尿病无明显异常正常肝肾功能未见阳性体征双肺呼吸音清心律齐腹软压痛反跳痛术后恢复良好轻度中重慢性急性炎症结节钙化增生肿大稳定";
const VALUE_UNITS: &[&str] = &["mg", "cm", "ml", "mmHg", "次/分", "年", "天"];
const NAME_HAN: &str = "张王李赵刘陈杨黄周吴徐孙马朱胡郭何林罗高明华建国伟芳娜秀英敏静丽强磊军洋勇艳杰";

/// Generator settings. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub num_keys: usize,
    /// Mean surface forms per canonical key (cluster size, ≥ 1).
    pub mean_forms_per_key: f64,
    pub max_forms_per_key: usize,
    pub zipf_exponent: f64,
    pub pages: usize,
    pub pages_per_report: (usize, usize),
    pub keys_per_page: (usize, usize),
    pub value_length: (usize, usize),
    /// Share of keys flagged as short fields; their values stay ≤ 8 chars.
    pub short_field_share: f64,
    pub delimiters: Vec<String>,
    /// Emit a de-identified name line at the top of each page.
    pub pii_header: bool,
    /// Total per-character OCR noise rate (see [`NoiseConfig::total`]).
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            num_keys: 300,
            mean_forms_per_key: 1.8,
            max_forms_per_key: 26,
            zipf_exponent: 1.05,
            pages: 2000,
            pages_per_report: (1, 3),
            keys_per_page: (4, 12),
            value_length: (2, 24),
            short_field_share: 0.3,
            delimiters: vec!["：".into(), ": ".into(), ":".into(), "=".into()],
            pii_header: true,
            noise_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Config(m.to_string()));
        if self.num_keys == 0 {
            return bad("num_keys must be positive");
        }
        if !(self.mean_forms_per_key >= 1.0) || self.max_forms_per_key == 0 {
            return bad("mean_forms_per_key must be ≥ 1 and max_forms_per_key positive");
        }
        if !(self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be non-negative");
        }
        if self.pages_per_report.0 == 0 || self.pages_per_report.0 > self.pages_per_report.1 {
            return bad("pages_per_report must be a non-empty range of positive counts");
        }
        if self.keys_per_page.0 > self.keys_per_page.1 || self.keys_per_page.1 == 0 {
            return bad("keys_per_page must be a non-empty range");
        }
        if self.value_length.0 == 0 || self.value_length.0 > self.value_length.1 {
            return bad("value_length must be a non-empty range of positive lengths");
        }
        if self.delimiters.is_empty() {
            return bad("at least one delimiter is required");
        }
        if !(0.0..=1.0).contains(&self.short_field_share) {
            return bad("short_field_share must lie in [0,1]");
        }
        NoiseConfig::total(self.noise_rate).validate()
    }
}

/// Zipf distribution over ranks `0..n` with weight `1 / (rank+1)^s`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    index: WeightedIndex<f64>,
    weights: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(n: usize, exponent: f64) -> Result<Self, CorpusError> {
        if n == 0 {
            return Err(CorpusError::Config("Zipf sampler needs at least one rank".into()));
        }
        let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| CorpusError::Config(e.to_string()))?;
        Ok(Self { index, weights })
    }

    /// Normalized probabilities by rank.
    pub fn probabilities(&self) -> Vec<f64> {
        let z: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / z).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub pages: Vec<Page>,
    /// The planted inventory; frequencies count occurrences over all pages.
    pub inventory: KeyInventory,
}

struct PlantedKey {
    canonical: String,
    forms: Vec<String>,
    short: bool,
}

pub fn generate_synthetic_corpus(config: &SynthesisConfig) -> Result<SyntheticCorpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let keys = plant_keys(config, &mut rng);
    let zipf = ZipfSampler::new(keys.len(), config.zipf_exponent)?;
    let noise = NoiseConfig::total(config.noise_rate);

    let value_han: Vec<char> = VALUE_HAN.chars().collect();
    let name_han: Vec<char> = NAME_HAN.chars().collect();
    let mut pages = Vec::with_capacity(config.pages);
    let mut report_no = 0;
    while pages.len() < config.pages {
        report_no += 1;
        let report_id = format!("rep{report_no:06}");
        let delim = config.delimiters.choose(&mut rng).expect("validated non-empty").clone();
        let n_pages = rng
            .gen_range(config.pages_per_report.0..=config.pages_per_report.1)
            .min(config.pages - pages.len());
        for p in 1..=n_pages {
            let page_id = format!("{report_id}-p{p}");
            let wanted = rng.gen_range(config.keys_per_page.0..=config.keys_per_page.1).min(keys.len());
            let chosen = sample_distinct(&zipf, wanted, &mut rng);

            let mut text: Vec<char> = Vec::new();
            let mut spans = Vec::new();
            let mut pii = Vec::new();
            if config.pii_header {
                text.extend("姓名：".chars());
                let start = text.len();
                let len = rng.gen_range(2..=3);
                text.extend((0..len).map(|_| *name_han.choose(&mut rng).expect("non-empty pool")));
                pii.push(Span::new(start, text.len()));
                text.push('\n');
            }
            for &rank in &chosen {
                let key = &keys[rank];
                let form = key.forms.choose(&mut rng).expect("every key has a form");
                let k0 = text.len();
                text.extend(form.chars());
                let k1 = text.len();
                text.extend(delim.chars());
                let max_len = if key.short { config.value_length.1.min(8).max(config.value_length.0) } else { config.value_length.1 };
                let target = rng.gen_range(config.value_length.0..=max_len);
                let value = random_value(target, &value_han, &mut rng);
                let v0 = text.len();
                text.extend(value.chars());
                let v1 = text.len();
                text.push('\n');
                spans.push((Span::new(k0, k1), Span::new(v0, v1), Some(key.canonical.clone())));
            }
            let text: String = text.into_iter().collect();
            let page = Page::from_spans(report_id.clone(), page_id.clone(), text, spans)?;
            let page = deidentify(&page, &pii)?;
            let page_seed = config.seed ^ fnv1a_64(page_id.as_bytes());
            pages.push(inject_ocr_noise(&page, &noise, page_seed)?);
        }
    }

    let inventory = planted_inventory(&keys, &pages);
    Ok(SyntheticCorpus { pages, inventory })
}

fn plant_keys(config: &SynthesisConfig, rng: &mut ChaCha8Rng) -> Vec<PlantedKey> {
    let mut suffixes: Vec<String> = ALIAS_SUFFIXES.iter().map(|s| s.to_string()).collect();
    for a in ALIAS_SUFFIXES {
        for b in ALIAS_SUFFIXES {
            if a != b {
                suffixes.push(format!("{a}{b}"));
            }
        }
    }
    let p = 1.0 / config.mean_forms_per_key;
    let cap = config.max_forms_per_key.min(suffixes.len() + 1);
    (1..=config.num_keys)
        .map(|i| {
            let canonical = format!("k{i:04}");
            // Geometric on {1, 2, ...} with mean 1/p.
            let mut size = 1;
            while size < cap && !rng.gen_bool(p) {
                size += 1;
            }
            let mut pool = suffixes.clone();
            pool.shuffle(rng);
            let mut forms = vec![canonical.clone()];
            forms.extend(pool.into_iter().take(size - 1).map(|s| format!("{canonical}{s}")));
            PlantedKey { canonical, forms, short: rng.gen_bool(config.short_field_share) }
        })
        .collect()
}

fn sample_distinct(zipf: &ZipfSampler, wanted: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(wanted);
    let mut seen = BTreeSet::new();
    let mut attempts = 0;
    while chosen.len() < wanted && attempts < wanted * 50 {
        attempts += 1;
        let r = zipf.sample(rng);
        if seen.insert(r) {
            chosen.push(r);
        }
    }
    chosen
}

fn random_value(target: usize, han: &[char], rng: &mut ChaCha8Rng) -> String {
    let mut out: Vec<char> = Vec::with_capacity(target + 4);
    while out.len() < target {
        match rng.gen_range(0..10) {
            0..=6 => out.push(*han.choose(rng).expect("non-empty pool")),
            7 | 8 => {
                let n = rng.gen_range(1..=3);
                out.extend((0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))));
            }
            _ => out.extend(VALUE_UNITS.choose(rng).expect("non-empty units").chars()),
        }
    }
    out.truncate(target);
    while out.len() > 1 && !out.last().is_some_and(|c| c.is_alphanumeric()) {
        out.pop();
    }
    if !out.last().is_some_and(|c| c.is_alphanumeric()) {
        out = vec![han[0]];
    }
    out.into_iter().collect()
}

fn planted_inventory(keys: &[PlantedKey], pages: &[Page]) -> KeyInventory {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for a in pages.iter().flat_map(|p| &p.annotations) {
        *counts.entry(a.surface_key.as_str()).or_default() += 1;
    }
    let mut canonical_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for a in pages.iter().flat_map(|p| &p.annotations) {
        if let Some(c) = &a.canonical_key {
            *canonical_counts.entry(c.as_str()).or_default() += 1;
        }
    }
    let entries = keys
        .iter()
        .map(|k| {
            let mut aliases: Vec<String> = k.forms[1..].to_vec();
            aliases.sort_by(|a, b| {
                let ca = counts.get(a.as_str()).copied().unwrap_or(0);
                let cb = counts.get(b.as_str()).copied().unwrap_or(0);
                cb.cmp(&ca).then_with(|| a.cmp(b))
            });
            CanonicalKeyEntry {
                canonical: k.canonical.clone(),
                aliases,
                frequency: canonical_counts.get(k.canonical.as_str()).copied().unwrap_or(0),
                short_field: k.short,
            }
        })
        .collect();
    KeyInventory::from_entries(entries).expect("planted keys are disjoint by construction")
}

impl SyntheticCorpus {
    pub fn annotation_count(&self) -> usize {
        self.pages.iter().map(|p| p.annotations.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthesisConfig {
        SynthesisConfig {
            num_keys: 1,
            mean_forms_per_key: 1.0,
            pages: 1,
            pages_per_report: (1, 1),
            keys_per_page: (1, 1),
            value_length: (3, 3),
            delimiters: vec![": ".into()],
            pii_header: false,
            ..Default::default()
        }
    }

    #[test]
    fn single_key_single_slot_page() {
        let c = generate_synthetic_corpus(&tiny()).unwrap();
        assert_eq!(c.pages.len(), 1);
        let page = &c.pages[0];
        assert!(page.text.starts_with("k0001: "), "{}", page.text);
        assert_eq!(page.annotations.len(), 1);
        let a = &page.annotations[0];
        assert_eq!(a.surface_key, "k0001");
        assert_eq!(a.key_span, Span::new(0, 5));
        assert_eq!(a.value_span, Span::new(7, 10));
        assert_eq!(a.canonical_key.as_deref(), Some("k0001"));
        assert_eq!(c.inventory.entries().len(), 1);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthesisConfig { pages: 40, noise_rate: 0.05, seed: 5, ..Default::default() };
        let a = generate_synthetic_corpus(&cfg).unwrap();
        let b = generate_synthetic_corpus(&cfg).unwrap();
        let ser = |c: &SyntheticCorpus| {
            let mut buf = Vec::new();
            crate::corpus::write_corpus(&mut buf, &c.pages).unwrap();
            buf
        };
        assert_eq!(ser(&a), ser(&b));
        assert_eq!(a.inventory, b.inventory);
    }

    #[test]
    fn annotations_are_sound_and_deidentified() {
        let cfg = SynthesisConfig { pages: 60, noise_rate: 0.02, seed: 1, ..Default::default() };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        for p in &c.pages {
            p.validate().unwrap();
            assert!(p.text.starts_with("姓名"), "{}", p.text);
            assert!(p.text.contains("**"));
            let mut seen = BTreeSet::new();
            for a in &p.annotations {
                assert!(seen.insert(a.canonical_key.clone()), "one slot per canonical key per page");
            }
        }
    }

    #[test]
    fn zipf_weights_match_closed_form() {
        let z = ZipfSampler::new(5, 1.0).unwrap();
        let h: f64 = (1..=5).map(|r| 1.0 / r as f64).sum();
        for (r, p) in z.probabilities().iter().enumerate() {
            assert!((p - 1.0 / ((r + 1) as f64 * h)).abs() < 1e-12);
        }
    }

    #[test]
    fn zipf_empirical_frequencies_within_two_percent() {
        let z = ZipfSampler::new(5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            counts[z.sample(&mut rng)] += 1;
        }
        let h: f64 = (1..=5).map(|r| 1.0 / r as f64).sum();
        for (r, &c) in counts.iter().enumerate() {
            let expected = 1.0 / ((r + 1) as f64 * h);
            let observed = c as f64 / draws as f64;
            assert!((observed - expected).abs() <= 0.02, "rank {r}: {observed} vs {expected}");
        }
    }

    #[test]
    fn forms_per_key_mean_near_configured() {
        let cfg = SynthesisConfig { num_keys: 3000, pages: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keys = plant_keys(&cfg, &mut rng);
        let mean = keys.iter().map(|k| k.forms.len()).sum::<usize>() as f64 / keys.len() as f64;
        assert!((mean - 1.8).abs() < 0.08, "{mean}");
    }

    #[test]
    fn zero_keys_is_config_error() {
        let cfg = SynthesisConfig { num_keys: 0, ..Default::default() };
        assert!(matches!(generate_synthetic_corpus(&cfg), Err(CorpusError::Config(_))));
    }
}
