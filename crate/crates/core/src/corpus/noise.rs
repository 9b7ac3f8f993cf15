use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Page, Span, PLACEHOLDER};

const DEFAULT_CONFUSIONS: &str = include_str!("../../data/confusions.txt");

/// Symmetric table of visually confusable characters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionTable {
    partners: BTreeMap<char, Vec<char>>,
}

impl ConfusionTable {
    /// Parses one pair per line; `#` starts a comment.
    pub fn parse(src: &str) -> Result<Self, CorpusError> {
        let mut table = Self::default();
        for (n, line) in src.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let single = |s: &str| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Some(c),
                    _ => None,
                }
            };
            match fields.as_slice() {
                [a, b] => match (single(a), single(b)) {
                    (Some(a), Some(b)) if a != b => table.add(a, b),
                    _ => {
                        return Err(CorpusError::Config(format!(
                            "confusion table line {}: expected two distinct single characters",
                            n + 1
                        )))
                    }
                },
                _ => return Err(CorpusError::Config(format!("confusion table line {}: expected a pair", n + 1))),
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CorpusError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn add(&mut self, a: char, b: char) {
        for (x, y) in [(a, b), (b, a)] {
            let list = self.partners.entry(x).or_default();
            if !list.contains(&y) {
                list.push(y);
            }
        }
    }

    pub fn partners(&self, c: char) -> &[char] {
        self.partners.get(&c).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.partners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partners.is_empty()
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::total(0.0)
    }
}

/// Per-character probabilities for each noise channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Replace a character with a confusable partner.
    pub substitution: f64,
    /// Insert a spurious space before a character.
    pub whitespace_insert: f64,
    /// Drop an existing space.
    pub whitespace_delete: f64,
    /// Insert an erroneous line break before a character.
    pub line_break: f64,
    #[serde(skip)]
    pub confusions: Option<ConfusionTable>,
}

impl NoiseConfig {
    /// Splits a total per-character rate: half to substitutions, the rest
    /// evenly across the whitespace and line-break channels.
    pub fn total(rate: f64) -> Self {
        Self {
            substitution: rate / 2.0,
            whitespace_insert: rate / 6.0,
            whitespace_delete: rate / 6.0,
            line_break: rate / 6.0,
            confusions: None,
        }
    }

    pub fn with_confusions(mut self, table: ConfusionTable) -> Self {
        self.confusions = Some(table);
        self
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, r) in [
            ("substitution", self.substitution),
            ("whitespace_insert", self.whitespace_insert),
            ("whitespace_delete", self.whitespace_delete),
            ("line_break", self.line_break),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::Config(format!("noise rate {name}={r} outside [0,1]")));
            }
        }
        Ok(())
    }

    fn is_zero(&self) -> bool {
        self.substitution == 0.0 && self.whitespace_insert == 0.0 && self.whitespace_delete == 0.0 && self.line_break == 0.0
    }
}

fn default_table() -> &'static ConfusionTable {
    static TABLE: std::sync::OnceLock<ConfusionTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| ConfusionTable::parse(DEFAULT_CONFUSIONS).expect("bundled confusion table parses"))
}

/// One character-level edit, positioned on the original text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edit {
    /// Insert `ch` before original char `at` (`at == len` appends).
    Insert { at: usize, ch: char },
    Delete { at: usize },
    Substitute { at: usize, ch: char },
}

/// Applies OCR-style character noise while keeping annotation offsets sound.
///
/// Annotation strings are re-read from the mutated text, so
/// `text[key_span] == surface_key` holds afterwards. Placeholder runs are
/// never edited, and no character is inserted inside one.
pub fn inject_ocr_noise(page: &Page, config: &NoiseConfig, seed: u64) -> Result<Page, CorpusError> {
    config.validate()?;
    if config.is_zero() {
        return Ok(page.clone());
    }
    let edits = sample_edits(page, config, seed);
    apply_edits(page, &edits)
}

fn sample_edits(page: &Page, config: &NoiseConfig, seed: u64) -> Vec<Edit> {
    let table = config.confusions.as_ref().unwrap_or_else(|| default_table());
    let chars: Vec<char> = page.text.chars().collect();
    let n = chars.len();
    let protected = placeholder_mask(&chars);
    // Characters that start or end an annotated span are never deleted, so
    // no span can become empty.
    let mut boundary_char = vec![false; n];
    for a in &page.annotations {
        for s in [a.key_span, a.value_span] {
            if s.start < n {
                boundary_char[s.start] = true;
            }
            if s.end >= 1 && s.end <= n {
                boundary_char[s.end - 1] = true;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edits = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        let inside_placeholder = i > 0 && protected[i] != 0 && protected[i - 1] == protected[i];
        if !inside_placeholder {
            if rng.gen_bool(config.whitespace_insert) {
                edits.push(Edit::Insert { at: i, ch: ' ' });
            }
            if rng.gen_bool(config.line_break) {
                edits.push(Edit::Insert { at: i, ch: '\n' });
            }
        }
        if protected[i] != 0 {
            continue;
        }
        if is_space(c) && !boundary_char[i] && rng.gen_bool(config.whitespace_delete) {
            edits.push(Edit::Delete { at: i });
            continue;
        }
        let partners = table.partners(c);
        if !partners.is_empty() && rng.gen_bool(config.substitution) {
            edits.push(Edit::Substitute { at: i, ch: partners[rng.gen_range(0..partners.len())] });
        }
    }
    edits
}

/// Applies edits (positions refer to the original text) and remaps every
/// annotation. An insertion at a span's start lands before the span; one at
/// its end lands after it.
pub fn apply_edits(page: &Page, edits: &[Edit]) -> Result<Page, CorpusError> {
    let chars: Vec<char> = page.text.chars().collect();
    let n = chars.len();
    let mut inserts: Vec<Vec<char>> = vec![Vec::new(); n + 1];
    let mut replace: Vec<Option<Option<char>>> = vec![None; n];
    for e in edits {
        let (at, limit) = match *e {
            Edit::Insert { at, .. } => (at, n + 1),
            Edit::Delete { at } | Edit::Substitute { at, .. } => (at, n),
        };
        if at >= limit {
            return Err(CorpusError::Validation {
                page_id: page.page_id.clone(),
                reason: format!("edit {e:?} outside text of length {n}"),
            });
        }
        match *e {
            Edit::Insert { at, ch } => inserts[at].push(ch),
            Edit::Delete { at } => replace[at] = Some(None),
            Edit::Substitute { at, ch } => replace[at] = Some(Some(ch)),
        }
    }

    let mut out: Vec<char> = Vec::with_capacity(n + edits.len());
    // end_map[b]: output length before insertions at boundary b;
    // start_map[b]: output length after them.
    let mut start_map = vec![0usize; n + 1];
    let mut end_map = vec![0usize; n + 1];
    for b in 0..=n {
        end_map[b] = out.len();
        out.extend(&inserts[b]);
        start_map[b] = out.len();
        if b < n {
            match replace[b] {
                None => out.push(chars[b]),
                Some(Some(ch)) => out.push(ch),
                Some(None) => {}
            }
        }
    }

    let remap = |s: Span| Span::new(start_map[s.start], end_map[s.end]);
    let mut noisy = page.clone();
    noisy.text = out.into_iter().collect();
    for a in &mut noisy.annotations {
        a.key_span = remap(a.key_span);
        a.value_span = remap(a.value_span);
        if a.key_span.is_empty() || a.value_span.is_empty() {
            return Err(CorpusError::Validation {
                page_id: page.page_id.clone(),
                reason: "edits emptied an annotated span".into(),
            });
        }
    }
    noisy.reread_annotations();
    Ok(noisy)
}

fn is_space(c: char) -> bool {
    c == ' ' || c == '\u{3000}'
}

/// Labels each char with a 1-based placeholder run id, 0 outside.
fn placeholder_mask(chars: &[char]) -> Vec<u32> {
    let pat: Vec<char> = PLACEHOLDER.chars().collect();
    let mut mask = vec![0u32; chars.len()];
    let mut run = 0;
    let mut i = 0;
    while i + pat.len() <= chars.len() {
        if chars[i..i + pat.len()] == pat[..] {
            run += 1;
            mask[i..i + pat.len()].fill(run);
            i += pat.len();
        } else {
            i += 1;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Page {
        Page::from_spans(
            "r1",
            "r1-p1",
            "姓名：**\nk0001：高血压 3年\nk0002：O型 10 mg\n",
            [
                (Span::new(6, 11), Span::new(12, 18), Some("k0001".into())),
                (Span::new(19, 24), Span::new(25, 32), Some("k0002".into())),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_rates_are_identity() {
        let page = sample();
        for seed in 0..5 {
            assert_eq!(inject_ocr_noise(&page, &NoiseConfig::total(0.0), seed).unwrap(), page);
        }
    }

    #[test]
    fn single_insertion_before_annotation_shifts_both_spans() {
        let page = Page::from_spans("r", "p", "x ab:cd", [(Span::new(2, 4), Span::new(5, 7), None)]).unwrap();
        let out = apply_edits(&page, &[Edit::Insert { at: 2, ch: ' ' }]).unwrap();
        assert_eq!(out.text, "x  ab:cd");
        assert_eq!(out.annotations[0].key_span, Span::new(3, 5));
        assert_eq!(out.annotations[0].value_span, Span::new(6, 8));
        assert_eq!(out.annotations[0].surface_key, "ab");
        assert_eq!(out.annotations[0].value, "cd");
    }

    #[test]
    fn insertion_everywhere_grows_interior_only() {
        let page = Page::from_spans("r", "p", "ab:cd", [(Span::new(0, 2), Span::new(3, 5), None)]).unwrap();
        let cfg = NoiseConfig { whitespace_insert: 1.0, ..NoiseConfig::total(0.0) };
        let out = inject_ocr_noise(&page, &cfg, 1).unwrap();
        assert_eq!(out.text, " a b : c d");
        assert_eq!(out.annotations[0].surface_key, "a b");
        assert_eq!(out.annotations[0].value_span, Span::new(7, 10));
        out.validate().unwrap();
    }

    #[test]
    fn deletion_and_substitution_remap() {
        let page = Page::from_spans("r", "p", "k 1: a b", [(Span::new(0, 3), Span::new(5, 8), None)]).unwrap();
        let out = apply_edits(&page, &[Edit::Delete { at: 1 }, Edit::Substitute { at: 2, ch: 'l' }, Edit::Delete { at: 6 }])
            .unwrap();
        assert_eq!(out.text, "kl: ab");
        assert_eq!(out.annotations[0].key_span, Span::new(0, 2));
        assert_eq!(out.annotations[0].surface_key, "kl");
        assert_eq!(out.annotations[0].value, "ab");
    }

    #[test]
    fn placeholder_is_never_edited() {
        let page = sample();
        let cfg = NoiseConfig {
            substitution: 1.0,
            whitespace_insert: 1.0,
            whitespace_delete: 1.0,
            line_break: 1.0,
            confusions: None,
        };
        let mut table = ConfusionTable::default();
        table.add('*', '#');
        let out = inject_ocr_noise(&page, &cfg.with_confusions(table), 9).unwrap();
        assert!(out.text.contains("**"), "{}", out.text);
        assert!(!out.text.contains('#'));
        out.validate().unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let page = sample();
        let cfg = NoiseConfig::total(0.3);
        let a = inject_ocr_noise(&page, &cfg, 11).unwrap();
        let b = inject_ocr_noise(&page, &cfg, 11).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn heavy_noise_keeps_offsets_sound() {
        let page = sample();
        for seed in 0..200 {
            let out = inject_ocr_noise(&page, &NoiseConfig::total(0.6), seed).unwrap();
            out.validate().unwrap();
            assert!(out.annotations.iter().all(|a| !a.key_span.is_empty() && !a.value_span.is_empty()));
        }
    }

    #[test]
    fn bundled_table_is_symmetric() {
        let t = default_table();
        assert!(t.partners('0').contains(&'O'));
        assert!(t.partners('O').contains(&'0'));
        assert!(t.partners('未').contains(&'末'));
    }

    #[test]
    fn rejects_out_of_range_rates() {
        let cfg = NoiseConfig { line_break: 1.5, ..NoiseConfig::default() };
        assert!(inject_ocr_noise(&sample(), &cfg, 0).is_err());
    }
}
