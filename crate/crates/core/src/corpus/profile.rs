use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Page;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub rank: usize,
    pub surface_key: String,
    pub count: u64,
    /// Share of all key occurrences covered by ranks `1..=rank`.
    pub cumulative: f64,
}

/// Rank–frequency table of surface keys with its cumulative coverage curve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyProfile {
    pub total: u64,
    pub rows: Vec<ProfileRow>,
}

impl FrequencyProfile {
    /// Smallest rank whose cumulative coverage reaches `target`.
    pub fn rank_for_coverage(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.cumulative >= target).map(|r| r.rank)
    }

    /// Share of occurrences held by the `k` most frequent keys.
    pub fn top_share(&self, k: usize) -> f64 {
        match k.min(self.rows.len()) {
            0 => 0.0,
            n => self.rows[n - 1].cumulative,
        }
    }
}

pub fn key_frequency_profile<'a>(pages: impl IntoIterator<Item = &'a Page>) -> FrequencyProfile {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for page in pages {
        for a in &page.annotations {
            *counts.entry(a.surface_key.as_str()).or_default() += 1;
        }
    }
    let mut sorted: Vec<(&str, u64)> = counts.into_iter().collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let total: u64 = sorted.iter().map(|(_, c)| c).sum();
    let mut running = 0;
    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(i, (key, count))| {
            running += count;
            ProfileRow {
                rank: i + 1,
                surface_key: key.to_string(),
                count,
                cumulative: running as f64 / total as f64,
            }
        })
        .collect();
    FrequencyProfile { total, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{KvAnnotation, Span};

    fn page_with_keys(keys: &[&str]) -> Page {
        let mut text = String::new();
        let mut annotations = Vec::new();
        for k in keys {
            let start = text.chars().count();
            text.push_str(k);
            text.push_str(":v\n");
            let klen = k.chars().count();
            annotations.push(KvAnnotation {
                key_span: Span::new(start, start + klen),
                value_span: Span::new(start + klen + 1, start + klen + 2),
                surface_key: k.to_string(),
                canonical_key: None,
                value: "v".into(),
            });
        }
        Page { report_id: "r".into(), page_id: "p".into(), text, annotations }
    }

    #[test]
    fn cumulative_curve_for_five_three_two() {
        let mut keys = vec!["A"; 5];
        keys.extend(["B"; 3]);
        keys.extend(["C"; 2]);
        let page = page_with_keys(&keys);
        page.validate().unwrap();
        let prof = key_frequency_profile([&page]);
        let cum: Vec<f64> = prof.rows.iter().map(|r| r.cumulative).collect();
        assert_eq!(cum, vec![0.5, 0.8, 1.0]);
        assert_eq!(prof.rank_for_coverage(0.75), Some(2));
        assert_eq!(prof.top_share(1), 0.5);
    }

    #[test]
    fn ties_break_lexicographically() {
        let page = page_with_keys(&["b", "a", "c", "c"]);
        let prof = key_frequency_profile([&page]);
        let keys: Vec<&str> = prof.rows.iter().map(|r| r.surface_key.as_str()).collect();
        assert_eq!(keys, ["c", "a", "b"]);
    }

    #[test]
    fn empty_corpus_gives_empty_table() {
        let prof = key_frequency_profile(std::iter::empty());
        assert!(prof.rows.is_empty());
        assert_eq!(prof.total, 0);
    }
}
