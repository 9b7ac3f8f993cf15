//! Key-conditioned span extraction.
//!
//! For every canonical key of an inventory view, a value query and a key
//! query are run over budget-sized chunks of the page. A [`LogitBackend`]
//! scores each chunk, the decoder picks a span per chunk, spans are cleaned
//! up and the best one across chunks wins.

mod backend;
mod chunk;
mod decode;
mod postprocess;
mod query;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Span;
use crate::inventory::KeyInventory;

pub use backend::{BackendError, ChunkLogits, LogitBackend, ProcessBackend, RuleBackend, RULE_EDGE, RULE_HIT, RULE_MISS, RULE_NULL};
pub use chunk::{chunk_page, Chunk};
pub use decode::{better, decode_spans, dynamic_admissible_ends, top_n_indices, DecoderConfig, SpanCandidate};
pub use postprocess::postprocess_span;
pub use query::{build_key_query, build_value_query, ExtractionQuery, QueryKind};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown canonical key {0:?}")]
    UnknownCanonical(String),
    #[error("span error: {0}")]
    Span(String),
    #[error("backend failed on key {key:?}, chunk at {chunk_origin}: {source}")]
    Backend {
        key: String,
        chunk_origin: usize,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    pub budget: usize,
    pub overlap: usize,
    pub max_aliases: usize,
    pub decoder: DecoderConfig,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { budget: 448, overlap: 64, max_aliases: 8, decoder: DecoderConfig::default() }
    }
}

/// One extracted (surface key, value) pair for a canonical key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedPair {
    pub canonical_key: String,
    pub surface_key: Option<String>,
    pub key_span: Option<Span>,
    pub value_span: Option<Span>,
    pub value: Option<String>,
    /// Value span score, or the key span score when no value was found.
    pub score: f64,
}

/// Picks the best of per-chunk results already mapped to page offsets:
/// highest score, then earliest start, then shorter.
pub fn merge_chunk_candidates(results: impl IntoIterator<Item = Option<SpanCandidate>>) -> Option<SpanCandidate> {
    results.into_iter().flatten().fold(None, |best, c| match best {
        Some(b) if !better(&c, &b) => Some(b),
        _ => Some(c),
    })
}

fn run_query(
    query: &ExtractionQuery,
    chars: &[char],
    chunks: &[Chunk],
    inv: &KeyInventory,
    backend: &dyn LogitBackend,
    cfg: &ExtractorConfig,
    short_field: bool,
) -> Result<Option<SpanCandidate>, ExtractError> {
    let mut per_chunk = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let fail = |source| ExtractError::Backend { key: query.canonical_key.clone(), chunk_origin: chunk.origin, source };
        let logits = backend.predict(query, chunk, inv).map_err(fail)?;
        logits.validate(chunk.len).map_err(fail)?;
        let Some(local) = decode_spans(&logits, &cfg.decoder, short_field)? else {
            per_chunk.push(None);
            continue;
        };
        let global = Span::new(local.start + chunk.origin, local.end + chunk.origin);
        per_chunk.push(
            postprocess_span(chars, global)?.map(|s| SpanCandidate { start: s.start, end: s.end, score: local.score }),
        );
    }
    Ok(merge_chunk_candidates(per_chunk))
}

/// Runs the key and value queries of every canonical key in `view` over
/// `text`. A pair is emitted only when the key query finds a surface form.
/// Pairs are ordered by key position, then canonical key.
pub fn extract_page(
    text: &str,
    view: &KeyInventory,
    backend: &dyn LogitBackend,
    cfg: &ExtractorConfig,
) -> Result<Vec<ExtractedPair>, ExtractError> {
    let chunks = chunk_page(text, cfg.budget, cfg.overlap)?;
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let chars: Vec<char> = text.chars().collect();
    let read = |s: Span| chars[s.start..s.end].iter().collect::<String>();
    let mut pairs = Vec::new();
    for entry in view.entries() {
        let kc = entry.canonical.as_str();
        let kq = build_key_query(kc, view, cfg.max_aliases)?;
        let Some(key) = run_query(&kq, &chars, &chunks, view, backend, cfg, false)? else {
            continue;
        };
        let vq = build_value_query(kc, view, cfg.max_aliases)?;
        let value = run_query(&vq, &chars, &chunks, view, backend, cfg, entry.short_field)?;
        let key_span = Span::new(key.start, key.end);
        let value_span = value.map(|v| Span::new(v.start, v.end));
        pairs.push(ExtractedPair {
            canonical_key: kc.to_string(),
            surface_key: Some(read(key_span)),
            key_span: Some(key_span),
            value_span,
            value: value_span.map(read),
            score: value.map_or(key.score, |v| v.score),
        });
    }
    pairs.sort_by(|a, b| a.key_span.cmp(&b.key_span).then_with(|| a.canonical_key.cmp(&b.canonical_key)));
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthesisConfig};
    use crate::inventory::CanonicalKeyEntry;

    #[test]
    fn merge_prefers_score_then_position() {
        let c = |s, e, score| Some(SpanCandidate { start: s, end: e, score });
        assert_eq!(merge_chunk_candidates([c(0, 2, 7.0), c(5, 6, 9.0)]).unwrap().score, 9.0);
        assert_eq!(merge_chunk_candidates([None, None]), None);
        let m = merge_chunk_candidates([c(5, 9, 9.0), c(3, 9, 9.0), c(3, 4, 9.0)]).unwrap();
        assert_eq!((m.start, m.end), (3, 4));
    }

    #[test]
    fn span_seen_by_two_overlapping_chunks_is_reported_once() {
        // Budget 10, overlap 6: chunks at 0 and 4. The value at 7..9 is whole
        // in both chunks and both map it to the same page offsets.
        let text = "x   主诉：头痛\n  ";
        let inv = KeyInventory::from_entries(vec![CanonicalKeyEntry::new("主诉")]).unwrap();
        let cfg = ExtractorConfig { budget: 10, overlap: 6, ..Default::default() };
        let pairs = extract_page(text, &inv, &RuleBackend::new(), &cfg).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].value.as_deref(), Some("头痛"));
        assert_eq!(pairs[0].value_span, Some(Span::new(7, 9)));
        assert_eq!(pairs[0].key_span, Some(Span::new(4, 6)));
    }

    fn corpus() -> crate::corpus::SyntheticCorpus {
        generate_synthetic_corpus(&SynthesisConfig { num_keys: 12, pages: 20, keys_per_page: (3, 3), seed: 5, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn planted_pairs_recovered_exactly() {
        let c = corpus();
        let backend = RuleBackend::new();
        for page in &c.pages {
            let pairs = extract_page(&page.text, &c.inventory, &backend, &ExtractorConfig::default()).unwrap();
            assert_eq!(pairs.len(), 3, "{}", page.text);
            for a in &page.annotations {
                let p = pairs.iter().find(|p| Some(&p.canonical_key) == a.canonical_key.as_ref()).unwrap();
                assert_eq!(p.key_span, Some(a.key_span));
                assert_eq!(p.value_span, Some(a.value_span));
                assert_eq!(p.value.as_deref(), Some(a.value.as_str()));
            }
        }
    }

    #[test]
    fn restricted_view_drops_excluded_key() {
        let c = corpus();
        let page = &c.pages[0];
        let dropped = page.annotations[0].canonical_key.clone().unwrap();
        let keep: Vec<&str> = c.inventory.canonicals().filter(|k| *k != dropped).collect();
        let view = c.inventory.restrict_to(&keep).unwrap();
        let backend = RuleBackend::new();
        let full = extract_page(&page.text, &c.inventory, &backend, &ExtractorConfig::default()).unwrap();
        let part = extract_page(&page.text, &view, &backend, &ExtractorConfig::default()).unwrap();
        assert!(part.iter().all(|p| p.canonical_key != dropped));
        let filtered: Vec<_> = full.into_iter().filter(|p| p.canonical_key != dropped).collect();
        assert_eq!(part, filtered);
    }

    #[test]
    fn empty_page() {
        let c = corpus();
        assert!(extract_page("", &c.inventory, &RuleBackend::new(), &ExtractorConfig::default()).unwrap().is_empty());
    }

    struct Failing;
    impl LogitBackend for Failing {
        fn predict(&self, _: &ExtractionQuery, _: &Chunk, _: &KeyInventory) -> Result<ChunkLogits, BackendError> {
            Err(BackendError::Protocol("boom".into()))
        }
    }

    #[test]
    fn backend_failure_names_key_and_chunk() {
        let inv = KeyInventory::from_entries(vec![CanonicalKeyEntry::new("主诉")]).unwrap();
        let err = extract_page("主诉：头痛", &inv, &Failing, &ExtractorConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("主诉") && msg.contains("chunk at 0"), "{msg}");
    }
}
