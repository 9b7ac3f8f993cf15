use serde::{Deserialize, Serialize};

use super::{ChunkLogits, ExtractError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub top_n: usize,
    /// Cumulative end-probability mass kept per start.
    pub mass: f64,
    /// Longest admissible span in chars.
    pub max_span: usize,
    pub short_max_span: usize,
    /// Added to the null score before comparing with the best span.
    pub null_offset: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { top_n: 20, mass: 0.9, max_span: 64, short_max_span: 16, null_offset: 0.0 }
    }
}

impl DecoderConfig {
    pub fn cap(&self, short_field: bool) -> usize {
        if short_field {
            self.short_max_span
        } else {
            self.max_span
        }
    }
}

/// A chunk-local span `[start, end)` with its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

/// Slack on the mass threshold so that prefix sums landing exactly on it
/// are not lost to rounding.
const MASS_SLACK: f64 = 1e-12;

/// Inclusive end positions admissible for `start`.
///
/// The end logits at positions `≥ start` are softmax-normalized; positions
/// sorted by descending probability (ties to the lower index) are taken
/// until their mass reaches `mass`, and ends making the span longer than
/// `cap` chars are dropped. Returned ascending.
pub fn dynamic_admissible_ends(start: usize, end_logits: &[f64], mass: f64, cap: usize) -> Result<Vec<usize>, ExtractError> {
    if start >= end_logits.len() {
        return Err(ExtractError::Span(format!("start {start} beyond chunk of length {}", end_logits.len())));
    }
    let tail = &end_logits[start..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = tail.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut order: Vec<usize> = (0..tail.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut cum = 0.0;
    let mut out = Vec::new();
    for i in order {
        cum += weights[i] / z;
        if i < cap {
            out.push(start + i);
        }
        if cum >= mass - MASS_SLACK {
            break;
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Indices of the `n` largest values, ties to the lower index.
pub fn top_n_indices(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Whether `a` beats `b`: higher score, then earlier start, then shorter.
pub fn better(a: &SpanCandidate, b: &SpanCandidate) -> bool {
    a.score > b.score || (a.score == b.score && (a.start, a.end) < (b.start, b.end))
}

/// Best admissible span of the chunk, or `None` for no answer.
pub fn decode_spans(logits: &ChunkLogits, cfg: &DecoderConfig, short_field: bool) -> Result<Option<SpanCandidate>, ExtractError> {
    let n = logits.len();
    if logits.end_logits.len() != n {
        return Err(ExtractError::Span("start and end logits differ in length".into()));
    }
    if n == 0 {
        return Ok(None);
    }
    let starts = top_n_indices(&logits.start_logits, cfg.top_n);
    let ends = top_n_indices(&logits.end_logits, cfg.top_n);
    let null = logits.null_score + cfg.null_offset;
    let ceiling = logits.start_logits[starts[0]] + logits.end_logits[ends[0]];
    if null > ceiling {
        return Ok(None);
    }
    let mut in_top_end = vec![false; n];
    ends.iter().for_each(|&e| in_top_end[e] = true);
    let cap = cfg.cap(short_field);
    let mut best: Option<SpanCandidate> = None;
    for &s in &starts {
        for e in dynamic_admissible_ends(s, &logits.end_logits, cfg.mass, cap)? {
            if !in_top_end[e] {
                continue;
            }
            let c = SpanCandidate { start: s, end: e + 1, score: logits.start_logits[s] + logits.end_logits[e] };
            if best.is_none_or(|b| better(&c, &b)) {
                best = Some(c);
            }
        }
    }
    Ok(best.filter(|b| null <= b.score))
}
