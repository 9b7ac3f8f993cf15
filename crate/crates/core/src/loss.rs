//! Composite span-extraction loss with analytic gradients.
//!
//! Cross-entropy terms run over logit vectors with a virtual null position
//! prepended at index 0 whose logit is the null score; unanswerable
//! examples target that position. Gold spans are half-open [`Span`]s and
//! the end cross-entropy targets the last character `end − 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Span;
use crate::extractor::ChunkLogits;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("gold index {index} outside logits of length {len}")]
    GoldOutOfRange { index: usize, len: usize },
    #[error("logits contain a non-finite value")]
    NonFinite,
    #[error("start and end logits differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty logit vector")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTask {
    Extraction,
    Canonicalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub epsilon: f64,
    pub margin: f64,
    pub margin_weight: f64,
    pub length_weight: f64,
    pub length_scale: f64,
    pub short_weight: f64,
    pub short_threshold: usize,
    pub task: LossTask,
}

impl LossConfig {
    pub fn extraction() -> Self {
        Self {
            epsilon: 0.08,
            margin: 0.10,
            margin_weight: 0.01,
            length_weight: 0.1,
            length_scale: 2.0,
            short_weight: 2.0,
            short_threshold: 10,
            task: LossTask::Extraction,
        }
    }

    pub fn canonicalization() -> Self {
        Self {
            epsilon: 0.1,
            margin: 0.15,
            margin_weight: 0.05,
            short_weight: 2.5,
            task: LossTask::Canonicalization,
            ..Self::extraction()
        }
    }

    pub fn preset(task: LossTask) -> Self {
        match task {
            LossTask::Extraction => Self::extraction(),
            LossTask::Canonicalization => Self::canonicalization(),
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::extraction()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_start: f64,
    pub ce_end: f64,
    pub margin_term: f64,
    pub length_term: f64,
    pub weight_factor: f64,
    pub total: f64,
    pub grad_start: Vec<f64>,
    pub grad_end: Vec<f64>,
    pub grad_null: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy against `(1−ε)·onehot(gold) + ε/L`, with its gradient
/// `softmax − target`.
pub fn smoothed_span_ce(logits: &[f64], gold: usize, epsilon: f64) -> Result<(f64, Vec<f64>), LossError> {
    let n = logits.len();
    if gold >= n {
        return Err(LossError::GoldOutOfRange { index: gold, len: n });
    }
    let lse = log_sum_exp(logits);
    let uniform = epsilon / n as f64;
    let target = |i: usize| uniform + if i == gold { 1.0 - epsilon } else { 0.0 };
    let loss = (0..n).map(|i| -target(i) * (logits[i] - lse)).sum();
    let p = softmax(logits);
    let grad = (0..n).map(|i| p[i] - target(i)).collect();
    Ok((loss, grad))
}

/// Highest `start[s] + end[e]` over `s ≤ e`, earliest pair on ties.
pub fn best_span_score(start: &[f64], end: &[f64]) -> Option<(usize, usize, f64)> {
    // Suffix maxima of the end logits give the best end for each start.
    let n = start.len();
    let mut best_end = vec![0usize; n];
    for e in (0..n).rev() {
        best_end[e] = if e + 1 < n && end[best_end[e + 1]] > end[e] { best_end[e + 1] } else { e };
    }
    (0..n).fold(None, |acc, s| {
        let e = best_end[s];
        let v = start[s] + end[e];
        match acc {
            Some((_, _, b)) if b >= v => acc,
            _ => Some((s, e, v)),
        }
    })
}

/// Subgradient of a hinge with respect to start, end and null.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTerm {
    pub value: f64,
    /// Signed distance of the hinge argument from its kink.
    pub slack: f64,
    pub grad_start: Vec<f64>,
    pub grad_end: Vec<f64>,
    pub grad_null: f64,
}

/// Answerable: `max(0, m − (start[s] + end[e−1] − null))`.
/// Unanswerable: `max(0, m − (null − best span score))`.
pub fn no_answer_margin(logits: &ChunkLogits, gold: Option<Span>, margin: f64) -> MarginTerm {
    let n = logits.len();
    let (mut gs, mut ge) = (vec![0.0; n], vec![0.0; n]);
    let null = logits.null_score;
    let (arg, s, e, sign) = match gold {
        Some(g) => {
            let (s, e) = (g.start, g.end - 1);
            (margin - (logits.start_logits[s] + logits.end_logits[e] - null), s, e, -1.0)
        }
        None => match best_span_score(&logits.start_logits, &logits.end_logits) {
            Some((s, e, best)) => (margin - (null - best), s, e, 1.0),
            None => (margin - null, 0, 0, 0.0),
        },
    };
    if arg <= 0.0 {
        return MarginTerm { value: 0.0, slack: arg, grad_start: gs, grad_end: ge, grad_null: 0.0 };
    }
    if n > 0 && sign != 0.0 {
        gs[s] += sign;
        ge[e] += sign;
    }
    let grad_null = if gold.is_some() { 1.0 } else { -1.0 };
    MarginTerm { value: arg, slack: arg, grad_start: gs, grad_end: ge, grad_null }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `softplus((E[end] − E[start] + 1 − gold_len) / scale)` under independent
/// softmaxes over the positions, with gradients for both logit vectors.
pub fn length_penalty(start: &[f64], end: &[f64], gold_len: usize, scale: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (p, q) = (softmax(start), softmax(end));
    let mean = |d: &[f64]| d.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>();
    let (es, ee) = (mean(&p), mean(&q));
    let x = (ee - es + 1.0 - gold_len as f64) / scale;
    let dx = sigmoid(x) / scale;
    let gs = p.iter().enumerate().map(|(k, pk)| -dx * pk * (k as f64 - es)).collect();
    let ge = q.iter().enumerate().map(|(k, qk)| dx * qk * (k as f64 - ee)).collect();
    (softplus(x), gs, ge)
}

pub fn example_weight(gold: Option<Span>, short_threshold: usize, short_weight: f64) -> f64 {
    match gold {
        Some(g) if g.len() <= short_threshold => short_weight,
        _ => 1.0,
    }
}

fn with_null(null: f64, logits: &[f64]) -> Vec<f64> {
    std::iter::once(null).chain(logits.iter().copied()).collect()
}

/// `weight·(ce_start + ce_end) + margin_weight·margin + length_weight·length`.
///
/// The length term applies to answerable examples only.
pub fn total_loss(logits: &ChunkLogits, gold: Option<Span>, cfg: &LossConfig) -> Result<LossBreakdown, LossError> {
    let n = logits.len();
    if logits.end_logits.len() != n {
        return Err(LossError::LengthMismatch(n, logits.end_logits.len()));
    }
    if n == 0 {
        return Err(LossError::Empty);
    }
    if !logits.null_score.is_finite() || !logits.start_logits.iter().chain(&logits.end_logits).all(|v| v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    if let Some(g) = gold {
        if g.is_empty() || g.end > n {
            return Err(LossError::GoldOutOfRange { index: g.end, len: n });
        }
    }
    let (gs_idx, ge_idx) = gold.map_or((0, 0), |g| (g.start + 1, g.end));
    let (ce_start, cs) = smoothed_span_ce(&with_null(logits.null_score, &logits.start_logits), gs_idx, cfg.epsilon)?;
    let (ce_end, ce) = smoothed_span_ce(&with_null(logits.null_score, &logits.end_logits), ge_idx, cfg.epsilon)?;
    let w = example_weight(gold, cfg.short_threshold, cfg.short_weight);
    let m = no_answer_margin(logits, gold, cfg.margin);
    let (length_term, ls, le) = match gold {
        Some(g) => length_penalty(&logits.start_logits, &logits.end_logits, g.len(), cfg.length_scale),
        None => (0.0, vec![0.0; n], vec![0.0; n]),
    };

    let grad_start = (0..n)
        .map(|i| w * cs[i + 1] + cfg.margin_weight * m.grad_start[i] + cfg.length_weight * ls[i])
        .collect();
    let grad_end = (0..n)
        .map(|i| w * ce[i + 1] + cfg.margin_weight * m.grad_end[i] + cfg.length_weight * le[i])
        .collect();
    let grad_null = w * (cs[0] + ce[0]) + cfg.margin_weight * m.grad_null;
    Ok(LossBreakdown {
        ce_start,
        ce_end,
        margin_term: m.value,
        length_term,
        weight_factor: w,
        total: w * (ce_start + ce_end) + cfg.margin_weight * m.value + cfg.length_weight * length_term,
        grad_start,
        grad_end,
        grad_null,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Distance below which a coordinate is treated as sitting on a kink.
pub const KINK_SLACK: f64 = 1e-3;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-3;

/// Compares analytic gradients of [`total_loss`] with central differences
/// on every start, end and null coordinate. Coordinates that the margin
/// hinge depends on are skipped when the hinge argument, or the gap between
/// the best and second-best span for unanswerable examples, is within
/// [`KINK_SLACK`].
pub fn grad_check(logits: &ChunkLogits, gold: Option<Span>, cfg: &LossConfig, h: f64) -> Result<GradCheck, LossError> {
    let base = total_loss(logits, gold, cfg)?;
    let n = logits.len();
    let skip = kink_coordinates(logits, gold, cfg.margin);
    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    // Coordinate 0..n start, n..2n end, 2n null.
    for c in 0..=2 * n {
        if skip.contains(&c) && cfg.margin_weight != 0.0 {
            out.skipped += 1;
            continue;
        }
        let eval = |delta: f64| -> Result<f64, LossError> {
            let mut l = logits.clone();
            match c {
                c if c < n => l.start_logits[c] += delta,
                c if c < 2 * n => l.end_logits[c - n] += delta,
                _ => l.null_score += delta,
            }
            Ok(total_loss(&l, gold, cfg)?.total)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        let analytic = match c {
            c if c < n => base.grad_start[c],
            c if c < 2 * n => base.grad_end[c - n],
            _ => base.grad_null,
        };
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSuite {
    pub cases: usize,
    pub max_rel_error: f64,
    pub worst_case: usize,
    pub checked: usize,
    pub skipped: usize,
}

/// Runs [`grad_check`] on `cases` random instances of length `1..=max_len`
/// with logits in [−4, 4). Every fourth case is unanswerable; the two loss
/// presets alternate.
pub fn random_grad_checks(cases: usize, max_len: usize, seed: u64, h: f64) -> Result<GradCheckSuite, LossError> {
    use rand::{Rng, SeedableRng};
    if max_len == 0 {
        return Err(LossError::Empty);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut suite = GradCheckSuite { cases, max_rel_error: 0.0, worst_case: 0, checked: 0, skipped: 0 };
    for case in 0..cases {
        let n = rng.gen_range(1..=max_len);
        let mut v = || (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect::<Vec<f64>>();
        let (start_logits, end_logits) = (v(), v());
        let null_score = rng.gen_range(-4.0..4.0);
        let gold = if case % 4 == 0 {
            None
        } else {
            let a = rng.gen_range(0..n);
            Some(Span::new(a, rng.gen_range(a + 1..=n)))
        };
        let cfg = if case % 2 == 0 { LossConfig::extraction() } else { LossConfig::canonicalization() };
        let r = grad_check(&ChunkLogits { start_logits, end_logits, null_score }, gold, &cfg, h)?;
        if r.max_rel_error > suite.max_rel_error {
            suite.max_rel_error = r.max_rel_error;
            suite.worst_case = case;
        }
        suite.checked += r.checked;
        suite.skipped += r.skipped;
    }
    Ok(suite)
}

fn kink_coordinates(logits: &ChunkLogits, gold: Option<Span>, margin: f64) -> Vec<usize> {
    let n = logits.len();
    let m = no_answer_margin(logits, gold, margin);
    let at_kink = m.slack.abs() < KINK_SLACK;
    match gold {
        Some(g) if at_kink => vec![g.start, n + g.end - 1, 2 * n],
        Some(_) => Vec::new(),
        None => {
            let Some((_, _, best)) = best_span_score(&logits.start_logits, &logits.end_logits) else {
                return vec![2 * n];
            };
            // Spans within the slack of the best can take over the max.
            let mut coords = Vec::new();
            for s in 0..n {
                for e in s..n {
                    if best - (logits.start_logits[s] + logits.end_logits[e]) < KINK_SLACK {
                        coords.extend([s, n + e]);
                    }
                }
            }
            if at_kink {
                coords.push(2 * n);
            } else if m.value == 0.0 || coords.len() == 2 {
                coords.clear();
            }
            coords
        }
    }
}
