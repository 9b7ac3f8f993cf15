use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use aho_corasick::{AhoCorasick, MatchKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Chunk, ExtractionQuery, QueryKind};
use crate::inventory::KeyInventory;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend protocol: {0}")]
    Protocol(String),
    #[error("invalid logits: {0}")]
    InvalidLogits(String),
}

/// Per-position start and end logits for one chunk, plus the null score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkLogits {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    pub null_score: f64,
}

impl ChunkLogits {
    pub fn len(&self) -> usize {
        self.start_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_logits.is_empty()
    }

    pub fn validate(&self, len: usize) -> Result<(), BackendError> {
        if self.start_logits.len() != len || self.end_logits.len() != len {
            return Err(BackendError::InvalidLogits(format!(
                "expected {len} start/end logits, got {}/{}",
                self.start_logits.len(),
                self.end_logits.len()
            )));
        }
        let finite = self.null_score.is_finite()
            && self.start_logits.iter().chain(&self.end_logits).all(|v| v.is_finite());
        if !finite {
            return Err(BackendError::InvalidLogits("non-finite value".into()));
        }
        Ok(())
    }
}

/// Anything that scores spans of a chunk for a query.
///
/// Implementations must be safe to call concurrently.
pub trait LogitBackend: Send + Sync {
    fn predict(&self, query: &ExtractionQuery, chunk: &Chunk, inv: &KeyInventory) -> Result<ChunkLogits, BackendError>;
}

pub const RULE_HIT: f64 = 10.0;
pub const RULE_MISS: f64 = -10.0;
pub const RULE_NULL: f64 = 5.0;
/// Logit for a boundary that touches a chunk edge and may be cut.
pub const RULE_EDGE: f64 = 5.0;

const DELIMITERS: &[char] = &['：', ':', '＝', '='];
const MATCHER_CACHE: usize = 8;

struct FormMatcher {
    ac: AhoCorasick,
    canonical: Vec<String>,
    forms: Vec<Vec<char>>,
}

impl FormMatcher {
    fn new(inv: &KeyInventory) -> Self {
        let (forms, canonical): (Vec<&str>, Vec<String>) =
            inv.surface_forms().map(|(f, c)| (f, c.to_string())).unzip();
        let ac = AhoCorasick::builder()
            .match_kind(MatchKind::LeftmostLongest)
            .build(&forms)
            .expect("surface forms build an automaton");
        let forms = forms.iter().map(|f| f.chars().collect()).collect();
        Self { ac, canonical, forms }
    }

    /// Whether `tail`, running to the chunk end, may be the head of a
    /// longer form that the chunk cuts off.
    fn cut_at_end(&self, tail: &[char]) -> bool {
        self.forms.iter().any(|f| f.len() > tail.len() && f.starts_with(tail))
    }

    fn cut_at_start(&self, head: &[char]) -> bool {
        self.forms.iter().any(|f| f.len() > head.len() && f.ends_with(head))
    }
}

struct Occurrence {
    start: usize,
    end: usize,
    pattern: usize,
}

/// Deterministic reference backend.
///
/// Surface forms of the inventory are located leftmost-longest. For a key
/// query the first occurrence of any form of the queried key is the span.
/// For a value query the span starts after that occurrence, an optional
/// delimiter and spaces, and runs to the next known surface form, line
/// break or chunk end.
#[derive(Default)]
pub struct RuleBackend {
    cache: Mutex<Vec<(u64, Arc<FormMatcher>)>>,
}

impl RuleBackend {
    pub fn new() -> Self {
        Self::default()
    }

    fn matcher(&self, inv: &KeyInventory) -> Arc<FormMatcher> {
        let fp = inv.fingerprint();
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(pos) = cache.iter().position(|(f, _)| *f == fp) {
            let hit = cache.remove(pos);
            let m = hit.1.clone();
            cache.push(hit);
            return m;
        }
        let m = Arc::new(FormMatcher::new(inv));
        if cache.len() >= MATCHER_CACHE {
            cache.remove(0);
        }
        cache.push((fp, m.clone()));
        m
    }
}

impl LogitBackend for RuleBackend {
    fn predict(&self, query: &ExtractionQuery, chunk: &Chunk, inv: &KeyInventory) -> Result<ChunkLogits, BackendError> {
        let chars: Vec<char> = chunk.text.chars().collect();
        let n = chars.len();
        let mut out = ChunkLogits { start_logits: vec![RULE_MISS; n], end_logits: vec![RULE_MISS; n], null_score: RULE_NULL };
        if n == 0 || inv.is_empty() {
            return Ok(out);
        }
        let matcher = self.matcher(inv);
        let mut char_at = vec![0usize; chunk.text.len() + 1];
        for (ci, (b, c)) in chunk.text.char_indices().enumerate() {
            char_at[b..b + c.len_utf8()].iter_mut().for_each(|x| *x = ci);
        }
        char_at[chunk.text.len()] = n;
        let occ: Vec<Occurrence> = matcher
            .ac
            .find_iter(&chunk.text)
            .map(|m| Occurrence { start: char_at[m.start()], end: char_at[m.end()], pattern: m.pattern().as_usize() })
            .collect();
        let Some(hit) = occ.iter().find(|o| matcher.canonical[o.pattern] == query.canonical_key) else {
            return Ok(out);
        };
        let (s, e) = match query.kind {
            QueryKind::Key => (hit.start, hit.end),
            QueryKind::Value => {
                let mut pos = hit.end;
                if pos < n && DELIMITERS.contains(&chars[pos]) {
                    pos += 1;
                }
                while pos < n && matches!(chars[pos], ' ' | '\u{3000}') {
                    pos += 1;
                }
                let line_end = chars[pos..].iter().position(|&c| c == '\n').map_or(n, |i| pos + i);
                let next_key = occ.iter().map(|o| o.start).find(|&st| st >= pos).unwrap_or(n);
                (pos, line_end.min(next_key))
            }
        };
        if s >= e {
            return Ok(out);
        }
        let (mut start_cut, mut end_cut) = (s == 0 && chunk.origin > 0, e == n);
        if query.kind == QueryKind::Key {
            start_cut |= chunk.origin > 0 && matcher.cut_at_start(&chars[..e]);
            end_cut |= matcher.cut_at_end(&chars[s..]);
        }
        out.start_logits[s] = if start_cut { RULE_EDGE } else { RULE_HIT };
        out.end_logits[e - 1] = if end_cut { RULE_EDGE } else { RULE_HIT };
        out.null_score = RULE_MISS;
        Ok(out)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    query: &'a str,
    chunk: &'a str,
}

struct ProcessIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A model served by a child process speaking line-delimited JSON on its
/// standard streams. Calls are serialized.
pub struct ProcessBackend {
    io: Mutex<ProcessIo>,
}

impl ProcessBackend {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, BackendError> {
        let mut child = Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| BackendError::Protocol("no stdin".into()))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| BackendError::Protocol("no stdout".into()))?);
        Ok(Self { io: Mutex::new(ProcessIo { child, stdin, stdout }) })
    }
}

impl LogitBackend for ProcessBackend {
    fn predict(&self, query: &ExtractionQuery, chunk: &Chunk, _inv: &KeyInventory) -> Result<ChunkLogits, BackendError> {
        let mut io = self.io.lock().map_err(|_| BackendError::Protocol("backend poisoned".into()))?;
        let mut line = serde_json::to_string(&WireRequest { query: &query.rendered_text, chunk: &chunk.text })
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push('\n');
        io.stdin.write_all(line.as_bytes())?;
        io.stdin.flush()?;
        let mut resp = String::new();
        if io.stdout.read_line(&mut resp)? == 0 {
            return Err(BackendError::Protocol("backend closed its output".into()));
        }
        let logits: ChunkLogits =
            serde_json::from_str(resp.trim_end()).map_err(|e| BackendError::Protocol(format!("bad response: {e}")))?;
        logits.validate(chunk.len)?;
        Ok(logits)
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
