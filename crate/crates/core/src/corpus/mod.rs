//! Page corpora with gold key–value annotations.
//!
//! A corpus file is JSON Lines, one [`Page`] per line. Offsets are Unicode
//! scalar indices into `text` and every annotation satisfies
//! `text[key_span] == surface_key` and `text[value_span] == value`.

mod deid;
mod noise;
mod profile;
mod split;
mod synth;

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub use deid::{deidentify, PLACEHOLDER};
pub use noise::{apply_edits, inject_ocr_noise, ConfusionTable, Edit, NoiseConfig};
pub use profile::{key_frequency_profile, FrequencyProfile, ProfileRow};
pub use split::{assign_split, fnv1a_64, split_by_report_hash, CorpusSplit, SplitName, SplitRatios};
pub use synth::{generate_synthetic_corpus, SyntheticCorpus, SynthesisConfig, ZipfSampler};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed page record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("page {page_id}: {reason}")]
    Validation { page_id: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("overlapping selectors {first} and {second}")]
    OverlappingSelectors { first: Span, second: Span },
}

/// Half-open char range `[start, end)`; serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub const fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub const fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn shifted(&self, by: usize) -> Self {
        Self::new(self.start + by, self.end + by)
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// One gold (surface key, value, canonical key) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvAnnotation {
    pub key_span: Span,
    pub value_span: Span,
    pub surface_key: String,
    pub canonical_key: Option<String>,
    /// Value text; filled from `value_span` when absent in the input file.
    #[serde(default)]
    pub value: String,
}

/// One OCR page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub report_id: String,
    pub page_id: String,
    pub text: String,
    #[serde(default)]
    pub annotations: Vec<KvAnnotation>,
}

impl Page {
    /// Builds a page, reading each annotation's `surface_key` and `value`
    /// from its spans.
    pub fn from_spans(
        report_id: impl Into<String>,
        page_id: impl Into<String>,
        text: impl Into<String>,
        spans: impl IntoIterator<Item = (Span, Span, Option<String>)>,
    ) -> Result<Self, CorpusError> {
        let mut page = Page {
            report_id: report_id.into(),
            page_id: page_id.into(),
            text: text.into(),
            annotations: Vec::new(),
        };
        for (key_span, value_span, canonical_key) in spans {
            let surface_key = page.slice(key_span)?.to_string();
            let value = page.slice(value_span)?.to_string();
            page.annotations.push(KvAnnotation {
                key_span,
                value_span,
                surface_key,
                canonical_key,
                value,
            });
        }
        page.validate()?;
        Ok(page)
    }

    pub fn char_len(&self) -> usize {
        text::char_len(&self.text)
    }

    pub fn slice(&self, span: Span) -> Result<&str, CorpusError> {
        text::char_slice(&self.text, span.start, span.end).ok_or_else(|| CorpusError::Validation {
            page_id: self.page_id.clone(),
            reason: format!("span {span} outside text of length {}", self.char_len()),
        })
    }

    /// Checks offset soundness of every annotation.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| CorpusError::Validation {
            page_id: self.page_id.clone(),
            reason,
        };
        let chars: Vec<char> = self.text.chars().collect();
        let read = |s: Span| -> Option<String> {
            (s.start < s.end && s.end <= chars.len()).then(|| chars[s.start..s.end].iter().collect())
        };
        for (i, a) in self.annotations.iter().enumerate() {
            let key = read(a.key_span).ok_or_else(|| {
                fail(format!("annotation {i}: key span {} invalid for length {}", a.key_span, chars.len()))
            })?;
            let value = read(a.value_span).ok_or_else(|| {
                fail(format!("annotation {i}: value span {} invalid for length {}", a.value_span, chars.len()))
            })?;
            if key != a.surface_key {
                return Err(fail(format!(
                    "annotation {i}: key span reads {key:?}, surface_key is {:?}",
                    a.surface_key
                )));
            }
            if value != a.value {
                return Err(fail(format!("annotation {i}: value span reads {value:?}, value is {:?}", a.value)));
            }
        }
        Ok(())
    }

    /// Re-reads `surface_key` and `value` for every annotation from the text.
    pub(crate) fn reread_annotations(&mut self) {
        let chars: Vec<char> = self.text.chars().collect();
        for a in &mut self.annotations {
            a.surface_key = chars[a.key_span.start..a.key_span.end].iter().collect();
            a.value = chars[a.value_span.start..a.value_span.end].iter().collect();
        }
    }
}

/// Reads a JSON Lines corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Page>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Page>, CorpusError> {
    let mut pages = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut page: Page =
            serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: idx + 1, source })?;
        fill_missing_values(&mut page)?;
        page.validate()?;
        pages.push(page);
    }
    Ok(pages)
}

fn fill_missing_values(page: &mut Page) -> Result<(), CorpusError> {
    let chars: Vec<char> = page.text.chars().collect();
    for a in &mut page.annotations {
        if a.value.is_empty() && a.value_span.start < a.value_span.end && a.value_span.end <= chars.len() {
            a.value = chars[a.value_span.start..a.value_span.end].iter().collect();
        }
    }
    Ok(())
}

pub fn write_corpus(mut writer: impl Write, pages: &[Page]) -> Result<(), CorpusError> {
    for page in pages {
        serde_json::to_writer(&mut writer, page).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, pages: &[Page]) -> Result<(), CorpusError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_corpus(&mut w, pages)?;
    w.flush()?;
    Ok(())
}
