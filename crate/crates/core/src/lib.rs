//! Canonical-key-conditioned key–value extraction for OCR-derived,
//! semi-structured documents.
//!
//! The crate is organised around the life cycle of a key inventory:
//!
//! - [`corpus`]: page corpora with character-offset gold annotations, report
//!   level splits, long-tail profiling, synthetic generation, OCR noise and
//!   de-identification.
//! - [`inventory`]: the versioned canonical key set with its alias map,
//!   canonicalization, novel key detection and key coverage.
//! - [`canonicalizer`]: key normalization, embeddings, average-linkage
//!   clustering, review proposals and clustering statistics.
//! - [`extractor`]: query construction, chunking, logit backends, the span
//!   decoder, post-processing and cross-chunk merging.
//! - [`loss`]: the composite span-extraction loss with analytic gradients.
//! - [`evaluation`]: EM/BTM matching, value and pair level P/R/F1 and the
//!   coverage sweep.
//! - [`orchestrator`]: the iterative expansion loop and its on-disk store.
//!
//! All character offsets in this crate are Unicode scalar value indices.

pub mod canonicalizer;
pub mod corpus;
pub mod evaluation;
pub mod extractor;
pub mod inventory;
pub mod loss;
pub mod orchestrator;
pub mod text;

pub use corpus::{KvAnnotation, Page, Span};
pub use inventory::{CanonicalKeyEntry, KeyInventory};
