//! Surface key normalization, embedding, clustering and review.

mod cluster;
mod embed;
mod normalize;
mod review;
mod stats;

use thiserror::Error;

use crate::inventory::InventoryError;

pub use cluster::{
    average_linkage, cluster_keys, propose_clusters, suggest_canonical, ClusterMember, ClusterProposal,
    ProposalStatus, DEFAULT_TAU,
};
pub use embed::{BigramEmbedder, Embedding, EmbeddingProvider, ExternalEmbeddings};
pub use normalize::normalize_key;
pub use review::{apply_review_decision, read_jsonl, write_jsonl, ReviewAction, ReviewDecision, ReviewQueue};
pub use stats::{cluster_stats, stats_from_sizes, ClusterStats};

#[derive(Debug, Error)]
pub enum CanonicalizerError {
    #[error("no embedding for key {0:?}")]
    MissingEmbedding(String),
    #[error("embedding error: {0}")]
    Embedding(String),
    #[error("proposal {proposal_id} is {status}, not pending")]
    NotPending { proposal_id: String, status: ProposalStatus },
    #[error("unknown proposal {0:?}")]
    UnknownProposal(String),
    #[error("invalid decision: {0}")]
    InvalidDecision(String),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
