use serde::{Deserialize, Serialize};

use super::{CanonicalizerError, Embedding, EmbeddingProvider};
use crate::inventory::KeyInventory;

/// Default merge threshold for the bigram provider.
pub const DEFAULT_TAU: f64 = 0.82;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalStatus {
    Pending,
    Accepted,
    Rejected,
    Edited,
}

impl std::fmt::Display for ProposalStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
            Self::Edited => "edited",
        })
    }
}

impl std::str::FromStr for ProposalStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Self::Pending),
            "accepted" => Ok(Self::Accepted),
            "rejected" => Ok(Self::Rejected),
            "edited" => Ok(Self::Edited),
            other => Err(format!("unknown proposal status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub key: String,
    pub frequency: u64,
}

/// A candidate cluster awaiting review.
///
/// With `attach_to` set, the members are proposed as aliases of that
/// existing canonical key; otherwise they form a new canonical key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProposal {
    pub proposal_id: String,
    pub members: Vec<ClusterMember>,
    pub suggested_canonical: String,
    pub pairwise_similarities: Vec<Vec<f64>>,
    pub status: ProposalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach_to: Option<String>,
    /// Cosine to the `attach_to` centroid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_similarity: Option<f64>,
}

impl ClusterProposal {
    pub fn total_frequency(&self) -> u64 {
        self.members.iter().map(|m| m.frequency).sum()
    }

    pub fn member_keys(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.key.as_str())
    }
}

/// Representative of a group: most frequent, then shortest, then
/// lexicographically least.
pub fn suggest_canonical(members: &[ClusterMember]) -> Option<&str> {
    members
        .iter()
        .min_by(|a, b| {
            b.frequency
                .cmp(&a.frequency)
                .then_with(|| a.key.chars().count().cmp(&b.key.chars().count()))
                .then_with(|| a.key.cmp(&b.key))
        })
        .map(|m| m.key.as_str())
}

/// Sorts by descending frequency, then key, and drops repeated keys.
fn processing_order(keys: &[(String, u64)]) -> Vec<ClusterMember> {
    let mut items: Vec<ClusterMember> =
        keys.iter().map(|(k, f)| ClusterMember { key: k.clone(), frequency: *f }).collect();
    items.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.key.cmp(&b.key)));
    items.dedup_by(|a, b| a.key == b.key);
    items
}

fn similarity_matrix(vecs: &[Embedding]) -> Vec<Vec<f64>> {
    let n = vecs.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        sim[i][i] = 1.0;
        for j in i + 1..n {
            let s = vecs[i].cosine(&vecs[j]);
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    sim
}

/// Average-linkage agglomerative clustering over a similarity matrix.
///
/// Each step merges the pair of clusters with the highest mean pairwise
/// similarity, provided it reaches `tau`. Clusters are identified by their
/// smallest member index; ties go to the lexicographically smallest pair.
/// Returned clusters hold ascending indices and are ordered by first member.
pub fn average_linkage(sim: &[Vec<f64>], tau: f64) -> Vec<Vec<usize>> {
    let n = sim.len();
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    // sums[i][j]: total similarity between clusters i and j.
    let mut sums: Vec<Vec<f64>> = sim.to_vec();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            let Some(ci) = &clusters[i] else { continue };
            for j in i + 1..n {
                let Some(cj) = &clusters[j] else { continue };
                let avg = sums[i][j] / (ci.len() * cj.len()) as f64;
                if avg >= tau && best.is_none_or(|(b, _, _)| avg > b) {
                    best = Some((avg, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let moved = clusters[j].take().expect("active cluster");
        clusters[i].as_mut().expect("active cluster").extend(moved);
        for k in 0..n {
            let v = sums[i][k] + sums[j][k];
            sums[i][k] = v;
            sums[k][i] = v;
        }
    }
    clusters
        .into_iter()
        .flatten()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

fn proposal_from(
    id: String,
    members: Vec<ClusterMember>,
    sim: Vec<Vec<f64>>,
    attach_to: Option<(String, f64)>,
) -> ClusterProposal {
    let suggested = suggest_canonical(&members).expect("non-empty cluster").to_string();
    let (attach_to, centroid_similarity) = match attach_to {
        Some((c, s)) => (Some(c), Some(s)),
        None => (None, None),
    };
    ClusterProposal {
        proposal_id: id,
        members,
        suggested_canonical: suggested,
        pairwise_similarities: sim,
        status: ProposalStatus::Pending,
        attach_to,
        centroid_similarity,
    }
}

/// Clusters normalized keys into pending new-canonical proposals with ids
/// `{id_prefix}{n}`.
pub fn cluster_keys(
    keys: &[(String, u64)],
    provider: &dyn EmbeddingProvider,
    tau: f64,
    id_prefix: &str,
) -> Result<Vec<ClusterProposal>, CanonicalizerError> {
    let items = processing_order(keys);
    let vecs = items.iter().map(|m| provider.embed(&m.key)).collect::<Result<Vec<_>, _>>()?;
    let sim = similarity_matrix(&vecs);
    Ok(average_linkage(&sim, tau)
        .into_iter()
        .enumerate()
        .map(|(n, group)| {
            let members = group.iter().map(|&i| items[i].clone()).collect();
            let sub = group.iter().map(|&i| group.iter().map(|&j| sim[i][j]).collect()).collect();
            proposal_from(format!("{id_prefix}{n}"), members, sub, None)
        })
        .collect())
}

/// Turns novel keys into review proposals.
///
/// A key whose cosine to some existing canonical's centroid (canonical plus
/// aliases, unit-renormalized) reaches `tau` becomes an alias-attachment
/// proposal for the closest such canonical. The rest are clustered among
/// themselves. Attachment proposals come first.
pub fn propose_clusters(
    novel: &[(String, u64)],
    inv: &KeyInventory,
    provider: &dyn EmbeddingProvider,
    tau: f64,
    id_prefix: &str,
) -> Result<Vec<ClusterProposal>, CanonicalizerError> {
    let items = processing_order(novel);
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let mut centroids = Vec::with_capacity(inv.len());
    for e in inv.entries() {
        let vecs = e.surface_forms().map(|f| provider.embed(f)).collect::<Result<Vec<_>, _>>()?;
        if let Some(c) = Embedding::centroid(&vecs) {
            centroids.push((e.canonical.as_str(), c));
        }
    }

    let mut out = Vec::new();
    let mut rest = Vec::new();
    for m in items {
        let v = provider.embed(&m.key)?;
        let best = centroids
            .iter()
            .map(|(c, cv)| (*c, v.cosine(cv)))
            .filter(|(_, s)| *s >= tau)
            .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        match best {
            Some((canonical, s)) => {
                let id = format!("{id_prefix}{}", out.len());
                out.push(proposal_from(id, vec![m], vec![vec![1.0]], Some((canonical.to_string(), s))));
            }
            None => rest.push((m.key, m.frequency)),
        }
    }
    let offset = out.len();
    for mut p in cluster_keys(&rest, provider, tau, "")? {
        let n: usize = p.proposal_id.parse().expect("numeric id");
        p.proposal_id = format!("{id_prefix}{}", offset + n);
        out.push(p);
    }
    Ok(out)
}
