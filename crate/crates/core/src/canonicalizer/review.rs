use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{suggest_canonical, CanonicalizerError, ClusterMember, ClusterProposal, ProposalStatus};
use crate::inventory::{CanonicalKeyEntry, InventoryEdit, KeyInventory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum ReviewAction {
    Accept,
    Reject,
    /// Accept under a different canonical name.
    Rename { canonical: String },
    /// Each part becomes its own canonical key.
    Split { parts: Vec<Vec<String>> },
    /// All members become aliases of an existing canonical key.
    Merge { target: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub proposal_id: String,
    #[serde(flatten)]
    pub action: ReviewAction,
}

impl ReviewDecision {
    pub fn new(proposal_id: impl Into<String>, action: ReviewAction) -> Self {
        Self { proposal_id: proposal_id.into(), action }
    }
}

fn new_canonical(canonical: &str, members: &[ClusterMember]) -> InventoryEdit {
    let mut aliases: Vec<&ClusterMember> = members.iter().filter(|m| m.key != canonical).collect();
    aliases.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.key.cmp(&b.key)));
    InventoryEdit::AddCanonical(CanonicalKeyEntry {
        canonical: canonical.to_string(),
        aliases: aliases.iter().map(|m| m.key.clone()).collect(),
        frequency: members.iter().map(|m| m.frequency).sum(),
        short_field: false,
    })
}

fn attach(target: &str, members: &[ClusterMember]) -> Vec<InventoryEdit> {
    members
        .iter()
        .map(|m| InventoryEdit::AddAlias { canonical: target.to_string(), alias: m.key.clone() })
        .collect()
}

/// Applies one decision to `inv` and updates the proposal's status.
///
/// All resulting inventory edits are applied together, so the version
/// advances at most once. On error neither the inventory nor the proposal
/// changes.
pub fn apply_review_decision(
    inv: &KeyInventory,
    proposal: &mut ClusterProposal,
    decision: &ReviewDecision,
) -> Result<KeyInventory, CanonicalizerError> {
    if decision.proposal_id != proposal.proposal_id {
        return Err(CanonicalizerError::InvalidDecision(format!(
            "decision for {:?} applied to proposal {:?}",
            decision.proposal_id, proposal.proposal_id
        )));
    }
    if proposal.status != ProposalStatus::Pending {
        return Err(CanonicalizerError::NotPending { proposal_id: proposal.proposal_id.clone(), status: proposal.status });
    }
    let (edits, status) = match &decision.action {
        ReviewAction::Accept => match &proposal.attach_to {
            Some(target) => (attach(target, &proposal.members), ProposalStatus::Accepted),
            None => (vec![new_canonical(&proposal.suggested_canonical, &proposal.members)], ProposalStatus::Accepted),
        },
        ReviewAction::Reject => (Vec::new(), ProposalStatus::Rejected),
        ReviewAction::Rename { canonical } => {
            if canonical.trim().is_empty() {
                return Err(CanonicalizerError::InvalidDecision("rename needs a non-empty canonical".into()));
            }
            (vec![new_canonical(canonical, &proposal.members)], ProposalStatus::Edited)
        }
        ReviewAction::Merge { target } => {
            if inv.entry(target).is_none() {
                return Err(CanonicalizerError::InvalidDecision(format!("merge target {target:?} is not a canonical key")));
            }
            (attach(target, &proposal.members), ProposalStatus::Edited)
        }
        ReviewAction::Split { parts } => {
            let members: BTreeSet<&str> = proposal.member_keys().collect();
            let mut seen = BTreeSet::new();
            for key in parts.iter().flatten() {
                if !members.contains(key.as_str()) || !seen.insert(key.as_str()) {
                    return Err(CanonicalizerError::InvalidDecision(format!(
                        "split part member {key:?} is unknown or repeated"
                    )));
                }
            }
            if seen != members || parts.iter().any(Vec::is_empty) {
                return Err(CanonicalizerError::InvalidDecision(
                    "split parts must be non-empty and partition the members".into(),
                ));
            }
            let edits = parts
                .iter()
                .map(|part| {
                    let ms: Vec<ClusterMember> =
                        proposal.members.iter().filter(|m| part.contains(&m.key)).cloned().collect();
                    let canonical = suggest_canonical(&ms).expect("non-empty part").to_string();
                    new_canonical(&canonical, &ms)
                })
                .collect();
            (edits, ProposalStatus::Edited)
        }
    };
    let next = inv.apply_edits(&edits)?;
    proposal.status = status;
    Ok(next)
}

/// Proposals in insertion order, with their decision history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReviewQueue {
    proposals: Vec<ClusterProposal>,
}

impl ReviewQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn proposals(&self) -> &[ClusterProposal] {
        &self.proposals
    }

    pub fn get(&self, id: &str) -> Option<&ClusterProposal> {
        self.proposals.iter().find(|p| p.proposal_id == id)
    }

    pub fn with_status(&self, status: ProposalStatus) -> Vec<&ClusterProposal> {
        self.proposals.iter().filter(|p| p.status == status).collect()
    }

    pub fn enqueue(&mut self, proposals: impl IntoIterator<Item = ClusterProposal>) -> Result<(), CanonicalizerError> {
        for p in proposals {
            if self.get(&p.proposal_id).is_some() {
                return Err(CanonicalizerError::InvalidDecision(format!("duplicate proposal id {:?}", p.proposal_id)));
            }
            self.proposals.push(p);
        }
        Ok(())
    }

    pub fn decide(&mut self, inv: &KeyInventory, decision: &ReviewDecision) -> Result<KeyInventory, CanonicalizerError> {
        let p = self
            .proposals
            .iter_mut()
            .find(|p| p.proposal_id == decision.proposal_id)
            .ok_or_else(|| CanonicalizerError::UnknownProposal(decision.proposal_id.clone()))?;
        apply_review_decision(inv, p, decision)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CanonicalizerError> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Self::new());
        }
        Ok(Self { proposals: read_jsonl(BufReader::new(std::fs::File::open(path)?))? })
    }

    pub fn write(&self, writer: impl Write) -> Result<(), CanonicalizerError> {
        write_jsonl(writer, &self.proposals)
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, CanonicalizerError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CanonicalizerError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<(), CanonicalizerError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
