use serde::{Deserialize, Serialize};

use super::ExtractError;
use crate::inventory::KeyInventory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    /// Targets the value written under the key.
    Value,
    /// Targets the on-page header naming the key.
    Key,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionQuery {
    pub canonical_key: String,
    pub kind: QueryKind,
    pub aliases_included: Vec<String>,
    pub rendered_text: String,
}

fn variants_clause(aliases: &[String]) -> String {
    if aliases.is_empty() {
        String::new()
    } else {
        format!(
            ", and the key in the text could be the variants of the canonical key, such as, {}",
            aliases.join(", ")
        )
    }
}

fn build(kc: &str, inv: &KeyInventory, max_aliases: usize, kind: QueryKind) -> Result<ExtractionQuery, ExtractError> {
    let entry = inv.entry(kc).ok_or_else(|| ExtractError::UnknownCanonical(kc.to_string()))?;
    let aliases: Vec<String> = entry.aliases.iter().take(max_aliases).cloned().collect();
    let head = match kind {
        QueryKind::Value => format!("Extract the value of the key {kc}"),
        QueryKind::Key => format!("Extract the key naming {kc} as written in the text"),
    };
    Ok(ExtractionQuery {
        canonical_key: kc.to_string(),
        kind,
        rendered_text: head + &variants_clause(&aliases),
        aliases_included: aliases,
    })
}

/// Value query for `kc` listing up to `max_aliases` aliases in the
/// inventory's frequency order.
pub fn build_value_query(kc: &str, inv: &KeyInventory, max_aliases: usize) -> Result<ExtractionQuery, ExtractError> {
    build(kc, inv, max_aliases, QueryKind::Value)
}

pub fn build_key_query(kc: &str, inv: &KeyInventory, max_aliases: usize) -> Result<ExtractionQuery, ExtractError> {
    build(kc, inv, max_aliases, QueryKind::Key)
}
