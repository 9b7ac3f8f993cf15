use serde::{Deserialize, Serialize};

use super::ExtractError;

/// A window of page text starting at global char offset `origin`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub origin: usize,
    pub text: String,
    pub len: usize,
}

/// Splits `text` into windows of at most `budget` chars; window `k` starts at
/// `k·(budget − overlap)`, and the last window is the first that reaches
/// the end of the text.
pub fn chunk_page(text: &str, budget: usize, overlap: usize) -> Result<Vec<Chunk>, ExtractError> {
    if budget == 0 || overlap >= budget {
        return Err(ExtractError::Config(format!(
            "chunking needs 0 ≤ overlap < budget, got budget {budget} overlap {overlap}"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let stride = budget - overlap;
    let mut chunks = Vec::new();
    let mut origin = 0;
    while origin < chars.len() {
        let end = (origin + budget).min(chars.len());
        chunks.push(Chunk { origin, text: chars[origin..end].iter().collect(), len: end - origin });
        if end == chars.len() {
            break;
        }
        origin += stride;
    }
    Ok(chunks)
}
