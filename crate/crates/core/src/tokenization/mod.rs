//! Raw per-modality samples to discrete token sequences.

mod binning;
mod kmeans;
mod pca;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binning::bin_encode;
pub use kmeans::{fit_kmeans, fit_kmeans_traced, quantize, Codebook, KMEANS_MAX_ITERS, KMEANS_TOL};
pub use pca::{fit_pca, ProjectionMatrix};
pub use vocab::{encode_lookup, Granularity, Vocabulary};

/// Token id local to one modality's vocabulary.
pub type TokenId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityId {
    pub id: usize,
    pub name: String,
}

impl ModalityId {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
        }
    }
}

/// Content tokens of a single modality; never empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub modality: usize,
    tokens: Vec<TokenId>,
}

impl TokenSeq {
    pub fn new(modality: usize, tokens: Vec<TokenId>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::input(format!(
                "token sequence for modality {modality} is empty"
            )));
        }
        Ok(Self { modality, tokens })
    }

    /// Checks every id against the modality's vocabulary size.
    pub fn with_vocab(modality: usize, tokens: Vec<TokenId>, vocab_size: usize) -> Result<Self> {
        if let Some((i, t)) = tokens
            .iter()
            .enumerate()
            .find(|(_, &t)| t as usize >= vocab_size)
        {
            return Err(Error::input(format!(
                "token {t} at index {i} exceeds vocabulary size {vocab_size} of modality {modality}"
            )));
        }
        Self::new(modality, tokens)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }
}
