use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{lexicon, patches, RawSample, MODALITY_NAMES, MOD_A, MOD_B, MOD_C, MAX_WORDS, WAVE_LEN, PATCH_LEN, IMAGE_SIDE};
use crate::assembly::TokenLayout;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tokenization::{
    bin_encode, encode_lookup, fit_kmeans, fit_pca, quantize, Codebook, Granularity, ModalityId, ProjectionMatrix,
    TokenSeq, Vocabulary,
};

pub const IMAGE_LEVELS: usize = 16;
pub const PCA_DIMS: usize = 8;
pub const CODEBOOK_SIZE: usize = 64;
/// Sentinel ids reserved in the global layout; bounds the mask span count.
pub const MASK_SENTINELS: usize = 4;

const TOKENIZER_STREAM: u64 = 0x746f_6b00;

/// Fitted per-modality tokenizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tokenizers {
    pub image_levels: usize,
    pub vocab: Vocabulary,
    pub pca: ProjectionMatrix,
    pub codebook: Codebook,
}

impl Tokenizers {
    /// Fits the word table on `train_b` and the patch PCA + codebook on `train_c`. Words
    /// of the generator lexicon unseen in `train_b` are appended after the
    /// observed ones so that every split stays encodable.
    pub fn fit(train_b: &[&RawSample], train_c: &[&RawSample], seed: u64) -> Result<Self> {
        if train_c.is_empty() {
            return Err(Error::input("cannot fit the waveform codebook without training samples"));
        }
        let mut corpus: Vec<Vec<String>> = train_b.iter().map(|s| s.sentence.clone()).collect();
        corpus.push(lexicon().into_iter().map(String::from).collect());
        let vocab = Vocabulary::build(&corpus, Granularity::Word)?;

        let train_patches: Vec<Vec<f64>> = train_c.iter().flat_map(|s| patches(&s.wave)).collect();
        let pca = fit_pca(&train_patches, PCA_DIMS)?;
        let projected = train_patches.iter().map(|p| pca.project(p)).collect::<Result<Vec<_>>>()?;
        let km_seed: u64 = RngStream::derive(seed, &[TOKENIZER_STREAM]).random();
        let codebook = fit_kmeans(&projected, CODEBOOK_SIZE, km_seed)?;
        Ok(Self {
            image_levels: IMAGE_LEVELS,
            vocab,
            pca,
            codebook,
        })
    }

    /// Restores derived lookup state after deserialization.
    pub fn restored(mut self) -> Self {
        self.vocab = self.vocab.restored();
        self
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        vec![self.image_levels, self.vocab.size(), self.codebook.k()]
    }

    /// Upper bound on the token count of each modality.
    pub fn nominal_lengths() -> Vec<usize> {
        vec![IMAGE_SIDE * IMAGE_SIDE, MAX_WORDS, WAVE_LEN / PATCH_LEN]
    }

    pub fn layout(&self) -> Result<TokenLayout> {
        let mods = MODALITY_NAMES.iter().enumerate().map(|(i, n)| ModalityId::new(i, *n)).collect();
        TokenLayout::new(mods, self.vocab_sizes(), MASK_SENTINELS)
    }

    pub fn encode(&self, sample: &RawSample, modality: usize) -> Result<TokenSeq> {
        match modality {
            MOD_A => bin_encode(&sample.image, self.image_levels, 0.0, 1.0, MOD_A),
            MOD_B => encode_lookup(&sample.sentence, &self.vocab, MOD_B),
            MOD_C => {
                let z = patches(&sample.wave)
                    .iter()
                    .map(|p| self.pca.project(p))
                    .collect::<Result<Vec<_>>>()?;
                quantize(&z, &self.codebook, MOD_C)
            }
            m => Err(Error::input(format!("unknown modality {m}"))),
        }
    }
}
