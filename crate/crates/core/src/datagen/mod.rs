//! Synthetic tri-modal data: 8×8 digit glyphs (A), templated sentences (B)
//! and class-frequency waveforms (C), all linked only through a label.

mod glyphs;
mod shard;
mod split;
mod text;
mod tokenizers;
mod wave;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use glyphs::{render_digit, IMAGE_SIDE};
pub use shard::{decode_shard, encode_shard, read_shard, write_shard, ShardHeader, PAD_TOKEN, SHARD_MAGIC, SHARD_VERSION};
pub use split::{
    generate_dataset, load_manifest, load_subset, split_subsets, DatasetManifest, LabeledDataset, ModalityDescriptor,
    SplitSpec, SubsetEntry, MANIFEST_FILE, MANIFEST_VERSION, TOKENIZERS_FILE,
};
pub use text::{lexicon, sentence, MAX_WORDS, MIN_WORDS};
pub use tokenizers::{Tokenizers, CODEBOOK_SIZE, IMAGE_LEVELS, MASK_SENTINELS, PCA_DIMS};
pub use wave::{frequency, patches, waveform, PATCH_LEN, WAVE_LEN};

pub const N_CLASSES: usize = 10;
pub const MODALITY_NAMES: [&str; 3] = ["A", "B", "C"];
pub const MOD_A: usize = 0;
pub const MOD_B: usize = 1;
pub const MOD_C: usize = 2;

const RAW_STREAM: u64 = 0x7261_7700;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub n_per_class: usize,
    /// Std of additive pixel noise on glyphs with strokes in [0.6, 1].
    pub image_noise: f64,
    /// Chance that a label slot of a sentence names the true class.
    pub text_label_prob: f64,
    /// Std of additive noise on unit-amplitude waveforms.
    pub wave_noise: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_per_class: 1050,
            image_noise: 0.1,
            text_label_prob: 0.8,
            wave_noise: 1.2,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::input("n_per_class must be >= 1"));
        }
        if !(self.image_noise >= 0.0 && self.wave_noise >= 0.0) {
            return Err(Error::input("noise levels must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.text_label_prob) {
            return Err(Error::input("text_label_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub id: u64,
    pub label: usize,
    pub image: Vec<f64>,
    pub sentence: Vec<String>,
    pub wave: Vec<f64>,
}

/// `n_per_class` samples per label; sample `id` has label `id % 10` and
/// every modality drawn from its own stream derived from `(seed, id)`.
pub fn gen_tri_modal(seed: u64, gen: &GenParams) -> Result<Vec<RawSample>> {
    gen.validate()?;
    let n = gen.n_per_class * N_CLASSES;
    Ok((0..n as u64)
        .map(|id| {
            let label = (id % N_CLASSES as u64) as usize;
            let stream = |m: usize| RngStream::derive(seed, &[RAW_STREAM, id, m as u64]);
            RawSample {
                id,
                label,
                image: render_digit(label, gen.image_noise, &mut stream(MOD_A)),
                sentence: sentence(label, gen.text_label_prob, &mut stream(MOD_B)),
                wave: waveform(label, gen.wave_noise, &mut stream(MOD_C)),
            }
        })
        .collect())
}
