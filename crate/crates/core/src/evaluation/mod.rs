//! Held-out evaluation: per-combo perplexity, the σ-membership ratio test,
//! linear probes on frozen features and the two-hop cycle diagnostic.

mod cycle;
mod probe;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, AssembledSequence, TokenKind, TokenLayout};
use crate::error::{Error, Result};
use crate::model::{forward_seq, map_rows, Params};
use crate::rng::RngStream;
use crate::tensor::{log_sum_exp, Real};
use crate::tokenization::TokenSeq;
use crate::training::Dataset;

pub use cycle::{bootstrap_ci, cycle_error, CycleConfig, CycleReport};
pub use probe::{linear_probe, train_probe, ProbeConfig, ProbeModel, ProbeResult};

/// Anything that yields next-token logits for a full sequence.
pub trait SequenceScorer: Sync {
    fn vocab_size(&self) -> usize;

    /// Row-major `len × vocab` logits; row `l` predicts token `l + 1`.
    fn logits(&self, seq: &AssembledSequence) -> Result<Vec<f64>>;
}

impl<T: Real> SequenceScorer for Params<T> {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_total
    }

    fn logits(&self, seq: &AssembledSequence) -> Result<Vec<f64>> {
        Ok(forward_seq(self, seq)?.logits.iter().map(|x| x.as_f64()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub combo: Vec<String>,
    pub mean_nll: f64,
    pub ppl: f64,
    pub n_tokens: usize,
}

/// Sum and count of NLL over targets that are content or EOS tokens.
/// `from` skips targets before that index.
pub fn scored_nll(scorer: &dyn SequenceScorer, layout: &TokenLayout, seq: &AssembledSequence, from: usize) -> Result<(f64, usize)> {
    let v = scorer.vocab_size();
    let logits = scorer.logits(seq)?;
    if logits.len() != seq.len() * v {
        return Err(Error::input("scorer returned logits of the wrong shape"));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for j in from.max(1)..seq.len() {
        let t = seq.token_ids[j];
        if !matches!(layout.kind(t), TokenKind::Content { .. } | TokenKind::Eos(_)) {
            continue;
        }
        let row = &logits[(j - 1) * v..j * v];
        let nll = log_sum_exp(row) - row[t as usize];
        if !nll.is_finite() {
            return Err(Error::Numerical { tensor: "logits".into() });
        }
        sum += nll;
        n += 1;
    }
    Ok((sum, n))
}

/// Segments of `record` for `combo`, in combo order.
fn select<'a>(record: &'a [TokenSeq], combo: &[usize]) -> Result<Vec<TokenSeq>> {
    combo
        .iter()
        .map(|&m| {
            record
                .iter()
                .find(|s| s.modality == m)
                .cloned()
                .ok_or_else(|| Error::input(format!("record lacks modality {m}")))
        })
        .collect()
}

fn canonical_sequences(layout: &TokenLayout, max_context: usize, dataset: &Dataset, combo: &[usize]) -> Result<Vec<AssembledSequence>> {
    if combo.is_empty() {
        return Err(Error::input("empty modality combination"));
    }
    if let Some(&m) = combo.iter().find(|&&m| m >= layout.n_modalities()) {
        return Err(Error::input(format!("modality {m} is not in the layout")));
    }
    let mut rng = RngStream::new(0);
    dataset
        .records()
        .iter()
        .map(|r| assemble(layout, &select(r, combo)?, false, max_context, &mut rng))
        .collect()
}

/// Total NLL and token count over `dataset` for `combo` assembled in the
/// given order, without commutative shuffling or masking.
pub fn dataset_nll(
    scorer: &dyn SequenceScorer,
    layout: &TokenLayout,
    max_context: usize,
    dataset: &Dataset,
    combo: &[usize],
) -> Result<(f64, usize)> {
    if scorer.vocab_size() != layout.vocab_total() {
        return Err(Error::input(format!(
            "model vocabulary {} does not match layout vocabulary {}",
            scorer.vocab_size(),
            layout.vocab_total()
        )));
    }
    let seqs = canonical_sequences(layout, max_context, dataset, combo)?;
    let parts = map_rows::<f64, _>(&seqs, |s| scored_nll(scorer, layout, s, 0));
    let mut sum = 0.0;
    let mut n = 0;
    for p in parts {
        let (s, c) = p?;
        sum += s;
        n += c;
    }
    Ok((sum, n))
}

pub fn perplexity(
    scorer: &dyn SequenceScorer,
    layout: &TokenLayout,
    max_context: usize,
    dataset: &Dataset,
    combo: &[usize],
) -> Result<PplReport> {
    if dataset.is_empty() {
        return Err(Error::input("cannot evaluate an empty subset"));
    }
    let (sum, n) = dataset_nll(scorer, layout, max_context, dataset, combo)?;
    if n == 0 {
        return Err(Error::input("subset has no scorable tokens"));
    }
    let mean_nll = sum / n as f64;
    Ok(PplReport {
        combo: combo.iter().map(|&m| layout.modalities[m].name.clone()).collect(),
        mean_nll,
        ppl: mean_nll.exp(),
        n_tokens: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipVerdict {
    /// Mean per-token NLL of `data_i` over that of `data_j`.
    pub ratio: f64,
    pub sigma: f64,
    pub same_modality: bool,
    pub nll_i: f64,
    pub nll_j: f64,
}

/// Modalities present in every record, ascending.
fn shared_modalities(d: &Dataset) -> Vec<usize> {
    let first: Vec<usize> = d.get(0).iter().map(|s| s.modality).collect();
    first
        .into_iter()
        .filter(|m| d.records().iter().all(|r| r.iter().any(|s| s.modality == *m)))
        .collect()
}

/// Compares the per-token loss of `model_j` on `data_i` with its loss on its
/// own data `data_j`; the datasets are of one modality iff the ratio is at
/// most σ².
pub fn sigma_membership(
    model_j: &dyn SequenceScorer,
    layout: &TokenLayout,
    max_context: usize,
    data_i: &Dataset,
    data_j: &Dataset,
    sigma: f64,
) -> Result<MembershipVerdict> {
    if !(sigma > 0.0) {
        return Err(Error::input("sigma must be positive"));
    }
    let nll_i = perplexity(model_j, layout, max_context, data_i, &shared_modalities(data_i))?.mean_nll;
    let nll_j = perplexity(model_j, layout, max_context, data_j, &shared_modalities(data_j))?.mean_nll;
    if !(nll_j > 0.0) {
        return Err(Error::input("reference loss is zero; the ratio is undefined"));
    }
    let ratio = nll_i / nll_j;
    Ok(MembershipVerdict {
        ratio,
        sigma,
        same_modality: ratio <= sigma * sigma,
        nll_i,
        nll_j,
    })
}

/// One line of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub kind: String,
    pub combo: Vec<String>,
    pub value: f64,
    pub n_tokens: Option<usize>,
    pub seed: Option<u64>,
    pub ckpt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<String>,
}

#[cfg(test)]
mod tests;
