use std::collections::HashMap;

use crate::assembly::{assemble, AssembledSequence, TokenLayout};
use crate::error::{Error, Result};
use crate::model::{backward, generate, Gradients, Params, SamplingConfig};
use crate::rng::RngStream;
use crate::tensor::Real;
use crate::tokenization::{TokenId, TokenSeq};

/// Source of pseudo-samples for the missing modality.
pub trait PseudoGenerator<T> {
    /// Local content ids of the generated `target` segment; may be empty.
    fn generate(
        &mut self,
        params: &Params<T>,
        layout: &TokenLayout,
        link: &TokenSeq,
        target: usize,
        max_len: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<TokenId>>;
}

/// Samples from the model being trained.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModelGenerator {
    pub sampling: SamplingConfig,
}

impl<T: Real> PseudoGenerator<T> for ModelGenerator {
    fn generate(
        &mut self,
        params: &Params<T>,
        layout: &TokenLayout,
        link: &TokenSeq,
        target: usize,
        max_len: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<TokenId>> {
        let prefix = assemble(layout, std::slice::from_ref(link), false, params.cfg.max_context, rng)?;
        Ok(generate(params, layout, &prefix, target, max_len, self.sampling, rng)?.tokens)
    }
}

/// Looks up the true missing segment for a linking segment.
#[derive(Clone, Debug, Default)]
pub struct OracleGenerator {
    table: HashMap<(usize, usize, Vec<TokenId>), Vec<TokenId>>,
}

impl OracleGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, link: &TokenSeq, missing: &TokenSeq) {
        self.table.insert(
            (link.modality, missing.modality, link.tokens().to_vec()),
            missing.tokens().to_vec(),
        );
    }
}

impl<T: Real> PseudoGenerator<T> for OracleGenerator {
    fn generate(
        &mut self,
        _params: &Params<T>,
        _layout: &TokenLayout,
        link: &TokenSeq,
        target: usize,
        max_len: usize,
        _rng: &mut RngStream,
    ) -> Result<Vec<TokenId>> {
        let found = self
            .table
            .get(&(link.modality, target, link.tokens().to_vec()))
            .ok_or_else(|| Error::input("oracle has no entry for this linking segment"))?;
        Ok(found[..found.len().min(max_len)].to_vec())
    }
}

/// Builds the training sequence `[BOS_m ĉ EOS_m ; BOS_obs x_obs EOS_obs]` with
/// loss only on the observed segment. Returns `None` when two generation
/// attempts both came back empty.
#[allow(clippy::too_many_arguments)]
pub fn build_transitive<T: Real, G: PseudoGenerator<T> + ?Sized>(
    params: &Params<T>,
    layout: &TokenLayout,
    link: &TokenSeq,
    obs: &TokenSeq,
    target: usize,
    max_len: usize,
    generator: &mut G,
    commutative: bool,
    rng: &mut RngStream,
) -> Result<Option<AssembledSequence>> {
    if target == link.modality || target == obs.modality || target >= layout.n_modalities() {
        return Err(Error::input(format!("modality {target} cannot be the missing modality here")));
    }
    let mut pseudo = Vec::new();
    for _ in 0..2 {
        let mut attempt = rng.split();
        pseudo = generator.generate(params, layout, link, target, max_len, &mut attempt)?;
        if !pseudo.is_empty() {
            break;
        }
    }
    if pseudo.is_empty() {
        return Ok(None);
    }
    let segs = [TokenSeq::new(target, pseudo)?, obs.clone()];
    let mut seq = assemble(layout, &segs, false, params.cfg.max_context, rng)?;
    if commutative && rng.bernoulli(0.5) {
        seq = assemble(layout, &[obs.clone(), segs[0].clone()], false, params.cfg.max_context, rng)?;
    }
    let obs_mod = obs.modality as u32;
    let bos_obs = layout.bos(obs.modality);
    for i in 0..seq.len() {
        seq.loss_mask[i] = seq.modality_ids[i] == obs_mod && seq.token_ids[i] != bos_obs;
    }
    Ok(Some(seq))
}

pub enum TransitiveOutcome<T> {
    /// Both generation attempts produced no content.
    Skipped,
    Trained {
        loss: f64,
        n_targets: usize,
        grads: Gradients<T>,
        seq: AssembledSequence,
    },
}

/// One pseudo-pair step: generate the missing modality from `link` without
/// gradient, then return the loss and gradient of reconstructing `obs` from it.
#[allow(clippy::too_many_arguments)]
pub fn transitive_step<T: Real, G: PseudoGenerator<T> + ?Sized>(
    params: &Params<T>,
    layout: &TokenLayout,
    link: &TokenSeq,
    obs: &TokenSeq,
    target: usize,
    max_len: usize,
    generator: &mut G,
    rng: &mut RngStream,
) -> Result<TransitiveOutcome<T>> {
    match build_transitive(params, layout, link, obs, target, max_len, generator, false, rng)? {
        None => Ok(TransitiveOutcome::Skipped),
        Some(seq) => {
            let (loss, n_targets, grads) = backward(params, std::slice::from_ref(&seq))?;
            Ok(TransitiveOutcome::Trained {
                loss,
                n_targets,
                grads,
                seq,
            })
        }
    }
}
