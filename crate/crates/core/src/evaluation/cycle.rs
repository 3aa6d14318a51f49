use serde::{Deserialize, Serialize};

use super::{scored_nll, SequenceScorer};
use crate::assembly::{assemble, TokenLayout};
use crate::error::{Error, Result};
use crate::model::Params;
use crate::rng::RngStream;
use crate::tokenization::TokenSeq;
use crate::training::{Dataset, PseudoGenerator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleConfig {
    pub n: usize,
    /// Longest generated segment for the missing modality.
    pub max_len: usize,
    pub bootstrap: usize,
    pub level: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            n: 100,
            max_len: 64,
            bootstrap: 1000,
            level: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// Per-sample mean NLL of the observed segment given the generated missing segment.
    pub two_hop: Vec<f64>,
    /// Per-sample mean NLL of the observed segment given the linking segment.
    pub one_hop: Vec<f64>,
    pub failures: usize,
    pub two_hop_mean: f64,
    pub one_hop_mean: f64,
    pub two_hop_ci: (f64, f64),
    pub one_hop_ci: (f64, f64),
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(xs: &[f64], resamples: usize, level: f64, rng: &mut RngStream) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..xs.len()).map(|_| xs[rng.below(xs.len())]).sum::<f64>() / xs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    (at(alpha), at(1.0 - alpha))
}

/// Mean NLL of `obs` (content and EOS) following the context segment.
fn conditional_nll(scorer: &dyn SequenceScorer, layout: &TokenLayout, max_context: usize, ctx: &TokenSeq, obs: &TokenSeq) -> Result<f64> {
    let seq = assemble(layout, &[ctx.clone(), obs.clone()], false, max_context, &mut RngStream::new(0))?;
    let (sum, n) = scored_nll(scorer, layout, &seq, ctx.len() + 2)?;
    Ok(sum / n as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// For up to `cfg.n` records holding `link` and one other observed modality:
/// generates the `missing` segment from the link, then scores the observed
/// segment given that pseudo segment (two hops) and given the link directly
/// (one hop). Generation failures and empty generations are counted and skipped.
#[allow(clippy::too_many_arguments)]
pub fn cycle_error<T>(
    params: &Params<T>,
    scorer: &dyn SequenceScorer,
    generator: &mut dyn PseudoGenerator<T>,
    layout: &TokenLayout,
    dataset: &Dataset,
    link: usize,
    missing: usize,
    cfg: &CycleConfig,
    rng: &mut RngStream,
) -> Result<CycleReport> {
    let max_context = params.cfg.max_context;
    let mut two_hop = Vec::new();
    let mut one_hop = Vec::new();
    let mut failures = 0;
    for record in dataset.records().iter().take(cfg.n) {
        let link_seg = record
            .iter()
            .find(|s| s.modality == link)
            .ok_or_else(|| Error::input(format!("record lacks linking modality {link}")))?;
        let obs = record
            .iter()
            .find(|s| s.modality != link && s.modality != missing)
            .ok_or_else(|| Error::input("record has no observed modality besides the link"))?;
        let mut sample_rng = rng.split();
        let generated = generator
            .generate(params, layout, link_seg, missing, cfg.max_len, &mut sample_rng)
            .ok()
            .filter(|g| !g.is_empty());
        let Some(generated) = generated else {
            failures += 1;
            continue;
        };
        let pseudo = TokenSeq::new(missing, generated)?;
        two_hop.push(conditional_nll(scorer, layout, max_context, &pseudo, obs)?);
        one_hop.push(conditional_nll(scorer, layout, max_context, link_seg, obs)?);
    }
    if two_hop.is_empty() {
        return Err(Error::input("no record produced a usable generation"));
    }
    let mut boot = rng.split();
    Ok(CycleReport {
        two_hop_mean: mean(&two_hop),
        one_hop_mean: mean(&one_hop),
        two_hop_ci: bootstrap_ci(&two_hop, cfg.bootstrap, cfg.level, &mut boot),
        one_hop_ci: bootstrap_ci(&one_hop, cfg.bootstrap, cfg.level, &mut boot),
        two_hop,
        one_hop,
        failures,
    })
}
