//! TOML run configuration with sections `model`, `train`, `data` and `eval`.

use std::path::Path;

use anyhow::Context;
use loretta_core::assembly::TokenLayout;
use loretta_core::datagen::{GenParams, SplitSpec};
use loretta_core::evaluation::{CycleConfig, ProbeConfig};
use loretta_core::model::ModelConfig;
use loretta_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::DataError;

/// Model shape; vocabulary and modality count come from the dataset layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub max_context: usize,
    pub mlp_ratio: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let d = ModelConfig::desk(1, 1);
        Self {
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            d_model: d.d_model,
            max_context: d.max_context,
            mlp_ratio: d.mlp_ratio,
        }
    }
}

impl ModelShape {
    pub fn for_layout(&self, layout: &TokenLayout) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            max_context: self.max_context,
            vocab_total: layout.vocab_total(),
            n_modalities: layout.n_modalities(),
            mlp_ratio: self.mlp_ratio,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub gen: GenParams,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Subset scored by eval-ppl, membership, probe and cycle-error.
    pub subset: String,
    /// Subset the probes are fitted on.
    pub probe_pool: String,
    pub sigma: f64,
    pub probe: ProbeConfig,
    /// Probe epochs for multimodal feature sets; `probe.epochs` covers unimodal ones.
    pub probe_epochs_multimodal: usize,
    pub cycle: CycleConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            subset: "test".into(),
            probe_pool: "probe".into(),
            sigma: 3.0,
            probe: ProbeConfig::default(),
            probe_epochs_multimodal: 500,
            cycle: CycleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelShape,
    pub train: TrainConfig,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DataError(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `--steps`: sets the step budget and keeps the warmup share.
    pub fn set_steps(&mut self, steps: u64) {
        let t = &mut self.train;
        let share = t.warmup_steps as f64 / t.total_steps.max(1) as f64;
        t.total_steps = steps;
        t.warmup_steps = ((steps as f64 * share).round() as u64).clamp(1, steps.saturating_sub(1).max(1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("[train.mask]"));
        assert!(text.contains("[data.split]"));
        assert!(text.contains("[eval.probe]"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let cfg = RunConfig::parse("[train]\ntotal_steps = 40\nwarmup_steps = 4\n[model]\nd_model = 32\n").unwrap();
        assert_eq!(cfg.train.total_steps, 40);
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.n_layers, ModelShape::default().n_layers);
        assert_eq!(cfg.eval, EvalSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[train]\nbatchsize = 4\n", "[model]\nlayers = 2\n", "[extra]\n", "[data.gen]\nnoise = 1.0\n"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(err.is::<DataError>(), "{text}");
        }
    }

    #[test]
    fn step_override_keeps_warmup_share() {
        let mut cfg = RunConfig::default();
        cfg.set_steps(2000);
        assert_eq!(cfg.train.total_steps, 2000);
        assert_eq!(cfg.train.warmup_steps, 375);
        cfg.set_steps(2);
        assert_eq!(cfg.train.warmup_steps, 1);
        assert!(cfg.train.validate().is_ok());
    }
}
