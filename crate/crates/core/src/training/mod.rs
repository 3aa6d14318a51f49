//! Pre-training strategies, AdamW with warmup-cosine schedule, multi-loader
//! accumulation and the transitive pseudo-pair step.

mod data;
mod optim;
mod schedule;
mod trainer;
mod transitive;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::MaskPolicy;
use crate::error::{Error, Result};

pub use data::{make_batch, prepare_record, Dataset, Loader, LoaderState, MicroBatch};
pub use optim::{adamw_step, clip_grads, AdamW, OptimizerState};
pub use schedule::{lr_at_step, Schedule};
pub use trainer::{pretrain, Init, StepMetrics, TrainState, Trainer};
pub use transitive::{
    build_transitive, transitive_step, ModelGenerator, OracleGenerator, PseudoGenerator, TransitiveOutcome,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Causal masked modeling on unimodal data.
    Cm2,
    /// Commutative causal masked modeling over aligned pairs.
    C2m3,
    /// C2M3 continuation interleaved with transitive pseudo-pair steps.
    Loretta,
    /// Plain next-token prediction, fixed order, no masking.
    Gpt,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cm2" => Ok(Self::Cm2),
            "c2m3" => Ok(Self::C2m3),
            "loretta" => Ok(Self::Loretta),
            "gpt" => Ok(Self::Gpt),
            other => Err(Error::input(format!("unknown strategy {other:?} (expected cm2, c2m3, loretta or gpt)"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cm2 => "cm2",
            Self::C2m3 => "c2m3",
            Self::Loretta => "loretta",
            Self::Gpt => "gpt",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Records per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step, drawn round-robin over loaders.
    pub accumulation: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub mask: MaskPolicy,
    /// Probability that a step of the transitive phase is a pseudo-pair step.
    pub transitive_mix: f64,
    /// Name of the modality shared by the training pairs.
    pub link_modality: String,
    /// Randomize segment order of pseudo-pairs.
    pub transitive_commutative: bool,
    pub gen_temperature: f64,
    pub gen_top_k: usize,
    pub seed: u64,
    pub log_every: u64,
    /// 0 disables intermediate checkpoints.
    pub ckpt_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamW::default();
        Self {
            batch_size: 16,
            accumulation: 2,
            total_steps: 8000,
            warmup_steps: 1500,
            lr_start: 1e-7,
            lr_peak: 6e-4,
            lr_final: 6e-5,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            grad_clip: 1.0,
            mask: MaskPolicy::default(),
            transitive_mix: 0.5,
            link_modality: "B".into(),
            transitive_commutative: false,
            gen_temperature: 1.0,
            gen_top_k: 0,
            seed: 0,
            log_every: 50,
            ckpt_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.lr_start, self.lr_peak, self.lr_final, self.warmup_steps, self.total_steps)
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.mask.validate()?;
        if self.batch_size == 0 || self.accumulation == 0 {
            return Err(Error::input("batch_size and accumulation must be positive"));
        }
        if !(0.0..=1.0).contains(&self.transitive_mix) {
            return Err(Error::input("transitive_mix must lie in [0, 1]"));
        }
        if !(self.grad_clip > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::input("invalid optimizer hyperparameters"));
        }
        Ok(())
    }
}
