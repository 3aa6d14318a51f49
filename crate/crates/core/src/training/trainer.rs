use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{prepare_record, Dataset, Loader, LoaderState};
use super::optim::{adamw_step, clip_grads, OptimizerState};
use super::schedule::Schedule;
use super::transitive::{build_transitive, ModelGenerator, PseudoGenerator};
use super::{Strategy, TrainConfig};
use crate::assembly::{AssembledSequence, TokenLayout};
use crate::error::{Error, Result};
use crate::model::{backward, init_params, Gradients, ModelConfig, Params, SamplingConfig};
use crate::rng::RngStream;
use crate::tokenization::TokenSeq;

const TRAIN_STREAM: u64 = 0x5452_4149;

/// Everything that changes from step to step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Params<f32>,
    pub opt: OptimizerState<f32>,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: RngStream,
    pub loaders: Vec<LoaderState>,
    /// Loader that supplies the first micro-batch of the next step.
    pub next_source: usize,
    pub transitive_skips: u64,
}

pub enum Init {
    Fresh,
    /// Parameters only; optimizer and schedule start over.
    WarmStart(Params<f32>),
    Resume(TrainState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    /// Mean over micro-batches; `None` when every sample of the step was skipped.
    pub loss: Option<f64>,
    pub loss_by_source: BTreeMap<String, f64>,
    pub masked_fraction: f64,
    pub transitive_skip_count: u64,
    pub wall_ms: f64,
}

pub struct Trainer {
    strategy: Strategy,
    cfg: TrainConfig,
    layout: TokenLayout,
    schedule: Schedule,
    loaders: Vec<Loader>,
    state: TrainState,
    generator: Box<dyn PseudoGenerator<f32> + Send>,
    link: Option<usize>,
    gen_max: Vec<usize>,
}

impl Trainer {
    pub fn new(
        strategy: Strategy,
        cfg: TrainConfig,
        model: &ModelConfig,
        layout: TokenLayout,
        datasets: Vec<Arc<Dataset>>,
        init: Init,
    ) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        if model.vocab_total != layout.vocab_total() || model.n_modalities != layout.n_modalities() {
            return Err(Error::input("model config does not match the token layout"));
        }
        if datasets.is_empty() {
            return Err(Error::input("no training datasets"));
        }
        if strategy == Strategy::Cm2 && datasets.iter().any(|d| d.records().iter().any(|r| r.len() != 1)) {
            return Err(Error::input("cm2 trains on unimodal datasets only"));
        }
        let link = match strategy {
            Strategy::Loretta => Some(
                layout
                    .modality_by_name(&cfg.link_modality)
                    .ok_or_else(|| Error::input(format!("unknown link modality {:?}", cfg.link_modality)))?,
            ),
            _ => None,
        };
        let mut gen_max = vec![0; layout.n_modalities()];
        for d in &datasets {
            for (g, m) in gen_max.iter_mut().zip(d.max_lengths(layout.n_modalities())) {
                *g = (*g).max(m);
            }
        }
        let state = match init {
            Init::Resume(state) => {
                if state.params.cfg != *model || state.loaders.len() != datasets.len() {
                    return Err(Error::input("resume state does not match this run"));
                }
                state
            }
            other => {
                let params = match other {
                    Init::WarmStart(p) => {
                        if p.cfg != *model {
                            return Err(Error::input("warm-start parameters have a different model config"));
                        }
                        p
                    }
                    _ if strategy == Strategy::Loretta => {
                        return Err(Error::input(
                            "the loretta strategy requires a warm-start checkpoint (pass --init-from)",
                        ))
                    }
                    _ => init_params(model, cfg.seed)?,
                };
                TrainState {
                    opt: OptimizerState::new(&params),
                    params,
                    step: 0,
                    rng: RngStream::derive(cfg.seed, &[TRAIN_STREAM]),
                    loaders: vec![LoaderState::default(); datasets.len()],
                    next_source: 0,
                    transitive_skips: 0,
                }
            }
        };
        let loaders = datasets
            .into_iter()
            .zip(&state.loaders)
            .enumerate()
            .map(|(i, (d, s))| Loader::resume(d, cfg.batch_size, cfg.seed, i as u64, *s))
            .collect::<Result<Vec<_>>>()?;
        let generator = Box::new(ModelGenerator {
            sampling: SamplingConfig {
                temperature: cfg.gen_temperature,
                top_k: cfg.gen_top_k,
            },
        });
        Ok(Self {
            strategy,
            schedule: cfg.schedule()?,
            cfg,
            layout,
            loaders,
            state,
            generator,
            link,
            gen_max,
        })
    }

    pub fn with_generator(mut self, generator: Box<dyn PseudoGenerator<f32> + Send>) -> Self {
        self.generator = generator;
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn params(&self) -> &Params<f32> {
        &self.state.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn layout(&self) -> &TokenLayout {
        &self.layout
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.total_steps
    }

    /// `(link, observed, missing modality)` when `record` can feed a pseudo-pair step.
    fn transitive_roles<'r>(&self, record: &'r [TokenSeq], rng: &mut RngStream) -> Option<(&'r TokenSeq, &'r TokenSeq, usize)> {
        let link = self.link?;
        if record.len() != 2 {
            return None;
        }
        let (l, o) = match (record[0].modality == link, record[1].modality == link) {
            (true, false) => (&record[0], &record[1]),
            (false, true) => (&record[1], &record[0]),
            _ => return None,
        };
        let missing: Vec<usize> = (0..self.layout.n_modalities())
            .filter(|&m| m != l.modality && m != o.modality && self.gen_max[m] > 0)
            .collect();
        match missing.len() {
            0 => None,
            1 => Some((l, o, missing[0])),
            n => Some((l, o, missing[rng.below(n)])),
        }
    }

    /// Runs one optimizer step. On error the state is left as it was before the step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let started = Instant::now();
        if self.is_done() {
            return Err(Error::input("training run already complete"));
        }
        let lr = self.schedule.lr_at_step(self.state.step)?;
        let loader_backup: Vec<LoaderState> = self.loaders.iter().map(Loader::state).collect();
        let rng_backup = self.state.rng.clone();
        let result = self.step_inner(lr, started);
        if result.is_err() {
            self.state.rng = rng_backup;
            for (l, s) in self.loaders.iter_mut().zip(loader_backup) {
                l.set_state(s);
            }
        }
        result
    }

    fn step_inner(&mut self, lr: f64, started: Instant) -> Result<StepMetrics> {
        let mut rng = self.state.rng.split();
        let transitive = self.strategy == Strategy::Loretta && rng.bernoulli(self.cfg.transitive_mix);
        let max_context = self.state.params.cfg.max_context;
        let n_loaders = self.loaders.len();

        let mut total: Option<Gradients<f32>> = None;
        let mut n_batches = 0usize;
        let mut loss_sum = 0.0;
        let mut by_source: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let (mut masked, mut ordinary) = (0usize, 0usize);
        let mut skips = 0u64;
        for i in 0..self.cfg.accumulation {
            let source = (self.state.next_source + i) % n_loaders;
            let indices = self.loaders[source].next_indices();
            let dataset = self.loaders[source].dataset();
            let mut seqs: Vec<AssembledSequence> = Vec::with_capacity(indices.len());
            for idx in indices {
                let record = dataset.get(idx);
                if transitive {
                    if let Some((link, obs, target)) = self.transitive_roles(record, &mut rng) {
                        let max_len = self.gen_max[target]
                            .min(max_context.saturating_sub(link.len() + 2))
                            .min(max_context.saturating_sub(obs.len() + 4));
                        match build_transitive(
                            &self.state.params,
                            &self.layout,
                            link,
                            obs,
                            target,
                            max_len,
                            self.generator.as_mut(),
                            self.cfg.transitive_commutative,
                            &mut rng,
                        )? {
                            Some(seq) => seqs.push(seq),
                            None => skips += 1,
                        }
                        continue;
                    }
                }
                let (seq, was_masked) =
                    prepare_record(record, self.strategy, &self.layout, &self.cfg.mask, max_context, &mut rng)?;
                masked += was_masked as usize;
                ordinary += 1;
                seqs.push(seq);
            }
            if seqs.is_empty() {
                continue;
            }
            let (loss, _, grads) = backward(&self.state.params, &seqs)?;
            if !loss.is_finite() {
                return Err(Error::Numerical { tensor: "loss".into() });
            }
            let entry = by_source.entry(dataset.name.clone()).or_insert((0.0, 0));
            entry.0 += loss;
            entry.1 += 1;
            n_batches += 1;
            loss_sum += loss;
            match total.as_mut() {
                Some(t) => t.add_assign(&grads),
                None => total = Some(grads),
            }
        }

        let mut params = self.state.params.clone();
        let mut opt = self.state.opt.clone();
        if let Some(mut grads) = total {
            grads.scale(1.0 / n_batches as f32);
            clip_grads(&mut grads, self.cfg.grad_clip)?;
            adamw_step(&mut params, &grads, &mut opt, lr, &self.cfg.adamw())?;
            params.check_finite()?;
        }

        let loss_by_source: BTreeMap<String, f64> = by_source.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        let loss = (n_batches > 0).then(|| loss_sum / n_batches as f64);

        self.state.params = params;
        self.state.opt = opt;
        self.state.step += 1;
        self.state.next_source = (self.state.next_source + self.cfg.accumulation) % n_loaders;
        self.state.transitive_skips += skips;
        self.state.loaders = self.loaders.iter().map(Loader::state).collect();
        Ok(StepMetrics {
            step: self.state.step,
            lr,
            loss,
            loss_by_source,
            masked_fraction: if ordinary == 0 { 0.0 } else { masked as f64 / ordinary as f64 },
            transitive_skip_count: self.state.transitive_skips,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Runs until `total_steps`, appending metrics as JSON lines every
/// `log_every` steps and calling `checkpoint` every `ckpt_every` steps and at
/// the end. A numerical failure aborts before the bad update is applied.
pub fn pretrain(
    trainer: &mut Trainer,
    metrics: &mut dyn Write,
    mut checkpoint: impl FnMut(&Trainer) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    let mut history = Vec::new();
    while !trainer.is_done() {
        let m = trainer.step()?;
        let log_every = trainer.cfg.log_every.max(1);
        if m.step % log_every == 0 || trainer.is_done() {
            let line = serde_json::to_string(&m).map_err(|e| Error::Parse(e.to_string()))?;
            writeln!(metrics, "{line}").map_err(|e| Error::io("metrics", e))?;
        }
        let every = trainer.cfg.ckpt_every;
        if every > 0 && m.step % every == 0 && !trainer.is_done() {
            checkpoint(trainer)?;
        }
        history.push(m);
    }
    checkpoint(trainer)?;
    Ok(history)
}
