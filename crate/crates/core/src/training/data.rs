use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::assembly::{assemble, causal_mask_transform, AssembledSequence, MaskPolicy, TokenLayout};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tokenization::TokenSeq;

/// A named collection of records; each record holds one segment per present
/// modality, in ascending modality order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    records: Vec<Vec<TokenSeq>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, mut records: Vec<Vec<TokenSeq>>) -> Result<Self> {
        let name = name.into();
        if records.is_empty() {
            return Err(Error::input(format!("dataset {name} is empty")));
        }
        for r in &mut records {
            r.sort_by_key(|s| s.modality);
            if r.is_empty() || r.windows(2).any(|w| w[0].modality == w[1].modality) {
                return Err(Error::input(format!("dataset {name} has a record with empty or repeated modalities")));
            }
        }
        Ok(Self { name, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Vec<TokenSeq>] {
        &self.records
    }

    pub fn get(&self, i: usize) -> &[TokenSeq] {
        &self.records[i]
    }

    /// Longest segment per modality, 0 where the modality never occurs.
    pub fn max_lengths(&self, n_modalities: usize) -> Vec<usize> {
        let mut out = vec![0; n_modalities];
        for s in self.records.iter().flatten() {
            if s.modality < n_modalities {
                out[s.modality] = out[s.modality].max(s.len());
            }
        }
        out
    }
}

/// Position of a loader inside its epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoaderState {
    pub epoch: u64,
    pub cursor: usize,
}

const LOADER_STREAM: u64 = 0x4c4f_4144;

/// Endless shuffled micro-batches over one dataset. Each epoch uses a fresh
/// permutation derived from `(seed, index, epoch)`.
#[derive(Clone, Debug)]
pub struct Loader {
    dataset: Arc<Dataset>,
    batch_size: usize,
    seed: u64,
    index: u64,
    state: LoaderState,
    order: Vec<usize>,
}

impl Loader {
    pub fn new(dataset: Arc<Dataset>, batch_size: usize, seed: u64, index: u64) -> Result<Self> {
        Self::resume(dataset, batch_size, seed, index, LoaderState::default())
    }

    pub fn resume(dataset: Arc<Dataset>, batch_size: usize, seed: u64, index: u64, state: LoaderState) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::input("batch size must be positive"));
        }
        if state.cursor > dataset.len() {
            return Err(Error::input("loader cursor beyond dataset"));
        }
        let mut l = Self {
            order: Vec::new(),
            dataset,
            batch_size,
            seed,
            index,
            state,
        };
        l.shuffle();
        Ok(l)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.dataset.len()).collect();
        RngStream::derive(self.seed, &[LOADER_STREAM, self.index, self.state.epoch]).shuffle(&mut self.order);
    }

    pub fn state(&self) -> LoaderState {
        self.state
    }

    pub fn set_state(&mut self, state: LoaderState) {
        let reshuffle = state.epoch != self.state.epoch;
        self.state = state;
        if reshuffle {
            self.shuffle();
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// Record indices of the next micro-batch, wrapping into a new epoch when exhausted.
    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.state.cursor == self.order.len() {
                self.state.epoch += 1;
                self.state.cursor = 0;
                self.shuffle();
            }
            out.push(self.order[self.state.cursor]);
            self.state.cursor += 1;
        }
        out
    }

    pub fn next_batch(&mut self) -> Vec<&[TokenSeq]> {
        let idx = self.next_indices();
        idx.into_iter().map(|i| self.dataset.get(i)).collect()
    }
}

/// Sequences of one micro-batch and the loader they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroBatch {
    pub source: usize,
    pub seqs: Vec<AssembledSequence>,
    pub n_masked: usize,
}

/// Renders one record for an ordinary (non-transitive) step.
pub fn prepare_record(
    record: &[TokenSeq],
    strategy: Strategy,
    layout: &TokenLayout,
    policy: &MaskPolicy,
    max_context: usize,
    rng: &mut RngStream,
) -> Result<(AssembledSequence, bool)> {
    if strategy == Strategy::Cm2 && record.len() != 1 {
        return Err(Error::input("causal masked modeling expects unimodal records"));
    }
    let commutative = strategy != Strategy::Gpt;
    let seq = assemble(layout, record, commutative, max_context, rng)?;
    if strategy == Strategy::Gpt {
        return Ok((seq, false));
    }
    causal_mask_transform(&seq, layout, policy, rng)
}

/// Draws `accumulation` micro-batches round-robin over `loaders`, starting at
/// loader `start`.
pub fn make_batch(
    loaders: &mut [Loader],
    start: usize,
    accumulation: usize,
    strategy: Strategy,
    layout: &TokenLayout,
    policy: &MaskPolicy,
    max_context: usize,
    rng: &mut RngStream,
) -> Result<Vec<MicroBatch>> {
    if loaders.is_empty() {
        return Err(Error::input("no data loaders"));
    }
    let mut out = Vec::with_capacity(accumulation);
    for i in 0..accumulation {
        let source = (start + i) % loaders.len();
        let mut mb = MicroBatch {
            source,
            seqs: Vec::new(),
            n_masked: 0,
        };
        for record in loaders[source].next_batch() {
            let (seq, masked) = prepare_record(record, strategy, layout, policy, max_context, rng)?;
            mb.n_masked += masked as usize;
            mb.seqs.push(seq);
        }
        out.push(mb);
    }
    Ok(out)
}
