use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    gen_tri_modal, read_shard, write_shard, GenParams, RawSample, Tokenizers, MODALITY_NAMES, MOD_A, MOD_B, MOD_C,
    N_CLASSES,
};
use crate::assembly::TokenLayout;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tokenization::TokenSeq;
use crate::training::Dataset;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOKENIZERS_FILE: &str = "tokenizers.json";
pub const MANIFEST_VERSION: u32 = 1;

const SPLIT_STREAM: u64 = 0x7370_6c00;

/// Record counts per subset. Every count must be a multiple of the class
/// count so that each subset is exactly label-balanced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub pairs_ab: usize,
    pub pairs_bc: usize,
    pub pairs_ac: usize,
    pub unimodal_a: usize,
    pub unimodal_b: usize,
    pub unimodal_c: usize,
    /// Labeled (A,B,C) records for fitting probes.
    pub probe: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            pairs_ab: 2000,
            pairs_bc: 2000,
            pairs_ac: 0,
            unimodal_a: 500,
            unimodal_b: 500,
            unimodal_c: 500,
            probe: 500,
            test: 500,
            seed: 0,
        }
    }
}

struct SubsetPlan {
    name: &'static str,
    modalities: Vec<usize>,
    count: usize,
    /// Pairs draw one sample per modality; triples share a single sample.
    one_sample_per_modality: bool,
    training: bool,
}

impl SplitSpec {
    fn plans(&self) -> Vec<SubsetPlan> {
        let plan = |name, modalities: &[usize], count, split, training| SubsetPlan {
            name,
            modalities: modalities.to_vec(),
            count,
            one_sample_per_modality: split,
            training,
        };
        vec![
            plan("ab", &[MOD_A, MOD_B], self.pairs_ab, true, true),
            plan("bc", &[MOD_B, MOD_C], self.pairs_bc, true, true),
            plan("ac", &[MOD_A, MOD_C], self.pairs_ac, true, true),
            plan("a", &[MOD_A], self.unimodal_a, true, true),
            plan("b", &[MOD_B], self.unimodal_b, true, true),
            plan("c", &[MOD_C], self.unimodal_c, true, true),
            plan("probe", &[MOD_A, MOD_B, MOD_C], self.probe, false, false),
            plan("test", &[MOD_A, MOD_B, MOD_C], self.test, false, false),
        ]
    }

    /// Samples consumed per class.
    pub fn per_class_need(&self) -> Result<usize> {
        let mut need = 0;
        for p in self.plans() {
            if p.count % N_CLASSES != 0 {
                return Err(Error::input(format!(
                    "subset {} count {} is not a multiple of {N_CLASSES}",
                    p.name, p.count
                )));
            }
            let per_record = if p.one_sample_per_modality { p.modalities.len() } else { 1 };
            need += p.count / N_CLASSES * per_record;
        }
        Ok(need)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityDescriptor {
    pub name: String,
    pub id: usize,
    pub tokenizer: String,
    pub vocab_size: usize,
    /// Exact token count for A and C; upper bound for B.
    pub nominal_len: usize,
    /// Key of this modality's fitted artifact inside the tokenizer file.
    pub artifact: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetEntry {
    pub name: String,
    pub modalities: Vec<String>,
    pub training: bool,
    pub n_records: usize,
    pub labels: Vec<usize>,
    /// Source sample id per record and modality.
    pub sample_ids: Vec<Vec<u64>>,
    /// One shard per modality, aligned by record index.
    pub shards: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub gen: GenParams,
    pub split: SplitSpec,
    pub layout: TokenLayout,
    pub modalities: Vec<ModalityDescriptor>,
    pub tokenizers: String,
    pub subsets: Vec<SubsetEntry>,
}

impl DatasetManifest {
    pub fn subset(&self, name: &str) -> Result<&SubsetEntry> {
        self.subsets
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::input(format!("manifest has no subset named {name}")))
    }
}

/// A loaded subset with its labels, record-aligned.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub dataset: Arc<Dataset>,
    pub labels: Vec<usize>,
}

/// Partitions `samples` into the label-balanced, sample-disjoint subsets of
/// `spec`, fits tokenizers on the training subsets and writes shards, the
/// tokenizer file and the manifest into `out_dir`.
pub fn split_subsets(samples: &[RawSample], gen: &GenParams, spec: &SplitSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let need = spec.per_class_need()?;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, s) in samples.iter().enumerate() {
        if s.label >= N_CLASSES {
            return Err(Error::input(format!("sample {} has label {} >= {N_CLASSES}", s.id, s.label)));
        }
        pools[s.label].push(i);
    }
    let deficits: Vec<String> = pools
        .iter()
        .enumerate()
        .filter(|(_, p)| p.len() < need)
        .map(|(y, p)| format!("class {y} needs {need}, has {} (short by {})", p.len(), need - p.len()))
        .collect();
    if !deficits.is_empty() {
        return Err(Error::Allocation(deficits.join("; ")));
    }
    for (y, pool) in pools.iter_mut().enumerate() {
        RngStream::derive(spec.seed, &[SPLIT_STREAM, 0, y as u64]).shuffle(pool);
    }

    let mut cursor = [0usize; N_CLASSES];
    // Per subset: (label, sample index per modality).
    let mut assigned: Vec<Vec<(usize, Vec<usize>)>> = Vec::new();
    for (k, plan) in spec.plans().iter().enumerate() {
        let mut recs = Vec::with_capacity(plan.count);
        for _ in 0..plan.count / N_CLASSES {
            for y in 0..N_CLASSES {
                let take = if plan.one_sample_per_modality { plan.modalities.len() } else { 1 };
                let ids = &pools[y][cursor[y]..cursor[y] + take];
                cursor[y] += take;
                let per_mod = if take == 1 { vec![ids[0]; plan.modalities.len()] } else { ids.to_vec() };
                recs.push((y, per_mod));
            }
        }
        RngStream::derive(spec.seed, &[SPLIT_STREAM, 1, k as u64]).shuffle(&mut recs);
        assigned.push(recs);
    }

    let plans = spec.plans();
    let mut train_b = Vec::new();
    let mut train_c = Vec::new();
    for (plan, recs) in plans.iter().zip(&assigned) {
        if !plan.training {
            continue;
        }
        for (_, per_mod) in recs {
            for (&m, &i) in plan.modalities.iter().zip(per_mod) {
                match m {
                    MOD_B => train_b.push(&samples[i]),
                    MOD_C => train_c.push(&samples[i]),
                    _ => {}
                }
            }
        }
    }
    let tokenizers = Tokenizers::fit(&train_b, &train_c, spec.seed)?;
    let layout = tokenizers.layout()?;
    let nominal = Tokenizers::nominal_lengths();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut subsets = Vec::new();
    for (plan, recs) in plans.iter().zip(&assigned) {
        let mut shards = Vec::new();
        if !recs.is_empty() {
            for (j, &m) in plan.modalities.iter().enumerate() {
                let tokens = recs
                    .iter()
                    .map(|(_, per_mod)| tokenizers.encode(&samples[per_mod[j]], m).map(TokenSeq::into_tokens))
                    .collect::<Result<Vec<_>>>()?;
                if m != MOD_B {
                    if let Some(t) = tokens.iter().find(|t| t.len() != nominal[m]) {
                        return Err(Error::input(format!(
                            "modality {} encoded to {} tokens, expected {}",
                            MODALITY_NAMES[m],
                            t.len(),
                            nominal[m]
                        )));
                    }
                }
                let file = format!("{}.{}.lrt", plan.name, MODALITY_NAMES[m]);
                write_shard(&out_dir.join(&file), m as u32, nominal[m] as u32, &tokens)?;
                shards.push(file);
            }
        }
        subsets.push(SubsetEntry {
            name: plan.name.to_string(),
            modalities: plan.modalities.iter().map(|&m| MODALITY_NAMES[m].to_string()).collect(),
            training: plan.training,
            n_records: recs.len(),
            labels: recs.iter().map(|(y, _)| *y).collect(),
            sample_ids: recs
                .iter()
                .map(|(_, per_mod)| per_mod.iter().map(|&i| samples[i].id).collect())
                .collect(),
            shards,
        });
    }

    let descriptors = [("bin16", "image_levels"), ("lookup-word", "vocab"), ("pca8-kmeans64", "pca+codebook")];
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        seed: spec.seed,
        gen: gen.clone(),
        split: spec.clone(),
        modalities: (0..MODALITY_NAMES.len())
            .map(|m| ModalityDescriptor {
                name: MODALITY_NAMES[m].to_string(),
                id: m,
                tokenizer: descriptors[m].0.to_string(),
                vocab_size: layout.content_sizes[m],
                nominal_len: nominal[m],
                artifact: descriptors[m].1.to_string(),
            })
            .collect(),
        layout,
        tokenizers: TOKENIZERS_FILE.to_string(),
        subsets,
    };
    write_json(&out_dir.join(TOKENIZERS_FILE), &tokenizers)?;
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Generates raw samples from `seed` and splits them with `spec`.
pub fn generate_dataset(out_dir: &Path, seed: u64, gen: &GenParams, spec: &SplitSpec) -> Result<DatasetManifest> {
    let samples = gen_tri_modal(seed, gen)?;
    let spec = SplitSpec { seed, ..spec.clone() };
    split_subsets(&samples, gen, &spec, out_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads the manifest and tokenizers from `dir` and checks every shard header.
pub fn load_manifest(dir: &Path) -> Result<(DatasetManifest, Tokenizers)> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", manifest.format_version)));
    }
    let tokenizers = read_json::<Tokenizers>(&dir.join(&manifest.tokenizers))?.restored();
    if tokenizers.vocab_sizes() != manifest.layout.content_sizes {
        return Err(Error::format(&path, "tokenizer vocabularies disagree with the layout"));
    }
    for s in &manifest.subsets {
        read_subset_shards(dir, &manifest, s)?;
    }
    Ok((manifest, tokenizers))
}

fn read_subset_shards(dir: &Path, manifest: &DatasetManifest, s: &SubsetEntry) -> Result<Vec<Vec<TokenSeq>>> {
    let expected_shards = if s.n_records == 0 { 0 } else { s.modalities.len() };
    let mpath = dir.join(MANIFEST_FILE);
    if s.shards.len() != expected_shards || s.labels.len() != s.n_records || s.sample_ids.len() != s.n_records {
        return Err(Error::format(&mpath, format!("subset {} is inconsistent", s.name)));
    }
    let mut records: Vec<Vec<TokenSeq>> = vec![Vec::new(); s.n_records];
    for (file, name) in s.shards.iter().zip(&s.modalities) {
        let path = dir.join(file);
        let m = manifest
            .layout
            .modality_by_name(name)
            .ok_or_else(|| Error::format(&mpath, format!("unknown modality {name}")))?;
        let (header, rows) = read_shard(&path)?;
        if header.records as usize != s.n_records
            || header.modality as usize != m
            || header.tokens_per_record as usize != manifest.modalities[m].nominal_len
        {
            return Err(Error::format(&path, "header disagrees with the manifest"));
        }
        for (rec, row) in records.iter_mut().zip(rows) {
            let seq = TokenSeq::with_vocab(m, row, manifest.layout.content_sizes[m])
                .map_err(|e| Error::format(&path, e.to_string()))?;
            rec.push(seq);
        }
    }
    Ok(records)
}

/// Loads one subset as a training dataset plus its labels.
pub fn load_subset(dir: &Path, manifest: &DatasetManifest, name: &str) -> Result<LabeledDataset> {
    let entry = manifest.subset(name)?;
    let records = read_subset_shards(dir, manifest, entry)?;
    Ok(LabeledDataset {
        dataset: Arc::new(Dataset::new(name, records)?),
        labels: entry.labels.clone(),
    })
}
