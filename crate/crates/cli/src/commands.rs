use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use loretta_core::assembly::{assemble, TokenLayout};
use loretta_core::datagen::{generate_dataset, load_manifest, load_subset, DatasetManifest, LabeledDataset, Tokenizers, MOD_B};
use loretta_core::evaluation::{cycle_error, linear_probe, perplexity, sigma_membership, CycleReport, EvalRecord};
use loretta_core::model::{extract_features, generate, Params, SamplingConfig};
use loretta_core::rng::RngStream;
use loretta_core::tokenization::TokenSeq;
use loretta_core::training::{pretrain, Dataset, Init, ModelGenerator, Strategy, Trainer};
use serde::Serialize;

use crate::checkpoint::{Checkpoint, RunInfo};
use crate::config::RunConfig;
use crate::{DataError, UsageError};

const SAMPLE_STREAM: u64 = 0x736d_706c;
const CYCLE_STREAM: u64 = 0x6379_636c;

#[derive(Debug, Parser)]
#[command(name = "loretta-lab", version, about = "Multimodal pre-training lab on synthetic tri-modal data")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset: shards, tokenizers and manifest.
    GenData(GenDataArgs),
    /// Pre-train a model with one of the strategies.
    Pretrain(PretrainArgs),
    /// Perplexity of a checkpoint on modality combinations.
    EvalPpl(EvalPplArgs),
    /// Linear probes on frozen features.
    Probe(ProbeArgs),
    /// Loss-ratio modality membership test for a single-modality model.
    Membership(MembershipArgs),
    /// Generate one modality conditioned on another.
    Sample(SampleArgs),
    /// Two-hop versus one-hop loss through a generated modality.
    CycleError(CycleArgs),
    /// Print or check run configuration files.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// cm2, c2m3, loretta or gpt; defaults to the strategy of a resumed checkpoint.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Dataset directory; defaults to the one recorded in a resumed checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for metrics and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Start from these parameters with a fresh optimizer and schedule.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Resume this checkpoint exactly where it stopped.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    /// Training modality for cm2.
    #[arg(long)]
    modality: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Subset to evaluate on.
    #[arg(long)]
    subset: Option<String>,
    /// Write records here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalPplArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated modality names; every combination when omitted.
    #[arg(long)]
    combo: Option<String>,
    /// Emit a CSV table instead of JSON lines.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    combo: Option<String>,
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct MembershipArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    seed: u64,
    /// SOURCE,TARGET modality names.
    #[arg(long)]
    combo: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
}

#[derive(Debug, Args)]
struct CycleArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    seed: u64,
    /// OBSERVED,LINK,MISSING modality names.
    #[arg(long)]
    combo: String,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Print every setting with its default value.
    #[arg(long)]
    dump_defaults: bool,
    /// Validate a config file and print it with defaults filled in.
    #[arg(long)]
    check: Option<PathBuf>,
}

pub(crate) fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a, stdout),
        Command::Pretrain(a) => pretrain_cmd(a, stderr),
        Command::EvalPpl(a) => eval_ppl(a, stdout),
        Command::Probe(a) => probe(a, stdout),
        Command::Membership(a) => membership(a, stdout),
        Command::Sample(a) => sample(a, stdout),
        Command::CycleError(a) => cycle(a, stdout),
        Command::Config(a) => config(a, stdout),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string(value).expect("report serializes")
}

fn parse_combo(layout: &TokenLayout, text: &str) -> Result<Vec<usize>> {
    let mut combo = Vec::new();
    for name in text.split(',').map(str::trim) {
        let m = layout
            .modality_by_name(name)
            .ok_or_else(|| usage(format!("unknown modality {name:?} in --combo")))?;
        if combo.contains(&m) {
            bail!(usage(format!("modality {name} repeated in --combo")));
        }
        combo.push(m);
    }
    Ok(combo)
}

/// Every non-empty combination, by size and then in ascending modality order.
fn all_combos(n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1..1usize << n)
        .map(|mask| (0..n).filter(|m| mask >> m & 1 == 1).collect())
        .collect();
    out.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn combo_names(layout: &TokenLayout, combo: &[usize]) -> Vec<String> {
    combo.iter().map(|&m| layout.modalities[m].name.clone()).collect()
}

/// Keeps only the `mods` segments of every record.
fn project(d: &Dataset, mods: &[usize], name: &str) -> Result<Dataset> {
    let records = d
        .records()
        .iter()
        .map(|r| {
            let segs: Vec<TokenSeq> = r.iter().filter(|s| mods.contains(&s.modality)).cloned().collect();
            if segs.len() == mods.len() {
                Ok(segs)
            } else {
                Err(DataError(format!("subset {} lacks a requested modality", d.name)))
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Dataset::new(name, records)?)
}

struct Loaded {
    manifest: DatasetManifest,
    tokenizers: Tokenizers,
    dir: PathBuf,
}

fn load_data(dir: &Path) -> Result<Loaded> {
    let (manifest, tokenizers) = load_manifest(dir)?;
    Ok(Loaded {
        manifest,
        tokenizers,
        dir: dir.to_path_buf(),
    })
}

impl Loaded {
    fn subset(&self, name: &str) -> Result<LabeledDataset> {
        Ok(load_subset(&self.dir, &self.manifest, name)?)
    }

    /// Loader datasets for a strategy. cm2 gets one dataset of every training
    /// segment of its modality; the others get every non-empty pair subset.
    fn training_sets(&self, strategy: Strategy, modality: Option<usize>) -> Result<Vec<Arc<Dataset>>> {
        let training = self.manifest.subsets.iter().filter(|s| s.training && s.n_records > 0);
        if strategy == Strategy::Cm2 {
            let m = modality.ok_or_else(|| usage("cm2 needs --modality"))?;
            let name = &self.manifest.layout.modalities[m].name;
            let mut records = Vec::new();
            for s in training.filter(|s| s.modalities.contains(name)) {
                let d = self.subset(&s.name)?;
                records.extend(project(&d.dataset, &[m], &s.name)?.records().iter().cloned());
            }
            return Ok(vec![Arc::new(Dataset::new(format!("cm2-{name}"), records)?)]);
        }
        let sets = training
            .filter(|s| s.modalities.len() == 2)
            .map(|s| Ok(self.subset(&s.name)?.dataset))
            .collect::<Result<Vec<_>>>()?;
        if sets.is_empty() {
            bail!(DataError("dataset has no paired training subsets".into()));
        }
        Ok(sets)
    }
}

fn gen_data(a: GenDataArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    create_dir(&a.out)?;
    let m = generate_dataset(&a.out, a.seed, &cfg.data.gen, &cfg.data.split)?;
    for s in &m.subsets {
        writeln!(stdout, "{}", to_json(&serde_json::json!({"subset": s.name, "modalities": s.modalities, "records": s.n_records})))?;
    }
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs, stderr: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if a.ckpt.is_some() && a.init_from.is_some() {
        bail!(usage("--ckpt resumes a run and --init-from starts a new one; pass only one"));
    }
    let resume = a.ckpt.as_deref().map(Checkpoint::load).transpose()?;
    let (strategy, data_dir) = match &resume {
        Some(ck) => {
            if a.strategy.is_some_and(|s| s != ck.run.strategy) {
                bail!(usage("--strategy differs from the resumed checkpoint"));
            }
            if a.seed != ck.run.train.seed {
                bail!(usage(format!("--seed must match the resumed run (seed {})", ck.run.train.seed)));
            }
            if a.steps.is_some() {
                bail!(usage("--steps cannot change the schedule of a resumed run"));
            }
            let dir = a.data.clone().or_else(|| ck.run.data_dir.as_ref().map(PathBuf::from));
            (ck.run.strategy, dir)
        }
        None => (a.strategy.ok_or_else(|| usage("--strategy is required"))?, a.data.clone()),
    };
    if strategy == Strategy::Loretta && resume.is_none() && a.init_from.is_none() {
        bail!(usage(
            "the loretta strategy continues a c2m3 run: pass its checkpoint with --init-from (warm-start required)"
        ));
    }
    let data_dir = data_dir.ok_or_else(|| usage("--data is required"))?;
    let data = load_data(&data_dir)?;
    let layout = data.manifest.layout.clone();

    let modality = match (&a.modality, strategy) {
        (Some(name), Strategy::Cm2) => Some(
            layout
                .modality_by_name(name)
                .ok_or_else(|| usage(format!("unknown modality {name:?}")))?,
        ),
        (Some(_), _) => bail!(usage("--modality applies to cm2 only")),
        (None, _) => resume
            .as_ref()
            .and_then(|ck| ck.run.train_modality.as_deref())
            .and_then(|n| layout.modality_by_name(n)),
    };

    let (train, model, init) = match resume {
        Some(ck) => {
            if ck.layout != layout {
                bail!(DataError("checkpoint token layout differs from the dataset".into()));
            }
            (ck.run.train.clone(), ck.model().clone(), Init::Resume(ck.state))
        }
        None => {
            if let Some(steps) = a.steps {
                cfg.set_steps(steps);
            }
            cfg.train.seed = a.seed;
            match &a.init_from {
                Some(p) => {
                    let src = Checkpoint::load(p)?;
                    if src.layout != layout {
                        bail!(DataError("--init-from checkpoint uses a different token layout".into()));
                    }
                    (cfg.train.clone(), src.model().clone(), Init::WarmStart(src.state.params))
                }
                None => (cfg.train.clone(), cfg.model.for_layout(&layout), Init::Fresh),
            }
        }
    };

    let datasets = data.training_sets(strategy, modality)?;
    let run = RunInfo {
        strategy,
        train: train.clone(),
        train_modality: modality.map(|m| layout.modalities[m].name.clone()),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        data_dir: Some(data_dir.to_string_lossy().into_owned()),
    };
    let mut trainer = Trainer::new(strategy, train, &model, layout.clone(), datasets, init)?;

    create_dir(&a.out)?;
    let mut metrics = BufWriter::new(File::create(a.out.join("metrics.jsonl")).context("creating metrics.jsonl")?);
    let out = a.out.clone();
    let tokenizers = data.tokenizers.clone();
    let mut save = |tr: &Trainer| -> loretta_core::Result<()> {
        let ck = Checkpoint {
            layout: tr.layout().clone(),
            run: run.clone(),
            state: tr.state().clone(),
            tokenizers: Some(tokenizers.clone()),
        };
        let name = if tr.is_done() {
            "final.ckpt".to_string()
        } else {
            format!("step-{:06}.ckpt", tr.state().step)
        };
        ck.save(&out.join(name))
    };
    let history = pretrain(&mut trainer, &mut metrics, &mut save)?;
    metrics.flush()?;
    if let Some(last) = history.last() {
        writeln!(
            stderr,
            "{strategy}: {} steps, final loss {}, transitive skips {}",
            last.step,
            last.loss.map_or("n/a".into(), |l| format!("{l:.4}")),
            trainer.state().transitive_skips
        )?;
    }
    Ok(())
}

struct EvalContext {
    cfg: RunConfig,
    ck: Checkpoint,
    data: Loaded,
    subset: LabeledDataset,
    ckpt_name: String,
}

fn eval_context(a: &EvalArgs) -> Result<EvalContext> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let ck = Checkpoint::load(&a.ckpt)?;
    let dir = a
        .data
        .clone()
        .or_else(|| ck.run.data_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| usage("--data is required"))?;
    let data = load_data(&dir)?;
    if data.manifest.layout != ck.layout {
        bail!(DataError("checkpoint token layout differs from the dataset".into()));
    }
    let subset = data.subset(a.subset.as_deref().unwrap_or(&cfg.eval.subset))?;
    Ok(EvalContext {
        cfg,
        ckpt_name: a.ckpt.to_string_lossy().into_owned(),
        ck,
        data,
        subset,
    })
}

fn output(path: &Option<PathBuf>, stdout: &mut dyn Write, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

fn records_text(records: &[impl Serialize]) -> String {
    records.iter().map(|r| to_json(r) + "\n").collect()
}

/// A header row of combo labels and one row of values labeled by strategy.
fn table_text(label: &str, records: &[EvalRecord]) -> String {
    let head: Vec<String> = records.iter().map(|r| r.combo.join("+")).collect();
    let vals: Vec<String> = records.iter().map(|r| format!("{:.6}", r.value)).collect();
    format!("model,{}\n{label},{}\n", head.join(","), vals.join(","))
}

fn combos(layout: &TokenLayout, arg: &Option<String>) -> Result<Vec<Vec<usize>>> {
    match arg {
        Some(text) => Ok(vec![parse_combo(layout, text)?]),
        None => Ok(all_combos(layout.n_modalities())),
    }
}

fn eval_ppl(a: EvalPplArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = eval_context(&a.eval)?;
    let params = ctx.ck.params();
    let mut records = Vec::new();
    for combo in combos(&ctx.ck.layout, &a.combo)? {
        let r = perplexity(params, &ctx.ck.layout, params.cfg.max_context, &ctx.subset.dataset, &combo)?;
        records.push(EvalRecord {
            kind: "ppl".into(),
            combo: r.combo,
            value: r.ppl,
            n_tokens: Some(r.n_tokens),
            seed: Some(ctx.ck.run.train.seed),
            ckpt: Some(ctx.ckpt_name.clone()),
            order: Some("canonical".into()),
        });
    }
    let text = if a.table {
        table_text(&ctx.ck.run.strategy.to_string(), &records)
    } else {
        records_text(&records)
    };
    output(&a.eval.out, stdout, &text)
}

fn features(params: &Params<f32>, layout: &TokenLayout, d: &Dataset, combo: &[usize]) -> Result<Vec<Vec<f64>>> {
    let sub = project(d, combo, &d.name)?;
    let mut rng = RngStream::new(0);
    sub.records()
        .iter()
        .map(|r| {
            let segs: Vec<TokenSeq> = combo
                .iter()
                .map(|&m| r.iter().find(|s| s.modality == m).expect("projected").clone())
                .collect();
            let seq = assemble(layout, &segs, false, params.cfg.max_context, &mut rng)?;
            Ok(extract_features(params, &seq)?)
        })
        .collect()
}

fn probe(a: ProbeArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = eval_context(&a.eval)?;
    let layout = &ctx.ck.layout;
    let params = ctx.ck.params();
    let pool = ctx.data.subset(&ctx.cfg.eval.probe_pool)?;
    let mut records = Vec::new();
    for combo in combos(layout, &a.combo)? {
        let px = features(params, layout, &pool.dataset, &combo)?;
        let tx = features(params, layout, &ctx.subset.dataset, &combo)?;
        let mut pc = ctx.cfg.eval.probe.clone();
        if combo.len() > 1 {
            pc.epochs = ctx.cfg.eval.probe_epochs_multimodal;
        }
        let r = linear_probe(&px, &pool.labels, &tx, &ctx.subset.labels, &pc, a.seed)?;
        records.push(EvalRecord {
            kind: "probe_accuracy".into(),
            combo: combo_names(layout, &combo),
            value: r.accuracy,
            n_tokens: None,
            seed: Some(a.seed),
            ckpt: Some(ctx.ckpt_name.clone()),
            order: Some("canonical".into()),
        });
    }
    let text = if a.table {
        table_text(&ctx.ck.run.strategy.to_string(), &records)
    } else {
        records_text(&records)
    };
    output(&a.eval.out, stdout, &text)
}

#[derive(Serialize)]
struct MembershipRecord {
    #[serde(flatten)]
    record: EvalRecord,
    reference: String,
    sigma: f64,
    same_modality: bool,
    nll: f64,
    reference_nll: f64,
}

fn membership(a: MembershipArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = eval_context(&a.eval)?;
    let layout = &ctx.ck.layout;
    let params = ctx.ck.params();
    let name = ctx
        .ck
        .run
        .train_modality
        .clone()
        .filter(|_| ctx.ck.run.strategy == Strategy::Cm2)
        .ok_or_else(|| usage("membership needs a checkpoint trained with cm2 on one modality"))?;
    let m = layout
        .modality_by_name(&name)
        .ok_or_else(|| DataError(format!("checkpoint modality {name} is not in the layout")))?;
    let reference = ctx.data.training_sets(Strategy::Cm2, Some(m))?.remove(0);
    let sigma = a.sigma.unwrap_or(ctx.cfg.eval.sigma);
    let mut records = Vec::new();
    for i in 0..layout.n_modalities() {
        let held_out = project(&ctx.subset.dataset, &[i], &ctx.subset.dataset.name)?;
        let v = sigma_membership(params, layout, params.cfg.max_context, &held_out, &reference, sigma)?;
        records.push(MembershipRecord {
            record: EvalRecord {
                kind: "membership_ratio".into(),
                combo: vec![layout.modalities[i].name.clone()],
                value: v.ratio,
                n_tokens: None,
                seed: Some(ctx.ck.run.train.seed),
                ckpt: Some(ctx.ckpt_name.clone()),
                order: None,
            },
            reference: reference.name.clone(),
            sigma,
            same_modality: v.same_modality,
            nll: v.nll_i,
            reference_nll: v.nll_j,
        });
    }
    output(&a.eval.out, stdout, &records_text(&records))
}

#[derive(Serialize)]
struct SampleRecord {
    index: usize,
    label: usize,
    source: String,
    target: String,
    tokens: Vec<u32>,
    closed_by_eos: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

fn two_or_three(layout: &TokenLayout, text: &str, n: usize, what: &str) -> Result<Vec<usize>> {
    let combo = parse_combo(layout, text)?;
    if combo.len() != n {
        bail!(usage(format!("--combo takes {what}")));
    }
    Ok(combo)
}

fn sampling(ck: &Checkpoint) -> SamplingConfig {
    SamplingConfig {
        temperature: ck.run.train.gen_temperature,
        top_k: ck.run.train.gen_top_k,
    }
}

fn sample(a: SampleArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = eval_context(&a.eval)?;
    let layout = &ctx.ck.layout;
    let params = ctx.ck.params();
    let combo = two_or_three(layout, &a.combo, 2, "SOURCE,TARGET")?;
    let (src, tgt) = (combo[0], combo[1]);
    let d = project(&ctx.subset.dataset, &[src], "source")?;
    let max_len = ctx.data.manifest.modalities[tgt].nominal_len;
    let mut rng = RngStream::derive(a.seed, &[SAMPLE_STREAM]);
    let mut records = Vec::new();
    for (index, r) in d.records().iter().take(a.count).enumerate() {
        let prefix = assemble(layout, r, false, params.cfg.max_context, &mut rng)?;
        let g = generate(params, layout, &prefix, tgt, max_len, sampling(&ctx.ck), &mut rng)?;
        let text = match (&ctx.ck.tokenizers, tgt) {
            (Some(t), MOD_B) => Some(t.vocab.decode(&g.tokens)?.join(" ")),
            _ => None,
        };
        records.push(SampleRecord {
            index,
            label: ctx.subset.labels[index],
            source: layout.modalities[src].name.clone(),
            target: layout.modalities[tgt].name.clone(),
            tokens: g.tokens,
            closed_by_eos: g.closed_by_eos,
            text,
        });
    }
    output(&a.eval.out, stdout, &records_text(&records))
}

#[derive(Serialize)]
struct CycleRecord {
    kind: &'static str,
    combo: Vec<String>,
    seed: u64,
    ckpt: String,
    #[serde(flatten)]
    report: CycleReport,
}

fn cycle(a: CycleArgs, stdout: &mut dyn Write) -> Result<()> {
    let ctx = eval_context(&a.eval)?;
    let layout = &ctx.ck.layout;
    let params = ctx.ck.params();
    let combo = two_or_three(layout, &a.combo, 3, "OBSERVED,LINK,MISSING")?;
    let (obs, link, missing) = (combo[0], combo[1], combo[2]);
    let d = project(&ctx.subset.dataset, &[obs, link], "cycle")?;
    let mut generator = ModelGenerator {
        sampling: sampling(&ctx.ck),
    };
    let mut cfg = ctx.cfg.eval.cycle.clone();
    cfg.max_len = cfg.max_len.min(ctx.data.manifest.modalities[missing].nominal_len);
    let mut rng = RngStream::derive(a.seed, &[CYCLE_STREAM]);
    let report = cycle_error(params, params, &mut generator, layout, &d, link, missing, &cfg, &mut rng)?;
    let rec = CycleRecord {
        kind: "cycle_error",
        combo: combo_names(layout, &combo),
        seed: a.seed,
        ckpt: ctx.ckpt_name.clone(),
        report,
    };
    output(&a.eval.out, stdout, &records_text(&[rec]))
}

fn config(a: ConfigArgs, stdout: &mut dyn Write) -> Result<()> {
    match (a.dump_defaults, &a.check) {
        (true, None) => write!(stdout, "{}", RunConfig::default().to_toml())?,
        (false, Some(p)) => {
            let cfg = RunConfig::load(Some(p))?;
            cfg.train.validate()?;
            cfg.data.gen.validate()?;
            cfg.data.split.per_class_need()?;
            cfg.eval.probe.validate()?;
            write!(stdout, "{}", cfg.to_toml())?;
        }
        _ => bail!(usage("config takes exactly one of --dump-defaults or --check PATH")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combos_are_ordered_by_size() {
        let names: Vec<Vec<usize>> = all_combos(3);
        assert_eq!(names, vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]);
    }

    #[test]
    fn combo_parsing_rejects_unknown_and_repeated_names() {
        use loretta_core::tokenization::ModalityId;
        let layout = TokenLayout::new(
            vec![ModalityId::new(0, "A"), ModalityId::new(1, "B"), ModalityId::new(2, "C")],
            vec![2, 2, 2],
            1,
        )
        .unwrap();
        assert_eq!(parse_combo(&layout, "C, A").unwrap(), vec![2, 0]);
        assert!(parse_combo(&layout, "A,D").unwrap_err().is::<UsageError>());
        assert!(parse_combo(&layout, "A,A").unwrap_err().is::<UsageError>());
    }
}
