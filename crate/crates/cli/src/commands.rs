use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tsam::data::{
    load_dataset, render_dataset, stats, synth_generate, ConversationSample, DatasetStats, EmotionLabels, Vocab,
};
use tsam::eval::gradcheck::{check_layers, CheckShape, LayerCheck};
use tsam::eval::{
    ablation_run, ablation_variants, bootstrap_significance, evaluate, layer_sweep, render_sweep_table,
    render_variant_table, BootstrapResult, MetricsReport, Report,
};
use tsam::model::ModelConfig;
use tsam::train::{train_observed, Checkpoint, EpochRecord};

use crate::config::{resolve, Common, Overrides, RunConfig};
use crate::Command;

pub fn run(common: &Common, command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { overrides, train, dev } => cmd_train(common, &overrides, train, dev),
        Command::Eval {
            checkpoint,
            data,
            baseline,
            resamples,
            threshold,
        } => cmd_eval(common, &checkpoint, &data, baseline.as_deref(), resamples, threshold),
        Command::Synth { n, split } => cmd_synth(common, n, split),
        Command::Gradcheck { seeds } => cmd_gradcheck(common, seeds),
        Command::Ablate {
            overrides,
            train,
            dev,
            test,
            grid,
        } => cmd_ablate(common, &overrides, [train, dev, test], grid),
        Command::Sweep {
            overrides,
            train,
            dev,
            min_layers,
            max_layers,
        } => cmd_sweep(common, &overrides, [train, dev], min_layers, max_layers),
        Command::Stats { data } => cmd_stats(common, &data),
        Command::Convert { reccon } => cmd_convert(common, &reccon),
    }
}

/// Writes `body` to `out/name`, or to standard output without `--out`.
fn emit(common: &Common, name: &str, body: &str) -> Result<()> {
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn emit_report<T: Serialize>(common: &Common, name: &str, kind: &str, data: T) -> Result<()> {
    emit(common, name, &Report::new(kind, data).to_json()?)
}

fn load(path: &Path, labels: &EmotionLabels) -> Result<Vec<ConversationSample>> {
    load_dataset(path, labels).with_context(|| format!("loading {}", path.display()))
}

fn labels_of(cfg: &ModelConfig) -> Result<EmotionLabels> {
    Ok(EmotionLabels::new(cfg.labels.clone())?)
}

/// Picks each split from its flag, falling back to the config file.
fn split_paths<const N: usize>(flags: [Option<PathBuf>; N], file: [&Option<PathBuf>; N], names: [&str; N]) -> Result<[PathBuf; N]> {
    let mut out = Vec::with_capacity(N);
    for ((flag, file), name) in flags.into_iter().zip(file).zip(names) {
        match flag.or_else(|| file.clone()) {
            Some(p) => out.push(p),
            None => bail!("missing `--{name}` (or `data.{name}` in the config)"),
        }
    }
    Ok(out.try_into().expect("length N"))
}

/// Tokenizes text-only utterances with a vocabulary fitted on the first
/// split and widens `vocab_size` and `max_history` to fit the data.
fn prepare(splits: &mut [Vec<ConversationSample>], model: &mut ModelConfig) -> Option<Vocab> {
    let needs_vocab = splits
        .iter()
        .flatten()
        .flat_map(|s| &s.utterances)
        .any(|u| u.tokens.is_empty());
    let vocab = needs_vocab.then(|| Vocab::fit_samples(&splits[0], 1));
    if let Some(v) = &vocab {
        for s in splits.iter_mut() {
            v.assign_tokens(s);
        }
        model.vocab_size = v.len();
    } else {
        let max_token = splits
            .iter()
            .flatten()
            .flat_map(|s| &s.utterances)
            .flat_map(|u| &u.tokens)
            .max()
            .map_or(0, |&m| m as usize + 1);
        model.vocab_size = model.vocab_size.max(max_token);
    }
    let longest = splits.iter().flatten().map(|s| s.len()).max().unwrap_or(0);
    model.max_history = model.max_history.max(longest);
    vocab
}

fn load_splits<const N: usize>(cfg: &mut RunConfig, paths: &[PathBuf; N]) -> Result<(Vec<Vec<ConversationSample>>, Option<Vocab>)> {
    let labels = labels_of(&cfg.model)?;
    let mut splits = paths.iter().map(|p| load(p, &labels)).collect::<Result<Vec<_>>>()?;
    let vocab = prepare(&mut splits, &mut cfg.model);
    Ok((splits, vocab))
}

fn cmd_train(common: &Common, overrides: &Overrides, train: Option<PathBuf>, dev: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = resolve(common, overrides)?;
    if common.out.is_none() {
        bail!("train needs `--out DIR` for the checkpoint");
    }
    let paths = split_paths([train, dev], [&cfg.data.train, &cfg.data.dev], ["train", "dev"])?;
    let (splits, vocab) = load_splits(&mut cfg, &paths)?;
    let outcome = train_observed::<f64, _>(&splits[0], &splits[1], &cfg.model, &cfg.train, |r: &EpochRecord| {
        eprintln!(
            "epoch {:3}  loss {:.5}  dev macro F1 {:.4}{}",
            r.epoch,
            r.train_loss,
            r.dev_macro_f1,
            if r.improved { "  *" } else { "" }
        )
    })?;
    let mut checkpoint = outcome.checkpoint;
    checkpoint.vocab = vocab;
    emit(common, "checkpoint.json", &checkpoint.to_json()?)?;
    emit_report(common, "history.json", "history", &outcome.history)?;
    eprintln!(
        "best dev macro F1 {:.4} at epoch {}",
        checkpoint.dev_macro_f1, checkpoint.epoch
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalReport {
    metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    significance: Option<BootstrapResult>,
}

fn load_model(path: &Path, threshold: Option<f64>) -> Result<(tsam::Model64, Option<Vocab>)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let mut model: tsam::Model64 = ckpt.to_model()?;
    if let Some(t) = threshold {
        model.config.threshold = t;
        model.config.validate()?;
    }
    Ok((model, ckpt.vocab))
}

fn cmd_eval(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    baseline: Option<&Path>,
    resamples: usize,
    threshold: Option<f64>,
) -> Result<ExitCode> {
    let (model, vocab) = load_model(checkpoint, threshold)?;
    let mut samples = load(data, &labels_of(&model.config)?)?;
    if let Some(v) = &vocab {
        v.assign_tokens(&mut samples);
    }
    let (metrics, preds) = evaluate(&model, &samples)?;
    let mut report = EvalReport {
        metrics,
        baseline: None,
        significance: None,
    };
    if let Some(path) = baseline {
        let (base, base_vocab) = load_model(path, threshold)?;
        let mut base_samples = load(data, &labels_of(&base.config)?)?;
        if let Some(v) = &base_vocab {
            v.assign_tokens(&mut base_samples);
        }
        let (base_metrics, base_preds) = evaluate(&base, &base_samples)?;
        let gold: Vec<Vec<bool>> = samples.iter().map(|s| s.cause_mask.clone()).collect();
        let a: Vec<Vec<bool>> = preds.into_iter().map(|p| p.labels).collect();
        let b: Vec<Vec<bool>> = base_preds.into_iter().map(|p| p.labels).collect();
        let seed = common.seed.unwrap_or(0);
        report.significance = Some(bootstrap_significance(&gold, &a, &b, resamples, seed)?);
        report.baseline = Some(base_metrics);
    }
    emit_report(common, "metrics.json", "metrics", &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(common: &Common, n: Option<usize>, split: Option<Vec<usize>>) -> Result<ExitCode> {
    let cfg = resolve(common, &Overrides::default())?;
    let mut synth = cfg.synth.clone();
    let seed = cfg.seed();
    match split {
        None => {
            if let Some(n) = n {
                synth.num_conversations = n;
            }
            let data = synth_generate(&synth, seed)?;
            emit(common, "synth.jsonl", &render_dataset(&data)?)?;
        }
        Some(sizes) => {
            if sizes.len() != 3 {
                bail!("`--split` takes three sizes, got {}", sizes.len());
            }
            if common.out.is_none() {
                bail!("`--split` writes three files and needs `--out DIR`");
            }
            synth.num_conversations = sizes.iter().sum();
            let data = synth_generate(&synth, seed)?;
            let mut rest = data.as_slice();
            for (name, size) in ["train", "dev", "test"].into_iter().zip(sizes) {
                let (part, tail) = rest.split_at(size);
                emit(common, &format!("{name}.jsonl"), &render_dataset(part)?)?;
                rest = tail;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GradcheckSummary {
    passed: bool,
    max_rel_error: f64,
    per_layer: BTreeMap<String, f64>,
    checks: Vec<LayerCheck>,
}

fn cmd_gradcheck(common: &Common, seeds: u64) -> Result<ExitCode> {
    let cfg = resolve(common, &Overrides::default())?;
    let start = cfg.seed();
    let mut checks = Vec::new();
    for seed in start..start + seeds.max(1) {
        checks.extend(check_layers(seed, CheckShape::for_seed(seed))?);
    }
    let mut per_layer: BTreeMap<String, f64> = BTreeMap::new();
    for c in &checks {
        let worst = per_layer.entry(c.layer.clone()).or_default();
        *worst = worst.max(c.report.max_rel_error);
    }
    let passed = checks.iter().all(|c| c.report.passed);
    for (layer, err) in &per_layer {
        eprintln!("{layer:10} max relative error {err:.3e}");
    }
    let summary = GradcheckSummary {
        passed,
        max_rel_error: per_layer.values().copied().fold(0.0, f64::max),
        per_layer,
        checks,
    };
    emit_report(common, "gradcheck.json", "gradcheck", &summary)?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_ablate(common: &Common, overrides: &Overrides, flags: [Option<PathBuf>; 3], grid: bool) -> Result<ExitCode> {
    let mut cfg = resolve(common, overrides)?;
    let d = &cfg.data;
    let paths = split_paths(flags, [&d.train, &d.dev, &d.test], ["train", "dev", "test"])?;
    let (splits, _) = load_splits(&mut cfg, &paths)?;
    let rows = ablation_run(&splits[0], &splits[1], &splits[2], &cfg.model, &cfg.train, &ablation_variants(grid))?;
    print!("{}", render_variant_table(&rows));
    if common.out.is_some() {
        emit_report(common, "ablation.json", "ablation", &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    common: &Common,
    overrides: &Overrides,
    flags: [Option<PathBuf>; 2],
    min_layers: usize,
    max_layers: usize,
) -> Result<ExitCode> {
    if min_layers > max_layers {
        bail!("`--min-layers` {min_layers} exceeds `--max-layers` {max_layers}");
    }
    let mut cfg = resolve(common, overrides)?;
    let paths = split_paths(flags, [&cfg.data.train, &cfg.data.dev], ["train", "dev"])?;
    let (splits, _) = load_splits(&mut cfg, &paths)?;
    let layers: Vec<usize> = (min_layers..=max_layers).collect();
    let rows = layer_sweep(&splits[0], &splits[1], &cfg.model, &cfg.train, &layers)?;
    print!("{}", render_sweep_table(&rows));
    if common.out.is_some() {
        emit_report(common, "sweep.json", "sweep", &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SplitStats {
    path: PathBuf,
    stats: DatasetStats,
}

fn cmd_stats(common: &Common, data: &[PathBuf]) -> Result<ExitCode> {
    let cfg = resolve(common, &Overrides::default())?;
    let labels = labels_of(&cfg.model)?;
    let out = data
        .iter()
        .map(|p| {
            Ok(SplitStats {
                path: p.clone(),
                stats: stats(&load(p, &labels)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    emit_report(common, "stats.json", "stats", &out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_convert(common: &Common, reccon: &Path) -> Result<ExitCode> {
    let cfg = resolve(common, &Overrides::default())?;
    let text = fs::read_to_string(reccon).with_context(|| format!("reading {}", reccon.display()))?;
    let samples = tsam::data::reccon::convert_reccon(&text, &labels_of(&cfg.model)?)?;
    let s = stats(&samples);
    eprintln!(
        "{} samples, {} positive and {} negative pairs",
        s.counts.conversations, s.counts.positive, s.counts.negative
    );
    emit(common, "converted.jsonl", &render_dataset(&samples)?)?;
    Ok(ExitCode::SUCCESS)
}
