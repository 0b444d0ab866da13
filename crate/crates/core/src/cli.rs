//! Command-line front end.
//!
//! Configuration precedence, lowest first: built-in defaults, the TOML file
//! given with `--config`, then individual flags (`--seed`, `--steps`,
//! `--fusion`, `--temperature`). Commands that read a checkpoint take the
//! configuration stored in it; their `--seed` only selects sampling noise.
//!
//! Every artifact carries the config hash and seed: checkpoints and logs in
//! their records, reports in a leading comment line or field, spectrogram
//! outputs in a JSON sidecar. Nothing is written outside `--out`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{FusionVariant, RunConfig};
use crate::corpus::{generate_corpus, load_manifest, split_cells, write_manifest, CorpusParams, SignalParams, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::eval::{
    ablate_fusion, consistency_gap, disentanglement, evaluate_synthesis, export_embeddings, format_table, modality_consistency,
    parse_sites, probe_items, to_jsonl, train_style_probe, write_text, Site,
};
use crate::model::{StyleFusionModel, SynthRequest};
use crate::spectrogram;
use crate::train::{Dataset, StepRecord, Trainer};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "STYLEFUSION_THREADS";

/// Syntheses per case in the consistency study run by `eval`.
pub const CONSISTENCY_PER_CASE: usize = 40;

#[derive(Debug, Parser)]
#[command(name = "stylefusion", version, about = "Style- and speaker-controlled text-to-speech at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: manifest, registry and spectrograms.
    GenData(GenDataArgs),
    /// Train a model on the training split of a generated corpus.
    Train(TrainArgs),
    /// Synthesize one utterance from a checkpoint.
    Synth(SynthArgs),
    /// Score a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Train and score every fusion variant under one budget.
    Ablate(AblateArgs),
    /// Dump utterance-level fusion features of the last flow layer.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory (default: `data_dir` of the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub fusion: Option<FusionVariant>,
    /// Output directory (default: `out_dir` of the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    pub checkpoint: PathBuf,
    pub text: String,
    /// Spectrogram file of the target speaker.
    #[arg(long)]
    pub speaker_ref: Option<PathBuf>,
    /// Natural-language style description.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Spectrogram file whose style is transferred.
    #[arg(long)]
    pub style_ref: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Output spectrogram file; a `.json` sidecar is written next to it.
    #[arg(long, default_value = "synth.spec")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Manifest file (default: `data_dir/manifest.jsonl` of the checkpoint's config).
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    pub checkpoint: PathBuf,
    /// Manifest file (default: `data_dir/manifest.jsonl` of the checkpoint's config).
    pub manifest: Option<PathBuf>,
    /// Comma-separated sites: input, post_speaker, post_style.
    #[arg(long, default_value = "input,post_speaker,post_style")]
    pub sites: String,
    #[arg(long, default_value = "embeddings.tsv")]
    pub out: PathBuf,
}

/// The single line printed on failure: `error[<kind>]: <message>`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {msg}", e.kind())
}

/// Single-line form of a command-line parsing error.
pub fn usage_line(e: &clap::Error) -> String {
    let text = e.to_string();
    let msg: Vec<&str> = text
        .lines()
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect();
    let msg = msg.join(" ");
    let msg = msg.trim_start_matches("error: ");
    format!("error[usage]: {}", if msg.is_empty() { "invalid arguments" } else { msg })
}

/// Applies the thread-count override, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
    }
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Ablate(a) => cmd_ablate(&a).map(|_| ()),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(&a).map(|_| ()),
    }
}

pub fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn provenance(cfg: &RunConfig, seed: u64) -> String {
    format!("config_hash {} seed {}", cfg.hash(), seed)
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    notes: Vec<String>,
}

fn write_run_files(dir: &Path, cfg: &RunConfig, info: &RunInfo<'_>) -> Result<()> {
    write_text(&dir.join("config.toml"), &format!("# {}\n{}", provenance(cfg, cfg.seed), cfg.to_toml_string()))?;
    write_text(&dir.join("run.json"), &(serde_json::to_string_pretty(info)? + "\n"))
}

/// Writes the corpus and returns the output directory.
pub fn cmd_gen_data(args: &GenDataArgs) -> Result<PathBuf> {
    let cfg = load_config(&args.cfg)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let params = CorpusParams {
        speakers: cfg.speakers,
        styles: cfg.styles,
        utterances_per_cell: cfg.utterances_per_cell,
        seed: cfg.seed,
        signal: SignalParams { sample_rate: cfg.sample_rate, n_fft: cfg.n_fft, hop: cfg.hop },
    };
    let corpus = generate_corpus(&params);
    write_manifest(&out, &corpus.manifest, Some(&corpus.utterances))?;
    write_run_files(
        &out,
        &cfg,
        &RunInfo { command: "gen-data", config_hash: cfg.hash(), seed: cfg.seed, steps: None, notes: corpus.warnings.clone() },
    )?;
    log::info!("wrote {} utterances to {}", corpus.utterances.len(), out.display());
    Ok(out)
}

/// Loads a manifest and splits it into (train, held-out) datasets.
pub fn load_split(manifest_path: &Path, cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    if !manifest_path.exists() {
        return Err(Error::MissingInput(format!("manifest {} (run gen-data first)", manifest_path.display())));
    }
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let utterances = manifest.materialize(base)?;
    if let Some(u) = utterances.iter().find(|u| u.spectrogram.cols() != cfg.n_bins()) {
        return Err(Error::BinMismatch { expected: cfg.n_bins(), got: u.spectrogram.cols() });
    }
    let (tr, ho) = split_cells(&utterances, cfg.heldout_per_cell);
    let all = Dataset::new(utterances, &manifest.registry)?;
    Ok((all.subset(&tr), all.subset(&ho)))
}

fn manifest_of(cfg: &RunConfig) -> PathBuf {
    cfg.data_dir.join(MANIFEST_FILE)
}

#[derive(Serialize)]
struct LogLine<'a> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a StepRecord,
}

/// Trains and returns the output directory holding `model.ckpt` and
/// `train_log.jsonl`.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let mut cfg = load_config(&args.cfg)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(f) = args.fusion {
        cfg.fusion = f;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let (train, _) = load_split(&manifest_of(&cfg), &cfg)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_run_files(
        &out,
        &cfg,
        &RunInfo { command: "train", config_hash: cfg.hash(), seed: cfg.seed, steps: Some(cfg.steps), notes: vec![] },
    )?;

    let log_path = out.join("train_log.jsonl");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let hash = cfg.hash();
    let mut trainer = Trainer::new(&cfg)?;
    let mut write_err = None;
    trainer.train(&train, cfg.steps, |r| {
        let line = LogLine { config_hash: &hash, seed: cfg.seed, record: r };
        let res = serde_json::to_writer(&mut log, &line)
            .map_err(Error::from)
            .and_then(|_| log.write_all(b"\n").map_err(|e| Error::io(&log_path, e)));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
        if r.step % 100 == 0 {
            log::info!("step {} total {:.4} recon {:.4}", r.step, r.losses.total, r.losses.recon);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Checkpoint::new(&cfg, trainer.store.clone(), Some(trainer.adam.clone()), trainer.step).save(&out.join("model.ckpt"))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SynthInfo {
    pub config_hash: String,
    pub seed: u64,
    pub temperature: f64,
    pub text: String,
    pub prompt: Option<String>,
    pub style_ref: Option<String>,
    pub speaker_ref: String,
    pub frames: usize,
    pub durations: Vec<usize>,
}

/// Synthesizes and returns the sidecar description of the output.
pub fn cmd_synth(args: &SynthArgs) -> Result<SynthInfo> {
    let speaker_ref = args.speaker_ref.as_ref().ok_or_else(|| Error::MissingInput("--speaker-ref is required".into()))?;
    if args.prompt.is_none() && args.style_ref.is_none() {
        return Err(Error::MissingInput("one of --prompt or --style-ref is required".into()));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let cfg = &ck.meta.config;
    let seed = args.seed.unwrap_or(cfg.seed);
    let temperature = args.temperature.unwrap_or(cfg.temperature);
    let spk = spectrogram::read(speaker_ref)?;
    let style = args.style_ref.as_ref().map(|p| spectrogram::read(p)).transpose()?;
    for s in std::iter::once(&spk).chain(style.as_ref()) {
        if s.cols() != cfg.n_bins() {
            return Err(Error::BinMismatch { expected: cfg.n_bins(), got: s.cols() });
        }
    }
    let out = model.synthesize(
        &ck.store,
        &SynthRequest {
            text: &args.text,
            speaker_ref: &spk,
            prompt: args.prompt.as_deref(),
            style_ref: style.as_ref(),
            seed,
            temperature,
            gate: None,
        },
    )?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    spectrogram::write(&args.out, &out.spectrogram)?;
    let info = SynthInfo {
        config_hash: ck.meta.config_hash.clone(),
        seed,
        temperature,
        text: args.text.clone(),
        prompt: args.prompt.clone(),
        style_ref: args.style_ref.as_ref().map(|p| p.display().to_string()),
        speaker_ref: speaker_ref.display().to_string(),
        frames: out.spectrogram.rows(),
        durations: out.durations,
    };
    write_text(&sidecar(&args.out), &(serde_json::to_string_pretty(&info)? + "\n"))?;
    Ok(info)
}

/// `<out>.json`.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn f(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

/// Writes `metrics.txt`/`metrics.jsonl`, `disentanglement.json` and
/// `consistency.txt`/`consistency.jsonl` under `out`.
pub fn cmd_eval(args: &EvalArgs) -> Result<PathBuf> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let cfg = &ck.meta.config;
    let seed = args.seed.unwrap_or(cfg.seed);
    let manifest = args.manifest.clone().unwrap_or_else(|| manifest_of(cfg));
    let (train, held) = load_split(&manifest, cfg)?;
    let tag = provenance(cfg, seed);

    let probe = train_style_probe(&train, cfg.styles)?;
    let probe_acc = probe.accuracy(&probe_items(&held))?;
    let report = evaluate_synthesis(&model, &ck.store, &held, &probe, seed)?;
    let mut rows: Vec<Vec<String>> = report
        .breakdown
        .iter()
        .map(|m| vec![m.id.clone(), f(m.mcd, 3), f(m.secs, 4), m.intended_style.to_string(), m.predicted_style.to_string()])
        .collect();
    rows.push(vec!["mean".into(), f(report.mcd, 3), f(report.secs, 4), String::new(), format!("EMO-Acc {}", f(report.emo_acc, 1))]);
    let table = format_table(&["utterance", "MCD", "SECS", "intended", "predicted"], &rows);
    write_text(&args.out.join("metrics.txt"), &format!("# {tag} probe_heldout_acc {}\n{table}", f(probe_acc, 1)))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config_hash: &'a str,
        seed: u64,
        mcd: f64,
        secs: f64,
        emo_acc: f64,
        probe_heldout_acc: f64,
    }
    let summary = Summary {
        config_hash: &ck.meta.config_hash,
        seed,
        mcd: report.mcd,
        secs: report.secs,
        emo_acc: report.emo_acc,
        probe_heldout_acc: probe_acc,
    };
    write_text(&args.out.join("metrics.jsonl"), &(serde_json::to_string(&summary)? + "\n" + &to_jsonl(&report.breakdown)?))?;

    let d = disentanglement(&model, &ck.store, &train, &held)?;
    #[derive(Serialize)]
    struct Tagged<'a, T: Serialize> {
        config_hash: &'a str,
        seed: u64,
        #[serde(flatten)]
        value: &'a T,
    }
    write_text(
        &args.out.join("disentanglement.json"),
        &(serde_json::to_string_pretty(&Tagged { config_hash: &ck.meta.config_hash, seed, value: &d })? + "\n"),
    )?;

    let styles = &train_registry_styles(&manifest)?;
    let valences: Vec<_> = styles.iter().map(|s| s.valence).collect();
    let names: Vec<String> = styles.iter().map(|s| s.style_name.clone()).collect();
    let cases = modality_consistency(&model, &ck.store, &held, &valences, &names, &probe, CONSISTENCY_PER_CASE, seed)?;
    let mut rows: Vec<Vec<String>> = cases.iter().map(|c| vec![c.label.clone(), c.n.to_string(), f(c.emo_acc, 1)]).collect();
    rows.push(vec!["consistent minus contradictory".into(), String::new(), f(consistency_gap(&cases), 1)]);
    write_text(&args.out.join("consistency.txt"), &format!("# {tag}\n{}", format_table(&["case", "n", "EMO-Acc"], &rows)))?;
    write_text(&args.out.join("consistency.jsonl"), &to_jsonl(&cases)?)?;
    Ok(args.out.clone())
}

fn train_registry_styles(manifest: &Path) -> Result<Vec<crate::corpus::StyleSpec>> {
    let m = load_manifest(manifest)?;
    if m.registry.styles.is_empty() {
        return Err(Error::MissingInput(format!("style registry next to {}", manifest.display())));
    }
    Ok(m.registry.styles)
}

/// Writes `ablation.txt` and `ablation.jsonl` under `out`.
pub fn cmd_ablate(args: &AblateArgs) -> Result<PathBuf> {
    let mut cfg = load_config(&args.cfg)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let (train, held) = load_split(&manifest_of(&cfg), &cfg)?;
    let rows = ablate_fusion(&cfg, &FusionVariant::ALL, &train, &held, cfg.steps)?;
    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.fusion.name().to_string(), f(r.mcd, 3), f(r.secs, 4), f(r.emo_acc, 1), f(r.reference_secs, 3)])
        .collect();
    let table = format_table(&["fusion", "MCD", "SECS", "EMO-Acc", "reference SECS"], &table_rows);
    let tag = format!("{} steps {}", provenance(&cfg, cfg.seed), cfg.steps);
    write_text(&args.out.join("ablation.txt"), &format!("# {tag}\n{table}"))?;
    write_text(
        &args.out.join("ablation.jsonl"),
        &format!("{{\"config_hash\":\"{}\",\"seed\":{},\"steps\":{}}}\n{}", cfg.hash(), cfg.seed, cfg.steps, to_jsonl(&rows)?),
    )?;
    Ok(args.out.clone())
}

/// Writes the embedding dump and returns its row count.
pub fn cmd_export_embeddings(args: &ExportArgs) -> Result<usize> {
    let sites: Vec<Site> = parse_sites(&args.sites)?;
    if sites.is_empty() {
        return Err(Error::MissingInput("--sites lists no site".into()));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model: StyleFusionModel = ck.model()?;
    let cfg = &ck.meta.config;
    let manifest_path = args.manifest.clone().unwrap_or_else(|| manifest_of(cfg));
    let manifest = load_manifest(&manifest_path)?;
    let utterances = manifest.materialize(manifest_path.parent().unwrap_or(Path::new(".")))?;
    let dump = export_embeddings(&model, &ck.store, &utterances, &sites)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    dump.write_tsv(&args.out, &provenance(cfg, cfg.seed))?;
    Ok(dump.rows.len())
}
