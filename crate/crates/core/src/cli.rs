//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on domain errors, 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::{info, warn};
use sha2::{Digest, Sha256};

use crate::autodiff::Tape;
use crate::data::{
    char_frequency, make_split, mix_seed, pad_signals, stable_hash, write_dataset, CharFrequency,
    SampleRecord, SplitKind, SplitSpec, SynthConfig, Vocabulary, DEFAULT_CHANNELS,
};
use crate::model::{read_checkpoint, write_checkpoint, ModelBundle};
use crate::negatives::{generate_negatives, ErrorSetConfig};
use crate::nn::Ctx;
use crate::trainer::{
    ablation_sweep, arch_grid, epochs_csv, error_set_grid, evaluate, steps_csv, sweep_csv, train,
    ConfigDelta, TrainConfig,
};

type AnyError = Box<dyn std::error::Error>;

#[derive(Debug, Parser)]
#[command(
    name = "echwr",
    version,
    about = "Contrastively regularized CTC training for pen-IMU handwriting"
)]
pub struct Cli {
    /// Training config file of `key = value` lines; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving all artifacts and the manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Log filter (error, warn, info, debug, trace); falls back to ECHWR_LOG.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-writer dataset.
    Synth(SynthArgs),
    /// Split a dataset writer-dependently (by word) or writer-independently.
    Split(SplitArgs),
    /// Per-character frequency table for a train/validation pair.
    Stats(StatsArgs),
    /// Distance-1 corruptions of every line of a transcript file.
    GenNegatives(GenNegativesArgs),
    /// Train a recognizer; writes checkpoints, metrics and an inference model.
    Train(TrainArgs),
    /// Greedy-decode a dataset and report CER/WER.
    Eval(EvalArgs),
    /// Train a grid of config variants on one split.
    Sweep(SweepArgs),
    /// Strip the alignment branch from a checkpoint.
    Export(ExportArgs),
    /// Dump sensor, text and negative embeddings as TSV.
    ExportEmbeddings(EmbeddingArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of random lowercase words.
    #[arg(long, default_value_t = 20)]
    pub words: usize,
    /// Newline-separated word list; replaces the random words.
    #[arg(long, value_name = "FILE")]
    pub word_list: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub writers: usize,
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    /// Signal channels per frame.
    #[arg(long, default_value_t = DEFAULT_CHANNELS)]
    pub channels: usize,
    /// Output file name inside the out dir.
    #[arg(long, default_value = "dataset.echw")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset to split.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// wd: hold out words; wi: hold out writers.
    #[arg(long, default_value = "wd")]
    pub kind: SplitKind,
    /// Fraction of words or writers sent to validation.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub val: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenNegativesArgs {
    /// One transcript per line.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Error sets per transcript; each holds a deletion, an insertion and a substitution.
    #[arg(long, default_value_t = 2)]
    pub sets: usize,
}

/// Flags that override config-file values.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// Active terms, e.g. ctc,bc,ec.
    #[arg(long)]
    pub objectives: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub lr_primary: Option<f64>,
    #[arg(long)]
    pub lr_aux: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Error sets S; the error-contrastive term sees 3S negatives per sample.
    #[arg(long)]
    pub error_sets: Option<usize>,
    /// layer or rms.
    #[arg(long)]
    pub norm_kind: Option<String>,
    /// Gated attention in the alignment branch (true/false).
    #[arg(long)]
    pub gated: Option<bool>,
    #[arg(long)]
    pub num_registers: Option<usize>,
    /// Recognizer size preset, S or B.
    #[arg(long)]
    pub preset: Option<String>,
    /// Keep the first epoch's negatives for the whole run.
    #[arg(long)]
    pub freeze_negatives: bool,
    /// Any other config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<(), AnyError> {
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        push("objectives", self.objectives.clone());
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("warmup_epochs", self.warmup_epochs.map(|v| v.to_string()));
        push("lr_primary", self.lr_primary.map(|v| v.to_string()));
        push("lr_aux", self.lr_aux.map(|v| v.to_string()));
        push("weight_decay", self.weight_decay.map(|v| v.to_string()));
        push("error_sets", self.error_sets.map(|v| v.to_string()));
        push("norm_kind", self.norm_kind.clone());
        push("gated", self.gated.map(|v| v.to_string()));
        push("num_registers", self.num_registers.map(|v| v.to_string()));
        push("preset", self.preset.clone());
        if self.freeze_negatives {
            pairs.push(("freeze_negatives", "true".into()));
        }
        for (k, v) in pairs {
            cfg.set(k, &v)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects key=value, got {kv:?}"))?;
            cfg.set(k, v)?;
        }
        Ok(())
    }
}

/// Either explicit train/val files or one dataset split on the fly.
#[derive(Debug, Args)]
pub struct SplitSource {
    #[arg(long, value_name = "FILE", requires = "val", conflicts_with = "data")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "train")]
    pub val: Option<PathBuf>,
    /// Single dataset, split with --split-kind and --holdout.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// wd or wi, used with --data.
    #[arg(long, default_value = "wd")]
    pub split_kind: SplitKind,
    /// Held-out fraction, used with --data.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: SplitSource,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint or exported inference model.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Label for the split column.
    #[arg(long, default_value = "val")]
    pub split_name: String,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Also write per-sample predictions.
    #[arg(long)]
    pub predictions: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SplitSource,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// arch (norm × gating/registers × objectives) or error-sets (S = 1..3).
    #[arg(long, default_value = "arch")]
    pub grid: String,
    /// Custom variant `key=value;key=value`; repeatable, replaces --grid.
    #[arg(long, value_name = "DELTA")]
    pub variant: Vec<String>,
    /// Output file name inside the out dir.
    #[arg(long, default_value = "sweep.csv")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Full checkpoint including the alignment branch.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Error sets of negatives to embed per sample (0 for none).
    #[arg(long, default_value_t = 0)]
    pub sets: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "embeddings.tsv")]
    pub output: String,
}

/// clap command tree, for help audits.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Artifacts of one command plus the manifest describing them.
struct Outputs {
    dir: PathBuf,
    verb: &'static str,
    lines: Vec<String>,
    files: Vec<(String, Vec<u8>)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Outputs {
    fn new(dir: &Path, verb: &'static str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            verb,
            lines: Vec::new(),
            files: Vec::new(),
        }
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    fn input(&mut self, path: &Path) -> Result<Vec<u8>, AnyError> {
        let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.lines.push(format!(
            "input {} sha256 {}",
            path.display(),
            sha256_hex(&bytes)
        ));
        Ok(bytes)
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn finish(self) -> Result<(), AnyError> {
        fs::create_dir_all(&self.dir).map_err(|e| format!("{}: {e}", self.dir.display()))?;
        let mut manifest = format!(
            "command = {}\nversion = {}\n",
            self.verb,
            env!("CARGO_PKG_VERSION")
        );
        for l in &self.lines {
            manifest.push_str(l);
            manifest.push('\n');
        }
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
            let _ = writeln!(
                manifest,
                "artifact {name} sha256 {} bytes {}",
                sha256_hex(bytes),
                bytes.len()
            );
            info!("wrote {}", path.display());
        }
        let path = self.dir.join(format!("{}.manifest", self.verb));
        fs::write(&path, manifest).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(())
    }
}

fn load(out: &mut Outputs, path: &Path) -> Result<(Vec<SampleRecord>, usize), AnyError> {
    let bytes = out.input(path)?;
    Ok(crate::data::read_dataset(&bytes).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn load_model(out: &mut Outputs, path: &Path) -> Result<ModelBundle, AnyError> {
    let bytes = out.input(path)?;
    Ok(read_checkpoint(&bytes).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn resolve_config(
    cli: &Cli,
    overrides: &TrainOverrides,
    out: &mut Outputs,
) -> Result<TrainConfig, AnyError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &cli.config {
        let text = String::from_utf8(out.input(path)?)?;
        cfg.apply_text(&text)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    overrides.apply(&mut cfg)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    for line in cfg.to_text().lines() {
        out.lines.push(format!("config.{line}"));
    }
    Ok(cfg)
}

fn split_source(
    src: &SplitSource,
    seed: u64,
    out: &mut Outputs,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>), AnyError> {
    match (&src.train, &src.val, &src.data) {
        (Some(t), Some(v), None) => Ok((load(out, t)?.0, load(out, v)?.0)),
        (None, None, Some(d)) => {
            let (records, _) = load(out, d)?;
            let spec = SplitSpec {
                kind: src.split_kind,
                holdout_fraction: src.holdout,
                seed,
            };
            out.note("split.kind", spec.kind);
            out.note("split.holdout", spec.holdout_fraction);
            Ok(make_split(&records, &spec)?)
        }
        _ => Err("give either --train and --val, or --data".into()),
    }
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "synth");
    let seed = cli.seed.unwrap_or(0);
    let words = match &a.word_list {
        Some(p) => String::from_utf8(out.input(p)?)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => SynthConfig::random_words(a.words, seed),
    };
    let cfg = SynthConfig {
        words,
        writers: a.writers,
        samples: a.samples,
        channels: a.channels,
        seed,
    };
    let records = crate::data::synth_generate(&cfg)?;
    out.note("seed", seed);
    out.note("words", cfg.words.join(" "));
    out.note("writers", cfg.writers);
    out.note("samples", cfg.samples);
    out.note("channels", cfg.channels);
    out.add(&a.output, write_dataset(&records, cfg.channels)?);
    out.finish()
}

fn cmd_split(cli: &Cli, a: &SplitArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "split");
    let (records, channels) = load(&mut out, &a.data)?;
    let spec = SplitSpec {
        kind: a.kind,
        holdout_fraction: a.holdout,
        seed: cli.seed.unwrap_or(0),
    };
    let (train_set, val) = make_split(&records, &spec)?;
    out.note("seed", spec.seed);
    out.note("kind", spec.kind);
    out.note("holdout", spec.holdout_fraction);
    out.note("train_samples", train_set.len());
    out.note("val_samples", val.len());
    out.add("train.echw", write_dataset(&train_set, channels)?);
    out.add("val.echw", write_dataset(&val, channels)?);
    out.finish()
}

fn cmd_stats(cli: &Cli, a: &StatsArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "stats");
    let (train_set, _) = load(&mut out, &a.train)?;
    let (val, _) = load(&mut out, &a.val)?;
    let all: Vec<SampleRecord> = train_set.iter().chain(&val).cloned().collect();
    let vocab = Vocabulary::from_records(&all);
    let freq = CharFrequency::new(vocab.chars(), &train_set, &val);
    let missing: String = freq.missing_in_val().into_iter().collect();
    if !missing.is_empty() {
        warn!("characters absent from validation: {missing:?}");
    }
    out.note("train_chars", char_frequency(&train_set).total());
    out.note("val_chars", char_frequency(&val).total());
    out.note("missing_in_val", format!("{missing:?}"));
    out.add("char_stats.csv", freq.to_csv().into_bytes());
    out.finish()
}

fn cmd_gen_negatives(cli: &Cli, a: &GenNegativesArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "gen-negatives");
    let text = String::from_utf8(out.input(&a.input)?)?;
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let vocab = Vocabulary::from_transcripts(lines.iter().copied());
    let seed = cli.seed.unwrap_or(0);
    let cfg = ErrorSetConfig::new(a.sets, vocab.ids(), seed);
    let mut tsv = String::new();
    for line in &lines {
        let truth = vocab.encode(line)?;
        let negs = generate_negatives(&truth, &cfg.with_seed(seed ^ stable_hash(line)))
            .map_err(|e| format!("{line:?}: {e}"))?;
        for n in negs {
            let _ = writeln!(
                tsv,
                "{line}\t{}\t{}",
                n.kind.as_str(),
                vocab.decode(&n.seq)?
            );
        }
    }
    out.note("seed", seed);
    out.note("sets", a.sets);
    out.add("negatives.tsv", tsv.into_bytes());
    out.finish()
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "train");
    let cfg = resolve_config(cli, &a.overrides, &mut out)?;
    let (train_set, val) = split_source(&a.source, cfg.seed, &mut out)?;
    out.note("train_samples", train_set.len());
    out.note("val_samples", val.len());
    let res = train(&train_set, &val, &cfg)?;
    out.note("best_epoch", res.best_epoch);
    out.note("best_val_cer", res.best_record().val_cer);
    out.note("best_val_wer", res.best_record().val_wer);
    out.add("config.cfg", cfg.to_text().into_bytes());
    out.add("checkpoint.ckpt", write_checkpoint(&res.best, true));
    out.add("last.ckpt", write_checkpoint(&res.last, true));
    out.add("model.ckpt", write_checkpoint(&res.best, false));
    out.add("steps.csv", steps_csv(&res.steps).into_bytes());
    out.add("epochs.csv", epochs_csv(&res.epochs).into_bytes());
    out.finish()
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "eval");
    let bundle = load_model(&mut out, &a.model)?;
    let (records, _) = load(&mut out, &a.data)?;
    let res = evaluate(&bundle, &records, a.batch_size)?;
    out.add(
        "eval.csv",
        format!(
            "split,n_samples,CER,WER\n{},{},{},{}\n",
            a.split_name, res.n_samples, res.cer, res.wer
        )
        .into_bytes(),
    );
    if a.predictions {
        let mut tsv = String::from("sample_id\treference\tprediction\n");
        for (r, p) in records.iter().zip(&res.predictions) {
            let _ = writeln!(tsv, "{}\t{}\t{p}", r.sample_id, r.transcript);
        }
        out.add("predictions.tsv", tsv.into_bytes());
    }
    println!(
        "{}: n={} CER={:.4} WER={:.4}",
        a.split_name, res.n_samples, res.cer, res.wer
    );
    out.finish()
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "sweep");
    let base = resolve_config(cli, &a.overrides, &mut out)?;
    let (train_set, val) = split_source(&a.source, base.seed, &mut out)?;
    let grid = if a.variant.is_empty() {
        match a.grid.as_str() {
            "arch" => arch_grid(),
            "error-sets" => error_set_grid(),
            other => {
                return Err(format!("unknown grid {other:?} (expected arch or error-sets)").into())
            }
        }
    } else {
        a.variant
            .iter()
            .map(|v| ConfigDelta::parse(v))
            .collect::<Result<_, _>>()?
    };
    for (i, d) in grid.iter().enumerate() {
        let desc: Vec<String> = d.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.note(&format!("variant.{i}"), desc.join(";"));
    }
    let rows = ablation_sweep(&train_set, &val, &base, &grid)?;
    out.add(&a.output, sweep_csv(&rows).into_bytes());
    out.finish()
}

fn cmd_export(cli: &Cli, a: &ExportArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "export");
    let bundle = load_model(&mut out, &a.checkpoint)?;
    out.add(&a.output, write_checkpoint(&bundle, false));
    out.finish()
}

fn push_rows(tsv: &mut String, kind: &str, id: &str, text: &str, row: &[f64]) {
    tsv.push_str(kind);
    tsv.push('\t');
    tsv.push_str(id);
    tsv.push('\t');
    tsv.push_str(text);
    for v in row {
        let _ = write!(tsv, "\t{v}");
    }
    tsv.push('\n');
}

fn cmd_export_embeddings(cli: &Cli, a: &EmbeddingArgs) -> Result<(), AnyError> {
    let mut out = Outputs::new(&cli.out_dir, "export-embeddings");
    let bundle = load_model(&mut out, &a.checkpoint)?;
    let aux = bundle.aux.as_ref().ok_or(
        "checkpoint has no alignment branch (exported inference models cannot embed text)",
    )?;
    let (records, _) = load(&mut out, &a.data)?;
    let seed = cli.seed.unwrap_or(0);
    let error_cfg =
        (a.sets > 0).then(|| ErrorSetConfig::new(a.sets, bundle.vocab.ids(), mix_seed(seed, 21)));
    let indices: Vec<usize> = (0..records.len()).collect();
    let mut tsv = String::new();
    for chunk in indices.chunks(a.batch_size.max(1)) {
        let batch = crate::data::collate(&records, chunk, &bundle.vocab, error_cfg.as_ref())?;
        let (signals, lengths) = pad_signals(&records, chunk)?;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &bundle.store);
        let s = bundle
            .sensor
            .forward(&ctx, tape.constant(signals), &lengths)?;
        let al = aux.align_batch(
            &ctx,
            s.features,
            &s.out_lengths,
            &batch.labels,
            &batch.negatives,
        )?;
        let c = al.c_sig.value();
        let z = al.z_text.value();
        let d = c.shape()[1];
        for (k, &i) in chunk.iter().enumerate() {
            let r = &records[i];
            push_rows(
                &mut tsv,
                "sensor",
                &r.sample_id,
                &r.transcript,
                &c.data()[k * d..(k + 1) * d],
            );
            push_rows(
                &mut tsv,
                "text",
                &r.sample_id,
                &r.transcript,
                &z.data()[k * d..(k + 1) * d],
            );
            for (j, neg) in batch.negatives[k].iter().enumerate() {
                let row = al.n + k * al.m + j;
                let text = bundle.vocab.decode(neg)?;
                push_rows(
                    &mut tsv,
                    "negative",
                    &r.sample_id,
                    &text,
                    &z.data()[row * d..(row + 1) * d],
                );
            }
        }
    }
    out.note("seed", seed);
    out.note("sets", a.sets);
    out.add(&a.output, tsv.into_bytes());
    out.finish()
}

fn init_logging(level: Option<&str>) {
    let mut b = env_logger::Builder::new();
    b.filter_level(log::LevelFilter::Warn);
    match level {
        Some(l) => {
            b.parse_filters(l);
        }
        None => {
            if let Ok(l) = std::env::var("ECHWR_LOG") {
                b.parse_filters(&l);
            }
        }
    }
    b.format_timestamp(None);
    let _ = b.try_init();
}

fn dispatch(cli: &Cli) -> Result<(), AnyError> {
    if cli.config.is_some() && !matches!(cli.command, Command::Train(_) | Command::Sweep(_)) {
        warn!("--config only affects train and sweep; ignored");
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Split(a) => cmd_split(cli, a),
        Command::Stats(a) => cmd_stats(cli, a),
        Command::GenNegatives(a) => cmd_gen_negatives(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Export(a) => cmd_export(cli, a),
        Command::ExportEmbeddings(a) => cmd_export_embeddings(cli, a),
    }
}

/// Parse `argv` and run the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.log_level.as_deref());
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
