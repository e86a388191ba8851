//! The `measured` command line: argument definitions, config-file merging
//! and one function per subcommand.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{load_model, save_model};
use crate::dataset::{ingest_jsonl, read_examples, split, stats, write_examples, DatasetSplit, MeasurementExample};
use crate::encoder::{export_embeddings, EncoderConfig, HashedEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, Probe};
use crate::fewshot::{self, FewshotConfig};
use crate::model::{Model, ModelSpec, NumberReadout, Prediction, Variant};
use crate::seed::derive_seed;
use crate::synth::{generate, SynthConfig};
use crate::training::{train, SelectionMetric, TrainConfig, Weighting};
use crate::units::UnitRegistry;

#[derive(Debug, Parser)]
#[command(name = "measured", version, about = "Masked measurement prediction: units, dimensions and numbers in text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Canonicalize a raw JSONL corpus and report dropped records
    Ingest(IngestArgs),
    /// Generate a synthetic JSONL corpus
    Synth(SynthArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a JSON report
    Eval(EvalArgs),
    /// Predict dimension, unit and number for masked sentences
    Predict(PredictArgs),
    /// Run the few-shot grid with frozen and trainable encoders
    Fewshot(FewshotArgs),
    /// Write hidden representations of a corpus as TSV
    Export(ExportArgs),
    /// Corpus statistics, or a registry summary without --data
    Stats(StatsArgs),
}

#[derive(Clone, Debug, Args)]
pub struct Shared {
    /// Unit registry file [default: built-in registry]
    #[arg(long, value_name = "PATH")]
    pub registry: Option<PathBuf>,
    /// Master seed; component seeds are derived from it
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// File of key=value lines using flag names; command-line flags win
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct SplitArgs {
    /// Train, validation and test fractions
    #[arg(long, value_name = "A,B,C", default_value = "0.8,0.1,0.1")]
    pub split_ratios: String,
}

#[derive(Clone, Debug, Args)]
pub struct EncoderArgs {
    /// Hash buckets of the n-gram featurizer
    #[arg(long, value_name = "N", default_value_t = 1 << 14)]
    pub feature_dim: usize,
    /// Width of the hidden representation
    #[arg(long, value_name = "N", default_value_t = 128)]
    pub hidden_dim: usize,
    /// Seed of the n-gram hash
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub hash_seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct OptimArgs {
    /// Examples per gradient step
    #[arg(long, value_name = "N", default_value_t = 200)]
    pub batch_size: usize,
    /// Upper bound on training epochs
    #[arg(long, value_name = "N", default_value_t = 100)]
    pub max_epochs: usize,
    /// Base learning rate [default: 1e-4, or 1e-3 with --frozen]
    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,
    /// Steps of linear learning-rate warmup
    #[arg(long, value_name = "N", default_value_t = 500)]
    pub warmup_steps: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub patience: usize,
    /// uniform or log-frequency [default: log-frequency with --frozen]
    #[arg(long, value_name = "W")]
    pub weighting: Option<Weighting>,
    /// joint-nll, macro-f1 or log-mae [default: depends on the variant]
    #[arg(long, value_name = "M")]
    pub selection_metric: Option<SelectionMetric>,
    /// Decoupled weight decay coefficient
    #[arg(long, value_name = "X", default_value_t = 0.01)]
    pub weight_decay: f64,
}

impl OptimArgs {
    fn config(&self, frozen: bool, seed: u64) -> TrainConfig {
        let base = if frozen {
            TrainConfig::frozen()
        } else {
            TrainConfig::default()
        };
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            warmup_steps: self.warmup_steps,
            patience: self.patience,
            seed,
            weighting: self.weighting.unwrap_or(base.weighting),
            selection_metric: self.selection_metric,
            weight_decay: self.weight_decay,
            ..base
        }
    }
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct IngestArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Raw JSONL: {"text", "number", "unit"} or {"text"} holding a convert template
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Number of examples
    #[arg(long, value_name = "N", default_value_t = 7000)]
    pub n: usize,
    /// Comma-separated dimension names [default: seven common dimensions]
    #[arg(long, value_name = "LIST")]
    pub dimensions: Option<String>,
    /// Comma-separated units to draw from [default: 2 to 4 per dimension]
    #[arg(long, value_name = "LIST")]
    pub units: Option<String>,
    /// Probability of a dimension cue word
    #[arg(long, value_name = "P", default_value_t = 0.7)]
    pub dim_cue_prob: f64,
    /// Probability of a unit cue word
    #[arg(long, value_name = "P", default_value_t = 0.3)]
    pub unit_cue_prob: f64,
    /// Per-unit log10 location and scale of the canonical value, e.g. km=4.6,0.3
    #[arg(long, value_name = "UNIT=LOC,SCALE")]
    pub unit_magnitude: Vec<String>,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Canonical JSONL corpus
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// gemm, gemm-uy, disc-d, disc-du, gen-yd, disc-y or lat-dim
    #[arg(long, value_name = "V", default_value = "gemm")]
    pub variant: Variant,
    /// Keep the encoder projection fixed and train heads only
    #[arg(long)]
    pub frozen: bool,
    /// argmax-dimension or marginal (GeMM number readout)
    #[arg(long, value_name = "R", default_value = "argmax-dimension")]
    pub number_readout: String,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Start from this checkpoint's parameters
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    /// Training history JSONL [default: <out>.history.jsonl]
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Model checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Canonical JSONL corpus; split with the same seed and ratios as training
    /// Canonical JSONL corpus
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Comma-separated probes [default: every probe the variant supports]
    #[arg(long, value_name = "LIST")]
    pub probes: Option<String>,
    /// Which split to evaluate: train, val, test or all
    #[arg(long, value_name = "S", default_value = "test")]
    pub on: String,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Also write one CSV per table into this directory
    #[arg(long, value_name = "DIR")]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct PredictArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Model checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// One masked sentence per line [default: stdin]
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct FewshotArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Canonical JSONL corpus
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Comma-separated variants
    #[arg(long, value_name = "LIST", default_value = "disc-d,disc-y")]
    pub variants: String,
    /// Comma-separated examples-per-dimension values
    #[arg(long, value_name = "LIST", default_value = "10,40,70,100")]
    pub ks: String,
    /// Repetitions per cell
    #[arg(long, value_name = "N", default_value_t = 3)]
    pub seeds: usize,
    /// Learning rate of frozen runs [default: 1e-3]
    #[arg(long, value_name = "LR")]
    pub frozen_learning_rate: Option<f64>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct ExportArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Model checkpoint written by `train`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Canonical JSONL corpus
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
}

#[derive(Clone, Debug, Args)]
#[command(args_override_self = true)]
pub struct StatsArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Canonical JSONL corpus
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

impl Command {
    fn shared(&self) -> &Shared {
        match self {
            Command::Ingest(a) => &a.shared,
            Command::Synth(a) => &a.shared,
            Command::Train(a) => &a.shared,
            Command::Eval(a) => &a.shared,
            Command::Predict(a) => &a.shared,
            Command::Fewshot(a) => &a.shared,
            Command::Export(a) => &a.shared,
            Command::Stats(a) => &a.shared,
        }
    }
}

/// Turns `key=value` lines into flags for `subcommand`. Blank lines and
/// lines starting with `#` are skipped; booleans take `true` or `false`.
pub fn config_to_args(text: &str, subcommand: &str) -> Result<Vec<OsString>> {
    let root = Cli::command();
    let cmd = root
        .find_subcommand(subcommand)
        .ok_or_else(|| Error::Config(format!("unknown subcommand {subcommand:?}")))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key) && key != "config")
            .ok_or_else(|| Error::Config(format!("config line {}: unknown key {key:?} for {subcommand}", n + 1)))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(Error::Config(format!("config line {}: {key} takes true or false", n + 1))),
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    Ok(out)
}

/// Parses `argv`, folding in the `--config` file if one is given.
pub fn parse<I, T>(argv: I) -> std::result::Result<Cli, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let first = Cli::try_parse_from(&argv).map_err(CliError::Clap)?;
    let Some(config) = first.command.shared().config.clone() else {
        return Ok(first);
    };
    let text = fs::read_to_string(&config).map_err(|e| CliError::Run(Error::io(&config, e)))?;
    let sub = argv
        .iter()
        .position(|a| Cli::command().find_subcommand(a.to_string_lossy().as_ref()).is_some())
        .expect("parsed argv has a subcommand");
    let name = argv[sub].to_string_lossy().into_owned();
    let injected = config_to_args(&text, &name).map_err(CliError::Run)?;
    let mut merged: Vec<OsString> = argv[..=sub].to_vec();
    merged.extend(injected);
    merged.extend(argv[sub + 1..].iter().cloned());
    let matches = Cli::command().try_get_matches_from(merged).map_err(CliError::Clap)?;
    Cli::from_arg_matches(&matches).map_err(CliError::Clap)
}

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Run(Error),
}

fn registry(shared: &Shared) -> Result<Arc<UnitRegistry>> {
    Ok(Arc::new(match &shared.registry {
        Some(p) => UnitRegistry::from_file(p)?,
        None => UnitRegistry::builtin(),
    }))
}

fn output(shared: &Shared) -> Result<Box<dyn Write>> {
    Ok(match &shared.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(shared: &Shared, value: &T) -> Result<()> {
    let mut out = output(shared)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io("<output>", e))?;
    out.flush().map_err(|e| Error::io("<output>", e))
}

fn ratios(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad split ratios {s:?}")))?;
    v.try_into().map_err(|v: Vec<f64>| Error::BadRatios(v))
}

fn load_split(data: &Path, reg: &UnitRegistry, seed: u64, split_args: &SplitArgs) -> Result<DatasetSplit> {
    let report = read_examples(data, reg)?;
    if !report.dropped.is_empty() {
        eprintln!("{}: skipped {} records that do not canonicalize", data.display(), report.dropped.len());
    }
    split(report.examples, ratios(&split_args.split_ratios)?, derive_seed(seed, "split"))
}

fn list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(|x| x.trim().parse()).collect()
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    let file = File::open(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let report = ingest_jsonl(BufReader::new(file), &reg).map_err(|e| Error::io(&a.input, e))?;
    let mut out = output(&a.shared)?;
    write_examples(&mut out, &report.examples, &reg).map_err(|e| Error::io("<output>", e))?;
    out.flush().map_err(|e| Error::io("<output>", e))?;
    eprintln!("kept {} records, dropped {}", report.examples.len(), report.dropped.len());
    for (reason, n) in report.drop_counts() {
        eprintln!("  {}: {n}", reason.as_str());
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    let mut c = SynthConfig {
        n: a.n,
        dim_cue_prob: a.dim_cue_prob,
        unit_cue_prob: a.unit_cue_prob,
        seed: derive_seed(a.shared.seed, "synth"),
        ..SynthConfig::default()
    };
    if let Some(d) = &a.dimensions {
        c.set("dimensions", d)?;
    }
    if let Some(u) = &a.units {
        c.set("units", u)?;
    }
    for m in &a.unit_magnitude {
        let (unit, v) = m
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected UNIT=LOC,SCALE, got {m:?}")))?;
        c.set(&format!("unit.{}", unit.trim()), v)?;
    }
    let data = generate(&c, &reg)?;
    let mut out = output(&a.shared)?;
    write_examples(&mut out, &data, &reg).map_err(|e| Error::io("<output>", e))?;
    out.flush().map_err(|e| Error::io("<output>", e))
}

fn readout(s: &str) -> Result<NumberReadout> {
    match s {
        "argmax-dimension" => Ok(NumberReadout::ArgmaxDimension),
        "marginal" => Ok(NumberReadout::Marginal),
        _ => Err(Error::Config(format!("unknown number readout {s:?}"))),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let out_path = a
        .shared
        .out
        .clone()
        .ok_or_else(|| Error::Config("train needs --out for the checkpoint".into()))?;
    let reg = registry(&a.shared)?;
    let seed = a.shared.seed;
    let data = load_split(&a.data, &reg, seed, &a.split)?;
    let mut model = match &a.resume {
        Some(p) => {
            let mut m = load_model(p, reg.clone())?;
            if m.variant() != a.variant {
                return Err(Error::Config(format!(
                    "checkpoint holds a {} model, not {}",
                    m.variant(),
                    a.variant
                )));
            }
            let mut enc = m.encoder.config().clone();
            enc.frozen = a.frozen;
            m.encoder = HashedEncoder::from_parts(enc, m.encoder.projection().clone())?;
            m
        }
        None => {
            let enc = HashedEncoder::new(
                EncoderConfig {
                    feature_dim: a.encoder.feature_dim,
                    hidden_dim: a.encoder.hidden_dim,
                    hash_seed: a.encoder.hash_seed,
                    frozen: a.frozen,
                    ..EncoderConfig::default()
                },
                derive_seed(seed, "encoder"),
            )?;
            let spec = ModelSpec {
                variant: a.variant,
                hidden_dim: a.encoder.hidden_dim,
                number_readout: readout(&a.number_readout)?,
            };
            Model::new(spec, enc, reg.clone(), derive_seed(seed, "heads"))?
        }
    };
    let config = a.optim.config(a.frozen, derive_seed(seed, "shuffle"));
    let outcome = train(&mut model, &data.train, &data.val, &config)?;
    save_model(&model, &out_path)?;
    let history = a.history.clone().unwrap_or_else(|| {
        let mut p = out_path.clone().into_os_string();
        p.push(".history.jsonl");
        p.into()
    });
    fs::write(&history, outcome.history_jsonl()).map_err(|e| Error::io(&history, e))?;
    eprintln!(
        "trained {} for {} epochs; best epoch {} with {} {:.6}",
        a.variant,
        outcome.history.len(),
        outcome.best_epoch,
        outcome.selection_metric,
        outcome.best_metric
    );
    Ok(())
}

fn csv_tables(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    let mut summary = String::from("probe,macro_f1,accuracy,macro_recall,log_mae\n");
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (name, p) in &report.probes {
        summary += &format!(
            "{name},{},{},{},{}\n",
            f(p.macro_f1),
            f(p.accuracy),
            f(p.macro_recall),
            f(p.log_mae)
        );
        if let Some(c) = &p.confusion {
            let mut s = format!("gold\\pred,{}\n", c.labels.join(","));
            for (label, row) in c.labels.iter().zip(&c.matrix) {
                let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                s += &format!("{label},{}\n", cells.join(","));
            }
            write(&format!("{name}_confusion.csv"), s)?;
        }
        if let Some(h) = &p.manhattan_histogram {
            let mut s = String::from("distance,count\n");
            for (d, n) in h {
                s += &format!("{d},{n}\n");
            }
            write(&format!("{name}_manhattan.csv"), s)?;
        }
        if let Some(g) = &p.group_log_mae {
            let mut s = String::from("group,name,log_mae\n");
            for (k, v) in &g.dimension {
                s += &format!("dimension,{k},{v}\n");
            }
            for (k, v) in &g.unit {
                s += &format!("unit,{k},{v}\n");
            }
            write(&format!("{name}_group_log_mae.csv"), s)?;
        }
    }
    let b = &report.baselines;
    summary += &format!(
        "majority-dimension,{},{},{},\nmajority-unit,{},{},{},\nmedian-number,,,,{}\n",
        b.majority_dimension.macro_f1,
        b.majority_dimension.accuracy,
        b.majority_dimension.macro_recall,
        b.majority_unit.macro_f1,
        b.majority_unit.accuracy,
        b.majority_unit.macro_recall,
        b.median_number.log_mae
    );
    write("summary.csv", summary)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    let model = load_model(&a.checkpoint, reg.clone())?;
    let data = load_split(&a.data, &reg, a.shared.seed, &a.split)?;
    let examples: Vec<MeasurementExample> = match a.on.as_str() {
        "train" => data.train.clone(),
        "val" => data.val.clone(),
        "test" => data.test.clone(),
        "all" => data.all().cloned().collect(),
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    let probes = match &a.probes {
        Some(p) => Probe::parse_list(p)?,
        None => Probe::available(model.variant()),
    };
    let report = evaluate(&model, &data.train, &examples, &probes)?;
    if let Some(dir) = &a.csv {
        csv_tables(dir, &report)?;
    }
    write_json(&a.shared, &report)
}

/// A [`Prediction`] with names in place of registry indices.
#[derive(Clone, Debug, Serialize)]
pub struct PredictionRecord {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub number: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canonical_number: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canonical_unit: Option<String>,
}

impl PredictionRecord {
    pub fn new(text: &str, p: &Prediction, reg: &UnitRegistry) -> Self {
        PredictionRecord {
            text: text.to_string(),
            dimension: p.dimension.map(|d| reg.dimension(d).name.clone()),
            latent_class: p.latent_class,
            unit: p.unit.map(|u| reg.unit(u).name.clone()),
            number: p.number,
            canonical_number: p.canonical,
            canonical_unit: p.dimension.map(|d| reg.unit(reg.canonical_unit(d)).name.clone()),
        }
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    let model = load_model(&a.checkpoint, reg.clone())?;
    let reader: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufReader::new(io::stdin().lock())),
    };
    let mut out = output(&a.shared)?;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let p = model.predict_text(text)?;
        serde_json::to_writer(&mut out, &PredictionRecord::new(text, &p, &reg))?;
        writeln!(out).map_err(|e| Error::io("<output>", e))?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))
}

pub fn cmd_fewshot(a: &FewshotArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    let data = load_split(&a.data, &reg, a.shared.seed, &a.split)?;
    let mut frozen_train = a.optim.config(true, 0);
    if let Some(lr) = a.frozen_learning_rate {
        frozen_train.learning_rate = lr;
    }
    let config = FewshotConfig {
        variants: list(&a.variants)?,
        ks: a
            .ks
            .split(',')
            .map(|k| k.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bad --ks {:?}", a.ks)))?,
        seeds: a.seeds,
        encoder: EncoderConfig {
            feature_dim: a.encoder.feature_dim,
            hidden_dim: a.encoder.hidden_dim,
            hash_seed: a.encoder.hash_seed,
            ..EncoderConfig::default()
        },
        train: a.optim.config(false, 0),
        frozen_train,
        seed: derive_seed(a.shared.seed, "fewshot"),
    };
    let report = fewshot::run(&config, &data, &reg)?;
    write_json(&a.shared, &report)
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    let model = load_model(&a.checkpoint, reg.clone())?;
    let data = read_examples(&a.data, &reg)?;
    let mut out = output(&a.shared)?;
    export_embeddings(&model.encoder, &data.examples, &reg, &mut out).map_err(|e| Error::io("<output>", e))?;
    out.flush().map_err(|e| Error::io("<output>", e))
}

#[derive(Serialize)]
struct RegistrySummary<'a> {
    fingerprint: &'a str,
    dimensions: Vec<DimensionSummary<'a>>,
}

#[derive(Serialize)]
struct DimensionSummary<'a> {
    name: &'a str,
    exponents: String,
    canonical: &'a str,
    units: Vec<&'a str>,
}

pub fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let reg = registry(&a.shared)?;
    match &a.data {
        Some(path) => {
            let s = load_split(path, &reg, a.shared.seed, &a.split)?;
            write_json(&a.shared, &stats(&s, &reg))
        }
        None => {
            let dims = reg
                .dimensions()
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let id = crate::units::DimId(i);
                    DimensionSummary {
                        name: &d.name,
                        exponents: d.exponents.to_string(),
                        canonical: &reg.unit(reg.canonical_unit(id)).name,
                        units: reg
                            .units_of(id)
                            .unwrap_or(&[])
                            .iter()
                            .map(|u| reg.unit(*u).name.as_str())
                            .collect(),
                    }
                })
                .collect();
            write_json(
                &a.shared,
                &RegistrySummary {
                    fingerprint: reg.fingerprint(),
                    dimensions: dims,
                },
            )
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Fewshot(a) => cmd_fewshot(a),
        Command::Export(a) => cmd_export(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse(argv) {
        Err(CliError::Clap(e)) => {
            let code = e.exit_code();
            let _ = e.print();
            code
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            2
        }
        Ok(cli) => match run(&cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}
