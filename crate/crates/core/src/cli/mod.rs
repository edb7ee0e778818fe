//! Command-line front end: `gen-data`, `preprocess`, `train`, `eval`,
//! `infer`, `bench` and `ablate`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error
//! (bad flags, bad config or grid file).

pub mod ablate;
pub mod bench;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::KeyValues;
use crate::data::{
    generate_synthetic, read_record, split, write_dataset, write_record, DatasetManifest, EcgRecord, Split,
    MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::model::{load_model, save_model, ModelConfig};
use crate::preprocess::preprocess_record;
use crate::train::{evaluate, predict, train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "s2m2ecg", version, about = "Multi-lead ECG classification with bidirectional state-space encoders")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic 12-lead dataset and its manifest.
    GenData {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..=8))]
        classes: u64,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 2500)]
        length: usize,
        #[arg(long, default_value_t = 250)]
        rate: u32,
        /// Stratified train,val,test fractions.
        #[arg(long, default_value = "0.7,0.15,0.15")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample, denoise and z-score every record of a dataset.
    Preprocess {
        /// Dataset directory or manifest file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train split, selecting the epoch with the best
    /// validation macro-F1.
    ///
    /// The config file holds `key = value` lines for model keys (patch_len,
    /// step, depth, dim, state_n, classes, bidirectional, multi_branch,
    /// fusion, cls_policy, direction_combine, layer_readout, discretization,
    /// conv_kernel, head_dim, signal_len) and training keys (epochs,
    /// batch_size, learning_rate, weight_decay, seed, patience,
    /// track_train). History lines carry epoch, loss, [train_acc], val_acc,
    /// val_f1, val_auc and seconds.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model file to write; history and report files go beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on one split. The report line carries samples, acc,
    /// precision, recall, f1 and auc (macro averages).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Print class probabilities for one record.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        record: PathBuf,
        /// Class-name file, one per line (defaults to class0, class1, ...).
        #[arg(long)]
        classes: Option<PathBuf>,
        /// Run the preprocessing pipeline on the record first.
        #[arg(long)]
        raw: bool,
    },
    /// Time single-record forwards.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = bench::DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
        warmup: usize,
        /// Preprocessed record to time; a seeded random signal otherwise.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Train and score every combination of a grid, writing one CSV row
    /// per run with columns p,s,depth,dim,bidir,multi_branch,fusion,acc,
    /// f1,auc,params,train_s.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Axis lists: p, s_ratio, depth, dim, bidirectional, multi_branch,
        /// fusion (`key = v1, v2`).
        #[arg(long)]
        grid: PathBuf,
        /// Base model and training config, as for `train`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure mapped to its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut impl Write) -> std::result::Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::GenData { classes, per_class, length, rate, split: fractions, out: dir } => {
            gen_data(classes as usize, per_class, length, rate, &fractions, seed.unwrap_or(0), &dir, out)
        }
        Command::Preprocess { input, out: dir } => preprocess(&input, &dir, out),
        Command::Train { data, config, out: model_path } => cmd_train(&data, config.as_deref(), seed, &model_path, out),
        Command::Eval { model, data, split } => {
            let model = load_model(model)?;
            let records = manifest_at(&data)?.load_split(split)?;
            let report = evaluate(&model, &records)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            writeln_out(out, format_args!("split={split} {report}"))?;
            for (c, counts) in report.per_class.iter().enumerate() {
                writeln_out(
                    out,
                    format_args!(
                        "class={c} tp={} tn={} fp={} fn={} auc={:.6}",
                        counts.tp, counts.tn, counts.fp, counts.fn_, report.per_class_auc[c]
                    ),
                )?;
            }
            Ok(())
        }
        Command::Infer { model, record, classes, raw } => {
            let model = load_model(model)?;
            let mut rec = read_record(&record)?;
            if raw {
                rec = preprocess_record(&rec)?.record;
            }
            let names = class_names(classes.as_deref(), model.config().classes)?;
            let probs = predict(&model, std::slice::from_ref(&rec))?;
            let mut top = 0;
            for (c, &p) in probs.data().iter().enumerate() {
                if p > probs.data()[top] {
                    top = c;
                }
                writeln_out(out, format_args!("class={} p={p:.6}", names[c]))?;
            }
            writeln_out(out, format_args!("top={} p={:.6}", names[top], probs.data()[top]))
        }
        Command::Bench { model, repeats, warmup, record } => {
            let model = load_model(model)?;
            let rec = match record {
                Some(path) => read_record(path)?,
                None => bench::random_record(&model, seed.unwrap_or(0))?,
            };
            let report = bench::bench_latency(&model, &rec, warmup, repeats).map_err(usage)?;
            writeln_out(out, format_args!("{report}"))
        }
        Command::Ablate { data, grid, config, out: csv_path } => {
            let manifest = manifest_at(&data)?;
            let (train_set, val_set) = (manifest.load_split(Split::Train)?, manifest.load_split(Split::Val)?);
            let test_set = manifest.load_split(Split::Test)?;
            let eval_set = if test_set.is_empty() { &val_set } else { &test_set };
            let (base, train_cfg) = load_configs(config.as_deref(), &manifest, &train_set, seed)?;
            let text = read_text(&grid)?;
            let grid = ablate::AblationGrid::parse(&text, &base).map_err(usage)?;
            let rows = ablate::run_ablation(&grid, &base, &train_cfg, &train_set, &val_set, eval_set, |_, _| {})?;
            ablate::write_csv(&rows, &csv_path)?;
            writeln_out(out, format_args!("runs={} csv={}", rows.len(), csv_path.display()))
        }
    }
}

fn writeln_out(out: &mut impl Write, args: std::fmt::Arguments<'_>) -> std::result::Result<(), CliError> {
    writeln!(out, "{args}").map_err(|e| CliError::Runtime(Error::io("<stdout>", e)))
}

fn read_text(path: &Path) -> std::result::Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

/// A dataset directory or a manifest file.
fn manifest_at(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        DatasetManifest::load(path.join(MANIFEST_FILE))
    } else {
        DatasetManifest::load(path)
    }
}

fn class_names(path: Option<&Path>, classes: usize) -> std::result::Result<Vec<String>, CliError> {
    let Some(path) = path else {
        return Ok((0..classes).map(|c| format!("class{c}")).collect());
    };
    let names: Vec<String> = read_text(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if names.len() != classes {
        return Err(usage(format!("{} names {} classes but the model has {classes}", path.display(), names.len())));
    }
    Ok(names)
}

fn parse_fractions(text: &str) -> std::result::Result<[f64; 3], CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| usage(format!("--split `{text}`: {e}"))))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| usage(format!("--split `{text}` needs three fractions")))
}

#[allow(clippy::too_many_arguments)]
fn gen_data(
    classes: usize,
    per_class: usize,
    length: usize,
    rate: u32,
    fractions: &str,
    seed: u64,
    dir: &Path,
    out: &mut impl Write,
) -> std::result::Result<(), CliError> {
    let fractions = parse_fractions(fractions)?;
    if per_class == 0 {
        return Err(usage("--per-class must be at least 1"));
    }
    let records = generate_synthetic(classes, per_class, length, rate, seed).map_err(usage)?;
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    let manifest = write_dataset(&records, names, dir)?;
    let manifest = split(&manifest, fractions, seed).map_err(usage)?;
    manifest.save(dir.join(MANIFEST_FILE))?;
    for (c, name) in manifest.class_names.iter().enumerate() {
        let per_split: Vec<String> = Split::ALL
            .iter()
            .map(|&s| format!("{s}={}", manifest.class_counts(Some(s))[c]))
            .collect();
        writeln_out(out, format_args!("class={name} records={} {}", manifest.class_counts(None)[c], per_split.join(" ")))?;
    }
    Ok(())
}

fn preprocess(input: &Path, dir: &Path, out: &mut impl Write) -> std::result::Result<(), CliError> {
    let manifest = manifest_at(input)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut flat = 0;
    for entry in &manifest.entries {
        let rec = read_record(manifest.resolve(entry))?;
        let done = preprocess_record(&rec)?;
        if !done.flat_leads.is_empty() {
            log::warn!("{}: flat leads {:?}", rec.id, done.flat_leads);
            flat += 1;
        }
        let target = dir.join(&entry.path);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_record(&done.record, target)?;
    }
    let copy = DatasetManifest::new(manifest.entries.clone(), manifest.class_names.clone(), dir)?;
    copy.save(dir.join(MANIFEST_FILE))?;
    writeln_out(out, format_args!("records={} with_flat_leads={flat}", manifest.entries.len()))
}

/// Model and training configs: defaults sized to the data, then the config
/// file, then `--seed`.
fn load_configs(
    path: Option<&Path>,
    manifest: &DatasetManifest,
    train_set: &[EcgRecord],
    seed: Option<u64>,
) -> std::result::Result<(ModelConfig, TrainConfig), CliError> {
    let first = train_set.first().ok_or_else(|| CliError::Runtime(Error::InvalidArgument("train split is empty".into())))?;
    let mut model = ModelConfig { classes: manifest.class_count(), signal_len: first.len(), ..ModelConfig::default() };
    let mut training = TrainConfig::default();
    if let Some(path) = path {
        let mut kv = KeyValues::parse(&read_text(path)?).map_err(usage)?;
        model.apply(&mut kv).map_err(usage)?;
        training.apply(&mut kv).map_err(usage)?;
        kv.finish().map_err(usage)?;
    }
    if let Some(s) = seed {
        training.seed = s;
    }
    model.validate().map_err(usage)?;
    training.validate().map_err(usage)?;
    Ok((model, training))
}

fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    model_path: &Path,
    out: &mut impl Write,
) -> std::result::Result<(), CliError> {
    let manifest = manifest_at(data)?;
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    let (model_cfg, train_cfg) = load_configs(config, &manifest, &train_set, seed)?;
    let history_path = sibling(model_path, "history");
    let mut history = String::new();
    let outcome = train(&train_set, &val_set, model_cfg, train_cfg, |e| {
        let _ = writeln!(out, "{e}");
        history.push_str(&format!("{e}\n"));
    })?;
    fs::write(&history_path, history).map_err(|e| Error::io(&history_path, e))?;
    save_model(&outcome.model, model_path)?;
    let report = evaluate(&outcome.model, &val_set)?;
    let report_path = sibling(model_path, "report");
    let line = format!("best_epoch={} split=val {report}\n", outcome.best_epoch);
    fs::write(&report_path, &line).map_err(|e| Error::io(&report_path, e))?;
    writeln_out(out, format_args!("{}", line.trim_end()))
}

/// `model.bin` → `model.bin.<ext>`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}
