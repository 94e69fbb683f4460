//! The `somnoflow` command line: `synth`, `train`, `evaluate`, `predict`
//! and `attention`.
//!
//! Exit codes: 0 success, 1 I/O failure (including unreadable
//! checkpoints), 2 usage or validation error, 3 non-finite training loss.
//! `SOMNOFLOW_THREADS` caps the worker pool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_record, load_signal, load_split, manifest_path, prepare, stage_totals, synthesize_dataset, write_dataset,
    GenConfig, PreparedRecord, SleepRecord, Split, EPOCH_SECONDS,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_dataset, export_hypnogram, extract_attention, predict_prepared, predicted_stages, write_attention_csv,
    Metrics, ReportMeta,
};
use crate::model::{FrontEndKind, Model, ModelConfig};
use crate::training::{train, train_with_stats, Checkpoint, EpochLog, LossConfig, OptimizerConfig, TrainConfig, TrainSetup};

pub const THREADS_ENV: &str = "SOMNOFLOW_THREADS";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_ECHO_FILE: &str = "run_config.json";

/// Complete experiment description for `train`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    /// Dataset manifest (or its directory); `--data` overrides it.
    pub data: Option<PathBuf>,
    /// Overrides `model.front_end` when set.
    pub front_end: Option<FrontEndKind>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        if let Some(fe) = cfg.front_end {
            cfg.model.front_end = fe;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.train.validate()
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            loss: self.loss,
            optimizer: self.optimizer,
            train: self.train.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "somnoflow", version, about = "Wake/sleep staging from 1 Hz heart rate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; omitted fields keep their defaults.
        #[arg(long)]
        gen_config: Option<PathBuf>,
    },
    /// Train a model and keep the best validation checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset manifest or directory; overrides the config's `data`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Start from this checkpoint's parameters, statistics and moments.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Per-patient metrics of a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hypnogram CSV for one record.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        record: PathBuf,
        /// Labels file; fills the `truth` column.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer head-averaged attention maps for one record.
    Attention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        record: PathBuf,
        /// Output directory for `attention_layer<l>.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Corruption { .. } => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { n, seed, out, gen_config } => cmd_synth(n, seed, &out, gen_config.as_deref()),
        Command::Train {
            config,
            data,
            out,
            init_checkpoint,
        } => cmd_train(&config, data.as_deref(), &out, init_checkpoint.as_deref()),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => cmd_evaluate(&checkpoint, &data, &split, &out),
        Command::Predict {
            checkpoint,
            record,
            labels,
            out,
        } => cmd_predict(&checkpoint, &record, labels.as_deref(), &out),
        Command::Attention { checkpoint, record, out } => cmd_attention(&checkpoint, &record, &out),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn cmd_synth(n: usize, seed: u64, out: &Path, gen_config: Option<&Path>) -> Result<()> {
    let cfg: GenConfig = match gen_config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    let records = synthesize_dataset(n, seed, &cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let manifest = write_dataset(out, &records)?;
    let (wake, sleep) = stage_totals(&records);
    let ratio = if sleep > 0 { wake as f64 / sleep as f64 } else { f64::NAN };
    println!(
        "records {n} (train {}, val {}, test {}), epochs {}, wake/sleep ratio {ratio:.3}, seed {seed}",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        wake + sleep
    );
    Ok(())
}

pub fn cmd_train(config: &Path, data: Option<&Path>, out: &Path, init: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    let data = data
        .map(Path::to_path_buf)
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::config("no dataset: pass --data or set `data` in the config"))?;
    let manifest = manifest_path(&data);
    let train_set = load_split(&manifest, Split::Train)?;
    let val_set = load_split(&manifest, Split::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "{} needs non-empty train and val splits (found {} and {})",
            manifest.display(),
            train_set.len(),
            val_set.len()
        )));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    cfg.data = Some(data);
    cfg.train.checkpoint = Some(out.join(CHECKPOINT_FILE));
    let echo = serde_json::to_string_pretty(&cfg).map_err(|source| Error::Json {
        context: "serializing run config".into(),
        source,
    })?;
    write_text(&out.join(CONFIG_ECHO_FILE), &(echo + "\n"))?;

    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?);
    let report_every = cfg.train.report_every;
    let mut on_epoch = |e: &EpochLog| -> Result<()> {
        let line = serde_json::to_string(e).map_err(|source| Error::Json {
            context: "serializing log line".into(),
            source,
        })?;
        writeln!(log, "{line}")
            .and_then(|()| log.flush())
            .map_err(|err| Error::io(format!("writing {}", log_path.display()), err))?;
        if report_every > 0 && e.epoch.is_multiple_of(report_every) {
            eprintln!(
                "epoch {:>4}  loss {:.6}  val acc {:.4}  {:.2}s",
                e.epoch, e.train_loss, e.val_acc, e.seconds
            );
        }
        Ok(())
    };

    let setup = cfg.setup();
    let outcome = match init {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.ensure_config(&cfg.model)?;
            train_with_stats(ckpt.model, ckpt.standardization, ckpt.optimizer, &train_set, &val_set, &setup, &mut on_epoch)?
        }
        None => {
            let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            train(model, &train_set, &val_set, &setup, &mut on_epoch)?
        }
    };
    let best = &outcome.best.meta;
    println!(
        "best epoch {} val acc {:.4}, seed {}, checkpoint {}",
        best.epoch,
        best.val_acc.unwrap_or(f64::NAN),
        best.seed,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn format_metrics(m: &Metrics) -> String {
    format!(
        "Acc {}  Se {}  Sp {}  PPV {}  NPV {}  kappa {}",
        fmt_metric(m.acc),
        fmt_metric(m.se),
        fmt_metric(m.sp),
        fmt_metric(m.ppv),
        fmt_metric(m.npv),
        fmt_metric(m.kappa)
    )
}

pub fn cmd_evaluate(checkpoint: &Path, data: &Path, split: &str, out: &Path) -> Result<()> {
    let split: Split = split.parse()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let records = load_split(data, split)?;
    if records.is_empty() {
        return Err(Error::Data(format!("split `{split}` of {} is empty", data.display())));
    }
    let mut report = evaluate_dataset(&ckpt.model, &ckpt.standardization, &records, crate::data::DEFAULT_BATCH_SIZE)?;
    report.meta = Some(ReportMeta {
        split: split.to_string(),
        epoch: ckpt.meta.epoch,
        seed: ckpt.meta.seed,
    });
    write_text(out, &(report.to_json()? + "\n"))?;
    println!("{} patients, average: {}", report.patients.len(), format_metrics(&report.average));
    Ok(())
}

/// Loads a record file for inference, dropping any partial last epoch.
fn load_for_inference(record: &Path, labels: Option<&Path>) -> Result<SleepRecord> {
    let id = record
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".into());
    match labels {
        Some(l) => load_record(&id, record, l),
        None => {
            let (hr, quality) = load_signal(record)?;
            let mut r = SleepRecord {
                subject_id: id,
                labels: Vec::new(),
                hr,
                quality,
            };
            r.truncate_to_epochs();
            // placeholder labels; only the signal is used
            r.labels = vec![crate::data::Stage::Sleep; r.len() / EPOCH_SECONDS];
            Ok(r)
        }
    }
}

fn prepared_one(ckpt: &Checkpoint, record: &SleepRecord) -> Result<PreparedRecord> {
    if record.is_empty() {
        return Err(Error::Data(format!("{} holds less than one {EPOCH_SECONDS}-s epoch", record.subject_id)));
    }
    Ok(prepare(std::slice::from_ref(record), &ckpt.standardization)?.remove(0))
}

pub fn cmd_predict(checkpoint: &Path, record: &Path, labels: Option<&Path>, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let rec = load_for_inference(record, labels)?;
    let prepared = prepared_one(&ckpt, &rec)?;
    let probs = predict_prepared(&ckpt.model, std::slice::from_ref(&prepared), 1)?.remove(0);
    let pred = predicted_stages(&probs);
    export_hypnogram(&pred, labels.map(|_| rec.labels.as_slice()), out)?;
    let wake = pred.iter().filter(|&&s| s == crate::data::Stage::Wake).count();
    println!("{} epochs, {wake} predicted wake, written to {}", pred.len(), out.display());
    Ok(())
}

pub fn cmd_attention(checkpoint: &Path, record: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let rec = load_for_inference(record, None)?;
    let prepared = prepared_one(&ckpt, &rec)?;
    let maps = extract_attention(&ckpt.model, &prepared)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    for m in &maps {
        write_attention_csv(m, &out.join(format!("attention_layer{}.csv", m.layer)))?;
    }
    println!("{} layer maps of {}x{} written to {}", maps.len(), prepared.labels.len(), prepared.labels.len(), out.display());
    Ok(())
}
