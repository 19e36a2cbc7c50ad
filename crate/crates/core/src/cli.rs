//! Batch command-line interface.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
//! failure under strict numerics. Every command writes its resolved config
//! (`config.toml`) next to its outputs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{FinetuneMode, TrainConfig};
use crate::data::{generate_synthetic, load_dataset, save_dataset, Dataset, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::plot_csv;
use crate::trainer::{evaluate, finetune, projection, Pretrainer, StepRecord};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const REPORT_FILE: &str = "report.json";
pub const FINETUNE_LOSS_FILE: &str = "finetune_loss.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const THREADS_ENV: &str = "GRAPHLOG_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "graphlog",
    version,
    about = "Self-supervised graph representation learning with hierarchical prototypes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a planted-hierarchy synthetic dataset.
    Generate {
        /// `default` or a TOML file of generator settings.
        #[arg(long, default_value = "default")]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Self-supervised pre-training; writes ckpt, metrics.csv and diagnostics.json.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint instead of starting fresh.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a linear head on the train split and report on the test split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Write graph embeddings as CSV.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write 2-D PCA plot data of embeddings and prototypes.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a metric report for one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// TOML config, or a preset name (`desk`, `paper`).
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strict_numerics: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Full,
    Probe,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => 3,
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

/// Runs one command; `argv[0]` is the program name.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // the global pool can only be built once per process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { spec, out, seed } => generate(&spec, &out, seed),
        Command::Pretrain {
            common,
            out,
            checkpoint,
        } => pretrain(&common, &out, checkpoint.as_deref()),
        Command::Finetune {
            common,
            checkpoint,
            out,
            mode,
        } => finetune_cmd(&common, &checkpoint, &out, mode),
        Command::Embed {
            common,
            checkpoint,
            out,
        } => embed(&common, &checkpoint, &out),
        Command::Project {
            common,
            checkpoint,
            out,
        } => project(&common, &checkpoint, &out),
        Command::Eval {
            common,
            checkpoint,
            out,
            split,
        } => eval_cmd(&common, &checkpoint, out.as_deref(), split),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Config from `--config` (file or preset), else `fallback`, then flag overrides.
fn resolve_config(common: &Common, fallback: Option<&TrainConfig>) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(c) if c == "desk" || c == "paper" => TrainConfig::preset(c)?,
        Some(path) => TrainConfig::from_toml(&read_text(Path::new(path))?)?,
        None => fallback.cloned().unwrap_or_default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.strict_numerics |= common.strict_numerics;
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(common: &Common) -> Result<Dataset> {
    if !common.data.is_dir() {
        return Err(Error::Dataset(format!(
            "{}: no such dataset directory",
            common.data.display()
        )));
    }
    load_dataset(&common.data)
}

fn check_schema(ds: &Dataset, ck: &Checkpoint) -> Result<()> {
    if ds.schema() != ck.model.gin.schema {
        return Err(Error::Dataset(
            "dataset attribute vocabularies differ from the checkpoint's".into(),
        ));
    }
    Ok(())
}

fn prepare_out(out: &Path, config_toml: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), config_toml)?;
    Ok(())
}

fn generate(spec: &str, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut s = if spec == "default" {
        SyntheticSpec::default()
    } else {
        toml::from_str(&read_text(Path::new(spec))?)
            .map_err(|e| Error::Config(format!("{spec}: {e}")))?
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate().map_err(|e| Error::Config(e.to_string()))?;
    let ds = generate_synthetic(&s)?;
    save_dataset(out, &ds)?;
    fs::write(
        out.join(CONFIG_FILE),
        toml::to_string(&s).expect("spec serializes"),
    )?;
    println!("wrote {} graphs to {}", ds.len(), out.display());
    Ok(())
}

fn pretrain(common: &Common, out: &Path, resume: Option<&Path>) -> Result<()> {
    let ck = resume.map(Checkpoint::load).transpose()?;
    let cfg = resolve_config(common, ck.as_ref().map(|c| &c.config))?;
    let ds = load_data(common)?;
    let schema = ds.schema();
    let mut trainer = match ck {
        Some(ck) => {
            check_schema(&ds, &ck)?;
            if ck.config.to_toml() != cfg.to_toml() {
                return Err(Error::Config(
                    "resuming requires the checkpoint's own config".into(),
                ));
            }
            Pretrainer::from_checkpoint(ck, &ds.graphs, &schema)?
        }
        None => Pretrainer::new(cfg, &ds.graphs, &schema)?,
    };
    prepare_out(out, &trainer.cfg.to_toml())?;

    let metrics_path = out.join(METRICS_FILE);
    let fresh = !metrics_path.exists();
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;
    if fresh {
        writeln!(metrics, "{}", StepRecord::CSV_HEADER)?;
    }
    let save = |t: &Pretrainer| -> Result<()> { t.checkpoint().save(&out.join(CHECKPOINT_FILE)) };
    while let Some(rec) = trainer.step()? {
        writeln!(metrics, "{}", rec.csv_row())?;
        if trainer.progress.batch == 0 {
            save(&trainer)?;
        }
    }
    save(&trainer)?;
    if let Some(d) = &trainer.diagnostics {
        fs::write(
            out.join(DIAGNOSTICS_FILE),
            serde_json::to_string_pretty(d).expect("diagnostics serialize") + "\n",
        )?;
    }
    println!(
        "pre-trained {} steps; checkpoint at {}",
        trainer.progress.step,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn finetune_cmd(
    common: &Common,
    checkpoint: &Path,
    out: &Path,
    mode: Option<ModeArg>,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = resolve_config(common, Some(&ck.config))?;
    if let Some(m) = mode {
        cfg.finetune.mode = match m {
            ModeArg::Full => FinetuneMode::Full,
            ModeArg::Probe => FinetuneMode::Probe,
        };
    }
    cfg.validate()?;
    let ds = load_data(common)?;
    check_schema(&ds, &ck)?;
    let (train, test) = (ds.subset(Split::Train), ds.subset(Split::Test));
    if test.is_empty() {
        return Err(Error::Dataset("the test split is empty".into()));
    }
    let outcome = finetune(&ck.model, &train, &test, &cfg)?;
    prepare_out(out, &cfg.to_toml())?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    outcome.report.write(&out.join(REPORT_FILE))?;
    let mut loss = String::from("epoch,loss\n");
    for (e, l) in outcome.epoch_loss.iter().enumerate() {
        loss.push_str(&format!("{e},{l}\n"));
    }
    fs::write(out.join(FINETUNE_LOSS_FILE), loss)?;
    Checkpoint {
        config: cfg,
        model: outcome.model,
        adam: crate::optim::Adam::new(ck.config.adam),
        progress: ck.progress,
        diagnostics: None,
    }
    .save(&out.join(CHECKPOINT_FILE))?;
    match outcome.report.mean_auc {
        Some(a) => println!("test mean ROC-AUC {a:.4}"),
        None => println!("test ROC-AUC undefined"),
    }
    Ok(())
}

fn embed(common: &Common, checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = resolve_config(common, Some(&ck.config))?;
    let ds = load_data(common)?;
    check_schema(&ds, &ck)?;
    let h = ck.model.embed(&ds.graphs, cfg.pretrain.embed_chunk)?;
    let mut csv = String::from("index,split,leaf_label");
    for j in 0..h.cols() {
        csv.push_str(&format!(",e{j}"));
    }
    csv.push('\n');
    for i in 0..h.rows() {
        let g = &ds.graphs[i];
        let leaf = g
            .classes
            .as_ref()
            .and_then(|c| c.last())
            .map(|c| c.to_string())
            .unwrap_or_default();
        let split = serde_json::to_value(ds.splits[i]).expect("split serializes");
        csv.push_str(&format!(
            "{i},{},{leaf}",
            split.as_str().unwrap_or_default()
        ));
        for x in h.row(i) {
            csv.push_str(&format!(",{x}"));
        }
        csv.push('\n');
    }
    prepare_out(out, &cfg.to_toml())?;
    fs::write(out.join(EMBEDDINGS_FILE), csv)?;
    println!("wrote {} x {} embeddings", h.rows(), h.cols());
    Ok(())
}

fn project(common: &Common, checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = resolve_config(common, Some(&ck.config))?;
    let ds = load_data(common)?;
    check_schema(&ds, &ck)?;
    let rows = projection(&ck.model, &ds.graphs, cfg.pretrain.embed_chunk)?;
    prepare_out(out, &cfg.to_toml())?;
    fs::write(out.join(PLOT_FILE), plot_csv(&rows))?;
    println!("wrote {} plot rows", rows.len());
    Ok(())
}

fn eval_cmd(common: &Common, checkpoint: &Path, out: Option<&Path>, split: SplitArg) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = resolve_config(common, Some(&ck.config))?;
    let ds = load_data(common)?;
    check_schema(&ds, &ck)?;
    let graphs = match split {
        SplitArg::Train => ds.subset(Split::Train),
        SplitArg::Valid => ds.subset(Split::Valid),
        SplitArg::Test => ds.subset(Split::Test),
        SplitArg::All => ds.graphs.clone(),
    };
    let (report, warnings) = evaluate(&ck.model, &graphs, &cfg)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    };
    prepare_out(&dir, &cfg.to_toml())?;
    report.write(&dir.join(REPORT_FILE))?;
    println!("{}", report.to_json().trim_end());
    Ok(())
}
