//! One binary, four subcommands: `gen-data`, `train`, `eval`, `sweep`.
//!
//! Conventions shared by every command:
//! - `--out` names a directory; outputs use fixed file names inside it and
//!   the fully resolved run parameters land next to them as `resolved.toml`.
//! - Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
//! - Failures print a single machine-parsable line prefixed `error:`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use accent_am::checkpoint::{self, Checkpoint};
use accent_am::corpus::{generate_corpus, read_dataset, write_dataset, GeneratorConfig};
use accent_am::metrics::relative_improvement;
use accent_am::model::{AmConfig, ModelKind};
use accent_am::sweep::{alpha_sweep, SWEEP_HEADER};
use accent_am::train::{
    evaluate, prepare, run_training, EvalReport, HeadSelection, TrainingConfig, LOG_HEADER,
};

/// Whole config file: every section optional, unknown keys rejected.
#[derive(Clone, Debug, Default, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    generator: GeneratorConfig,
    model: AmConfig,
    training: TrainingConfig,
    sweep: SweepConfig,
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SweepConfig {
    alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: vec![0.0, 0.001, 0.005, 0.01, 0.2, 0.5, 0.8, 1.0],
        }
    }
}

#[derive(Parser)]
#[command(
    name = "accent-am",
    version,
    about = "Synthetic multi-accent acoustic modeling: data generation, training, evaluation, interpolation sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; omitted sections fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Overrides the generator seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model variant on a dataset.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Model variant: aspec-us, aspec-uk, mtlp, joint, or aid.
        #[arg(long)]
        model: String,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the interpolation weight from the config.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint file produced by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Head selection: oracle, switched:joint, or switched:ind-aid.
        #[arg(long)]
        mode: String,
        /// Standalone classifier checkpoint, required by switched:ind-aid.
        #[arg(long)]
        aid_checkpoint: Option<PathBuf>,
        /// Baseline overall PER; when given, the report includes the
        /// relative improvement of this run against it.
        #[arg(long)]
        baseline_per: Option<f64>,
    },
    /// Train one joint model per interpolation weight and report a CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Interpolation weights (repeatable); defaults to the config list.
        #[arg(long)]
        alpha: Vec<f64>,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Failure category drives the exit code.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<accent_am::Error> for Failure {
    fn from(e: accent_am::Error) -> Self {
        match e {
            accent_am::Error::Config(_) | accent_am::Error::InvalidInput(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {}", e.to_string().trim_end().replace('\n', "\nerror: "));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))
}

fn write_resolved(out: &Path, resolved: &impl Serialize) -> Result<(), Failure> {
    let text = toml::to_string_pretty(resolved)
        .map_err(|e| Failure::Runtime(format!("cannot serialize resolved config: {e}")))?;
    fs::write(out.join("resolved.toml"), text)?;
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData { common, seed } => cmd_gen_data(common, seed),
        Command::Train {
            common,
            model,
            data,
            seed,
            alpha,
        } => cmd_train(common, model, data, seed, alpha),
        Command::Eval {
            out,
            checkpoint,
            data,
            mode,
            aid_checkpoint,
            baseline_per,
        } => cmd_eval(out, checkpoint, data, mode, aid_checkpoint, baseline_per),
        Command::Sweep {
            common,
            data,
            alpha,
            seed,
        } => cmd_sweep(common, data, alpha, seed),
    }
}

#[derive(Serialize)]
struct ResolvedGenData {
    command: &'static str,
    generator: GeneratorConfig,
}

fn cmd_gen_data(common: CommonArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = seed {
        config.generator.seed = seed;
    }
    let corpus = generate_corpus(&config.generator)?;
    ensure_out_dir(&common.out)?;
    let path = common.out.join("dataset.aam");
    write_dataset(&corpus, &path)?;
    write_resolved(
        &common.out,
        &ResolvedGenData {
            command: "gen-data",
            generator: config.generator,
        },
    )?;
    println!(
        "wrote {} ({} utterances, feature dim {})",
        path.display(),
        corpus.utterances.len(),
        corpus.feature_dim
    );
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTrain {
    command: &'static str,
    model: String,
    data: PathBuf,
    model_config: AmConfig,
    training: TrainingConfig,
}

fn cmd_train(
    common: CommonArgs,
    model: String,
    data: PathBuf,
    seed: Option<u64>,
    alpha: Option<f64>,
) -> Result<(), Failure> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = seed {
        config.training.seed = seed;
    }
    if let Some(alpha) = alpha {
        config.training.alpha = alpha;
    }
    let kind: ModelKind = model.parse().map_err(Failure::from)?;
    let corpus = read_dataset(&data)?;
    let outcome = run_training(&corpus, kind, &config.model, &config.training)?;
    ensure_out_dir(&common.out)?;
    let ckpt_path = common.out.join("checkpoint.aam");
    checkpoint::save(&outcome.checkpoint, &ckpt_path)?;
    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    for row in &outcome.log {
        log.push_str(&row.csv_row());
        log.push('\n');
    }
    fs::write(common.out.join("train_log.csv"), log)?;
    write_resolved(
        &common.out,
        &ResolvedTrain {
            command: "train",
            model,
            data,
            model_config: config.model,
            training: config.training,
        },
    )?;
    if let Some(epoch) = outcome.diverged_at {
        eprintln!("warning: training diverged at epoch {epoch}; checkpoint holds the last good state");
    }
    match outcome.log.last() {
        Some(last) => println!(
            "trained {} for {} epochs (final held-out loss {:.4}); wrote {}",
            kind.as_str(),
            last.epoch,
            last.heldout_loss,
            ckpt_path.display()
        ),
        None => println!("trained {}; wrote {}", kind.as_str(), ckpt_path.display()),
    }
    Ok(())
}

#[derive(Serialize)]
struct ResolvedEval {
    command: &'static str,
    checkpoint: PathBuf,
    data: PathBuf,
    mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    aid_checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_per: Option<f64>,
}

fn check_compatible(
    ckpt: &Checkpoint,
    corpus: &accent_am::corpus::Corpus,
) -> Result<(), Failure> {
    if ckpt.config.feature_dim != 2 * corpus.feature_dim {
        return Err(Failure::Usage(format!(
            "checkpoint expects {} input dims but the stacked dataset provides {}",
            ckpt.config.feature_dim,
            2 * corpus.feature_dim
        )));
    }
    if ckpt.config.phones_us < corpus.phones_us || ckpt.config.phones_uk < corpus.phones_uk {
        return Err(Failure::Usage(format!(
            "checkpoint phone inventories ({}, {}) cannot cover the dataset's ({}, {})",
            ckpt.config.phones_us, ckpt.config.phones_uk, corpus.phones_us, corpus.phones_uk
        )));
    }
    Ok(())
}

fn cmd_eval(
    out: PathBuf,
    ckpt_path: PathBuf,
    data: PathBuf,
    mode: String,
    aid_checkpoint: Option<PathBuf>,
    baseline_per: Option<f64>,
) -> Result<(), Failure> {
    let ckpt = checkpoint::load(&ckpt_path)?;
    let corpus = read_dataset(&data)?;
    check_compatible(&ckpt, &corpus)?;
    let aid_ckpt = match (mode.as_str(), &aid_checkpoint) {
        ("switched:ind-aid", Some(path)) => {
            let aid = checkpoint::load(path)?;
            if aid.kind != ModelKind::Aid {
                return Err(Failure::Usage(format!(
                    "--aid-checkpoint holds a `{}` model, expected `aid`",
                    aid.kind.as_str()
                )));
            }
            Some(aid)
        }
        ("switched:ind-aid", None) => {
            return Err(Failure::Usage(
                "mode switched:ind-aid requires --aid-checkpoint".into(),
            ))
        }
        _ => None,
    };
    let selection = match mode.as_str() {
        "oracle" => HeadSelection::Oracle,
        "switched:joint" => {
            if !ckpt.kind.has_aid() {
                return Err(Failure::Usage(format!(
                    "mode switched:joint needs a model with an accent branch, got `{}`",
                    ckpt.kind.as_str()
                )));
            }
            HeadSelection::OwnAid
        }
        "switched:ind-aid" => {
            let aid = aid_ckpt.as_ref().expect("loaded above");
            HeadSelection::External {
                aid_params: &aid.params,
                aid_config: &aid.config,
            }
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown mode `{other}`; expected oracle, switched:joint, or switched:ind-aid"
            )))
        }
    };
    let prepared = prepare(&corpus.utterances)?;
    let report = evaluate(&ckpt.params, &ckpt.config, ckpt.kind, &prepared, &selection)?;

    let improvement = match (baseline_per, report.overall_per()) {
        (Some(base), Some(system)) => Some(relative_improvement(base, system)?),
        _ => None,
    };
    ensure_out_dir(&out)?;
    fs::write(out.join("eval.csv"), eval_csv(&mode, &report, baseline_per, improvement))?;
    write_resolved(
        &out,
        &ResolvedEval {
            command: "eval",
            checkpoint: ckpt_path,
            data,
            mode,
            aid_checkpoint,
            baseline_per,
        },
    )?;
    print_eval_table(&report, baseline_per, improvement);
    Ok(())
}

/// Fixed schema: `metric,value`, one row per reported quantity.
fn eval_csv(
    mode: &str,
    report: &EvalReport,
    baseline_per: Option<f64>,
    improvement: Option<f64>,
) -> String {
    fn opt(csv: &mut String, name: &str, v: Option<f64>) {
        let _ = writeln!(csv, "{name},{}", v.map(|x| format!("{x:.6}")).unwrap_or_default());
    }
    let mut csv = String::from("metric,value\n");
    let _ = writeln!(csv, "mode,{mode}");
    opt(&mut csv, "per_us", report.per_us);
    opt(&mut csv, "per_uk", report.per_uk);
    opt(&mut csv, "overall_per", report.overall_per());
    let _ = writeln!(csv, "n_us,{}", report.n_us);
    let _ = writeln!(csv, "n_uk,{}", report.n_uk);
    opt(&mut csv, "aid_accuracy", report.aid.as_ref().map(|a| a.accuracy));
    opt(&mut csv, "aid_recall_us", report.aid.as_ref().map(|a| a.recall_us));
    opt(&mut csv, "aid_recall_uk", report.aid.as_ref().map(|a| a.recall_uk));
    let _ = writeln!(csv, "switch_errors,{}", report.switch_errors);
    opt(&mut csv, "baseline_per", baseline_per);
    opt(&mut csv, "relative_improvement_pct", improvement);
    csv
}

fn print_eval_table(report: &EvalReport, baseline_per: Option<f64>, improvement: Option<f64>) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:8.2}")).unwrap_or_else(|| "       -".into());
    println!("accent   n     PER");
    println!("US     {:4} {}", report.n_us, fmt(report.per_us));
    println!("UK     {:4} {}", report.n_uk, fmt(report.per_uk));
    println!("all    {:4} {}", report.n_us + report.n_uk, fmt(report.overall_per()));
    if let Some(aid) = &report.aid {
        println!(
            "accent id: accuracy {:.2}%  (recall US {:.2}%, UK {:.2}%), {} switch errors",
            aid.accuracy, aid.recall_us, aid.recall_uk, report.switch_errors
        );
    }
    if let (Some(base), Some(rel)) = (baseline_per, improvement) {
        println!("vs baseline PER {base:.2}: {rel:+.2}% relative");
    }
}

#[derive(Serialize)]
struct ResolvedSweep {
    command: &'static str,
    data: PathBuf,
    alphas: Vec<f64>,
    model_config: AmConfig,
    training: TrainingConfig,
}

fn cmd_sweep(
    common: CommonArgs,
    data: PathBuf,
    alpha: Vec<f64>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = seed {
        config.training.seed = seed;
    }
    let alphas = if alpha.is_empty() {
        config.sweep.alphas.clone()
    } else {
        alpha
    };
    if alphas.is_empty() {
        return Err(Failure::Usage("sweep needs at least one interpolation weight".into()));
    }
    let corpus = read_dataset(&data)?;
    let rows = alpha_sweep(&corpus, &config.model, &config.training, &alphas)?;
    ensure_out_dir(&common.out)?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    let path = common.out.join("sweep.csv");
    fs::write(&path, csv)?;
    write_resolved(
        &common.out,
        &ResolvedSweep {
            command: "sweep",
            data,
            alphas,
            model_config: config.model,
            training: config.training,
        },
    )?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}
