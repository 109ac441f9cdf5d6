//! Command-line driver: `train`, `eval`, `gradcheck`, `params` and `synth`.
//!
//! Exit codes: 0 success, 1 configuration error or failed check, 2 data or
//! checkpoint error, 3 numerical failure.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use regunet::gradcheck::{gradient_check_with, tiny_config, GradCheckOptions};
use regunet::train::{evaluate_at, train_with, Evaluation};
use regunet::{
    export_history, load_checkpoint, load_csv, save_checkpoint, standardize, stratified_split,
    synthetic_dataset, AdamConfig, DataRecord, Dataset, HistoryFormat, Model, ModelConfig,
    SyntheticConfig, TrainConfig, Variant,
};

use config::{Impute, RunConfig, DEFAULT_LABEL};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    /// A requested check ran and did not hold.
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] regunet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use regunet::Error as E;
        match self {
            CliError::Config(_) | CliError::Check(_) => 1,
            CliError::Core(e) => match e {
                E::Config(_) => 1,
                E::Data(_)
                | E::Checkpoint(_)
                | E::Io(_)
                | E::Json(_)
                | E::Csv(_)
                | E::ShapeMismatch { .. } => 2,
                E::NonFinite(_)
                | E::NonFiniteGradient(_)
                | E::Diverged { .. }
                | E::MissingCache(_) => 3,
            },
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "regunet",
    version,
    about = "Train and inspect regularized feed-forward classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// Parsed once per process; boxing the train arguments buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
enum Command {
    /// Split, standardize, build, train and write artifacts.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a CSV file.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients at tiny scale.
    Gradcheck(GradcheckArgs),
    /// Print the layer table and parameter count of a variant.
    Params(ParamsArgs),
    /// Write a linearly separable synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON or key=value file; flags given here override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train on generated data instead of a CSV file.
    #[arg(long)]
    synthetic: bool,
    /// Synthetic sample count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    flip_rate: Option<f64>,
    #[arg(long, value_enum)]
    impute: Option<Impute>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    head_width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
}

impl TrainArgs {
    fn resolve(self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        overlay!(
            label,
            variant,
            alpha,
            epochs,
            batch_size,
            val_fraction,
            seed,
            out,
            n,
            margin,
            flip_rate,
            impute,
            hidden_width,
            head_width,
            lr,
            log_every
        );
        if let Some(data) = self.data {
            cfg.data = Some(data);
            cfg.synthetic = false;
        }
        if self.synthetic {
            cfg.synthetic = true;
            cfg.data = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Subset {
    All,
    Train,
    Val,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Label column; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "all")]
    subset: Subset,
    #[arg(long, value_enum, default_value = "none")]
    impute: Impute,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Check one variant; all four by default.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long)]
    variant: Variant,
    /// Exit with status 1 unless the reported total equals this.
    #[arg(long)]
    expect: Option<usize>,
    /// Count a single branch body only.
    #[arg(long)]
    branch_only: bool,
    #[arg(long, default_value_t = 41)]
    input_dim: usize,
    #[arg(long, default_value_t = 512)]
    hidden_width: usize,
    #[arg(long, default_value_t = 128)]
    head_width: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 41)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    #[arg(long, default_value_t = 0.0)]
    flip_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_LABEL)]
    label: String,
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Params(a) => cmd_params(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(
        args,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

fn io(e: std::io::Error) -> CliError {
    CliError::Core(e.into())
}

fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn load_dataset(cfg: &RunConfig, err: &mut dyn Write) -> CliResult<Dataset> {
    if cfg.synthetic {
        let data = synthetic_dataset(&SyntheticConfig {
            n: cfg.n,
            dim: 41,
            margin: cfg.margin,
            flip_rate: cfg.flip_rate,
            seed: cfg.seed,
        })?;
        return Ok(data.dataset);
    }
    let path = cfg.data.as_deref().expect("validated");
    let (ds, report) = load_csv(path, &cfg.label, cfg.impute.into())?;
    if report.rows_dropped() > 0 {
        writeln!(
            err,
            "dropped {} of {} rows with missing values (lines {:?})",
            report.rows_dropped(),
            report.rows_read,
            report.dropped_lines
        )
        .map_err(io)?;
    }
    Ok(ds)
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let cfg = args.resolve()?;
    let raw = load_dataset(&cfg, err)?;
    let split = stratified_split(&raw, cfg.val_fraction, cfg.seed)?;
    let ds = standardize(raw, &split)?;

    let model_cfg = ModelConfig::new(cfg.variant)
        .with_dims(ds.n_features(), cfg.hidden_width, cfg.head_width)
        .with_alpha(cfg.alpha)
        .with_seed(cfg.seed);
    let mut model = Model::build(model_cfg)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        shuffle_seed: cfg.seed,
    };
    std::fs::create_dir_all(&cfg.out).map_err(io)?;

    let mut progress = Ok(());
    let history = train_with(&mut model, &ds, &split, &train_cfg, |r| {
        if cfg.log_every > 0
            && (r.epoch % cfg.log_every == 0 || r.epoch == cfg.epochs)
            && progress.is_ok()
        {
            progress = writeln!(
                out,
                "epoch {:>4}  train_loss {:.4}  penalty {:.4}  train_acc {:.2}%  val_loss {:.4}  val_acc {:.2}%",
                r.epoch,
                r.train_loss,
                r.train_penalty,
                r.train_acc,
                r.val_loss.unwrap_or(f64::NAN),
                r.val_acc.unwrap_or(f64::NAN)
            );
        }
    })?;
    progress.map_err(io)?;

    export_history(&history, &cfg.out.join("history.csv"), HistoryFormat::Csv)?;
    export_history(&history, &cfg.out.join("history.json"), HistoryFormat::Json)?;
    let record = DataRecord {
        feature_names: ds.feature_names().to_vec(),
        label_column: cfg.label.clone(),
        val_fraction: cfg.val_fraction,
        split_seed: cfg.seed,
        standardization: ds.standardization().expect("standardized above").clone(),
    };
    save_checkpoint(&model, Some(&record), &cfg.out.join("checkpoint.json"))?;
    let resolved = serde_json::to_string_pretty(&cfg).map_err(regunet::Error::from)?;
    regunet::write_atomic(&cfg.out.join("resolved-config.json"), resolved.as_bytes())?;

    let train_eval = evaluate_at(&model, &ds, &split.train, 0.5)?;
    let val_eval = evaluate_at(&model, &ds, &split.val, 0.5)?;
    writeln!(
        out,
        "{} {:.2}% {:.2}% {} {}",
        cfg.variant,
        train_eval.accuracy,
        val_eval.accuracy,
        percent(train_eval.loss),
        percent(val_eval.loss)
    )
    .map_err(io)
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> CliResult {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let record = ckpt.data.ok_or_else(|| {
        regunet::Error::Checkpoint(
            "checkpoint carries no preprocessing record; cannot evaluate raw data".into(),
        )
    })?;
    let label = args.label.unwrap_or_else(|| record.label_column.clone());
    let (raw, _) = load_csv(&args.data, &label, args.impute.into())?;
    if raw.feature_names() != record.feature_names.as_slice() {
        return Err(regunet::Error::Data(format!(
            "{} has {} feature columns but the checkpoint was trained on {}",
            args.data.display(),
            raw.n_features(),
            record.feature_names.len()
        ))
        .into());
    }
    let indices = match args.subset {
        Subset::All => (0..raw.len()).collect(),
        Subset::Train => stratified_split(&raw, record.val_fraction, record.split_seed)?.train,
        Subset::Val => stratified_split(&raw, record.val_fraction, record.split_seed)?.val,
    };
    let ds = raw.apply_standardizer(record.standardization)?;
    let Evaluation {
        loss,
        accuracy,
        count,
    } = evaluate_at(&ckpt.model, &ds, &indices, args.threshold)?;
    let subset = match args.subset {
        Subset::All => "all",
        Subset::Train => "train",
        Subset::Val => "val",
    };
    writeln!(
        out,
        "{} {subset} n={count} acc {accuracy:.2}% loss {}",
        ckpt.model.variant(),
        percent(loss)
    )
    .map_err(io)
}

fn cmd_gradcheck(args: GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let variants = match args.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let opts = GradCheckOptions {
        inject_fault: args.inject_fault,
        ..Default::default()
    };
    let mut failures = Vec::new();
    for v in variants {
        let r = gradient_check_with(&tiny_config(v, args.seed), args.seed, opts)?;
        writeln!(
            out,
            "{:<16} max_rel_error {:.3e}  worst {}  checked {}  kink_skipped {}  l1_skipped {}  {}",
            v.name(),
            r.max_rel_error,
            r.worst_param,
            r.checked,
            r.skipped_kink,
            r.skipped_l1,
            if r.passed() { "ok" } else { "FAIL" }
        )
        .map_err(io)?;
        if !r.passed() {
            failures.push(format!(
                "{v} at {} (relative error {:.3e})",
                r.worst_param, r.max_rel_error
            ));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check failed: {}",
            failures.join("; ")
        )))
    }
}

fn cmd_params(args: ParamsArgs, out: &mut dyn Write) -> CliResult {
    let model_cfg = ModelConfig::new(args.variant).with_dims(
        args.input_dim,
        args.hidden_width,
        args.head_width,
    );
    let model = Model::build(model_cfg)?;
    let layers: Vec<_> = model
        .layers()
        .into_iter()
        .filter(|l| !args.branch_only || l.name.starts_with("branch0."))
        .collect();
    writeln!(
        out,
        "{:<24} {:<13} {:>6} {:>6} {:>10}",
        "layer", "kind", "in", "out", "params"
    )
    .map_err(io)?;
    for l in &layers {
        let kind = serde_json::to_value(l.kind).map_err(regunet::Error::from)?;
        writeln!(
            out,
            "{:<24} {:<13} {:>6} {:>6} {:>10}",
            l.name,
            kind.as_str().unwrap_or_default(),
            l.input_width,
            l.output_width,
            l.params
        )
        .map_err(io)?;
    }
    let total = if args.branch_only {
        model.branch_param_count()
    } else {
        model.param_count()
    };
    writeln!(out, "total {total}").map_err(io)?;
    match args.expect {
        Some(n) if n != total => Err(CliError::Check(format!(
            "expected {n} parameters, counted {total}"
        ))),
        _ => Ok(()),
    }
}

fn cmd_synth(args: SynthArgs, out: &mut dyn Write) -> CliResult {
    let data = synthetic_dataset(&SyntheticConfig {
        n: args.n,
        dim: args.dim,
        margin: args.margin,
        flip_rate: args.flip_rate,
        seed: args.seed,
    })?;
    ensure_parent(&args.out)?;
    data.dataset.write_csv(&args.out, &args.label)?;
    writeln!(
        out,
        "wrote {} rows ({} positive, {} flipped) to {}",
        data.dataset.len(),
        data.dataset.positives(),
        data.flipped.len(),
        args.out.display()
    )
    .map_err(io)
}

fn ensure_parent(path: &Path) -> CliResult {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(io),
        None => Ok(()),
    }
}
