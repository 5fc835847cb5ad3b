//! Command-line entry point: dataset generation, training, evaluation,
//! parameter sweeps, ablation studies, and gradient checking.

mod config;
mod manifest;
mod reports;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pdalign_core::data::{load_feature_file, synth_pda_generate, PdaDatasetPair, SynthConfig};
use pdalign_core::objective::gradient_check_suite;
use pdalign_core::trainer::{
    ablate, evaluate, sweep, train, SweepParam, TrainConfig, TrainedModel,
};
use serde_json::Value;

use crate::config::{apply_to_train_config, parse_config_file, resolved_config_json};
use crate::manifest::{fingerprint_file, manifest_json};
use crate::reports::{emit_reports, fmt_f64, write_atomic, ReportFormat};

/// CLI failure modes mapped onto exit codes: usage errors exit 2, runtime
/// failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<pdalign_core::Error> for CliError {
    fn from(e: pdalign_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "pdalign",
    version,
    about = "Partial domain adaptation training engine with robust pseudo-labeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic PDA dataset as a feature file.
    GenData(GenDataArgs),
    /// Train on a feature file and write reports, summary, and model.
    Train(TrainArgs),
    /// Evaluate a trained model's target accuracy.
    Eval(EvalArgs),
    /// Sweep one loss weight over a list of values.
    Sweep(SweepArgs),
    /// Run the four-arm ablation study over matched seeds.
    Ablate(AblateArgs),
    /// Finite-difference check of every loss gradient on a toy instance.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    k_s: usize,
    #[arg(long, default_value_t = 3)]
    k_t: usize,
    #[arg(long, default_value_t = 16)]
    d_x: usize,
    /// Samples per class, per domain.
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 3.5)]
    center_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    within_std: f64,
    #[arg(long, default_value_t = 4.0)]
    shift_magnitude: f64,
    #[arg(long, default_value_t = 0.4)]
    rotation_angle: f64,
    /// Aim the shift toward the private-class region (negative transfer).
    #[arg(long)]
    shift_toward_private: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigOverrides {
    /// Flat key=value config file, or a previous run's manifest.json.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    enc_hidden: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    clf_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    source_only: bool,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    disable_comp: bool,
    #[arg(long)]
    disable_intra_inter: bool,
    #[arg(long)]
    disable_rpts: bool,
    /// Small desk-scale network widths (64/32/32) instead of the full-scale
    /// defaults (1024/512/512).
    #[arg(long)]
    desk: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Input feature file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model (model.json from a train run).
    #[arg(long)]
    model: PathBuf,
    /// Input feature file with target evaluation labels.
    #[arg(long)]
    data: PathBuf,
    /// Optional output directory for eval.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepParamArg {
    Gamma,
    Eta,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which weight to vary.
    #[arg(long, value_enum)]
    param: SweepParamArg,
    /// Comma-separated list of values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Parallel independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; each runs all four arms with matched
    /// initialization.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Parallel independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    fd_epsilon: f64,
    /// Optional output directory for grad_check.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::GradCheck(args) => cmd_grad_check(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Usage(format!("cannot create out dir {}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<PdaDatasetPair, CliError> {
    let loaded =
        load_feature_file(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    loaded
        .into_pda_pair()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Defaults, then config file, then CLI flags.
fn resolve_config(overrides: &ConfigOverrides) -> Result<TrainConfig, CliError> {
    let mut cfg = if overrides.desk {
        TrainConfig::desk(0)
    } else {
        TrainConfig::default()
    };
    if let Some(path) = &overrides.config {
        let map = parse_config_file(path)?;
        apply_to_train_config(&mut cfg, &map)?;
    }
    let o = overrides;
    macro_rules! set {
        ($field:expr, $opt:expr) => {
            if let Some(v) = $opt {
                $field = v;
            }
        };
    }
    set!(cfg.weights.gamma, o.gamma);
    set!(cfg.weights.eta, o.eta);
    set!(cfg.weights.alpha, o.alpha);
    set!(cfg.weights.beta, o.beta);
    set!(cfg.weights.delta, o.delta);
    set!(cfg.weights.zeta, o.zeta);
    set!(cfg.weights.omega, o.omega);
    set!(cfg.learning_rate, o.learning_rate);
    set!(cfg.epochs, o.epochs);
    set!(cfg.batch_size, o.batch_size);
    set!(cfg.seed, o.seed);
    set!(cfg.enc_hidden, o.enc_hidden);
    set!(cfg.d_z, o.latent_dim);
    set!(cfg.clf_hidden, o.clf_hidden);
    set!(cfg.dropout_p, o.dropout);
    set!(cfg.warmup_epochs, o.warmup_epochs);
    set!(cfg.source_pretrain_epochs, o.pretrain_epochs);
    if o.source_only {
        cfg.source_only = true;
    }
    if o.disable_comp {
        cfg.ablation.disable_comp = true;
    }
    if o.disable_intra_inter {
        cfg.ablation.disable_intra_inter = true;
    }
    if o.disable_rpts {
        cfg.ablation.disable_rpts = true;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    ensure_out_dir(&args.out)?;
    let synth = SynthConfig {
        k_s: args.k_s,
        k_t: args.k_t,
        d_x: args.d_x,
        samples_per_class: args.samples_per_class,
        center_scale: args.center_scale,
        within_std: args.within_std,
        shift_magnitude: args.shift_magnitude,
        rotation_angle: args.rotation_angle,
        shift_toward_private: args.shift_toward_private,
        seed: args.seed,
    };
    let pair = synth_pda_generate(&synth).map_err(|e| CliError::Usage(e.to_string()))?;
    let data_path = args.out.join("data.txt");
    let text = pdalign_core::data::format_feature_file(&pair);
    write_atomic(&data_path, text.as_bytes())?;

    let synth_json = serde_json::to_value(synth).expect("serializable");
    let manifest = manifest_json(
        "gen-data",
        args.seed,
        Some(&manifest::fingerprint_bytes(text.as_bytes())),
        &[],
        &[("synth".into(), synth_json)],
    );
    write_atomic(&args.out.join("manifest.json"), manifest.as_bytes())?;
    println!(
        "wrote {} ({} source, {} target samples)",
        data_path.display(),
        pair.n_s(),
        pair.n_t()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.overrides)?;
    let data = load_data(&args.data)?;
    ensure_out_dir(&args.out)?;
    let fingerprint = fingerprint_file(&args.data)?;

    let out = train(&cfg, &data).map_err(|e| CliError::Runtime(e.to_string()))?;

    let manifest = manifest_json(
        "train",
        cfg.seed,
        Some(&fingerprint),
        &resolved_config_json(&cfg),
        &[],
    );
    write_atomic(&args.out.join("manifest.json"), manifest.as_bytes())?;
    emit_reports(
        &out.reports,
        ReportFormat::Json,
        &args.out.join("reports.json"),
    )?;
    emit_reports(
        &out.reports,
        ReportFormat::Csv,
        &args.out.join("reports.csv"),
    )?;

    let model_json =
        serde_json::to_string(&out.model).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&args.out.join("model.json"), model_json.as_bytes())?;

    let last = out.reports.last().expect("epochs ≥ 1");
    let summary = format!(
        "{{\"epochs\":{},\"final_accuracy\":{},\"final_n_tau\":{},\"final_total\":{},\"initial_param_hash\":\"{:016x}\"}}\n",
        last.epoch,
        last.accuracy.map(fmt_f64).unwrap_or_else(|| "null".into()),
        last.n_tau,
        fmt_f64(last.total),
        out.initial_param_hash,
    );
    write_atomic(&args.out.join("summary.json"), summary.as_bytes())?;

    match last.accuracy {
        Some(acc) => println!(
            "trained {} epochs: final target accuracy {:.4}, n_tau {}",
            last.epoch, acc, last.n_tau
        ),
        None => println!(
            "trained {} epochs (no evaluation labels in data), n_tau {}",
            last.epoch, last.n_tau
        ),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let model_text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Usage(format!("cannot read model {}: {e}", args.model.display())))?;
    let model: TrainedModel = serde_json::from_str(&model_text)
        .map_err(|e| CliError::Usage(format!("{}: invalid model: {e}", args.model.display())))?;
    let data = load_data(&args.data)?;
    let accuracy = evaluate(&model, &data).map_err(|e| CliError::Runtime(e.to_string()))?;
    let line = format!("{{\"accuracy\":{}}}\n", fmt_f64(accuracy));
    print!("{line}");
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        write_atomic(&out.join("eval.json"), line.as_bytes())?;
        let manifest = manifest_json(
            "eval",
            model.config.seed,
            Some(&fingerprint_file(&args.data)?),
            &resolved_config_json(&model.config),
            &[(
                "model_fingerprint".into(),
                Value::from(manifest::fingerprint_bytes(model_text.as_bytes())),
            )],
        );
        write_atomic(&out.join("manifest.json"), manifest.as_bytes())?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.overrides)?;
    let data = load_data(&args.data)?;
    ensure_out_dir(&args.out)?;
    let param = match args.param {
        SweepParamArg::Gamma => SweepParam::Gamma,
        SweepParamArg::Eta => SweepParam::Eta,
    };
    let results = sweep(&cfg, &data, param, &args.values, args.jobs.max(1))
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let manifest = manifest_json(
        "sweep",
        cfg.seed,
        Some(&fingerprint_file(&args.data)?),
        &resolved_config_json(&cfg),
        &[
            ("sweep_param".into(), Value::from(param.name())),
            ("sweep_values".into(), Value::from(args.values.clone())),
        ],
    );
    write_atomic(&args.out.join("manifest.json"), manifest.as_bytes())?;

    let mut json = String::from("[\n");
    let mut csv = format!("{},accuracy\n", param.name());
    for (i, (value, acc)) in results.iter().enumerate() {
        json.push_str(&format!(
            "{{\"{}\":{},\"accuracy\":{}}}{}",
            param.name(),
            fmt_f64(*value),
            fmt_f64(*acc),
            if i + 1 < results.len() { ",\n" } else { "\n" }
        ));
        csv.push_str(&format!("{},{}\n", fmt_f64(*value), fmt_f64(*acc)));
    }
    json.push_str("]\n");
    write_atomic(&args.out.join("sweep.json"), json.as_bytes())?;
    write_atomic(&args.out.join("sweep.csv"), csv.as_bytes())?;
    for (value, acc) in &results {
        println!("{} = {value}: accuracy {acc:.4}", param.name());
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.overrides)?;
    let data = load_data(&args.data)?;
    ensure_out_dir(&args.out)?;
    let report = ablate(&cfg, &data, &args.seeds, args.jobs.max(1))
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let manifest = manifest_json(
        "ablate",
        cfg.seed,
        Some(&fingerprint_file(&args.data)?),
        &resolved_config_json(&cfg),
        &[("ablation_seeds".into(), Value::from(args.seeds.clone()))],
    );
    write_atomic(&args.out.join("manifest.json"), manifest.as_bytes())?;

    let mut json = String::from("[\n");
    let mut csv = String::from("arm,seed,accuracy\n");
    for (i, arm) in report.arms.iter().enumerate() {
        let accs: Vec<String> = arm.accuracies.iter().map(|a| fmt_f64(*a)).collect();
        json.push_str(&format!(
            "{{\"arm\":\"{}\",\"mean\":{},\"stddev\":{},\"accuracies\":[{}]}}{}",
            arm.name,
            fmt_f64(arm.mean),
            fmt_f64(arm.stddev),
            accs.join(","),
            if i + 1 < report.arms.len() {
                ",\n"
            } else {
                "\n"
            }
        ));
        for (seed, acc) in args.seeds.iter().zip(&arm.accuracies) {
            csv.push_str(&format!("{},{},{}\n", arm.name, seed, fmt_f64(*acc)));
        }
        println!(
            "{:16} mean {:.4} stddev {:.4}",
            arm.name, arm.mean, arm.stddev
        );
    }
    json.push_str("]\n");
    write_atomic(&args.out.join("ablation.json"), json.as_bytes())?;
    write_atomic(&args.out.join("ablation.csv"), csv.as_bytes())?;
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> Result<(), CliError> {
    let results = gradient_check_suite(args.seed, args.fd_epsilon)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut max_err: f64 = 0.0;
    let mut json = String::from("[\n");
    for (i, r) in results.iter().enumerate() {
        println!("{:6} max relative error {:.3e}", r.name, r.max_rel_error);
        max_err = max_err.max(r.max_rel_error);
        json.push_str(&format!(
            "{{\"term\":\"{}\",\"max_rel_error\":{}}}{}",
            r.name,
            fmt_f64(r.max_rel_error),
            if i + 1 < results.len() { ",\n" } else { "\n" }
        ));
    }
    json.push_str("]\n");
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        write_atomic(&out.join("grad_check.json"), json.as_bytes())?;
    }
    println!("max relative error {max_err:.3e}");
    if max_err < 1e-4 {
        println!("PASS (< 1e-4)");
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {max_err:.3e} ≥ 1e-4"
        )))
    }
}
