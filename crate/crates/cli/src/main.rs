//! `ope` — replicated off-policy evaluation benchmarks from the command
//! line.
//!
//! Each environment subcommand (`simulate-cb`, `bandit-from-file`,
//! `modelwin`, `modelfail`) starts from that environment's preset; `evaluate`
//! takes the environment from a config file. Settings resolve in order:
//! preset, then `--config` file, then explicit flags. Results land in the
//! output directory as `summary.csv`, `cdf.csv`, and per-estimator
//! plot-ready `.dat` series.
//!
//! Fatal configuration errors print one machine-readable JSON line to stderr
//! (`{"error": "..."}`) and exit with status 2; runtime failures exit with
//! status 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ope_core::envs::write_dataset_csv;
use ope_core::harness::{
    emit_report, run_experiment, EnvironmentSpec, ExperimentConfig, ReportFormat,
};
use ope_core::OpeError;

#[derive(Parser)]
#[command(name = "ope", version, about = "Off-policy evaluation benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic contextual bandit with a linear-logistic logging policy.
    SimulateCb(RunArgs),
    /// Contextual bandit built from a delimiter-separated classification
    /// file (a built-in synthetic table is used when no file is given).
    BanditFromFile(BanditFromFileArgs),
    /// ModelWin tabular MDP (horizon 20).
    Modelwin(RunArgs),
    /// ModelFail tabular MDP with aliased middle states (horizon 2).
    Modelfail(RunArgs),
    /// Run whatever experiment a config file describes.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; replicate j derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated sample sizes, e.g. `--n 5000,10000`.
    #[arg(long)]
    n: Option<String>,
    /// Replicates per sample size.
    #[arg(long)]
    replicates: Option<usize>,
    /// Logging-policy mixing rate (classification and tabular domains).
    #[arg(long)]
    alpha: Option<f64>,
    /// Discount factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated estimators among dm,ipw,mlipw,dr,mrdr,drunknown.
    #[arg(long)]
    estimators: Option<String>,
    /// Confidence level for the reported intervals.
    #[arg(long)]
    ci_level: Option<f64>,
    /// Also write the first replicate's dataset (canonical CSV layout).
    #[arg(long)]
    emit_dataset: bool,
}

#[derive(Args)]
struct BanditFromFileArgs {
    /// Classification file: numeric feature columns, final integer label.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Config file; must contain an `environment` key.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    run: RunArgsNoConfig,
}

#[derive(Args)]
struct RunArgsNoConfig {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    ci_level: Option<f64>,
    #[arg(long)]
    emit_dataset: bool,
}

impl RunArgsNoConfig {
    fn into_run(self, config: Option<PathBuf>) -> RunArgs {
        RunArgs {
            config,
            seed: self.seed,
            out: self.out,
            n: self.n,
            replicates: self.replicates,
            alpha: self.alpha,
            gamma: self.gamma,
            estimators: self.estimators,
            ci_level: self.ci_level,
            emit_dataset: self.emit_dataset,
        }
    }
}

fn build_config(preset: Option<EnvironmentSpec>, args: &RunArgs) -> Result<ExperimentConfig, OpeError> {
    let mut cfg = match (&args.config, preset) {
        (Some(path), _) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if let Some(env) = preset {
                if cfg.environment != env {
                    return Err(OpeError::InvalidConfig(format!(
                        "config file sets environment {} but the subcommand is {}",
                        cfg.environment, env
                    )));
                }
            }
            cfg
        }
        (None, Some(env)) => ExperimentConfig::preset(env),
        (None, None) => {
            return Err(OpeError::InvalidConfig(
                "evaluate requires --config with an environment key".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(n) = &args.n {
        cfg.apply("n", n)?;
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(alpha) = args.alpha {
        cfg.apply("alpha", &alpha.to_string())?;
    }
    if let Some(gamma) = args.gamma {
        cfg.apply("gamma", &gamma.to_string())?;
    }
    if let Some(estimators) = &args.estimators {
        cfg.apply("estimators", estimators)?;
    }
    if let Some(level) = args.ci_level {
        cfg.apply("ci_level", &level.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &ExperimentConfig, emit_dataset: bool) -> Result<(), OpeError> {
    let report = run_experiment(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut files = emit_report(&report, ReportFormat::Csv, &cfg.out_dir)?;
    files.extend(emit_report(&report, ReportFormat::PlotData, &cfg.out_dir)?);
    if emit_dataset {
        let path = cfg.out_dir.join("dataset_rep0.csv");
        let data = ope_core::harness::first_replicate_dataset(cfg)?;
        write_dataset_csv(&data, &path)?;
        files.push(path);
    }

    println!("environment: {}", cfg.environment);
    println!("true value:  {:.6}", report.true_value);
    println!(
        "{:<10} {:>8} {:>12} {:>9} {:>9} {:>13} {:>9}",
        "estimator", "n", "mse", "rel_mse", "coverage", "mean_estimate", "excluded"
    );
    for row in &report.rows {
        println!(
            "{:<10} {:>8} {:>12.6e} {:>9.4} {:>9.3} {:>13.6} {:>9}",
            row.estimator.to_string(),
            row.n,
            row.mse,
            row.rel_mse,
            row.coverage,
            row.mean_estimate,
            row.excluded
        );
    }
    for file in files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, emit_dataset) = {
        let built = match cli.command {
            Command::SimulateCb(args) => {
                build_config(Some(EnvironmentSpec::SyntheticCb), &args)
                    .map(|c| (c, args.emit_dataset))
            }
            Command::Modelwin(args) => build_config(Some(EnvironmentSpec::ModelWin), &args)
                .map(|c| (c, args.emit_dataset)),
            Command::Modelfail(args) => build_config(Some(EnvironmentSpec::ModelFail), &args)
                .map(|c| (c, args.emit_dataset)),
            Command::BanditFromFile(args) => {
                build_config(Some(EnvironmentSpec::Classification), &args.run).map(|mut c| {
                    if let Some(data) = args.data {
                        c.data_file = Some(data);
                    }
                    (c, args.run.emit_dataset)
                })
            }
            Command::Evaluate(args) => {
                let run = args.run.into_run(Some(args.config));
                build_config(None, &run).map(|c| (c, run.emit_dataset))
            }
        };
        match built {
            Ok(pair) => pair,
            Err(e) => {
                eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
                return ExitCode::from(2);
            }
        }
    };

    match run(&cfg, emit_dataset) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
