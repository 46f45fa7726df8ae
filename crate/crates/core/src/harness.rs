//! Config-driven replicated experiment runner: generates seeded datasets,
//! runs the requested estimators on every replicate, aggregates MSE, relative
//! MSE against the known-policy IPW baseline, CI coverage, and squared-error
//! CDFs, and emits CSV or plot-ready data files.
//!
//! Replicates run in parallel; aggregation is an ordered reduction over the
//! replicate index, so reports are byte-identical across thread counts.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::envs::{
    classification_to_bandit, derive_seed, random_target_policy, read_labeled_table,
    synthetic_labeled_table, tabular_logging_family, tabular_target, target_value_on_table,
    train_base_policy, LabeledTable, SyntheticCbConfig, SyntheticCbEnv, TabularMdp,
};
use crate::error::{OpeError, Result};
use crate::estimators::{
    dm_estimate, dr_estimate, drunknown_estimate, fit_value_lstsq, ipw_estimate, mlipw_estimate,
    mrdr_estimate, EstimateReport, LoggingRef,
};
use crate::policy::{MixturePolicy, ObsTablePolicy, PolicyModel, SoftmaxLinearPolicy};
use crate::value::FeatureMap;

// ── Config ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvironmentSpec {
    SyntheticCb,
    Classification,
    ModelWin,
    ModelFail,
}

impl FromStr for EnvironmentSpec {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "synthetic-cb" | "synthetic_cb" => Ok(Self::SyntheticCb),
            "classification" => Ok(Self::Classification),
            "modelwin" => Ok(Self::ModelWin),
            "modelfail" => Ok(Self::ModelFail),
            other => Err(OpeError::InvalidConfig(format!(
                "unknown environment {other:?}"
            ))),
        }
    }
}

impl fmt::Display for EnvironmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::SyntheticCb => "synthetic-cb",
            Self::Classification => "classification",
            Self::ModelWin => "modelwin",
            Self::ModelFail => "modelfail",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Dm,
    Ipw,
    Mlipw,
    Dr,
    Mrdr,
    DrUnknown,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        Self::Dm,
        Self::Ipw,
        Self::Mlipw,
        Self::Dr,
        Self::Mrdr,
        Self::DrUnknown,
    ];
}

impl FromStr for EstimatorKind {
    type Err = OpeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dm" => Ok(Self::Dm),
            "ipw" => Ok(Self::Ipw),
            "mlipw" => Ok(Self::Mlipw),
            "dr" => Ok(Self::Dr),
            "mrdr" => Ok(Self::Mrdr),
            "drunknown" => Ok(Self::DrUnknown),
            other => Err(OpeError::InvalidConfig(format!(
                "unknown estimator {other:?}"
            ))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Dm => "dm",
            Self::Ipw => "ipw",
            Self::Mlipw => "mlipw",
            Self::Dr => "dr",
            Self::Mrdr => "mrdr",
            Self::DrUnknown => "drunknown",
        };
        write!(f, "{name}")
    }
}

/// Replicated-experiment description. Parsed from a flat `key = value` text
/// config; see [`ExperimentConfig::apply`] for the key list.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub estimators: Vec<EstimatorKind>,
    /// Replicates per sample size.
    pub replicates: usize,
    pub sample_sizes: Vec<usize>,
    /// Mixing rate of the logging policy (classification and tabular).
    pub mixture_alpha: f64,
    pub gamma: f64,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    /// Confidence level of the reported intervals (e.g. 0.95).
    pub ci_level: f64,
    /// Classification file; the synthetic stand-in table is used when absent.
    pub data_file: Option<PathBuf>,
    /// Horizon override (ModelWin only).
    pub horizon: Option<usize>,
    /// Context draws for the synthetic-CB true-value oracle.
    pub oracle_draws: usize,
}

impl ExperimentConfig {
    /// Environment preset with the defaults the benchmarks use.
    pub fn preset(environment: EnvironmentSpec) -> Self {
        let (sample_sizes, replicates, mixture_alpha) = match environment {
            EnvironmentSpec::SyntheticCb => (vec![10_000], 100, 0.4),
            EnvironmentSpec::Classification => (vec![10_000], 100, 0.4),
            EnvironmentSpec::ModelWin | EnvironmentSpec::ModelFail => {
                (vec![10, 20, 30, 40], 200, 0.5)
            }
        };
        Self {
            environment,
            estimators: vec![
                EstimatorKind::Ipw,
                EstimatorKind::Mlipw,
                EstimatorKind::Mrdr,
                EstimatorKind::DrUnknown,
            ],
            replicates,
            sample_sizes,
            mixture_alpha,
            gamma: 1.0,
            base_seed: 1,
            out_dir: PathBuf::from("ope-out"),
            ci_level: 0.95,
            data_file: None,
            horizon: None,
            oracle_draws: 1_000_000,
        }
    }

    /// Applies one `key = value` setting. Recognized keys:
    /// `environment`, `estimators` (comma list), `replicates`,
    /// `sample_sizes` (comma list; alias `n`), `alpha`, `gamma`, `seed`,
    /// `out_dir`, `ci_level`, `data_file`, `horizon`, `oracle_draws`.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| OpeError::InvalidConfig(format!("bad {what}: {value:?}"));
        match key {
            "environment" => self.environment = value.parse()?,
            "estimators" => {
                let mut parsed = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        parsed.push(part.parse()?);
                    }
                }
                self.estimators = parsed;
            }
            "replicates" => self.replicates = value.trim().parse().map_err(|_| bad("replicates"))?,
            "sample_sizes" | "n" => {
                let mut sizes = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if !part.is_empty() {
                        sizes.push(part.parse().map_err(|_| bad("sample size"))?);
                    }
                }
                self.sample_sizes = sizes;
            }
            "alpha" => self.mixture_alpha = value.trim().parse().map_err(|_| bad("alpha"))?,
            "gamma" => self.gamma = value.trim().parse().map_err(|_| bad("gamma"))?,
            "seed" => self.base_seed = value.trim().parse().map_err(|_| bad("seed"))?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "ci_level" => self.ci_level = value.trim().parse().map_err(|_| bad("ci_level"))?,
            "data_file" => self.data_file = Some(PathBuf::from(value.trim())),
            "horizon" => self.horizon = Some(value.trim().parse().map_err(|_| bad("horizon"))?),
            "oracle_draws" => {
                self.oracle_draws = value.trim().parse().map_err(|_| bad("oracle_draws"))?
            }
            other => {
                return Err(OpeError::InvalidConfig(format!("unknown key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` config file (`#` starts a comment). The
    /// `environment` key selects the preset, so it must appear before any
    /// key it would otherwise reset.
    pub fn from_str_config(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let env = pairs
            .iter()
            .find(|(k, _)| k == "environment")
            .ok_or_else(|| OpeError::InvalidConfig("missing environment key".into()))?;
        let mut cfg = Self::preset(env.1.parse()?);
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_config(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(OpeError::InvalidConfig("replicates must be >= 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n == 0) {
            return Err(OpeError::InvalidConfig(
                "sample_sizes must be positive".into(),
            ));
        }
        if !(self.mixture_alpha > 0.0 && self.mixture_alpha < 1.0) {
            return Err(OpeError::InvalidConfig("alpha must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(OpeError::InvalidConfig("gamma must be in [0, 1]".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(OpeError::InvalidConfig("ci_level must be in (0, 1)".into()));
        }
        if self.horizon.is_some() && self.environment != EnvironmentSpec::ModelWin {
            return Err(OpeError::InvalidConfig(
                "horizon override applies to modelwin only".into(),
            ));
        }
        Ok(())
    }

    /// Key/value echo written into report headers.
    pub fn echo(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| {
            v.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let estimators = self
            .estimators
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut echo = vec![
            ("environment".to_string(), self.environment.to_string()),
            ("estimators".to_string(), estimators),
            ("replicates".to_string(), self.replicates.to_string()),
            ("sample_sizes".to_string(), list(&self.sample_sizes)),
            ("alpha".to_string(), self.mixture_alpha.to_string()),
            ("gamma".to_string(), self.gamma.to_string()),
            ("seed".to_string(), self.base_seed.to_string()),
            ("ci_level".to_string(), self.ci_level.to_string()),
        ];
        if let Some(path) = &self.data_file {
            echo.push(("data_file".to_string(), path.display().to_string()));
        }
        if let Some(h) = self.horizon {
            echo.push(("horizon".to_string(), h.to_string()));
        }
        echo
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            OpeError::InvalidConfig(format!("line {}: expected key = value", no + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

// ── Report ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct EstimatorRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub mse: f64,
    pub rel_mse: f64,
    pub coverage: f64,
    pub mean_estimate: f64,
    /// Replicates dropped because the estimator failed (for example an MLE
    /// separation at tiny n).
    pub excluded: usize,
}

#[derive(Debug, Clone)]
pub struct CdfSeries {
    pub estimator: EstimatorKind,
    /// Sorted `(squared error, empirical cdf)` support points.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_echo: Vec<(String, String)>,
    pub true_value: f64,
    pub rows: Vec<EstimatorRow>,
    /// Squared-error CDFs at the largest configured sample size.
    pub cdf: Vec<CdfSeries>,
    pub cdf_sample_size: usize,
}

// ── Prepared environments ───────────────────────────────────────────────

enum LoggingFamily {
    Softmax(SoftmaxLinearPolicy),
    Mixture(MixturePolicy<SoftmaxLinearPolicy>),
    MixtureTable(MixturePolicy<ObsTablePolicy>),
}

enum Generator {
    Synthetic(SyntheticCbEnv),
    Classification {
        table: LabeledTable,
        base: SoftmaxLinearPolicy,
        alpha: f64,
    },
    Tabular {
        mdp: TabularMdp,
        logging: MixturePolicy<ObsTablePolicy>,
        gamma: f64,
    },
}

impl Generator {
    fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            Generator::Synthetic(env) => Ok(env.generate(n, seed)),
            Generator::Classification { table, base, alpha } => {
                classification_to_bandit(table, base, *alpha, n, seed)
            }
            Generator::Tabular { mdp, logging, gamma } => mdp.rollout(logging, n, seed, *gamma),
        }
    }
}

struct Prepared {
    true_value: f64,
    target: Box<dyn PolicyModel>,
    family: LoggingFamily,
    features: FeatureMap,
    generator: Generator,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    match cfg.environment {
        EnvironmentSpec::SyntheticCb => {
            let mut synth = SyntheticCbConfig::new(0, cfg.base_seed);
            synth.oracle_draws = cfg.oracle_draws;
            let env = SyntheticCbEnv::from_config(&synth);
            let true_value = env.true_value(cfg.oracle_draws, derive_seed(cfg.base_seed, 2));
            let features = FeatureMap::TimeAugmented {
                horizon: 1,
                feat_dim: env.feat_dim,
            };
            Ok(Prepared {
                true_value,
                target: Box::new(env.target_policy()),
                family: LoggingFamily::Softmax(env.logging_family()),
                features,
                generator: Generator::Synthetic(env),
            })
        }
        EnvironmentSpec::Classification => {
            let table = match &cfg.data_file {
                Some(path) => read_labeled_table(path)?,
                None => synthetic_labeled_table(5, 6, 4_000, derive_seed(cfg.base_seed, 0x7AB)),
            };
            let (train, eval) = table.split(0.5, derive_seed(cfg.base_seed, 0x5B17))?;
            let base = train_base_policy(&train)?;
            let target = random_target_policy(eval.context_dim(), cfg.base_seed);
            let true_value = target_value_on_table(&eval, &target);
            let family = MixturePolicy::new(base.clone(), 0.5)?;
            Ok(Prepared {
                true_value,
                target: Box::new(target),
                family: LoggingFamily::Mixture(family),
                // The benchmark uses a constant value model for this domain.
                features: FeatureMap::Constant,
                generator: Generator::Classification {
                    table: eval,
                    base,
                    alpha: cfg.mixture_alpha,
                },
            })
        }
        EnvironmentSpec::ModelWin | EnvironmentSpec::ModelFail => {
            let mdp = match (cfg.environment, cfg.horizon) {
                (EnvironmentSpec::ModelWin, Some(h)) => TabularMdp::modelwin_with_horizon(h)?,
                (EnvironmentSpec::ModelWin, None) => TabularMdp::modelwin(),
                _ => TabularMdp::modelfail(),
            };
            if cfg.gamma < 0.2 && mdp.horizon() > 10 {
                eprintln!(
                    "warning: gamma = {} with horizon {} makes the gamma^(-t) weights in the \
                     regression class poorly conditioned",
                    cfg.gamma,
                    mdp.horizon()
                );
            }
            let target = tabular_target(&mdp, cfg.gamma)?;
            let true_value = mdp.true_value_dp(&target, mdp.horizon(), cfg.gamma);
            let logging = tabular_logging_family(&mdp, cfg.mixture_alpha, cfg.gamma)?;
            // Constant value model: a state- or action-aware model on these
            // tiny horizons lets the variance-minimizing fit interpolate the
            // pseudo-rewards outright and swamps the logging-score direction,
            // so the benchmarks use the intercept class.
            let features = FeatureMap::Constant;
            Ok(Prepared {
                true_value,
                target: Box::new(target),
                family: LoggingFamily::MixtureTable(logging.clone()),
                features,
                generator: Generator::Tabular {
                    mdp,
                    logging,
                    gamma: cfg.gamma,
                },
            })
        }
    }
}

impl Prepared {
    fn run_estimator(
        &self,
        kind: EstimatorKind,
        data: &Dataset,
        alpha: f64,
    ) -> Result<EstimateReport> {
        let target = self.target.as_ref();
        match kind {
            EstimatorKind::Ipw => ipw_estimate(data, target, alpha),
            EstimatorKind::Dm => {
                let model = fit_value_lstsq(data, target, LoggingRef::Logged, &self.features)?;
                dm_estimate(data, target, &model, alpha)
            }
            EstimatorKind::Dr => {
                let model = fit_value_lstsq(data, target, LoggingRef::Logged, &self.features)?;
                dr_estimate(data, target, LoggingRef::Logged, &model, alpha)
            }
            EstimatorKind::Mlipw => match &self.family {
                LoggingFamily::Softmax(f) => mlipw_estimate(data, target, f, alpha),
                LoggingFamily::Mixture(f) => mlipw_estimate(data, target, f, alpha),
                LoggingFamily::MixtureTable(f) => mlipw_estimate(data, target, f, alpha),
            },
            EstimatorKind::Mrdr => match &self.family {
                LoggingFamily::Softmax(f) => {
                    mrdr_estimate(data, target, f, &self.features, alpha)
                }
                LoggingFamily::Mixture(f) => {
                    mrdr_estimate(data, target, f, &self.features, alpha)
                }
                LoggingFamily::MixtureTable(f) => {
                    mrdr_estimate(data, target, f, &self.features, alpha)
                }
            },
            EstimatorKind::DrUnknown => match &self.family {
                LoggingFamily::Softmax(f) => {
                    drunknown_estimate(data, target, f, &self.features, alpha)
                }
                LoggingFamily::Mixture(f) => {
                    drunknown_estimate(data, target, f, &self.features, alpha)
                }
                LoggingFamily::MixtureTable(f) => {
                    drunknown_estimate(data, target, f, &self.features, alpha)
                }
            },
        }
    }
}

// ── Runner ──────────────────────────────────────────────────────────────

struct ReplicateOutcome {
    /// One slot per requested estimator.
    estimates: Vec<Result<EstimateReport>>,
    /// The IPW baseline squared error (always computed for the denominator).
    ipw_sq_err: Result<f64>,
}

/// Runs every replicate of the configured experiment. Replicate `j` draws its
/// dataset from a seed derived from the base seed and `j` alone, so the same
/// replicate seeds are reused across sample sizes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let alpha = 1.0 - cfg.ci_level;
    let true_value = prepared.true_value;
    let max_n = *cfg.sample_sizes.iter().max().expect("validated nonempty");

    let mut rows = Vec::new();
    let mut cdf = Vec::new();
    let mut cdf_sample_size = 0;

    for &n in &cfg.sample_sizes {
        let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
            .into_par_iter()
            .map(|j| {
                let seed = derive_seed(derive_seed(cfg.base_seed, 0xDA7A), j as u64);
                let data = match prepared.generator.generate(n, seed) {
                    Ok(data) => data,
                    Err(e) => {
                        let msg = e.to_string();
                        return ReplicateOutcome {
                            estimates: cfg
                                .estimators
                                .iter()
                                .map(|_| Err(OpeError::InvalidConfig(msg.clone())))
                                .collect(),
                            ipw_sq_err: Err(e),
                        };
                    }
                };
                let estimates = cfg
                    .estimators
                    .iter()
                    .map(|&kind| prepared.run_estimator(kind, &data, alpha))
                    .collect();
                let ipw_sq_err = ipw_estimate(&data, prepared.target.as_ref(), alpha)
                    .map(|r| (r.value - true_value) * (r.value - true_value));
                ReplicateOutcome {
                    estimates,
                    ipw_sq_err,
                }
            })
            .collect();

        let ipw_errs: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.ipw_sq_err.as_ref().ok())
            .copied()
            .collect();
        let ipw_mse = mean(&ipw_errs);

        for (slot, &kind) in cfg.estimators.iter().enumerate() {
            let mut sq_errs = Vec::new();
            let mut estimates = Vec::new();
            let mut covered = 0usize;
            let mut excluded = 0usize;
            for outcome in &outcomes {
                match &outcome.estimates[slot] {
                    Ok(report) => {
                        let err = report.value - true_value;
                        sq_errs.push(err * err);
                        estimates.push(report.value);
                        if report.ci_low <= true_value && true_value <= report.ci_high {
                            covered += 1;
                        }
                    }
                    Err(_) => excluded += 1,
                }
            }
            let mse = mean(&sq_errs);
            rows.push(EstimatorRow {
                estimator: kind,
                n,
                mse,
                rel_mse: mse / ipw_mse,
                coverage: covered as f64 / sq_errs.len().max(1) as f64,
                mean_estimate: mean(&estimates),
                excluded,
            });
            if n == max_n {
                let mut sorted = sq_errs.clone();
                sorted.sort_by(|a, b| a.total_cmp(b));
                let m = sorted.len();
                let points = sorted
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| (e, (i + 1) as f64 / m as f64))
                    .collect();
                cdf.push(CdfSeries {
                    estimator: kind,
                    points,
                });
                cdf_sample_size = n;
            }
        }
    }

    Ok(ExperimentReport {
        config_echo: cfg.echo(),
        true_value,
        rows,
        cdf,
        cdf_sample_size,
    })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Dataset of replicate 0 at the first configured sample size, exactly as
/// [`run_experiment`] would generate it; lets callers export the canonical
/// file format for a run.
pub fn first_replicate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let seed = derive_seed(derive_seed(cfg.base_seed, 0xDA7A), 0);
    prepared.generator.generate(cfg.sample_sizes[0], seed)
}

// ── Emission ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    PlotData,
}

/// Writes the report under `dir`. CSV mode produces `summary.csv`
/// (estimator, n, mse, rel_mse, coverage, mean_estimate, true_value,
/// excluded) and `cdf.csv` (estimator, squared_error, empirical_cdf), both
/// with the config echoed in leading `#` comments. Plot mode produces
/// two-column whitespace-separated series per estimator: `relmse_<e>.dat`
/// (n vs relative MSE) and `cdf_<e>.dat` (squared error vs CDF).
pub fn emit_report(
    report: &ExperimentReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Csv => emit_csv(report, dir),
        ReportFormat::PlotData => emit_plot_data(report, dir),
    }
}

fn write_comments<W: Write>(out: &mut W, report: &ExperimentReport) -> std::io::Result<()> {
    for (key, value) in &report.config_echo {
        writeln!(out, "# {key}={value}")?;
    }
    writeln!(out, "# true_value={}", report.true_value)
}

fn emit_csv(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = dir.join("summary.csv");
    let mut out = BufWriter::new(std::fs::File::create(&summary_path)?);
    write_comments(&mut out, report)?;
    writeln!(
        out,
        "estimator,n,mse,rel_mse,coverage,mean_estimate,true_value,excluded"
    )?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.estimator,
            row.n,
            row.mse,
            row.rel_mse,
            row.coverage,
            row.mean_estimate,
            report.true_value,
            row.excluded
        )?;
    }
    out.flush()?;

    let cdf_path = dir.join("cdf.csv");
    let mut out = BufWriter::new(std::fs::File::create(&cdf_path)?);
    write_comments(&mut out, report)?;
    writeln!(out, "estimator,squared_error,empirical_cdf")?;
    for series in &report.cdf {
        for (err, p) in &series.points {
            writeln!(out, "{},{},{}", series.estimator, err, p)?;
        }
    }
    out.flush()?;
    Ok(vec![summary_path, cdf_path])
}

fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let estimators: Vec<EstimatorKind> = {
        let mut seen = Vec::new();
        for row in &report.rows {
            if !seen.contains(&row.estimator) {
                seen.push(row.estimator);
            }
        }
        seen
    };
    for kind in &estimators {
        let path = dir.join(format!("relmse_{kind}.dat"));
        let mut out = BufWriter::new(std::fs::File::create(&path)?);
        for row in report.rows.iter().filter(|r| r.estimator == *kind) {
            writeln!(out, "{} {}", row.n, row.rel_mse)?;
        }
        out.flush()?;
        written.push(path);
    }
    for series in &report.cdf {
        let path = dir.join(format!("cdf_{}.dat", series.estimator));
        let mut out = BufWriter::new(std::fs::File::create(&path)?);
        for (err, p) in &series.points {
            writeln!(out, "{err} {p}")?;
        }
        out.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Parses a `summary.csv` back into rows (comments skipped); used by the
/// self-consistency checks and available to downstream tooling.
pub fn parse_summary_csv(text: &str) -> Result<Vec<EstimatorRow>> {
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("estimator") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(OpeError::Schema(format!(
                "summary row has {} fields",
                fields.len()
            )));
        }
        let bad = |what: &str| OpeError::Schema(format!("bad {what} in summary row"));
        rows.push(EstimatorRow {
            estimator: fields[0].parse()?,
            n: fields[1].parse().map_err(|_| bad("n"))?,
            mse: fields[2].parse().map_err(|_| bad("mse"))?,
            rel_mse: fields[3].parse().map_err(|_| bad("rel_mse"))?,
            coverage: fields[4].parse().map_err(|_| bad("coverage"))?,
            mean_estimate: fields[5].parse().map_err(|_| bad("mean_estimate"))?,
            excluded: fields[7].parse().map_err(|_| bad("excluded"))?,
        });
    }
    Ok(rows)
}
