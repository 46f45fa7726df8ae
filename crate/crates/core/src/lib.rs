//! Off-policy evaluation for contextual bandits and finite-horizon MDPs with
//! an *unknown* logging policy.
//!
//! The estimator of interest, `DRUnknown`, first fits the logging-policy
//! model by maximum likelihood and then picks the value-function parameters
//! by minimizing the asymptotic variance of the doubly-robust estimator
//! *including* the effect of having estimated the logging policy: the
//! regression class is extended with a correction term spanned by the
//! logging-score directions, and the joint `(beta, c)` solve reduces to one
//! small linear system. Influence-function standard errors and Gaussian
//! confidence intervals come for free from the same construction.
//!
//! The crate also ships the standard baselines (direct method, IPW with
//! known or estimated propensities, plain DR, and the variance-minimizing
//! DR without the correction term), data-generating environments for
//! benchmarking (synthetic contextual bandit, classification-to-bandit,
//! ModelWin / ModelFail), and a seeded replicated experiment harness.
//!
//! ```
//! use ope_core::envs::{gen_synthetic_cb, SyntheticCbConfig, SyntheticCbEnv};
//! use ope_core::estimators::drunknown_estimate;
//! use ope_core::value::FeatureMap;
//!
//! let cfg = SyntheticCbConfig::new(2_000, 7);
//! let env = SyntheticCbEnv::from_config(&cfg);
//! let (data, true_value) = gen_synthetic_cb(&cfg);
//! let features = FeatureMap::TimeAugmented { horizon: 1, feat_dim: env.feat_dim };
//! let report = drunknown_estimate(
//!     &data,
//!     &env.target_policy(),
//!     &env.logging_family(),
//!     &features,
//!     0.05,
//! )
//! .unwrap();
//! assert!((report.value - true_value).abs() < 0.2);
//! ```

pub mod data;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod value;

pub use data::{
    cumulative_importance_ratio, discounted_return, validate_dataset, ActionDistribution,
    Context, Dataset, StepRecord, Trajectory, ValidationReport, PROPENSITY_FLOOR,
};
pub use error::{OpeError, Result};
pub use estimators::{
    dm_estimate, dr_estimate, drunknown_estimate, fit_value_lstsq, influence_values,
    ipw_estimate, mlipw_estimate, mrdr_estimate, solve_estimating_equation, variance_and_ci,
    Diagnostics, EstimateReport, InfluenceValues, LoggingRef, SolvedParameters,
};
pub use harness::{
    emit_report, run_experiment, EnvironmentSpec, EstimatorKind, ExperimentConfig,
    ExperimentReport, ReportFormat,
};
pub use policy::{
    fisher_information, fit_general, fit_mle, FisherInfo, FitResult, FixedPolicy, MixturePolicy,
    ObsTablePolicy, PolicyModel, SoftmaxLinearPolicy,
};
pub use value::{ExtendedRegression, FeatureMap, LinearValueModel};
