//! The six policy-value estimators (DM, IPW, MLIPW, DR, MRDR, DRUnknown),
//! the joint `(beta, c)` estimating-equation solver that minimizes the
//! asymptotic variance of the doubly-robust estimator under an estimated
//! logging policy, influence-function values, and Gaussian confidence
//! intervals.
//!
//! Estimators that assume a *known* logging policy (IPW, and DR when asked)
//! read the logged propensities stored in the dataset; estimators that fit
//! the logging policy never do, so the two paths cannot silently leak into
//! each other.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, PROPENSITY_FLOOR};
use crate::error::{OpeError, Result};
use crate::linalg::solve_ridge_sym;
use crate::policy::{fit_mle, PolicyModel};
use crate::value::{ExtendedRegression, FeatureMap, LinearValueModel};

// ── Report types ────────────────────────────────────────────────────────

/// Solver and numerical diagnostics attached to every estimate.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// `max|S_n(beta, c)|` residual of the solved estimating equation
    /// (zero for closed-form estimators).
    pub residual_norm: f64,
    /// Condition number of the solved linear system (one when no solve ran).
    pub condition: f64,
    /// True when the minimal-norm fallback produced the solution.
    pub used_fallback: bool,
    /// Number of propensities clamped to the floor while forming inverse
    /// weights over non-taken actions.
    pub clipped_propensities: usize,
    /// True when the influence values were constant (point interval).
    pub degenerate_variance: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            residual_norm: 0.0,
            condition: 1.0,
            used_fallback: false,
            clipped_propensities: 0,
            degenerate_variance: false,
        }
    }
}

/// Point estimate with influence-function standard error and confidence
/// interval at level `1 - alpha`.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Miscoverage level `alpha` of the interval.
    pub alpha: f64,
    pub diagnostics: Diagnostics,
}

/// Solution of the joint estimating equation `S_n(beta, c) = 0`.
#[derive(Debug, Clone)]
pub struct SolvedParameters {
    pub beta_hat: Vec<f64>,
    /// Empty when the logging model has no parameters or the c-block was
    /// constrained away.
    pub c_hat: Vec<f64>,
    /// Empirical weighted-seminorm objective at the solution.
    pub objective_value: f64,
    /// `max|S_n(beta_hat, c_hat)|`.
    pub residual_norm: f64,
    /// Backward-error scale `|A|_inf |theta|_inf + |b|_inf` for judging the
    /// residual.
    pub residual_scale: f64,
    pub condition: f64,
    pub used_fallback: bool,
    pub clipped_propensities: usize,
}

/// Per-trajectory influence values `eta_i`; their sample mean tracks the
/// plug-in estimate and their variance drives the confidence interval.
#[derive(Debug, Clone)]
pub struct InfluenceValues {
    pub values: Vec<f64>,
}

impl InfluenceValues {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Which logging probabilities an estimator consumes.
#[derive(Clone, Copy)]
pub enum LoggingRef<'a> {
    /// The true propensities logged with the data (known-policy estimators).
    Logged,
    /// A (typically fitted) logging-policy model.
    Model(&'a dyn PolicyModel),
}

// ── Shared per-trajectory quantities ────────────────────────────────────

/// Ratios and corrected returns for one trajectory.
struct TrajStats {
    /// `rho_{0:t-1}` (index 0 holds 1).
    rho_prev: Vec<f64>,
    /// `rho_t = pi(a_t|x_t) / mu(a_t|x_t)`.
    rho_step: Vec<f64>,
    pi_taken: Vec<f64>,
    mu_taken: Vec<f64>,
    rewards: Vec<f64>,
    /// `Rbar_{t:T-1} = r_t + sum_{tau>t} gamma^(tau-t) rho_{t+1:tau} r_tau`.
    rbar: Vec<f64>,
}

fn trajectory_stats(
    data: &Dataset,
    index: usize,
    target: &dyn PolicyModel,
    logging: &LoggingRef,
) -> Result<TrajStats> {
    let traj = data.trajectory(index);
    let horizon = traj.len();
    let k = data.action_count();
    let gamma = data.discount();
    let mut pi_buf = vec![0.0; k];
    let mut mu_buf = vec![0.0; k];
    let mut rho_prev = vec![1.0; horizon];
    let mut rho_step = vec![0.0; horizon];
    let mut pi_taken = vec![0.0; horizon];
    let mut mu_taken = vec![0.0; horizon];
    let mut rewards = vec![0.0; horizon];

    let mut running = 1.0;
    for (t, step) in traj.steps().iter().enumerate() {
        target.prob_into(&step.context, &mut pi_buf);
        let pi = pi_buf[step.action];
        let mu = match logging {
            LoggingRef::Logged => step.logged_propensity.ok_or(OpeError::MissingPropensity {
                trajectory: index,
                step: t,
            })?,
            LoggingRef::Model(model) => {
                model.prob_into(&step.context, &mut mu_buf);
                mu_buf[step.action]
            }
        };
        let rho = if mu <= PROPENSITY_FLOOR {
            if pi > 0.0 {
                return Err(OpeError::AbsoluteContinuity {
                    action: step.action,
                    target_prob: pi,
                    propensity: mu,
                    floor: PROPENSITY_FLOOR,
                });
            }
            0.0
        } else {
            pi / mu
        };
        rho_prev[t] = running;
        rho_step[t] = rho;
        pi_taken[t] = pi;
        mu_taken[t] = mu;
        rewards[t] = step.reward;
        running *= rho;
    }

    // Backward recursion for the importance-corrected return to go.
    let mut rbar = vec![0.0; horizon];
    rbar[horizon - 1] = rewards[horizon - 1];
    for t in (0..horizon - 1).rev() {
        rbar[t] = rewards[t] + gamma * rho_step[t + 1] * rbar[t + 1];
    }

    Ok(TrajStats {
        rho_prev,
        rho_step,
        pi_taken,
        mu_taken,
        rewards,
        rbar,
    })
}

// ── Confidence intervals ────────────────────────────────────────────────

fn gaussian_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OpeError::InvalidParameter(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Standard error `sigma_hat / sqrt(n)` with `sigma_hat^2 = mean (eta - mean
/// eta)^2`, and the two-sided Gaussian interval `center ± z_{alpha/2} se`.
/// The boolean flags a degenerate (zero-variance) interval.
pub fn variance_and_ci(
    values: &InfluenceValues,
    center: f64,
    alpha: f64,
) -> Result<(f64, (f64, f64), bool)> {
    let z = gaussian_quantile(alpha)?;
    let n = values.values.len() as f64;
    let mean = values.mean();
    let var = values
        .values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let stderr = (var / n).sqrt();
    let degenerate = var == 0.0;
    Ok((stderr, (center - z * stderr, center + z * stderr), degenerate))
}

fn report_from_terms(
    name: &str,
    terms: Vec<f64>,
    alpha: f64,
    mut diagnostics: Diagnostics,
) -> Result<EstimateReport> {
    let values = InfluenceValues { values: terms };
    let value = values.mean();
    let (stderr, (lo, hi), degenerate) = variance_and_ci(&values, value, alpha)?;
    diagnostics.degenerate_variance = degenerate;
    Ok(EstimateReport {
        estimator: name.to_string(),
        value,
        stderr,
        ci_low: lo,
        ci_high: hi,
        alpha,
        diagnostics,
    })
}

// ── Baseline estimators ─────────────────────────────────────────────────

/// Direct method: the sample mean of the model value `Vhat(x)`. Defined only
/// for one-step (contextual-bandit) data; there is no rollout scheme for the
/// value model beyond the first step.
pub fn dm_estimate(
    data: &Dataset,
    target: &dyn PolicyModel,
    value_model: &LinearValueModel,
    alpha: f64,
) -> Result<EstimateReport> {
    if data.horizon() != 1 {
        return Err(OpeError::UnsupportedHorizon {
            horizon: data.horizon(),
        });
    }
    let terms: Vec<f64> = data
        .trajectories()
        .iter()
        .map(|traj| value_model.v_hat(target, 0, &traj.step(0).context))
        .collect();
    report_from_terms("dm", terms, alpha, Diagnostics::default())
}

fn ipw_terms(data: &Dataset, target: &dyn PolicyModel, logging: &LoggingRef) -> Result<Vec<f64>> {
    let gamma = data.discount();
    let mut terms = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let stats = trajectory_stats(data, i, target, logging)?;
        let mut total = 0.0;
        let mut weight = 1.0;
        for t in 0..data.horizon() {
            total += weight * stats.rho_prev[t] * stats.rho_step[t] * stats.rewards[t];
            weight *= gamma;
        }
        terms.push(total);
    }
    Ok(terms)
}

/// Inverse probability weighting with the *known* logging policy: requires
/// every step to carry its logged propensity.
pub fn ipw_estimate(data: &Dataset, target: &dyn PolicyModel, alpha: f64) -> Result<EstimateReport> {
    let terms = ipw_terms(data, target, &LoggingRef::Logged)?;
    report_from_terms("ipw", terms, alpha, Diagnostics::default())
}

/// IPW with a maximum-likelihood fitted logging policy (unnormalized).
pub fn mlipw_estimate<P: PolicyModel + Clone>(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging_family: &P,
    alpha: f64,
) -> Result<EstimateReport> {
    let fit = fit_mle(logging_family, data)?;
    let terms = ipw_terms(data, target, &LoggingRef::Model(&fit.model))?;
    report_from_terms("mlipw", terms, alpha, Diagnostics::default())
}

fn dr_terms(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging: &LoggingRef,
    value_model: &LinearValueModel,
) -> Result<Vec<f64>> {
    let gamma = data.discount();
    let mut terms = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let stats = trajectory_stats(data, i, target, logging)?;
        let traj = data.trajectory(i);
        let mut total = 0.0;
        let mut weight = 1.0;
        for (t, step) in traj.steps().iter().enumerate() {
            let q = value_model.q_hat(t, &step.context, step.action);
            let v = value_model.v_hat(target, t, &step.context);
            total += weight
                * stats.rho_prev[t]
                * (stats.rho_step[t] * (stats.rewards[t] - q) + v);
            weight *= gamma;
        }
        terms.push(total);
    }
    Ok(terms)
}

/// Standard doubly-robust estimator with an externally fitted value model;
/// the logging side is either the logged propensities or a fitted model.
pub fn dr_estimate(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging: LoggingRef,
    value_model: &LinearValueModel,
    alpha: f64,
) -> Result<EstimateReport> {
    let terms = dr_terms(data, target, &logging, value_model)?;
    report_from_terms("dr", terms, alpha, Diagnostics::default())
}

/// Least-squares fit of a linear value model: regresses the importance-
/// corrected return to go `Rbar_{t:T-1}` (the observed reward for one-step
/// data) on `psi(t, x_t, a_t)`.
pub fn fit_value_lstsq(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging: LoggingRef,
    features: &FeatureMap,
) -> Result<LinearValueModel> {
    let p = features.dim();
    let mut gram = DMatrix::zeros(p, p);
    let mut moment = DVector::zeros(p);
    let mut psi = DVector::zeros(p);
    for i in 0..data.len() {
        let stats = trajectory_stats(data, i, target, &logging)?;
        let traj = data.trajectory(i);
        for (t, step) in traj.steps().iter().enumerate() {
            features.eval_into(t, &step.context, step.action, psi.as_mut_slice());
            gram.ger(1.0, &psi, &psi, 1.0);
            moment.axpy(stats.rbar[t], &psi, 1.0);
        }
    }
    let (beta, _) = solve_ridge_sym(&gram, &moment)?;
    LinearValueModel::with_beta(features.clone(), beta.as_slice().to_vec())
}

// ── Joint estimating equation ───────────────────────────────────────────

/// Solves the estimating equation `S_n(beta, c) = 0` that sets the gradient
/// of the empirical variance seminorm to zero. Because the regression class
/// is linear in `(beta, c)`, this is the linear system `A theta = b` with
///
/// `A = sum_{i,t} gamma^{2t} f_t' M_t f_t`,
/// `b = sum_{i,t} gamma^{2t} f_t' M_t y_t`,
///
/// where `M_t = diag(1/mu_hat) - J_K` and `y_t` is the target-weighted
/// pseudo-reward vector (nonzero only at the taken action). With
/// `constrain_c_to_zero` the score block is removed, which is the
/// variance-minimizing objective that ignores the logging-estimation effect
/// (the MRDR choice).
pub fn solve_estimating_equation(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging_model: &dyn PolicyModel,
    features: &FeatureMap,
    constrain_c_to_zero: bool,
) -> Result<SolvedParameters> {
    let k = data.action_count();
    let gamma = data.discount();
    let p = features.dim();
    let q_model = logging_model.param_dim();
    let q = if constrain_c_to_zero { 0 } else { q_model };
    let dim = p + q;

    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    let mut constant = 0.0;
    let mut clipped = 0usize;

    let mut pi = vec![0.0; k];
    let mut mu = vec![0.0; k];
    let mut scores = vec![0.0; k * q_model.max(1)];
    let mut psi = vec![0.0; p];
    let mut f = DMatrix::zeros(k, dim);
    let mut f_scaled = DMatrix::zeros(k, dim);
    let mut col_sum = DVector::zeros(dim);
    let mut taken_row = DVector::zeros(dim);

    for i in 0..data.len() {
        let stats = trajectory_stats(data, i, target, &LoggingRef::Model(logging_model))?;
        let traj = data.trajectory(i);
        for (t, step) in traj.steps().iter().enumerate() {
            let x = &step.context;
            target.prob_into(x, &mut pi);
            logging_model.prob_into(x, &mut mu);
            if q > 0 {
                logging_model.scores_into(x, &mut scores);
            }
            let gamma_neg_t = gamma.powi(-(t as i32));
            let rho_prev = stats.rho_prev[t];
            for action in 0..k {
                features.eval_into(t, x, action, &mut psi);
                let w = rho_prev * pi[action];
                for j in 0..p {
                    f[(action, j)] = w * psi[j];
                }
                for j in 0..q {
                    f[(action, p + j)] = gamma_neg_t * scores[action * q_model + j];
                }
            }
            // Scale rows by the inverse (floored) propensities for f' M f.
            for action in 0..k {
                let m = mu[action];
                if m < PROPENSITY_FLOOR {
                    clipped += 1;
                }
                let inv = 1.0 / m.max(PROPENSITY_FLOOR);
                for j in 0..dim {
                    f_scaled[(action, j)] = inv * f[(action, j)];
                }
            }
            for j in 0..dim {
                let mut s = 0.0;
                for action in 0..k {
                    s += f[(action, j)];
                }
                col_sum[j] = s;
            }
            let gamma_2t = gamma.powi(2 * t as i32);
            a.gemm_tr(gamma_2t, &f, &f_scaled, 1.0);
            a.ger(-gamma_2t, &col_sum, &col_sum, 1.0);

            // Pseudo-reward contribution: y has a single nonzero entry
            // y_val = rho_{0:t} Rbar at the taken action.
            let y_val = rho_prev * stats.rho_step[t] * stats.rbar[t];
            if y_val != 0.0 {
                let inv_taken = 1.0 / stats.mu_taken[t].max(PROPENSITY_FLOOR);
                for j in 0..dim {
                    taken_row[j] = f[(step.action, j)];
                }
                b.axpy(gamma_2t * y_val * inv_taken, &taken_row, 1.0);
                b.axpy(-gamma_2t * y_val, &col_sum, 1.0);
                constant += gamma_2t * y_val * y_val * (inv_taken - 1.0);
            }
        }
    }

    let (theta, diag) = solve_ridge_sym(&a, &b)?;
    let residual = (&a * &theta - &b).amax();
    let objective = (theta.transpose() * &a * &theta)[(0, 0)] - 2.0 * b.dot(&theta) + constant;
    let a_norm = (0..dim)
        .map(|r| (0..dim).map(|c| a[(r, c)].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let residual_scale = a_norm * theta.amax() + b.amax();

    let beta_hat = theta.as_slice()[..p].to_vec();
    let c_hat = theta.as_slice()[p..].to_vec();
    Ok(SolvedParameters {
        beta_hat,
        c_hat,
        objective_value: objective,
        residual_norm: residual,
        residual_scale,
        condition: diag.condition,
        used_fallback: diag.used_fallback,
        clipped_propensities: clipped,
    })
}

// ── Influence values ────────────────────────────────────────────────────

/// Per-trajectory influence values at the supplied parameters:
///
/// `eta_i = sum_t gamma^t { [rho_{0:t-1} pi_t r_t - F_t(x_t, a_t)] / mu_t
///                          + sum_a F_t(x_t, a) }`.
pub fn influence_values(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging_model: &dyn PolicyModel,
    features: &FeatureMap,
    beta: &[f64],
    c: &[f64],
) -> Result<(InfluenceValues, usize)> {
    let gamma = data.discount();
    let reg = ExtendedRegression::new(features, target, logging_model, gamma);
    let mut clipped = 0usize;
    let mut values = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let stats = trajectory_stats(data, i, target, &LoggingRef::Model(logging_model))?;
        let traj = data.trajectory(i);
        let mut eta = 0.0;
        let mut weight = 1.0;
        for (t, step) in traj.steps().iter().enumerate() {
            let x = &step.context;
            let f_all = reg.values(t, x, stats.rho_prev[t], beta, c);
            let f_taken = f_all[step.action];
            let f_sum: f64 = f_all.iter().sum();
            let mu = stats.mu_taken[t];
            if mu < PROPENSITY_FLOOR {
                clipped += 1;
            }
            let inv = 1.0 / mu.max(PROPENSITY_FLOOR);
            let residual =
                stats.rho_prev[t] * stats.pi_taken[t] * stats.rewards[t] - f_taken;
            eta += weight * (residual * inv + f_sum);
            weight *= gamma;
        }
        values.push(eta);
    }
    Ok((InfluenceValues { values }, clipped))
}

// ── Variance-minimizing estimators ──────────────────────────────────────

fn variance_minimizing_estimate<P: PolicyModel + Clone>(
    name: &str,
    data: &Dataset,
    target: &dyn PolicyModel,
    logging_family: &P,
    features: &FeatureMap,
    alpha: f64,
    constrain_c_to_zero: bool,
) -> Result<EstimateReport> {
    let fit = fit_mle(logging_family, data)?;
    let solved = solve_estimating_equation(
        data,
        target,
        &fit.model,
        features,
        constrain_c_to_zero,
    )?;
    let value_model = LinearValueModel::with_beta(features.clone(), solved.beta_hat.clone())?;
    let terms = dr_terms(data, target, &LoggingRef::Model(&fit.model), &value_model)?;
    let value = terms.iter().sum::<f64>() / terms.len() as f64;

    let mut diagnostics = Diagnostics {
        residual_norm: solved.residual_norm,
        condition: solved.condition,
        used_fallback: solved.used_fallback,
        clipped_propensities: solved.clipped_propensities,
        degenerate_variance: false,
    };

    let (stderr, ci, degenerate) = if constrain_c_to_zero {
        // Baselines report the spread of their own per-trajectory terms; only
        // the full estimator accounts for the logging-estimation effect.
        variance_and_ci(&InfluenceValues { values: terms }, value, alpha)?
    } else {
        let c_full = if solved.c_hat.is_empty() {
            vec![0.0; fit.model.param_dim()]
        } else {
            solved.c_hat.clone()
        };
        let (infl, infl_clips) = influence_values(
            data,
            target,
            &fit.model,
            features,
            &solved.beta_hat,
            &c_full,
        )?;
        diagnostics.clipped_propensities += infl_clips;
        variance_and_ci(&infl, value, alpha)?
    };
    diagnostics.degenerate_variance = degenerate;

    Ok(EstimateReport {
        estimator: name.to_string(),
        value,
        stderr,
        ci_low: ci.0,
        ci_high: ci.1,
        alpha,
        diagnostics,
    })
}

/// The doubly-robust estimator for an unknown logging policy: fits the
/// logging model by maximum likelihood, jointly solves for `(beta, c)` to
/// minimize the asymptotic variance accounting for the estimation of the
/// logging parameters, plugs `beta` into the DR form, and attaches an
/// influence-function confidence interval. One-step data is simply the
/// `T = 1` case of the same path.
pub fn drunknown_estimate<P: PolicyModel + Clone>(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging_family: &P,
    features: &FeatureMap,
    alpha: f64,
) -> Result<EstimateReport> {
    variance_minimizing_estimate("drunknown", data, target, logging_family, features, alpha, false)
}

/// Variance-minimizing DR with the logging-estimation correction disabled
/// (`c = 0`): the same pipeline as [`drunknown_estimate`] with the score
/// block removed from the regression class.
pub fn mrdr_estimate<P: PolicyModel + Clone>(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging_family: &P,
    features: &FeatureMap,
    alpha: f64,
) -> Result<EstimateReport> {
    variance_minimizing_estimate("mrdr", data, target, logging_family, features, alpha, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Context, StepRecord, Trajectory};
    use crate::policy::{FixedPolicy, MixturePolicy, SoftmaxLinearPolicy};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn one_step_dataset(records: Vec<(Context, usize, f64, f64)>) -> Dataset {
        let trajectories = records
            .into_iter()
            .map(|(context, action, reward, prop)| {
                Trajectory::new(vec![StepRecord {
                    context,
                    action,
                    reward,
                    logged_propensity: Some(prop),
                }])
                .unwrap()
            })
            .collect();
        Dataset::new(trajectories, 1.0).unwrap()
    }

    fn simple_context() -> Context {
        Context::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn ipw_single_record() {
        let data = one_step_dataset(vec![(simple_context(), 0, 3.0, 0.35)]);
        let target = FixedPolicy::new(vec![0.7, 0.3]).unwrap();
        let report = ipw_estimate(&data, &target, 0.05).unwrap();
        assert_relative_eq!(report.value, 6.0, max_relative = 1e-12);
        assert!(report.diagnostics.degenerate_variance);
        assert_eq!(report.ci_low, report.ci_high);
    }

    #[test]
    fn ipw_on_policy_is_mean_return() {
        let mut rng = StdRng::seed_from_u64(1);
        let records: Vec<(Context, usize, f64, f64)> = (0..50)
            .map(|_| {
                let a = rng.random_range(0..2);
                (simple_context(), a, rng.random_range(-1.0..1.0), 0.5)
            })
            .collect();
        let mean = records.iter().map(|r| r.2).sum::<f64>() / 50.0;
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let report = ipw_estimate(&data, &target, 0.05).unwrap();
        assert_relative_eq!(report.value, mean, max_relative = 1e-12);
    }

    #[test]
    fn ipw_requires_logged_propensities() {
        let traj = Trajectory::new(vec![StepRecord {
            context: simple_context(),
            action: 0,
            reward: 1.0,
            logged_propensity: None,
        }])
        .unwrap();
        let data = Dataset::new(vec![traj], 1.0).unwrap();
        let target = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let err = ipw_estimate(&data, &target, 0.05).unwrap_err();
        assert!(matches!(err, OpeError::MissingPropensity { .. }));
    }

    #[test]
    fn dm_zero_beta_is_zero() {
        let data = one_step_dataset(vec![(simple_context(), 0, 5.0, 0.5)]);
        let target = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let model = LinearValueModel::new(FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        });
        let report = dm_estimate(&data, &target, &model, 0.05).unwrap();
        assert_eq!(report.value, 0.0);
    }

    #[test]
    fn dm_exact_value_model_has_zero_variance() {
        // Rewards deterministic and exactly representable: every per-sample
        // term equals the same true value.
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        };
        let beta = vec![0.0, 1.0, -2.0];
        let model = LinearValueModel::with_beta(features, beta).unwrap();
        let records = (0..10)
            .map(|_| (simple_context(), 0, 1.0, 0.5))
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let report = dm_estimate(&data, &target, &model, 0.05).unwrap();
        assert_relative_eq!(report.value, 0.5 * 1.0 + 0.5 * (-2.0), max_relative = 1e-12);
        assert_eq!(report.stderr, 0.0);
    }

    #[test]
    fn dm_refuses_multi_step_data() {
        let steps = vec![
            StepRecord {
                context: simple_context(),
                action: 0,
                reward: 1.0,
                logged_propensity: Some(0.5),
            },
            StepRecord {
                context: simple_context(),
                action: 1,
                reward: 0.0,
                logged_propensity: Some(0.5),
            },
        ];
        let data = Dataset::new(vec![Trajectory::new(steps).unwrap()], 1.0).unwrap();
        let target = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let model = LinearValueModel::new(FeatureMap::Constant);
        let err = dm_estimate(&data, &target, &model, 0.05).unwrap_err();
        assert!(matches!(err, OpeError::UnsupportedHorizon { horizon: 2 }));
    }

    #[test]
    fn dr_with_zero_value_model_equals_ipw() {
        let mut rng = StdRng::seed_from_u64(2);
        let records: Vec<(Context, usize, f64, f64)> = (0..100)
            .map(|_| {
                let a = rng.random_range(0..2);
                (
                    simple_context(),
                    a,
                    rng.random_range(-2.0..2.0),
                    if a == 0 { 0.6 } else { 0.4 },
                )
            })
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.3, 0.7]).unwrap();
        let zero = LinearValueModel::new(FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        });
        let ipw = ipw_estimate(&data, &target, 0.05).unwrap();
        let dr = dr_estimate(&data, &target, LoggingRef::Logged, &zero, 0.05).unwrap();
        assert_relative_eq!(dr.value, ipw.value, max_relative = 1e-12);
    }

    #[test]
    fn dr_exact_models_make_residuals_vanish() {
        // Q-hat equals the deterministic reward for every (x, a): the
        // correction term is exactly zero so the estimate equals Vhat.
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        };
        let beta = vec![0.0, 2.0, -1.0];
        let value_model = LinearValueModel::with_beta(features, beta).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let records: Vec<(Context, usize, f64, f64)> = (0..40)
            .map(|_| {
                let a = rng.random_range(0..2);
                let reward = if a == 0 { 2.0 } else { -1.0 };
                (simple_context(), a, reward, 0.5)
            })
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.25, 0.75]).unwrap();
        let report = dr_estimate(&data, &target, LoggingRef::Logged, &value_model, 0.05).unwrap();
        let expect = 0.25 * 2.0 + 0.75 * (-1.0);
        assert_relative_eq!(report.value, expect, max_relative = 1e-12);
        assert_eq!(report.stderr, 0.0);
    }

    #[test]
    fn quantile_for_five_percent_alpha() {
        let z = gaussian_quantile(0.05).unwrap();
        assert!((z - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn constant_influence_values_collapse_interval() {
        let values = InfluenceValues {
            values: vec![1.5; 8],
        };
        let (stderr, (lo, hi), degenerate) = variance_and_ci(&values, 1.5, 0.05).unwrap();
        assert_eq!(stderr, 0.0);
        assert_eq!(lo, 1.5);
        assert_eq!(hi, 1.5);
        assert!(degenerate);
    }

    #[test]
    fn seminorm_matrix_is_psd() {
        // v' (diag(1/mu) - J) v >= 0 whenever mu sums to one.
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.random_range(2..8);
            let mut mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = mu.iter().sum();
            for m in mu.iter_mut() {
                *m /= sum;
            }
            let v: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let quad: f64 = v.iter().zip(&mu).map(|(vi, mi)| vi * vi / mi).sum::<f64>()
                - v.iter().sum::<f64>().powi(2);
            assert!(quad >= -1e-10, "negative seminorm {quad}");
        }
    }

    #[test]
    fn influence_values_reduce_to_weighted_rewards() {
        // With c = 0 and beta = 0 the regression function vanishes and eta
        // is the estimated-propensity IPW term.
        let mut rng = StdRng::seed_from_u64(5);
        let records: Vec<(Context, usize, f64, f64)> = (0..30)
            .map(|_| {
                let a = rng.random_range(0..2);
                (simple_context(), a, rng.random_range(-1.0..1.0), 0.5)
            })
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.7, 0.3]).unwrap();
        let logging = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        };
        let (infl, _) =
            influence_values(&data, &target, &logging, &features, &[0.0, 0.0, 0.0], &[])
                .unwrap();
        for (i, traj) in data.trajectories().iter().enumerate() {
            let step = traj.step(0);
            let pi = if step.action == 0 { 0.7 } else { 0.3 };
            assert_relative_eq!(
                infl.values[i],
                pi / 0.5 * step.reward,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn mlipw_with_mixture_matches_hand_coded_ipw() {
        let mut rng = StdRng::seed_from_u64(6);
        let k = 4;
        let base = FixedPolicy::deterministic(k, 2);
        let truth = MixturePolicy::new(base.clone(), 0.5).unwrap();
        let mut probs = vec![0.0; k];
        let records: Vec<(Context, usize, f64, f64)> = (0..400)
            .map(|_| {
                let context = Context::from_flat(vec![0.0; k], 1).unwrap();
                truth.prob_into(&context, &mut probs);
                let u: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut action = k - 1;
                for (a, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        action = a;
                        break;
                    }
                }
                (context, action, rng.random_range(0.0..1.0), probs[action])
            })
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let family = MixturePolicy::new(base.clone(), 0.5).unwrap();
        let report = mlipw_estimate(&data, &target, &family, 0.05).unwrap();

        // Hand-coded two-line IPW with the fitted mixture probabilities.
        let fit = fit_mle(&family, &data).unwrap();
        let alpha_hat = fit.phi_hat[0];
        let hand: f64 = data
            .trajectories()
            .iter()
            .map(|traj| {
                let step = traj.step(0);
                let mu = if step.action == 2 {
                    alpha_hat + (1.0 - alpha_hat) / k as f64
                } else {
                    (1.0 - alpha_hat) / k as f64
                };
                let pi = [0.1, 0.2, 0.3, 0.4][step.action];
                pi / mu * step.reward
            })
            .sum::<f64>()
            / data.len() as f64;
        assert_relative_eq!(report.value, hand, max_relative = 1e-10);
    }

    #[test]
    fn zero_dim_logging_makes_drunknown_equal_mrdr() {
        let mut rng = StdRng::seed_from_u64(7);
        let records: Vec<(Context, usize, f64, f64)> = (0..60)
            .map(|_| {
                let a = rng.random_range(0..2);
                (simple_context(), a, rng.random_range(-1.0..1.0), 0.5)
            })
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.6, 0.4]).unwrap();
        let known = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        };
        let dru = drunknown_estimate(&data, &target, &known, &features, 0.05).unwrap();
        let mrdr = mrdr_estimate(&data, &target, &known, &features, 0.05).unwrap();
        assert_relative_eq!(dru.value, mrdr.value, epsilon = 1e-12);
    }

    #[test]
    fn solve_with_empty_c_block_matches_constrained_solve() {
        let mut rng = StdRng::seed_from_u64(8);
        let records: Vec<(Context, usize, f64, f64)> = (0..60)
            .map(|_| {
                let a = rng.random_range(0..2);
                (simple_context(), a, rng.random_range(-1.0..1.0), 0.5)
            })
            .collect();
        let data = one_step_dataset(records);
        let target = FixedPolicy::new(vec![0.6, 0.4]).unwrap();
        let known = FixedPolicy::new(vec![0.5, 0.5]).unwrap();
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: 2,
        };
        let free = solve_estimating_equation(&data, &target, &known, &features, false).unwrap();
        let constrained =
            solve_estimating_equation(&data, &target, &known, &features, true).unwrap();
        assert!(free.c_hat.is_empty());
        for (a, b) in free.beta_hat.iter().zip(&constrained.beta_hat) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn drunknown_objective_never_exceeds_mrdr_objective() {
        let mut rng = StdRng::seed_from_u64(9);
        let d = 3;
        let logging = SoftmaxLinearPolicy::with_coefficients(vec![0.4, -0.2, 0.3]);
        let mut probs = vec![0.0; 4];
        let records: Vec<(Context, usize, f64, f64)> = (0..200)
            .map(|_| {
                let feats: Vec<f64> = (0..4 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let context = Context::from_flat(feats, d).unwrap();
                logging.prob_into(&context, &mut probs);
                let u: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut action = 3;
                for (a, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        action = a;
                        break;
                    }
                }
                (context, action, rng.random_range(-1.0..1.0), probs[action])
            })
            .collect();
        let data = one_step_dataset(records);
        let target = SoftmaxLinearPolicy::with_coefficients(vec![-0.5, 0.6, 0.1]);
        let fit = fit_mle(&SoftmaxLinearPolicy::new(d), &data).unwrap();
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: d,
        };
        let free =
            solve_estimating_equation(&data, &target, &fit.model, &features, false).unwrap();
        let constrained =
            solve_estimating_equation(&data, &target, &fit.model, &features, true).unwrap();
        assert!(
            free.objective_value <= constrained.objective_value + 1e-9,
            "{} > {}",
            free.objective_value,
            constrained.objective_value
        );
    }

    #[test]
    fn estimators_invariant_under_trajectory_permutation() {
        let mut rng = StdRng::seed_from_u64(10);
        let d = 2;
        let logging = SoftmaxLinearPolicy::with_coefficients(vec![0.3, -0.4]);
        let mut probs = vec![0.0; 3];
        let records: Vec<(Context, usize, f64, f64)> = (0..80)
            .map(|_| {
                let feats: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let context = Context::from_flat(feats, d).unwrap();
                logging.prob_into(&context, &mut probs);
                let u: f64 = rng.random_range(0.0..1.0);
                let mut acc = 0.0;
                let mut action = 2;
                for (a, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        action = a;
                        break;
                    }
                }
                (context, action, rng.random_range(-1.0..1.0), probs[action])
            })
            .collect();
        let data = one_step_dataset(records);
        let order: Vec<usize> = (0..data.len()).rev().collect();
        let permuted = data.permuted(&order).unwrap();
        let target = SoftmaxLinearPolicy::with_coefficients(vec![-0.2, 0.5]);
        let family = SoftmaxLinearPolicy::new(d);
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: d,
        };
        let value_model = fit_value_lstsq(&data, &target, LoggingRef::Logged, &features).unwrap();

        let pairs = [
            (
                ipw_estimate(&data, &target, 0.05).unwrap().value,
                ipw_estimate(&permuted, &target, 0.05).unwrap().value,
            ),
            (
                mlipw_estimate(&data, &target, &family, 0.05).unwrap().value,
                mlipw_estimate(&permuted, &target, &family, 0.05)
                    .unwrap()
                    .value,
            ),
            (
                dm_estimate(&data, &target, &value_model, 0.05).unwrap().value,
                dm_estimate(&permuted, &target, &value_model, 0.05)
                    .unwrap()
                    .value,
            ),
            (
                dr_estimate(&data, &target, LoggingRef::Logged, &value_model, 0.05)
                    .unwrap()
                    .value,
                dr_estimate(&permuted, &target, LoggingRef::Logged, &value_model, 0.05)
                    .unwrap()
                    .value,
            ),
            (
                mrdr_estimate(&data, &target, &family, &features, 0.05)
                    .unwrap()
                    .value,
                mrdr_estimate(&permuted, &target, &family, &features, 0.05)
                    .unwrap()
                    .value,
            ),
            (
                drunknown_estimate(&data, &target, &family, &features, 0.05)
                    .unwrap()
                    .value,
                drunknown_estimate(&permuted, &target, &family, &features, 0.05)
                    .unwrap()
                    .value,
            ),
        ];
        for (a, b) in pairs {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn reward_scaling_scales_value_and_stderr_exactly() {
        let mut rng = StdRng::seed_from_u64(11);
        let d = 2;
        let logging = SoftmaxLinearPolicy::with_coefficients(vec![0.2, -0.3]);
        let mut probs = vec![0.0; 3];
        let mut records: Vec<(Context, usize, f64, f64)> = Vec::new();
        for _ in 0..120 {
            let feats: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let context = Context::from_flat(feats, d).unwrap();
            logging.prob_into(&context, &mut probs);
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut action = 2;
            for (a, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    action = a;
                    break;
                }
            }
            records.push((context, action, rng.random_range(-1.0..1.0), probs[action]));
        }
        let lambda = 3.5;
        let scaled: Vec<(Context, usize, f64, f64)> = records
            .iter()
            .map(|(c, a, r, p)| (c.clone(), *a, lambda * r, *p))
            .collect();
        let data = one_step_dataset(records);
        let scaled_data = one_step_dataset(scaled);
        let target = SoftmaxLinearPolicy::with_coefficients(vec![0.6, 0.4]);
        let family = SoftmaxLinearPolicy::new(d);
        let features = FeatureMap::TimeAugmented {
            horizon: 1,
            feat_dim: d,
        };
        let base = drunknown_estimate(&data, &target, &family, &features, 0.05).unwrap();
        let scaled = drunknown_estimate(&scaled_data, &target, &family, &features, 0.05).unwrap();
        assert_relative_eq!(scaled.value, lambda * base.value, max_relative = 1e-9);
        assert_relative_eq!(scaled.stderr, lambda * base.stderr, max_relative = 1e-9);
    }
}
