//! Logged-trajectory data model, importance ratios, discounted returns, and
//! runtime validation of the regularity assumptions every importance-weighted
//! estimator relies on.
//!
//! A [`Dataset`] holds `n` independent trajectories of a fixed length `T`, all
//! sharing the same action count `K` and discount factor. Everything here is
//! immutable after construction and safe to share across worker threads.

use crate::error::{OpeError, Result};
use crate::policy::PolicyModel;

/// Propensities at or below this floor are treated as zero: recomputed model
/// probabilities can underflow even when absolute continuity holds in theory,
/// and weights beyond `1/floor` would dominate any estimate.
pub const PROPENSITY_FLOOR: f64 = 1e-6;

/// Tolerance on `sum(probs) == 1` for [`ActionDistribution`].
pub const DISTRIBUTION_TOL: f64 = 1e-12;

// ── Context ─────────────────────────────────────────────────────────────

/// Per-step observation: one feature vector per action, plus an optional
/// discrete state id for tabular environments (where the feature vectors are
/// one-hot encodings of the observation-action pair).
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    feats: Vec<f64>, // flat, action-major: feats[a * feat_dim + j]
    feat_dim: usize,
    state: Option<usize>,
}

impl Context {
    /// Builds a context from `K` per-action feature vectors of equal length.
    pub fn new(per_action: Vec<Vec<f64>>) -> Result<Self> {
        if per_action.is_empty() {
            return Err(OpeError::InvalidParameter(
                "context needs at least one action".into(),
            ));
        }
        let feat_dim = per_action[0].len();
        if feat_dim == 0 {
            return Err(OpeError::InvalidParameter(
                "per-action feature vectors must be nonempty".into(),
            ));
        }
        let mut feats = Vec::with_capacity(per_action.len() * feat_dim);
        for v in &per_action {
            if v.len() != feat_dim {
                return Err(OpeError::InvalidParameter(format!(
                    "ragged per-action features: expected {feat_dim}, got {}",
                    v.len()
                )));
            }
            feats.extend_from_slice(v);
        }
        Self::from_flat(feats, feat_dim)
    }

    /// Builds a context from a flat action-major feature buffer.
    pub fn from_flat(feats: Vec<f64>, feat_dim: usize) -> Result<Self> {
        if feat_dim == 0 || feats.is_empty() || feats.len() % feat_dim != 0 {
            return Err(OpeError::InvalidParameter(format!(
                "flat feature buffer of length {} is not a multiple of feat_dim {feat_dim}",
                feats.len()
            )));
        }
        if feats.iter().any(|v| !v.is_finite()) {
            return Err(OpeError::InvalidParameter(
                "context features must be finite".into(),
            ));
        }
        Ok(Self {
            feats,
            feat_dim,
            state: None,
        })
    }

    /// Attaches a discrete state id (tabular environments).
    pub fn with_state(mut self, state: usize) -> Self {
        self.state = Some(state);
        self
    }

    pub fn action_count(&self) -> usize {
        self.feats.len() / self.feat_dim
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn action_features(&self, action: usize) -> &[f64] {
        &self.feats[action * self.feat_dim..(action + 1) * self.feat_dim]
    }

    pub fn state(&self) -> Option<usize> {
        self.state
    }
}

// ── ActionDistribution ──────────────────────────────────────────────────

/// A probability distribution over the `K` actions; entries are nonnegative
/// and sum to one within [`DISTRIBUTION_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(OpeError::InvalidDistribution("no actions".into()));
        }
        let mut sum = 0.0;
        for (a, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(OpeError::InvalidDistribution(format!(
                    "probability of action {a} is {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > DISTRIBUTION_TOL {
            return Err(OpeError::InvalidDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn action_count(&self) -> usize {
        self.probs.len()
    }
}

// ── Trajectories ────────────────────────────────────────────────────────

/// One logged step: context, taken action, observed reward, and (when the
/// true logging policy is known) the propensity of the taken action.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub context: Context,
    pub action: usize,
    pub reward: f64,
    pub logged_propensity: Option<f64>,
}

impl StepRecord {
    fn validate(&self) -> Result<()> {
        if self.action >= self.context.action_count() {
            return Err(OpeError::InvalidDataset(format!(
                "action {} out of range for {} actions",
                self.action,
                self.context.action_count()
            )));
        }
        if !self.reward.is_finite() {
            return Err(OpeError::InvalidDataset(format!(
                "non-finite reward {}",
                self.reward
            )));
        }
        if let Some(p) = self.logged_propensity {
            if !(p > 0.0 && p <= 1.0) {
                return Err(OpeError::InvalidDataset(format!(
                    "logged propensity {p} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// An ordered list of `T` step records.
#[derive(Debug, Clone)]
pub struct Trajectory {
    steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn new(steps: Vec<StepRecord>) -> Result<Self> {
        if steps.is_empty() {
            return Err(OpeError::InvalidDataset("empty trajectory".into()));
        }
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step(&self, t: usize) -> &StepRecord {
        &self.steps[t]
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }
}

/// `n` independent fixed-length trajectories with shared `K` and discount.
#[derive(Debug, Clone)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    horizon: usize,
    action_count: usize,
    discount: f64,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, discount: f64) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(OpeError::InvalidDataset("dataset has no trajectories".into()));
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(OpeError::InvalidDataset(format!(
                "discount {discount} outside [0, 1]"
            )));
        }
        let horizon = trajectories[0].len();
        let action_count = trajectories[0].step(0).context.action_count();
        for (i, traj) in trajectories.iter().enumerate() {
            if traj.len() != horizon {
                return Err(OpeError::InvalidDataset(format!(
                    "trajectory {i} has length {}, expected {horizon}",
                    traj.len()
                )));
            }
            for (t, step) in traj.steps().iter().enumerate() {
                if step.context.action_count() != action_count {
                    return Err(OpeError::InvalidDataset(format!(
                        "trajectory {i} step {t} has {} actions, expected {action_count}",
                        step.context.action_count()
                    )));
                }
                step.validate()?;
            }
        }
        Ok(Self {
            trajectories,
            horizon,
            action_count,
            discount,
        })
    }

    /// Number of trajectories `n`.
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// Returns a dataset with the same steps in a permuted trajectory order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.trajectories.len() {
            return Err(OpeError::InvalidParameter(
                "permutation length mismatch".into(),
            ));
        }
        let trajectories = order
            .iter()
            .map(|&i| self.trajectories[i].clone())
            .collect();
        Dataset::new(trajectories, self.discount)
    }
}

// ── Importance ratios and returns ───────────────────────────────────────

fn step_ratio(
    step: &StepRecord,
    target: &dyn PolicyModel,
    logging: &dyn PolicyModel,
    pi_buf: &mut Vec<f64>,
    mu_buf: &mut Vec<f64>,
) -> Result<f64> {
    let k = step.context.action_count();
    pi_buf.resize(k, 0.0);
    mu_buf.resize(k, 0.0);
    target.prob_into(&step.context, pi_buf);
    logging.prob_into(&step.context, mu_buf);
    let pi = pi_buf[step.action];
    let mu = mu_buf[step.action];
    if mu <= PROPENSITY_FLOOR {
        if pi > 0.0 {
            return Err(OpeError::AbsoluteContinuity {
                action: step.action,
                target_prob: pi,
                propensity: mu,
                floor: PROPENSITY_FLOOR,
            });
        }
        return Ok(0.0);
    }
    Ok(pi / mu)
}

/// Cumulative importance ratio `prod_{t=t1..=t2} pi(a_t|x_t) / mu(a_t|x_t)`.
///
/// Returns exactly 1 when `t1 > t2`. Probabilities are always recomputed from
/// the supplied policy objects; stored logged propensities are not consulted.
pub fn cumulative_importance_ratio(
    traj: &Trajectory,
    target: &dyn PolicyModel,
    logging: &dyn PolicyModel,
    t1: usize,
    t2: usize,
) -> Result<f64> {
    if t1 > t2 {
        return Ok(1.0);
    }
    let horizon = traj.len();
    if t2 >= horizon {
        return Err(OpeError::IndexOutOfRange {
            index: t2,
            horizon,
        });
    }
    let mut pi_buf = Vec::new();
    let mut mu_buf = Vec::new();
    let mut ratio = 1.0;
    for t in t1..=t2 {
        ratio *= step_ratio(traj.step(t), target, logging, &mut pi_buf, &mut mu_buf)?;
    }
    Ok(ratio)
}

/// Discounted return `sum_{t=t1..=t2} gamma^(t-t1) r_t`.
pub fn discounted_return(traj: &Trajectory, t1: usize, t2: usize, gamma: f64) -> Result<f64> {
    let horizon = traj.len();
    if t1 > t2 || t2 >= horizon {
        return Err(OpeError::IndexOutOfRange {
            index: t2.max(t1),
            horizon,
        });
    }
    let mut total = 0.0;
    let mut weight = 1.0;
    for t in t1..=t2 {
        total += weight * traj.step(t).reward;
        weight *= gamma;
    }
    Ok(total)
}

// ── Assumption checks ───────────────────────────────────────────────────

/// One flagged absolute-continuity violation.
#[derive(Debug, Clone)]
pub struct ContinuityViolation {
    pub trajectory: usize,
    pub step: usize,
    pub action: usize,
    pub target_prob: f64,
    pub propensity: f64,
}

/// Report produced by [`validate_dataset`]; informational only.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// `(x, a)` pairs where the target assigns positive probability but the
    /// logging model sits at or below the propensity floor (Assumption 1).
    pub violations: Vec<ContinuityViolation>,
    /// Empirical second moment of the cumulative ratio per step,
    /// `mean_i rho_{0:t}^2`, a finite-sample proxy for Assumption 2.
    pub ratio_second_moments: Vec<f64>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scans a dataset for absolute-continuity violations between a target policy
/// and a logging model, and reports the empirical second moments of the
/// cumulative importance ratios. Never fails: propensities at the floor are
/// clamped for the moment computation and flagged instead.
pub fn validate_dataset(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging: &dyn PolicyModel,
) -> ValidationReport {
    let horizon = data.horizon();
    let n = data.len() as f64;
    let mut violations = Vec::new();
    let mut moments = vec![0.0; horizon];
    let mut pi_buf = Vec::new();
    let mut mu_buf = Vec::new();
    for (i, traj) in data.trajectories().iter().enumerate() {
        let mut ratio = 1.0;
        for (t, step) in traj.steps().iter().enumerate() {
            let k = step.context.action_count();
            pi_buf.resize(k, 0.0);
            mu_buf.resize(k, 0.0);
            target.prob_into(&step.context, &mut pi_buf);
            logging.prob_into(&step.context, &mut mu_buf);
            for a in 0..k {
                if pi_buf[a] > 0.0 && mu_buf[a] <= PROPENSITY_FLOOR {
                    violations.push(ContinuityViolation {
                        trajectory: i,
                        step: t,
                        action: a,
                        target_prob: pi_buf[a],
                        propensity: mu_buf[a],
                    });
                }
            }
            let mu = mu_buf[step.action].max(PROPENSITY_FLOOR);
            ratio *= pi_buf[step.action] / mu;
            moments[t] += ratio * ratio / n;
        }
    }
    ValidationReport {
        violations,
        ratio_second_moments: moments,
    }
}
