//! Parameterized logging-policy families: action probabilities, score vectors
//! (the gradient of the modeled probability in the policy parameter), Fisher
//! information, Newton maximum-likelihood fitting, and a generalized
//! estimating-equation fit for arbitrary smooth weight functions.

use nalgebra::{DMatrix, DVector};

use crate::data::{ActionDistribution, Context, Dataset, PROPENSITY_FLOOR};
use crate::error::{OpeError, Result};

/// Newton iteration cap for the fitters.
pub const MAX_FIT_ITERATIONS: usize = 100;
/// Step-halving cap inside one Newton iteration.
const MAX_HALVINGS: usize = 30;
/// Relative ridge added to the information matrix before each solve.
const FIT_RIDGE: f64 = 1e-8;
/// Convergence: `max|U_n| <= SCORE_TOL * n * T`.
pub const SCORE_TOL: f64 = 1e-10;

// ── Policy trait ────────────────────────────────────────────────────────

/// A (possibly parameterless) stochastic policy over the actions of a
/// context, with the parameter-gradient of its probabilities.
///
/// Implementations must be pure: probabilities and scores depend only on the
/// model parameters and the context, so models are safe to share across
/// threads.
pub trait PolicyModel: Send + Sync {
    /// Writes the action probabilities for `x` into `out` (length `K`).
    fn prob_into(&self, x: &Context, out: &mut [f64]);

    /// Writes the score vector `d prob(action|x) / d phi` into `out`
    /// (length [`PolicyModel::param_dim`]).
    fn score_into(&self, x: &Context, action: usize, out: &mut [f64]);

    /// Dimension of the parameter vector; zero for known (fixed) policies.
    fn param_dim(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    /// Validated probability vector for `x`.
    fn prob(&self, x: &Context) -> Result<ActionDistribution> {
        let mut out = vec![0.0; x.action_count()];
        self.prob_into(x, &mut out);
        if out.iter().any(|p| !p.is_finite()) {
            return Err(OpeError::NumericalOverflow("policy probabilities".into()));
        }
        ActionDistribution::new(out)
    }

    /// Score vector as an owned allocation; see [`PolicyModel::score_into`].
    fn score(&self, x: &Context, action: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.param_dim()];
        self.score_into(x, action, &mut out);
        out
    }

    /// Writes the `K x param_dim` row-major matrix of scores for all actions.
    fn scores_into(&self, x: &Context, out: &mut [f64]) {
        let q = self.param_dim();
        for a in 0..x.action_count() {
            self.score_into(x, a, &mut out[a * q..(a + 1) * q]);
        }
    }

    /// Maps natural parameters to the unconstrained coordinates the Newton
    /// fitter iterates in. Identity unless the family is range-constrained.
    fn to_unconstrained(&self, natural: &[f64]) -> Vec<f64> {
        natural.to_vec()
    }

    /// Inverse of [`PolicyModel::to_unconstrained`].
    fn from_unconstrained(&self, unconstrained: &[f64]) -> Vec<f64> {
        unconstrained.to_vec()
    }

    /// Diagonal of `d natural / d unconstrained`, evaluated at `natural`.
    fn transform_jacobian_diag(&self, natural: &[f64]) -> Vec<f64> {
        vec![1.0; natural.len()]
    }
}

// ── Fixed policies ──────────────────────────────────────────────────────

/// A known, state-independent policy: the same action distribution at every
/// context. Zero parameters, so it can stand in wherever a "fitted" model is
/// expected with `dim(phi) = 0`.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let dist = ActionDistribution::new(probs)?;
        Ok(Self {
            probs: dist.probs().to_vec(),
        })
    }

    /// Point mass on one action.
    pub fn deterministic(action_count: usize, action: usize) -> Self {
        let mut probs = vec![0.0; action_count];
        probs[action] = 1.0;
        Self { probs }
    }
}

impl PolicyModel for FixedPolicy {
    fn prob_into(&self, x: &Context, out: &mut [f64]) {
        assert_eq!(x.action_count(), self.probs.len(), "action count mismatch");
        out.copy_from_slice(&self.probs);
    }

    fn score_into(&self, _x: &Context, _action: usize, _out: &mut [f64]) {}

    fn param_dim(&self) -> usize {
        0
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.is_empty() {
            Ok(())
        } else {
            Err(OpeError::InvalidParameter(
                "fixed policy has no parameters".into(),
            ))
        }
    }
}

/// A known policy given by one action distribution per discrete observation
/// id; contexts must carry a state id.
#[derive(Debug, Clone)]
pub struct ObsTablePolicy {
    table: Vec<Vec<f64>>,
}

impl ObsTablePolicy {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        for row in &table {
            ActionDistribution::new(row.clone())?;
        }
        if table.is_empty() {
            return Err(OpeError::InvalidParameter("empty policy table".into()));
        }
        Ok(Self { table })
    }

    pub fn row(&self, obs: usize) -> &[f64] {
        &self.table[obs]
    }
}

impl PolicyModel for ObsTablePolicy {
    fn prob_into(&self, x: &Context, out: &mut [f64]) {
        let obs = x
            .state()
            .expect("ObsTablePolicy requires contexts with a state id");
        out.copy_from_slice(&self.table[obs]);
    }

    fn score_into(&self, _x: &Context, _action: usize, _out: &mut [f64]) {}

    fn param_dim(&self) -> usize {
        0
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.is_empty() {
            Ok(())
        } else {
            Err(OpeError::InvalidParameter(
                "table policy has no parameters".into(),
            ))
        }
    }
}

// ── Softmax-linear family ───────────────────────────────────────────────

/// Linear logistic (conditional logit) policy over per-action features:
/// `prob(a|x) = exp(x_a' phi) / sum_j exp(x_j' phi)`.
#[derive(Debug, Clone)]
pub struct SoftmaxLinearPolicy {
    phi: Vec<f64>,
}

impl SoftmaxLinearPolicy {
    /// Uniform member of the family (`phi = 0`).
    pub fn new(feat_dim: usize) -> Self {
        Self {
            phi: vec![0.0; feat_dim],
        }
    }

    pub fn with_coefficients(phi: Vec<f64>) -> Self {
        Self { phi }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.phi
    }

    fn logits_into(&self, x: &Context, out: &mut [f64]) {
        for a in 0..x.action_count() {
            out[a] = dot(x.action_features(a), &self.phi);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PolicyModel for SoftmaxLinearPolicy {
    fn prob_into(&self, x: &Context, out: &mut [f64]) {
        self.logits_into(x, out);
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    }

    fn score_into(&self, x: &Context, action: usize, out: &mut [f64]) {
        let k = x.action_count();
        let d = self.phi.len();
        let mut probs = vec![0.0; k];
        self.prob_into(x, &mut probs);
        // mu_a * (x_a - sum_j mu_j x_j)
        let xa = x.action_features(action);
        for j in 0..d {
            out[j] = xa[j];
        }
        for a in 0..k {
            let fa = x.action_features(a);
            for j in 0..d {
                out[j] -= probs[a] * fa[j];
            }
        }
        for v in out.iter_mut() {
            *v *= probs[action];
        }
    }

    fn scores_into(&self, x: &Context, out: &mut [f64]) {
        let k = x.action_count();
        let d = self.phi.len();
        let mut probs = vec![0.0; k];
        self.prob_into(x, &mut probs);
        let mut mean = vec![0.0; d];
        for a in 0..k {
            let fa = x.action_features(a);
            for j in 0..d {
                mean[j] += probs[a] * fa[j];
            }
        }
        for a in 0..k {
            let fa = x.action_features(a);
            let row = &mut out[a * d..(a + 1) * d];
            for j in 0..d {
                row[j] = probs[a] * (fa[j] - mean[j]);
            }
        }
    }

    fn param_dim(&self) -> usize {
        self.phi.len()
    }

    fn params(&self) -> Vec<f64> {
        self.phi.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.phi.len() {
            return Err(OpeError::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                self.phi.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(OpeError::InvalidParameter(
                "non-finite softmax coefficients".into(),
            ));
        }
        self.phi.copy_from_slice(params);
        Ok(())
    }
}

// ── Mixture family ──────────────────────────────────────────────────────

/// One-parameter mixture of a fixed base policy with the uniform policy:
/// `prob = alpha * base + (1 - alpha) / K`, `alpha` strictly inside (0, 1).
///
/// The exported parameter and score are on the alpha scale; the Newton fitter
/// iterates on the logit scale so alpha can never leave (0, 1).
#[derive(Debug, Clone)]
pub struct MixturePolicy<P> {
    base: P,
    alpha: f64,
}

impl<P: PolicyModel> MixturePolicy<P> {
    pub fn new(base: P, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { base, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &P {
        &self.base
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OpeError::InvalidParameter(format!(
            "mixture rate {alpha} outside (0, 1)"
        )));
    }
    Ok(())
}

impl<P: PolicyModel + Clone> PolicyModel for MixturePolicy<P> {
    fn prob_into(&self, x: &Context, out: &mut [f64]) {
        let k = x.action_count();
        self.base.prob_into(x, out);
        let uniform = (1.0 - self.alpha) / k as f64;
        for v in out.iter_mut() {
            *v = self.alpha * *v + uniform;
        }
    }

    fn score_into(&self, x: &Context, action: usize, out: &mut [f64]) {
        let k = x.action_count();
        let mut base = vec![0.0; k];
        self.base.prob_into(x, &mut base);
        out[0] = base[action] - 1.0 / k as f64;
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn params(&self) -> Vec<f64> {
        vec![self.alpha]
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != 1 {
            return Err(OpeError::InvalidParameter(
                "mixture policy has exactly one parameter".into(),
            ));
        }
        check_alpha(params[0])?;
        self.alpha = params[0];
        Ok(())
    }

    fn to_unconstrained(&self, natural: &[f64]) -> Vec<f64> {
        vec![(natural[0] / (1.0 - natural[0])).ln()]
    }

    fn from_unconstrained(&self, unconstrained: &[f64]) -> Vec<f64> {
        vec![1.0 / (1.0 + (-unconstrained[0]).exp())]
    }

    fn transform_jacobian_diag(&self, natural: &[f64]) -> Vec<f64> {
        vec![natural[0] * (1.0 - natural[0])]
    }
}

// ── Fisher information and fit results ──────────────────────────────────

/// The information matrix `Sigma_phiphi = sum_{i,t,a} score score' / prob`,
/// accumulated over a dataset at fixed parameters.
#[derive(Debug, Clone)]
pub struct FisherInfo {
    matrix: DMatrix<f64>,
}

impl FisherInfo {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Asymptotic standard errors `sqrt(diag(Sigma^-1))`.
    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        let dim = self.dim();
        if dim == 0 {
            return Ok(Vec::new());
        }
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .ok_or(OpeError::SingularInformation)?;
        let inv = chol.inverse();
        Ok((0..dim).map(|j| inv[(j, j)].sqrt()).collect())
    }
}

/// Outcome of a converged fit.
#[derive(Debug, Clone)]
pub struct FitResult<P> {
    /// The family member at the fitted parameters.
    pub model: P,
    /// Fitted parameter vector (natural scale).
    pub phi_hat: Vec<f64>,
    pub iterations: usize,
    /// `max|U_n(phi_hat)|`; at most the convergence tolerance.
    pub final_score_norm: f64,
    /// Information matrix at the solution.
    pub fisher: FisherInfo,
}

/// Computes `Sigma_phiphi` for a model over a dataset.
pub fn fisher_information(model: &dyn PolicyModel, data: &Dataset) -> FisherInfo {
    let q = model.param_dim();
    let mut matrix = DMatrix::zeros(q, q);
    if q == 0 {
        return FisherInfo { matrix };
    }
    let k = data.action_count();
    let mut probs = vec![0.0; k];
    let mut scores = vec![0.0; k * q];
    for traj in data.trajectories() {
        for step in traj.steps() {
            model.prob_into(&step.context, &mut probs);
            model.scores_into(&step.context, &mut scores);
            for a in 0..k {
                let w = 1.0 / probs[a].max(PROPENSITY_FLOOR);
                let row = &scores[a * q..(a + 1) * q];
                for r in 0..q {
                    for c in 0..q {
                        matrix[(r, c)] += w * row[r] * row[c];
                    }
                }
            }
        }
    }
    FisherInfo { matrix }
}

/// Log-likelihood of the taken actions under a model.
pub fn log_likelihood(model: &dyn PolicyModel, data: &Dataset) -> f64 {
    let k = data.action_count();
    let mut probs = vec![0.0; k];
    let mut total = 0.0;
    for traj in data.trajectories() {
        for step in traj.steps() {
            model.prob_into(&step.context, &mut probs);
            total += probs[step.action].ln();
        }
    }
    total
}

/// MLE score `U_n(phi) = sum_{i,t} score(a_t|x_t) / prob(a_t|x_t)`.
fn mle_score(model: &dyn PolicyModel, data: &Dataset, out: &mut DVector<f64>) {
    let q = model.param_dim();
    out.fill(0.0);
    let k = data.action_count();
    let mut probs = vec![0.0; k];
    let mut score = vec![0.0; q];
    for traj in data.trajectories() {
        for step in traj.steps() {
            model.prob_into(&step.context, &mut probs);
            model.score_into(&step.context, step.action, &mut score);
            let w = 1.0 / probs[step.action].max(PROPENSITY_FLOOR);
            for j in 0..q {
                out[j] += w * score[j];
            }
        }
    }
}

fn ridge_in_place(m: &mut DMatrix<f64>) {
    let dim = m.nrows();
    if dim == 0 {
        return;
    }
    let trace: f64 = (0..dim).map(|j| m[(j, j)]).sum();
    let ridge = FIT_RIDGE * (trace / dim as f64).max(f64::MIN_POSITIVE);
    for j in 0..dim {
        m[(j, j)] += ridge;
    }
}

/// Fits a policy family by maximum likelihood: Newton iterations on the score
/// equation `U_n(phi) = 0`, preconditioned by the Fisher matrix, with
/// step-halving on the log-likelihood. The fit starts from the parameters of
/// the supplied family member.
pub fn fit_mle<P: PolicyModel + Clone>(family: &P, data: &Dataset) -> Result<FitResult<P>> {
    let q = family.param_dim();
    let tol = SCORE_TOL * (data.len() * data.horizon()) as f64;
    let mut model = family.clone();
    let mut score = DVector::zeros(q);

    if q == 0 {
        return Ok(FitResult {
            fisher: fisher_information(&model, data),
            phi_hat: Vec::new(),
            iterations: 0,
            final_score_norm: 0.0,
            model,
        });
    }

    let mut loglik = log_likelihood(&model, data);
    for iteration in 0..MAX_FIT_ITERATIONS {
        mle_score(&model, data, &mut score);
        let norm = score.amax();
        if norm <= tol {
            let fisher = fisher_information(&model, data);
            let trace: f64 = (0..q).map(|j| fisher.matrix[(j, j)]).sum();
            if trace <= 0.0 {
                // The score vanished because the fitted probabilities
                // saturated at 0/1 (separation): the likelihood has no
                // interior maximum.
                return Err(OpeError::NonConvergence {
                    iterations: iteration,
                    score_norm: norm,
                });
            }
            return Ok(FitResult {
                fisher,
                phi_hat: model.params(),
                iterations: iteration,
                final_score_norm: norm,
                model,
            });
        }

        let natural = model.params();
        let jac = model.transform_jacobian_diag(&natural);
        let mut info = fisher_information(&model, data).matrix;
        // Transform score and information to the unconstrained coordinates.
        let mut score_u = score.clone();
        for r in 0..q {
            score_u[r] *= jac[r];
            for c in 0..q {
                info[(r, c)] *= jac[r] * jac[c];
            }
        }
        ridge_in_place(&mut info);
        let chol = info.cholesky().ok_or(OpeError::SingularInformation)?;
        let direction = chol.solve(&score_u);

        let u0 = model.to_unconstrained(&natural);
        let mut accepted = false;
        let mut lambda = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let u_new: Vec<f64> = u0
                .iter()
                .zip(direction.iter())
                .map(|(u, d)| u + lambda * d)
                .collect();
            let candidate = model.from_unconstrained(&u_new);
            let mut trial = model.clone();
            if trial.set_params(&candidate).is_ok() {
                let ll = log_likelihood(&trial, data);
                if ll.is_finite() && ll > loglik {
                    model = trial;
                    loglik = ll;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // Near the optimum the likelihood improvement underflows the
            // floating-point comparison; accept the full Newton step if it
            // still shrinks the score.
            let u_new: Vec<f64> = u0
                .iter()
                .zip(direction.iter())
                .map(|(u, d)| u + d)
                .collect();
            let candidate = model.from_unconstrained(&u_new);
            let mut trial = model.clone();
            if trial.set_params(&candidate).is_ok() {
                let mut trial_score = DVector::zeros(q);
                mle_score(&trial, data, &mut trial_score);
                if trial_score.amax() < norm {
                    loglik = log_likelihood(&trial, data);
                    model = trial;
                    accepted = true;
                }
            }
        }
        if !accepted {
            // The likelihood cannot be improved along the Newton direction
            // even with the smallest step; treat as stalled.
            return Err(OpeError::NonConvergence {
                iterations: iteration + 1,
                score_norm: norm,
            });
        }
    }

    mle_score(&model, data, &mut score);
    Err(OpeError::NonConvergence {
        iterations: MAX_FIT_ITERATIONS,
        score_norm: score.amax(),
    })
}

// ── Generalized estimating equation (weight function h) ─────────────────

/// Residual of the generalized estimating equation
/// `U_n(phi) = sum_{i,t} sum_a (1{a_t = a} - prob(a|x_t; phi)) h(x_t, a; phi)`.
fn general_residual<P, H>(model: &P, data: &Dataset, h: &H, out: &mut DVector<f64>)
where
    P: PolicyModel + Clone,
    H: Fn(&Context, usize, &[f64]) -> Vec<f64>,
{
    out.fill(0.0);
    let k = data.action_count();
    let q = model.param_dim();
    let phi = model.params();
    let mut probs = vec![0.0; k];
    for traj in data.trajectories() {
        for step in traj.steps() {
            model.prob_into(&step.context, &mut probs);
            for a in 0..k {
                let delta = if a == step.action { 1.0 } else { 0.0 };
                let weight = h(&step.context, a, &phi);
                debug_assert_eq!(weight.len(), q);
                for j in 0..q {
                    out[j] += (delta - probs[a]) * weight[j];
                }
            }
        }
    }
}

/// Fits a policy family by solving the generalized estimating equation for a
/// smooth weight function `h(x, a; phi)`. With `h = score / prob` this is
/// exactly the MLE score equation. The Jacobian is computed by central finite
/// differences in the unconstrained coordinates.
pub fn fit_general<P, H>(family: &P, data: &Dataset, h: H) -> Result<FitResult<P>>
where
    P: PolicyModel + Clone,
    H: Fn(&Context, usize, &[f64]) -> Vec<f64>,
{
    let q = family.param_dim();
    let tol = SCORE_TOL * (data.len() * data.horizon()) as f64;
    let mut model = family.clone();

    if q == 0 {
        return Ok(FitResult {
            fisher: fisher_information(&model, data),
            phi_hat: Vec::new(),
            iterations: 0,
            final_score_norm: 0.0,
            model,
        });
    }

    let residual_at = |u: &[f64], out: &mut DVector<f64>| -> Result<()> {
        let natural = model.from_unconstrained(u);
        let mut trial = model.clone();
        trial.set_params(&natural)?;
        general_residual(&trial, data, &h, out);
        Ok(())
    };

    let mut u = model.to_unconstrained(&model.params());
    let mut residual = DVector::zeros(q);
    residual_at(&u, &mut residual)?;

    for iteration in 0..MAX_FIT_ITERATIONS {
        if residual.amax() <= tol && iteration > 0 {
            let natural = model.from_unconstrained(&u);
            model.set_params(&natural)?;
            return Ok(FitResult {
                fisher: fisher_information(&model, data),
                phi_hat: model.params(),
                iterations: iteration,
                final_score_norm: residual.amax(),
                model,
            });
        }

        // Central-difference Jacobian dU/du.
        let mut jacobian = DMatrix::zeros(q, q);
        let mut plus = DVector::zeros(q);
        let mut minus = DVector::zeros(q);
        for j in 0..q {
            let step = 1e-6 * u[j].abs().max(1.0);
            let mut up = u.clone();
            up[j] += step;
            let mut down = u.clone();
            down[j] -= step;
            residual_at(&up, &mut plus)?;
            residual_at(&down, &mut minus)?;
            for r in 0..q {
                jacobian[(r, j)] = (plus[r] - minus[r]) / (2.0 * step);
            }
        }
        let svd = jacobian.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smax / smin.max(f64::MIN_POSITIVE) > 1e12 {
            return Err(OpeError::SingularInformation);
        }
        let direction = svd
            .solve(&(-&residual), smax * 1e-14)
            .map_err(|_| OpeError::SingularInformation)?;

        // Check the equation actually converged, not just the iterate.
        if residual.amax() <= tol {
            let natural = model.from_unconstrained(&u);
            model.set_params(&natural)?;
            return Ok(FitResult {
                fisher: fisher_information(&model, data),
                phi_hat: model.params(),
                iterations: iteration,
                final_score_norm: residual.amax(),
                model,
            });
        }

        let base_norm = residual.norm();
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut trial_residual = DVector::zeros(q);
        for _ in 0..=MAX_HALVINGS {
            let u_new: Vec<f64> = u
                .iter()
                .zip(direction.column(0).iter())
                .map(|(v, d)| v + lambda * d)
                .collect();
            if residual_at(&u_new, &mut trial_residual).is_ok()
                && trial_residual.norm() < base_norm
            {
                u = u_new;
                residual.copy_from(&trial_residual);
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(OpeError::NonConvergence {
                iterations: iteration + 1,
                score_norm: residual.amax(),
            });
        }
    }

    Err(OpeError::NonConvergence {
        iterations: MAX_FIT_ITERATIONS,
        score_norm: residual.amax(),
    })
}
