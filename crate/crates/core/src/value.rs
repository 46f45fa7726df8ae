//! Value-function models: a time-augmented linear state-action value model
//! `Qhat(t, x, a) = psi(t, x, a)' beta`, its target-averaged state value, and
//! the extended regression class that appends the logging-score correction
//! term `c' score(a|x)` used by the variance-minimizing solver.

use nalgebra::DMatrix;

use crate::data::Context;
use crate::error::{OpeError, Result};
use crate::policy::PolicyModel;

// ── Feature maps ────────────────────────────────────────────────────────

/// Deterministic feature map `psi(t, x, a)`. Every variant includes a
/// constant coordinate so the model class contains the constant functions.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// Intercept only: `psi = [1]`.
    Constant,
    /// Intercept plus a one-hot-in-`t` copy of the per-action features, so
    /// the fitted value can differ at every step of the horizon:
    /// `psi = [1, onehot(t) ⊗ x_a]`.
    TimeAugmented { horizon: usize, feat_dim: usize },
    /// Intercept plus one intercept per step: `psi = [1, onehot(t)]`, the
    /// time-augmented class over a constant base feature. The fitted value
    /// acts as a per-step baseline that ignores state and action.
    StepIntercepts { horizon: usize },
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Constant => 1,
            FeatureMap::TimeAugmented { horizon, feat_dim } => 1 + horizon * feat_dim,
            FeatureMap::StepIntercepts { horizon } => 1 + horizon,
        }
    }

    /// Writes `psi(t, x, a)` into `out` (length [`FeatureMap::dim`]).
    pub fn eval_into(&self, t: usize, x: &Context, action: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[0] = 1.0;
        match self {
            FeatureMap::Constant => {}
            FeatureMap::TimeAugmented { horizon, feat_dim } => {
                assert!(t < *horizon, "step {t} beyond horizon {horizon}");
                assert_eq!(x.feat_dim(), *feat_dim, "feature dimension mismatch");
                let offset = 1 + t * feat_dim;
                out[offset..offset + feat_dim].copy_from_slice(x.action_features(action));
            }
            FeatureMap::StepIntercepts { horizon } => {
                assert!(t < *horizon, "step {t} beyond horizon {horizon}");
                out[1 + t] = 1.0;
            }
        }
    }

    pub fn eval(&self, t: usize, x: &Context, action: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, x, action, &mut out);
        out
    }
}

// ── Linear value model ──────────────────────────────────────────────────

/// Linear-in-parameters state-action value model.
#[derive(Debug, Clone)]
pub struct LinearValueModel {
    pub features: FeatureMap,
    pub beta: Vec<f64>,
}

impl LinearValueModel {
    /// Zero model (`beta = 0`) over the given features.
    pub fn new(features: FeatureMap) -> Self {
        let beta = vec![0.0; features.dim()];
        Self { features, beta }
    }

    pub fn with_beta(features: FeatureMap, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != features.dim() {
            return Err(OpeError::InvalidParameter(format!(
                "beta has {} coordinates, feature map has {}",
                beta.len(),
                features.dim()
            )));
        }
        Ok(Self { features, beta })
    }

    /// `Qhat(t, x, a) = psi(t, x, a)' beta`.
    pub fn q_hat(&self, t: usize, x: &Context, action: usize) -> f64 {
        let mut psi = vec![0.0; self.features.dim()];
        self.features.eval_into(t, x, action, &mut psi);
        psi.iter().zip(&self.beta).map(|(p, b)| p * b).sum()
    }

    /// `Vhat(t, x) = sum_a pi(a|x) Qhat(t, x, a)` under the target policy.
    pub fn v_hat(&self, target: &dyn PolicyModel, t: usize, x: &Context) -> f64 {
        let k = x.action_count();
        let mut pi = vec![0.0; k];
        target.prob_into(x, &mut pi);
        (0..k).map(|a| pi[a] * self.q_hat(t, x, a)).sum()
    }
}

// ── Extended regression class ───────────────────────────────────────────

/// The per-step regression function
/// `F_t(x, a; beta, c) = rho_prev * pi(a|x) * Qhat(t, x, a; beta)
///                       + gamma^(-t) * c' score(a|x)`,
/// which is exactly linear in the stacked parameter `(beta, c)` for linear
/// value models. For a one-step problem (`t = 0`, `rho_prev = 1`) this is the
/// contextual-bandit regression function `F`.
pub struct ExtendedRegression<'a> {
    pub features: &'a FeatureMap,
    pub target: &'a dyn PolicyModel,
    pub logging: &'a dyn PolicyModel,
    pub gamma: f64,
}

impl<'a> ExtendedRegression<'a> {
    pub fn new(
        features: &'a FeatureMap,
        target: &'a dyn PolicyModel,
        logging: &'a dyn PolicyModel,
        gamma: f64,
    ) -> Self {
        Self {
            features,
            target,
            logging,
            gamma,
        }
    }

    /// `(p, q)`: value-model and logging-parameter dimensions.
    pub fn param_dims(&self) -> (usize, usize) {
        (self.features.dim(), self.logging.param_dim())
    }

    fn gamma_neg_t(&self, t: usize) -> f64 {
        self.gamma.powi(-(t as i32))
    }

    /// Gradient matrix `f = dF_vec / d(beta, c)`: `K` rows, row `a` equal to
    /// `[rho_prev * pi(a|x) * psi(t, x, a)', gamma^(-t) * score(a|x)']`.
    /// Independent of the current `(beta, c)`.
    pub fn f_matrix(&self, t: usize, x: &Context, rho_prev: f64) -> DMatrix<f64> {
        let k = x.action_count();
        let (p, q) = self.param_dims();
        let mut out = DMatrix::zeros(k, p + q);
        self.fill_f_matrix(t, x, rho_prev, &mut out);
        out
    }

    /// In-place variant of [`ExtendedRegression::f_matrix`].
    pub fn fill_f_matrix(&self, t: usize, x: &Context, rho_prev: f64, out: &mut DMatrix<f64>) {
        let k = x.action_count();
        let (p, q) = self.param_dims();
        debug_assert_eq!(out.nrows(), k);
        debug_assert_eq!(out.ncols(), p + q);
        let mut pi = vec![0.0; k];
        self.target.prob_into(x, &mut pi);
        let mut psi = vec![0.0; p];
        for a in 0..k {
            self.features.eval_into(t, x, a, &mut psi);
            let w = rho_prev * pi[a];
            for j in 0..p {
                out[(a, j)] = w * psi[j];
            }
        }
        if q > 0 {
            let scale = self.gamma_neg_t(t);
            let mut scores = vec![0.0; k * q];
            self.logging.scores_into(x, &mut scores);
            for a in 0..k {
                for j in 0..q {
                    out[(a, p + j)] = scale * scores[a * q + j];
                }
            }
        }
    }

    /// `F_t(x, a; beta, c)` for one action.
    pub fn value_at(
        &self,
        t: usize,
        x: &Context,
        action: usize,
        rho_prev: f64,
        beta: &[f64],
        c: &[f64],
    ) -> f64 {
        let (p, q) = self.param_dims();
        debug_assert_eq!(beta.len(), p);
        debug_assert_eq!(c.len(), q);
        let mut pi = vec![0.0; x.action_count()];
        self.target.prob_into(x, &mut pi);
        let mut psi = vec![0.0; p];
        self.features.eval_into(t, x, action, &mut psi);
        let q_val: f64 = psi.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mut out = rho_prev * pi[action] * q_val;
        if q > 0 {
            let score = self.logging.score(x, action);
            let corr: f64 = score.iter().zip(c).map(|(s, cv)| s * cv).sum();
            out += self.gamma_neg_t(t) * corr;
        }
        out
    }

    /// `F_t(x, ·; beta, c)` for all actions.
    pub fn values(
        &self,
        t: usize,
        x: &Context,
        rho_prev: f64,
        beta: &[f64],
        c: &[f64],
    ) -> Vec<f64> {
        (0..x.action_count())
            .map(|a| self.value_at(t, x, a, rho_prev, beta, c))
            .collect()
    }
}
