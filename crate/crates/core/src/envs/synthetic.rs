//! Synthetic contextual bandit: per-action feature vectors drawn uniformly,
//! Gaussian rewards whose mean is a fixed (generally nonlinear) function of
//! the taken action's features, and linear-logistic logging/target policies
//! with random coefficients. The linear value model is misspecified for the
//! default exponential reward mean while the logging-policy model is
//! correctly specified, which is exactly the regime the variance-minimizing
//! estimators are built for.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::data::{Context, Dataset, StepRecord, Trajectory};
use crate::envs::{derive_seed, sample_index};
use crate::policy::{PolicyModel, SoftmaxLinearPolicy};

/// Shape of the mean-reward function `E[r | x, a]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMean {
    /// `exp(x_a' beta)`: not representable by a linear value model.
    ExpLinear,
    /// `x_a' beta`: representable, so the value model is correctly specified.
    Linear,
}

/// Which features the *true* logging policy applies its coefficients to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoggingKind {
    /// Softmax on the raw features; the fitted softmax family is correct.
    Softmax,
    /// Softmax on squared features; any softmax fit on the raw features is
    /// misspecified.
    SquaredSoftmax,
}

#[derive(Debug, Clone)]
pub struct SyntheticCbConfig {
    pub n: usize,
    pub action_count: usize,
    pub feat_dim: usize,
    pub seed: u64,
    pub reward_mean: RewardMean,
    pub logging_kind: LoggingKind,
    pub oracle_draws: usize,
}

impl SyntheticCbConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            action_count: 10,
            feat_dim: 5,
            seed,
            reward_mean: RewardMean::ExpLinear,
            logging_kind: LoggingKind::Softmax,
            oracle_draws: 1_000_000,
        }
    }
}

/// A drawn environment: fixed reward and policy coefficients. Datasets and
/// oracle draws are generated from separate seeds so one environment can back
/// many replicates.
#[derive(Debug, Clone)]
pub struct SyntheticCbEnv {
    pub action_count: usize,
    pub feat_dim: usize,
    pub beta_reward: Vec<f64>,
    pub phi_mu: Vec<f64>,
    pub phi_pi: Vec<f64>,
    pub reward_mean: RewardMean,
    pub logging_kind: LoggingKind,
}

impl SyntheticCbEnv {
    /// Draws coefficients from the config seed: reward and logging
    /// coefficients uniform on `[-1/sqrt(d), 1/sqrt(d)]`, target coefficients
    /// on the wider `[-2/sqrt(d), 2/sqrt(d)]`.
    pub fn from_config(cfg: &SyntheticCbConfig) -> Self {
        let d = cfg.feat_dim;
        let mut rng = StdRng::seed_from_u64(derive_seed(cfg.seed, 0xC0EF));
        let bound = 1.0 / (d as f64).sqrt();
        let draw = |rng: &mut StdRng, b: f64| -> Vec<f64> {
            (0..d).map(|_| rng.random_range(-b..b)).collect()
        };
        let beta_reward = draw(&mut rng, bound);
        let phi_mu = draw(&mut rng, bound);
        let phi_pi = draw(&mut rng, 2.0 * bound);
        Self {
            action_count: cfg.action_count,
            feat_dim: d,
            beta_reward,
            phi_mu,
            phi_pi,
            reward_mean: cfg.reward_mean,
            logging_kind: cfg.logging_kind,
        }
    }

    pub fn target_policy(&self) -> SoftmaxLinearPolicy {
        SoftmaxLinearPolicy::with_coefficients(self.phi_pi.clone())
    }

    /// The true logging policy (known-propensity reference).
    pub fn true_logging(&self) -> Box<dyn PolicyModel> {
        match self.logging_kind {
            LoggingKind::Softmax => {
                Box::new(SoftmaxLinearPolicy::with_coefficients(self.phi_mu.clone()))
            }
            LoggingKind::SquaredSoftmax => Box::new(SquaredFeatureSoftmax {
                phi: self.phi_mu.clone(),
            }),
        }
    }

    /// The family handed to the fitters: the uniform softmax member.
    pub fn logging_family(&self) -> SoftmaxLinearPolicy {
        SoftmaxLinearPolicy::new(self.feat_dim)
    }

    pub fn mean_reward(&self, action_features: &[f64]) -> f64 {
        let lin: f64 = action_features
            .iter()
            .zip(&self.beta_reward)
            .map(|(x, b)| x * b)
            .sum();
        match self.reward_mean {
            RewardMean::ExpLinear => lin.exp(),
            RewardMean::Linear => lin,
        }
    }

    fn draw_context(&self, rng: &mut StdRng) -> Context {
        let bound = 1.0 / (self.feat_dim as f64).sqrt();
        let feats: Vec<f64> = (0..self.action_count * self.feat_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Context::from_flat(feats, self.feat_dim).expect("finite features")
    }

    /// Generates `n` one-step trajectories; the true propensity of the taken
    /// action is logged with every record.
    pub fn generate(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let logging = self.true_logging();
        let mut probs = vec![0.0; self.action_count];
        let trajectories: Vec<Trajectory> = (0..n)
            .map(|_| {
                let context = self.draw_context(&mut rng);
                logging.prob_into(&context, &mut probs);
                let action = sample_index(&mut rng, &probs);
                let mean = self.mean_reward(context.action_features(action));
                let reward = mean + noise.sample(&mut rng);
                Trajectory::new(vec![StepRecord {
                    logged_propensity: Some(probs[action]),
                    context,
                    action,
                    reward,
                }])
                .expect("nonempty trajectory")
            })
            .collect();
        Dataset::new(trajectories, 1.0).expect("valid synthetic dataset")
    }

    /// Monte-Carlo oracle for the true target value: fresh contexts with the
    /// reward noise integrated out analytically,
    /// `V = E_x sum_a pi(a|x) m(x_a)`.
    pub fn true_value(&self, draws: usize, seed: u64) -> f64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let target = self.target_policy();
        let mut probs = vec![0.0; self.action_count];
        let mut total = 0.0;
        for _ in 0..draws {
            let context = self.draw_context(&mut rng);
            target.prob_into(&context, &mut probs);
            for a in 0..self.action_count {
                total += probs[a] * self.mean_reward(context.action_features(a));
            }
        }
        total / draws as f64
    }
}

/// Synthetic contextual-bandit generator: returns the dataset and the
/// Monte-Carlo true value of the target policy. Deterministic in the config.
pub fn gen_synthetic_cb(cfg: &SyntheticCbConfig) -> (Dataset, f64) {
    let env = SyntheticCbEnv::from_config(cfg);
    let data = env.generate(cfg.n, derive_seed(cfg.seed, 1));
    let value = env.true_value(cfg.oracle_draws, derive_seed(cfg.seed, 2));
    (data, value)
}

/// Softmax over element-wise squared features; stands in for a logging
/// policy outside the raw-feature softmax family.
#[derive(Debug, Clone)]
pub struct SquaredFeatureSoftmax {
    pub phi: Vec<f64>,
}

impl PolicyModel for SquaredFeatureSoftmax {
    fn prob_into(&self, x: &Context, out: &mut [f64]) {
        for a in 0..x.action_count() {
            let feats = x.action_features(a);
            out[a] = feats
                .iter()
                .zip(&self.phi)
                .map(|(f, p)| f * f * p)
                .sum::<f64>();
        }
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

    fn score_into(&self, _x: &Context, _action: usize, _out: &mut [f64]) {}

    fn param_dim(&self) -> usize {
        0
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_params(&mut self, params: &[f64]) -> crate::error::Result<()> {
        if params.is_empty() {
            Ok(())
        } else {
            Err(crate::error::OpeError::InvalidParameter(
                "squared-feature softmax is a fixed reference policy".into(),
            ))
        }
    }
}
