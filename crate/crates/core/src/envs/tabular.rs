//! Tabular finite-horizon MDPs with an observation map, seeded rollouts, and
//! an exact backward-induction oracle for true policy values.
//!
//! Ships the two benchmark domains:
//!
//! * **ModelWin** — three observable states; from the start state action 0
//!   reaches the rewarding state with probability 0.6 (action 1 with 0.4),
//!   both middle states return to the start; rewards are +1 / -1 on entering
//!   the middle states; horizon 20.
//! * **ModelFail** — four states the learner cannot tell apart: both middle
//!   states share one observation, so any fitted value model is misspecified
//!   by construction; +1 via the upper path, -1 via the lower; horizon 2.

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::data::{Context, Dataset, StepRecord, Trajectory};
use crate::envs::sample_index;
use crate::error::{OpeError, Result};
use crate::policy::{FixedPolicy, MixturePolicy, ObsTablePolicy, PolicyModel};

#[derive(Debug, Clone)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `transitions[s][a][s']`, each row a distribution over `s'`.
    transitions: Vec<f64>,
    /// `rewards[s][a][s']`, the reward received on the transition.
    rewards: Vec<f64>,
    initial_state: usize,
    horizon: usize,
    /// Observation class per state; states sharing a class are
    /// indistinguishable to the learner.
    obs_class: Vec<usize>,
    n_obs: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial_state: usize,
        horizon: usize,
        obs_class: Vec<usize>,
    ) -> Result<Self> {
        let cells = n_states * n_actions * n_states;
        if transitions.len() != cells || rewards.len() != cells {
            return Err(OpeError::InvalidParameter(
                "transition/reward tensor size mismatch".into(),
            ));
        }
        if obs_class.len() != n_states || initial_state >= n_states || horizon == 0 {
            return Err(OpeError::InvalidParameter("bad tabular MDP shape".into()));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(OpeError::InvalidParameter("non-finite reward".into()));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let base = (s * n_actions + a) * n_states;
                let row = &transitions[base..base + n_states];
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                    return Err(OpeError::InvalidParameter(format!(
                        "transition row for state {s}, action {a} sums to {sum}"
                    )));
                }
            }
        }
        let n_obs = obs_class.iter().max().copied().unwrap_or(0) + 1;
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            initial_state,
            horizon,
            obs_class,
            n_obs,
        })
    }

    pub fn modelwin() -> Self {
        let (s, a) = (3usize, 2usize);
        let mut transitions = vec![0.0; s * a * s];
        let mut rewards = vec![0.0; s * a * s];
        let idx = |st: usize, ac: usize, nx: usize| (st * a + ac) * s + nx;
        // Start state: action 0 favors the +1 state, action 1 the -1 state.
        transitions[idx(0, 0, 1)] = 0.6;
        transitions[idx(0, 0, 2)] = 0.4;
        transitions[idx(0, 1, 1)] = 0.4;
        transitions[idx(0, 1, 2)] = 0.6;
        // Both middle states return to the start deterministically.
        for ac in 0..a {
            transitions[idx(1, ac, 0)] = 1.0;
            transitions[idx(2, ac, 0)] = 1.0;
        }
        for st in 0..s {
            for ac in 0..a {
                rewards[idx(st, ac, 1)] = 1.0;
                rewards[idx(st, ac, 2)] = -1.0;
            }
        }
        Self::new(s, a, transitions, rewards, 0, 20, vec![0, 1, 2]).expect("modelwin spec")
    }

    /// ModelWin with a custom horizon (the benchmark default is 20).
    pub fn modelwin_with_horizon(horizon: usize) -> Result<Self> {
        let mut mdp = Self::modelwin();
        if horizon == 0 {
            return Err(OpeError::InvalidParameter("horizon must be >= 1".into()));
        }
        mdp.horizon = horizon;
        Ok(mdp)
    }

    pub fn modelfail() -> Self {
        let (s, a) = (4usize, 2usize);
        let mut transitions = vec![0.0; s * a * s];
        let mut rewards = vec![0.0; s * a * s];
        let idx = |st: usize, ac: usize, nx: usize| (st * a + ac) * s + nx;
        transitions[idx(0, 0, 1)] = 1.0; // upper path
        transitions[idx(0, 1, 2)] = 1.0; // lower path
        for ac in 0..a {
            transitions[idx(1, ac, 3)] = 1.0;
            transitions[idx(2, ac, 3)] = 1.0;
            transitions[idx(3, ac, 3)] = 1.0;
            rewards[idx(1, ac, 3)] = 1.0;
            rewards[idx(2, ac, 3)] = -1.0;
        }
        // The two middle states share observation 1: the learner never sees
        // which path it is on.
        Self::new(s, a, transitions, rewards, 0, 2, vec![0, 1, 1, 2]).expect("modelfail spec")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.rewards[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Dimension of the learner-visible per-action features.
    pub fn feat_dim(&self) -> usize {
        self.n_obs * self.n_actions
    }

    /// Learner-visible context for a state: per-action one-hot features over
    /// `(observation, action)` cells plus the observation id. The hidden
    /// state never leaks; aliased states produce identical contexts.
    pub fn context_for(&self, state: usize) -> Context {
        let obs = self.obs_class[state];
        let dim = self.feat_dim();
        let mut feats = vec![0.0; self.n_actions * dim];
        for action in 0..self.n_actions {
            feats[action * dim + obs * self.n_actions + action] = 1.0;
        }
        Context::from_flat(feats, dim)
            .expect("one-hot features")
            .with_state(obs)
    }

    /// Rolls out `n` trajectories of length `horizon` under a logging policy,
    /// logging the true propensity of every taken action.
    pub fn rollout(
        &self,
        logging: &dyn PolicyModel,
        n: usize,
        seed: u64,
        gamma: f64,
    ) -> Result<Dataset> {
        let mut rng = StdRng::seed_from_u64(seed);
        let contexts: Vec<Context> = (0..self.n_states).map(|s| self.context_for(s)).collect();
        let mut probs = vec![0.0; self.n_actions];
        let mut trajectories = Vec::with_capacity(n);
        for _ in 0..n {
            let mut state = self.initial_state;
            let mut steps = Vec::with_capacity(self.horizon);
            for _ in 0..self.horizon {
                let context = contexts[state].clone();
                logging.prob_into(&context, &mut probs);
                let action = sample_index(&mut rng, &probs);
                let base = (state * self.n_actions + action) * self.n_states;
                let next = sample_index(&mut rng, &self.transitions[base..base + self.n_states]);
                steps.push(StepRecord {
                    logged_propensity: Some(probs[action]),
                    context,
                    action,
                    reward: self.reward(state, action, next),
                });
                state = next;
            }
            trajectories.push(Trajectory::new(steps)?);
        }
        Dataset::new(trajectories, gamma)
    }

    /// Exact policy value `sum_t gamma^t E_pi[r_t]` by backward induction
    /// over the true states; the target policy is evaluated on the
    /// learner-visible contexts, exactly as it acts during rollouts.
    pub fn true_value_dp(&self, target: &dyn PolicyModel, horizon: usize, gamma: f64) -> f64 {
        let mut probs = vec![0.0; self.n_actions];
        let contexts: Vec<Context> = (0..self.n_states).map(|s| self.context_for(s)).collect();
        let mut next_values = vec![0.0; self.n_states];
        for _ in 0..horizon {
            let mut values = vec![0.0; self.n_states];
            for s in 0..self.n_states {
                target.prob_into(&contexts[s], &mut probs);
                let mut v = 0.0;
                for a in 0..self.n_actions {
                    let mut q = 0.0;
                    for next in 0..self.n_states {
                        let p = self.transition(s, a, next);
                        if p > 0.0 {
                            q += p * (self.reward(s, a, next) + gamma * next_values[next]);
                        }
                    }
                    v += probs[a] * q;
                }
                values[s] = v;
            }
            next_values = values;
        }
        next_values[self.initial_state]
    }

    /// Per-observation choice structure from exact backward induction:
    /// `Some(action)` for observations whose states have a strictly best
    /// action, `None` where every action is equivalent (no decision to
    /// make). Fails if the classification is time-dependent or disagrees
    /// between states sharing an observation (neither happens in the
    /// shipped domains).
    fn greedy_structure(&self, gamma: f64) -> Result<Vec<Option<usize>>> {
        const TIE_TOL: f64 = 1e-9;
        let mut next_values = vec![0.0; self.n_states];
        let mut greedy: Vec<Option<Option<usize>>> = vec![None; self.n_states];
        for _ in 0..self.horizon {
            let mut values = vec![0.0; self.n_states];
            for s in 0..self.n_states {
                let mut qs = vec![0.0; self.n_actions];
                for a in 0..self.n_actions {
                    for next in 0..self.n_states {
                        let p = self.transition(s, a, next);
                        if p > 0.0 {
                            qs[a] += p * (self.reward(s, a, next) + gamma * next_values[next]);
                        }
                    }
                }
                let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let worst = qs.iter().cloned().fold(f64::INFINITY, f64::min);
                let choice = if best - worst <= TIE_TOL {
                    None
                } else {
                    Some(qs.iter().position(|q| *q == best).expect("max exists"))
                };
                values[s] = if choice.is_some() {
                    best
                } else {
                    qs.iter().sum::<f64>() / self.n_actions as f64
                };
                // A tie at some step is compatible with any strict choice at
                // another (the state simply has nothing to decide there);
                // only conflicting strict choices are rejected.
                match (greedy[s], choice) {
                    (None, c) => greedy[s] = Some(c),
                    (Some(None), c) => greedy[s] = Some(c),
                    (Some(Some(_)), None) => {}
                    (Some(Some(prev)), Some(curr)) if prev == curr => {}
                    (Some(prev), _) => {
                        return Err(OpeError::InvalidParameter(format!(
                            "greedy choice at state {s} is time-dependent ({prev:?} vs {choice:?})"
                        )));
                    }
                }
            }
            next_values = values;
        }
        let mut table: Vec<Option<Option<usize>>> = vec![None; self.n_obs];
        for s in 0..self.n_states {
            let choice = greedy[s].expect("greedy filled");
            let obs = self.obs_class[s];
            match table[obs] {
                None => table[obs] = Some(choice),
                Some(prev) if prev == choice => {}
                Some(prev) => {
                    return Err(OpeError::InvalidParameter(format!(
                        "states sharing observation {obs} disagree on the greedy choice ({prev:?} vs {choice:?})"
                    )));
                }
            }
        }
        Ok(table.into_iter().map(|c| c.expect("covered")).collect())
    }

    /// Per-observation policy that plays `decision_dist` with its largest
    /// mass on the greedy action at every observation. Observations whose
    /// actions are all equivalent keep the distribution as given, so the
    /// policy is state-independent in the shipped domains (where action 0 is
    /// greedy wherever a decision exists).
    pub fn structured_policy(&self, gamma: f64, decision_dist: &[f64]) -> Result<ObsTablePolicy> {
        if decision_dist.len() != self.n_actions {
            return Err(OpeError::InvalidParameter(
                "decision distribution arity mismatch".into(),
            ));
        }
        let structure = self.greedy_structure(gamma)?;
        let rows = structure
            .into_iter()
            .map(|choice| {
                let mut row = decision_dist.to_vec();
                if let Some(greedy) = choice {
                    row.swap(0, greedy);
                }
                row
            })
            .collect();
        ObsTablePolicy::new(rows)
    }

    /// The exact DP-optimal deterministic policy (ties keep action 0); the
    /// base the logging mixture is built from.
    pub fn optimal_policy(&self, gamma: f64) -> Result<ObsTablePolicy> {
        let mut point_mass = vec![0.0; self.n_actions];
        point_mass[0] = 1.0;
        self.structured_policy(gamma, &point_mass)
    }
}

/// Benchmark target policy: the better action with probability 0.7.
pub fn tabular_target(mdp: &TabularMdp, gamma: f64) -> Result<ObsTablePolicy> {
    let mut dist = vec![0.3 / (mdp.n_actions() as f64 - 1.0); mdp.n_actions()];
    dist[0] = 0.7;
    mdp.structured_policy(gamma, &dist)
}

/// Logging-policy family for the tabular domains: the exact DP-optimal
/// deterministic policy mixed with uniform at rate `alpha`. At the default
/// `alpha = 0.5` with two actions this chooses the optimal action with
/// probability 0.75.
pub fn tabular_logging_family(
    mdp: &TabularMdp,
    alpha: f64,
    gamma: f64,
) -> Result<MixturePolicy<ObsTablePolicy>> {
    MixturePolicy::new(mdp.optimal_policy(gamma)?, alpha)
}
