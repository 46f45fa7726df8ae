//! Shared oracle machinery for the integration suites: exhaustive
//! enumerators for small bandits and MDPs, a derivative-free minimizer, and
//! exact variance formulas. Everything here stays test-side so the oracles
//! cannot share the code paths they are checking.

// Each test target compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ope_core::data::{Context, Dataset, StepRecord, Trajectory};
use ope_core::envs::TabularMdp;
use ope_core::policy::PolicyModel;
use ope_core::value::FeatureMap;

// ── Derivative-free minimizer ───────────────────────────────────────────

/// Plain Nelder-Mead with restarts; good enough for smooth low-dimensional
/// objectives.
pub fn nelder_mead<F>(f: F, start: &[f64], scale: f64, max_iter: usize) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let dim = start.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(start.to_vec());
    for j in 0..dim {
        let mut v = start.to_vec();
        v[j] += scale;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];
        if (values[worst] - values[best]).abs()
            <= 1e-14 * (1.0 + values[best].abs())
        {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for &i in &order[..dim] {
            for j in 0..dim {
                centroid[j] += simplex[i][j] / dim as f64;
            }
        }
        let blend = |a: &[f64], b: &[f64], w: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
        };

        let reflected = blend(&centroid, &simplex[worst], -alpha);
        let fr = f(&reflected);
        if fr < values[best] {
            let expanded = blend(&centroid, &simplex[worst], -alpha * gamma);
            let fe = f(&expanded);
            if fe < fr {
                simplex[worst] = expanded;
                values[worst] = fe;
            } else {
                simplex[worst] = reflected;
                values[worst] = fr;
            }
        } else if fr < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = fr;
        } else {
            let contracted = blend(&centroid, &simplex[worst], rho);
            let fc = f(&contracted);
            if fc < values[worst] {
                simplex[worst] = contracted;
                values[worst] = fc;
            } else {
                let best_point = simplex[best].clone();
                for i in 0..=dim {
                    if i != best {
                        simplex[i] = blend(&best_point, &simplex[i], sigma);
                        values[i] = f(&simplex[i]);
                    }
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=dim {
        if values[i] < values[best] {
            best = i;
        }
    }
    (simplex[best].clone(), values[best])
}

// ── Enumerable contextual bandit ────────────────────────────────────────

/// A finite bandit: finitely many contexts with probabilities and a two-point
/// (or longer) discrete reward distribution per (context, action). Everything
/// about it can be computed by exact summation.
pub struct EnumBandit {
    pub contexts: Vec<(Context, f64)>,
    /// `rewards[ctx][action]` is a list of `(value, prob)`.
    pub rewards: Vec<Vec<Vec<(f64, f64)>>>,
}

impl EnumBandit {
    pub fn action_count(&self) -> usize {
        self.rewards[0].len()
    }

    pub fn q(&self, ctx: usize, action: usize) -> f64 {
        self.rewards[ctx][action]
            .iter()
            .map(|(v, p)| v * p)
            .sum()
    }

    pub fn true_value(&self, target: &dyn PolicyModel) -> f64 {
        let k = self.action_count();
        let mut probs = vec![0.0; k];
        let mut total = 0.0;
        for (ci, (x, px)) in self.contexts.iter().enumerate() {
            target.prob_into(x, &mut probs);
            for a in 0..k {
                total += px * probs[a] * self.q(ci, a);
            }
        }
        total
    }

    /// Exhaustive expectation over (x, a ~ mu, r): the callback receives
    /// `(ctx index, action, reward, joint probability)`.
    pub fn for_each_outcome<F: FnMut(usize, usize, f64, f64)>(
        &self,
        logging: &dyn PolicyModel,
        mut body: F,
    ) {
        let k = self.action_count();
        let mut mu = vec![0.0; k];
        for (ci, (x, px)) in self.contexts.iter().enumerate() {
            logging.prob_into(x, &mut mu);
            for a in 0..k {
                for &(r, pr) in &self.rewards[ci][a] {
                    body(ci, a, r, px * mu[a] * pr);
                }
            }
        }
    }

    /// Exhaustive expectation over (x, potential-reward vector): the callback
    /// receives `(ctx index, rewards for every action, joint probability)`.
    /// Potential rewards are independent across actions.
    pub fn for_each_reward_vector<F: FnMut(usize, &[f64], f64)>(&self, mut body: F) {
        let k = self.action_count();
        for (ci, (_, px)) in self.contexts.iter().enumerate() {
            let supports: Vec<&Vec<(f64, f64)>> =
                (0..k).map(|a| &self.rewards[ci][a]).collect();
            let mut combo = vec![0usize; k];
            loop {
                let mut prob = *px;
                let mut rvec = vec![0.0; k];
                for a in 0..k {
                    let (v, p) = supports[a][combo[a]];
                    rvec[a] = v;
                    prob *= p;
                }
                body(ci, &rvec, prob);
                // Advance the mixed-radix counter.
                let mut carry = 0;
                loop {
                    combo[carry] += 1;
                    if combo[carry] < supports[carry].len() {
                        break;
                    }
                    combo[carry] = 0;
                    carry += 1;
                    if carry == k {
                        break;
                    }
                }
                if carry == k {
                    break;
                }
            }
        }
    }

    /// A single-step dataset holding one record; used to evaluate production
    /// per-trajectory quantities at an enumerated outcome.
    pub fn record(&self, ctx: usize, action: usize, reward: f64, mu: f64) -> Dataset {
        let step = StepRecord {
            context: self.contexts[ctx].0.clone(),
            action,
            reward,
            logged_propensity: Some(mu),
        };
        Dataset::new(vec![Trajectory::new(vec![step]).unwrap()], 1.0).unwrap()
    }
}

/// Seminorm `|v|^2_M` with `M = diag(1/mu) - J`.
pub fn seminorm_sq(v: &[f64], mu: &[f64]) -> f64 {
    let quad: f64 = v.iter().zip(mu).map(|(vi, mi)| vi * vi / mi).sum();
    let sum: f64 = v.iter().sum();
    quad - sum * sum
}

/// Direct one-step implementation of the variance-minimizing estimator:
/// plain loops, a Cholesky solve, and the contextual-bandit value formula.
/// Independent of the general finite-horizon assembly it cross-checks.
pub fn drunknown_cb_oracle(
    data: &Dataset,
    target: &dyn PolicyModel,
    logging: &dyn PolicyModel,
    features: &FeatureMap,
) -> f64 {
    let k = data.action_count();
    let p = features.dim();
    let q = logging.param_dim();
    let dim = p + q;
    let mut a_mat = DMatrix::<f64>::zeros(dim, dim);
    let mut b_vec = DVector::<f64>::zeros(dim);
    let mut pi = vec![0.0; k];
    let mut mu = vec![0.0; k];
    let mut psi = vec![0.0; p];
    for traj in data.trajectories() {
        let step = traj.step(0);
        target.prob_into(&step.context, &mut pi);
        logging.prob_into(&step.context, &mut mu);
        let mut f = DMatrix::<f64>::zeros(k, dim);
        for action in 0..k {
            features.eval_into(0, &step.context, action, &mut psi);
            for j in 0..p {
                f[(action, j)] = pi[action] * psi[j];
            }
            let score = logging.score(&step.context, action);
            for j in 0..q {
                f[(action, p + j)] = score[j];
            }
        }
        // M = diag(1/mu) - J applied row-wise.
        let mut col_sum = DVector::<f64>::zeros(dim);
        for action in 0..k {
            for j in 0..dim {
                col_sum[j] += f[(action, j)];
            }
        }
        for r in 0..dim {
            for c in 0..dim {
                let mut acc = 0.0;
                for action in 0..k {
                    acc += f[(action, r)] * f[(action, c)] / mu[action];
                }
                a_mat[(r, c)] += acc - col_sum[r] * col_sum[c];
            }
        }
        let y = pi[step.action] * step.reward / mu[step.action];
        for j in 0..dim {
            b_vec[j] += f[(step.action, j)] * y / mu[step.action] - col_sum[j] * y;
        }
    }
    let trace: f64 = (0..dim).map(|j| a_mat[(j, j)]).sum();
    for j in 0..dim {
        a_mat[(j, j)] += 1e-8 * trace / dim as f64;
    }
    let theta = a_mat
        .cholesky()
        .expect("well-conditioned oracle")
        .solve(&b_vec);
    let beta = &theta.as_slice()[..p];

    let mut value = 0.0;
    for traj in data.trajectories() {
        let step = traj.step(0);
        target.prob_into(&step.context, &mut pi);
        logging.prob_into(&step.context, &mut mu);
        let mut q_taken = 0.0;
        let mut v_hat = 0.0;
        for action in 0..k {
            features.eval_into(0, &step.context, action, &mut psi);
            let q_val: f64 = psi.iter().zip(beta).map(|(x, b)| x * b).sum();
            if action == step.action {
                q_taken = q_val;
            }
            v_hat += pi[action] * q_val;
        }
        value += pi[step.action] / mu[step.action] * (step.reward - q_taken) + v_hat;
    }
    value / data.len() as f64
}

// ── Exhaustive tabular-MDP enumeration ──────────────────────────────────

/// One enumerated trajectory: states, actions, rewards, and its probability
/// under the logging policy.
pub struct EnumPath {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub prob: f64,
}

/// Enumerates every positive-probability trajectory of a small tabular MDP
/// under a logging policy.
pub fn enumerate_paths(mdp: &TabularMdp, logging: &dyn PolicyModel) -> Vec<EnumPath> {
    let k = mdp.n_actions();
    let mut probs = vec![0.0; k];
    let mut paths = Vec::new();
    let mut stack = vec![(vec![mdp.initial_state()], Vec::new(), Vec::new(), 1.0)];
    while let Some((states, actions, rewards, prob)) = stack.pop() {
        if actions.len() == mdp.horizon() {
            paths.push(EnumPath {
                states,
                actions,
                rewards,
                prob,
            });
            continue;
        }
        let s = *states.last().unwrap();
        logging.prob_into(&mdp.context_for(s), &mut probs);
        for a in 0..k {
            if probs[a] == 0.0 {
                continue;
            }
            for next in 0..mdp.n_states() {
                let pt = mdp.transition(s, a, next);
                if pt == 0.0 {
                    continue;
                }
                let mut states2 = states.clone();
                states2.push(next);
                let mut actions2 = actions.clone();
                actions2.push(a);
                let mut rewards2 = rewards.clone();
                rewards2.push(mdp.reward(s, a, next));
                stack.push((states2, actions2, rewards2, prob * probs[a] * pt));
            }
        }
    }
    paths
}

/// Builds a one-trajectory dataset from an enumerated path, logging the true
/// propensities.
pub fn path_dataset(
    mdp: &TabularMdp,
    logging: &dyn PolicyModel,
    path: &EnumPath,
    gamma: f64,
) -> Dataset {
    let k = mdp.n_actions();
    let mut probs = vec![0.0; k];
    let steps: Vec<StepRecord> = (0..mdp.horizon())
        .map(|t| {
            let context = mdp.context_for(path.states[t]);
            logging.prob_into(&context, &mut probs);
            StepRecord {
                logged_propensity: Some(probs[path.actions[t]]),
                context,
                action: path.actions[t],
                reward: path.rewards[t],
            }
        })
        .collect();
    Dataset::new(vec![Trajectory::new(steps).unwrap()], gamma).unwrap()
}

/// Per-step state-action values `Q^t(s, a)` and `V^t(s)` by exact backward
/// induction; index `[t][s]` / `[t][s][a]`, for `t` in `0..horizon`.
pub fn backward_induction(
    mdp: &TabularMdp,
    target: &dyn PolicyModel,
    gamma: f64,
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let horizon = mdp.horizon();
    let ns = mdp.n_states();
    let k = mdp.n_actions();
    let mut pi = vec![0.0; k];
    let mut q_all = vec![vec![vec![0.0; k]; ns]; horizon];
    let mut v_all = vec![vec![0.0; ns]; horizon];
    let mut v_next = vec![0.0; ns];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            target.prob_into(&mdp.context_for(s), &mut pi);
            let mut v = 0.0;
            for a in 0..k {
                let mut q = 0.0;
                for next in 0..ns {
                    let p = mdp.transition(s, a, next);
                    if p > 0.0 {
                        q += p * (mdp.reward(s, a, next) + gamma * v_next[next]);
                    }
                }
                q_all[t][s][a] = q;
                v += pi[a] * q;
            }
            v_all[t][s] = v;
        }
        v_next = v_all[t].clone();
    }
    (q_all, v_all)
}

/// The theoretical variance of the per-trajectory influence value at fixed
/// `(beta, c)` and the true logging policy:
/// `C_T + sum_t gamma^{2t} E |F_t - rho_{0:t-1} pi Q^t|^2_{M_mu}`,
/// evaluated by exhaustive enumeration.
pub fn influence_variance_oracle(
    mdp: &TabularMdp,
    target: &dyn PolicyModel,
    logging: &dyn PolicyModel,
    features: &FeatureMap,
    beta: &[f64],
    c: &[f64],
    gamma: f64,
) -> f64 {
    let horizon = mdp.horizon();
    let k = mdp.n_actions();
    let (q_all, v_all) = backward_induction(mdp, target, gamma);

    let mut pi = vec![0.0; k];
    let mut mu = vec![0.0; k];
    let mut psi = vec![0.0; features.dim()];

    // Independent evaluation of the regression function
    // F_t(x, a) = rho_prev pi(a|x) psi' beta + gamma^-t c' score(a|x).
    let mut f_value = |t: usize, x: &Context, a: usize, rho_prev: f64, pi_a: f64| -> f64 {
        features.eval_into(t, x, a, &mut psi);
        let q: f64 = psi.iter().zip(beta).map(|(p, b)| p * b).sum();
        let corr: f64 = logging
            .score(x, a)
            .iter()
            .zip(c)
            .map(|(s, cv)| s * cv)
            .sum();
        rho_prev * pi_a * q + gamma.powi(-(t as i32)) * corr
    };

    // Prefix distribution over (history up to x_t, rho_{0:t-1}).
    // prefix[t] holds (prob, states[0..=t], actions[0..t], rho_prev).
    let mut c_t = 0.0;
    let mut seminorm_total = 0.0;
    let mut prefixes: Vec<(f64, Vec<usize>, Vec<usize>, f64)> =
        vec![(1.0, vec![mdp.initial_state()], Vec::new(), 1.0)];
    for t in 0..horizon {
        // Seminorm and reward-variance terms at step t; then extend prefixes.
        let g2t = gamma.powi(2 * t as i32);
        let mut next_prefixes = Vec::new();
        for (prob, states, actions, rho_prev) in &prefixes {
            let s = *states.last().unwrap();
            let x = mdp.context_for(s);
            target.prob_into(&x, &mut pi);
            logging.prob_into(&x, &mut mu);

            // E |F_t - rho_prev pi Qvec|^2_M over this prefix.
            let diff: Vec<f64> = (0..k)
                .map(|a| {
                    f_value(t, &x, a, *rho_prev, pi[a]) - rho_prev * pi[a] * q_all[t][s][a]
                })
                .collect();
            seminorm_total += prob * g2t * seminorm_sq(&diff, &mu);

            for a in 0..k {
                if mu[a] == 0.0 {
                    continue;
                }
                let rho = rho_prev * pi[a] / mu[a];
                // Var_{t+1}[rho_{0:t} r_t] given (.., x_t, a_t): randomness
                // is the successor state.
                let mut er = 0.0;
                let mut er2 = 0.0;
                for next in 0..mdp.n_states() {
                    let p = mdp.transition(s, a, next);
                    if p > 0.0 {
                        let r = mdp.reward(s, a, next);
                        er += p * r;
                        er2 += p * r * r;
                    }
                }
                c_t += prob * mu[a] * g2t * rho * rho * (er2 - er * er);

                // Var_{t+1}[rho_{0:t} V^{t+1}(x_{t+1})] for the next step's
                // state-variance term (conditioned on the history through
                // a_t).
                if t + 1 < horizon {
                    let g2t1 = gamma.powi(2 * (t + 1) as i32);
                    let mut ev = 0.0;
                    let mut ev2 = 0.0;
                    for next in 0..mdp.n_states() {
                        let p = mdp.transition(s, a, next);
                        if p > 0.0 {
                            let v = v_all[t + 1][next];
                            ev += p * v;
                            ev2 += p * v * v;
                        }
                    }
                    c_t += prob * mu[a] * g2t1 * rho * rho * (ev2 - ev * ev);
                }

                for next in 0..mdp.n_states() {
                    let p = mdp.transition(s, a, next);
                    if p > 0.0 {
                        let mut states2 = states.clone();
                        states2.push(next);
                        let mut actions2 = actions.clone();
                        actions2.push(a);
                        next_prefixes.push((prob * mu[a] * p, states2, actions2, rho));
                    }
                }
            }
        }
        prefixes = next_prefixes;
    }
    // Initial-state variance term Var_0[V^0(x_0)] is zero for a fixed start.
    c_t + seminorm_total
}
