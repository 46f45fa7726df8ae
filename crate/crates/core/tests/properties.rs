//! Property tests for the structural invariants: ratio algebra, distribution
//! validation, score identities, and return arithmetic over randomized
//! inputs.

mod common;

use ope_core::data::{
    cumulative_importance_ratio, discounted_return, ActionDistribution, Context, StepRecord,
    Trajectory,
};
use ope_core::policy::{PolicyModel, SoftmaxLinearPolicy};
use proptest::prelude::*;

fn coeff() -> impl Strategy<Value = f64> {
    -1.5..1.5f64
}

prop_compose! {
    fn trajectory_and_policies(max_horizon: usize)(
        horizon in 1..=max_horizon,
        k in 2..5usize,
        d in 1..4usize,
    )(
        feats in prop::collection::vec(coeff(), horizon * k * d),
        actions in prop::collection::vec(0..k, horizon),
        phi_target in prop::collection::vec(coeff(), d),
        phi_logging in prop::collection::vec(coeff(), d),
        rewards in prop::collection::vec(-2.0..2.0f64, horizon),
        horizon in Just(horizon),
        k in Just(k),
        d in Just(d),
    ) -> (Trajectory, SoftmaxLinearPolicy, SoftmaxLinearPolicy) {
        let steps: Vec<StepRecord> = (0..horizon)
            .map(|t| StepRecord {
                context: Context::from_flat(
                    feats[t * k * d..(t + 1) * k * d].to_vec(),
                    d,
                )
                .unwrap(),
                action: actions[t],
                reward: rewards[t],
                logged_propensity: None,
            })
            .collect();
        (
            Trajectory::new(steps).unwrap(),
            SoftmaxLinearPolicy::with_coefficients(phi_target),
            SoftmaxLinearPolicy::with_coefficients(phi_logging),
        )
    }
}

proptest! {
    #[test]
    fn cumulative_ratio_splits_at_any_cut(
        (traj, target, logging) in trajectory_and_policies(6),
        cut in 0..6usize,
    ) {
        let t2 = traj.len() - 1;
        let cut = cut.min(t2);
        let whole = cumulative_importance_ratio(&traj, &target, &logging, 0, t2).unwrap();
        let left = cumulative_importance_ratio(&traj, &target, &logging, 0, cut).unwrap();
        let right = if cut + 1 > t2 {
            1.0
        } else {
            cumulative_importance_ratio(&traj, &target, &logging, cut + 1, t2).unwrap()
        };
        prop_assert!((whole - left * right).abs() <= 1e-12 * whole.abs().max(1.0));
    }

    #[test]
    fn reversed_ranges_are_always_one(
        (traj, target, logging) in trajectory_and_policies(5),
    ) {
        let t2 = traj.len() - 1;
        for t1 in 1..=t2 {
            let r = cumulative_importance_ratio(&traj, &target, &logging, t1, t1 - 1).unwrap();
            prop_assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn softmax_probabilities_are_valid_and_scores_cancel(
        (traj, target, _) in trajectory_and_policies(3),
    ) {
        for step in traj.steps() {
            let dist = target.prob(&step.context).unwrap();
            let sum: f64 = dist.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let q = target.param_dim();
            let mut total = vec![0.0; q];
            for a in 0..step.context.action_count() {
                for (acc, s) in total.iter_mut().zip(target.score(&step.context, a)) {
                    *acc += s;
                }
            }
            for v in total {
                prop_assert!(v.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn normalized_vectors_build_distributions_and_shifted_ones_do_not(
        raw in prop::collection::vec(0.05..1.0f64, 2..8),
        shift in 1e-6..1e-3f64,
    ) {
        let sum: f64 = raw.iter().sum();
        let normalized: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        prop_assert!(ActionDistribution::new(normalized.clone()).is_ok());
        let mut bad = normalized;
        bad[0] += shift;
        prop_assert!(ActionDistribution::new(bad).is_err());
    }

    #[test]
    fn discounted_return_matches_term_by_term_loop(
        (traj, _, _) in trajectory_and_policies(6),
        gamma in 0.0..1.0f64,
        t1 in 0..6usize,
    ) {
        let t2 = traj.len() - 1;
        let t1 = t1.min(t2);
        let fast = discounted_return(&traj, t1, t2, gamma).unwrap();
        let mut slow = 0.0;
        for t in t1..=t2 {
            slow += gamma.powi((t - t1) as i32) * traj.step(t).reward;
        }
        prop_assert!((fast - slow).abs() <= 1e-12);
    }
}
