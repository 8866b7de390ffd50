#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use inferact::inference::{predict_observations, predict_states};
use inferact::model::DirichletState;
use inferact::policy::{
    check_action, enumerate_policies, policy_posterior, score_policies, score_policy, select_action, EfeBreakdown,
    Policy, PolicyMode, SelectionMode,
};
use inferact::prob::LogPrefs;
use inferact::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape() -> ModelShape {
    ModelShape {
        factor_cards: vec![3, 2, 3],
        controls: vec![3, 2, 1],
        obs_cards: vec![4, 2, 3],
        a_deps: vec![vec![0], vec![0, 1], vec![2]],
    }
}

/// Every control combination repeated over `horizon` steps, in lexicographic
/// order.
fn all_policies(controls: &[usize], horizon: usize) -> Vec<Policy> {
    let actions = joint_states(controls);
    joint_states(&vec![actions.len(); horizon])
        .into_iter()
        .map(|idx| Policy::new(idx.into_iter().map(|i| actions[i].clone()).collect()))
        .collect()
}

fn ln_softmax(c: &[f64]) -> Vec<f64> {
    let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = c.iter().map(|v| (v - max).exp()).sum();
    c.iter().map(|v| v - max - z.ln()).collect()
}

/// Reference utility and novelty for one policy, written out over the joint
/// state space with explicit loops.
fn oracle(
    model: &inferact::model::GenerativeModel,
    dir: &DirichletState,
    q0: &inferact::inference::BeliefState,
    p: &Policy,
) -> (f64, f64) {
    let cards = model.factor_cards();
    let states = joint_states(&cards);
    let mut q = q0.clone();
    let (mut utility, mut novelty) = (0.0, 0.0);
    for step in &p.steps {
        q = predict_states(model, &q, step).unwrap();
        let weight = |s: &Vec<usize>| -> f64 { s.iter().enumerate().map(|(f, &i)| q.factor(f).probs()[i]).product() };
        for m in 0..model.num_modalities() {
            let lc = ln_softmax(model.c[m].values());
            let pa = &dir.pa[m];
            for o in 0..model.num_obs(m) {
                let qo: f64 = states.iter().map(|s| weight(s) * likelihood(model, m, o, s)).sum();
                utility += qo * lc[o];
                // Novelty over distinct dependency configurations.
                let deps = &model.a_deps[m];
                let dep_cards: Vec<usize> = deps.iter().map(|&f| cards[f]).collect();
                for sd in joint_states(&dep_cards) {
                    let mut qs = 1.0;
                    for (k, &f) in deps.iter().enumerate() {
                        qs *= q.factor(f).probs()[sd[k]];
                    }
                    let mut idx = vec![o];
                    idx.extend(&sd);
                    let a = pa.get(&idx);
                    let total: f64 = (0..model.num_obs(m))
                        .map(|r| {
                            let mut i = vec![r];
                            i.extend(&sd);
                            pa.get(&i)
                        })
                        .sum();
                    let w = 0.5 * (1.0 / total - 1.0 / a);
                    novelty -= qo * w * qs;
                }
            }
        }
    }
    (utility, novelty)
}

#[test]
fn risk_ambiguity_is_the_dual_of_info_gain_plus_utility() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let model = random_model(&mut rng, &shape());
        let dir = random_dirichlet(&mut rng, &model);
        let q = random_beliefs(&mut rng, &model);
        for p in all_policies(&shape().controls, 2) {
            let e = score_policy(&model, &dir, &q, &p).unwrap();
            let gap = (e.state_info_gain + e.pragmatic_value) + (e.risk + e.ambiguity);
            assert!(gap.abs() <= 1e-8, "gap {gap}");
        }
    }
}

#[test]
fn utility_and_novelty_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..30 {
        let model = random_model(&mut rng, &shape());
        let dir = random_dirichlet(&mut rng, &model);
        let q = random_beliefs(&mut rng, &model);
        for p in all_policies(&shape().controls, 2).iter().step_by(5) {
            let e = score_policy(&model, &dir, &q, p).unwrap();
            let (u, n) = oracle(&model, &dir, &q, p);
            assert!((e.pragmatic_value - u).abs() < 1e-10, "{} vs {u}", e.pragmatic_value);
            assert!((e.param_info_gain - n).abs() < 1e-10, "{} vs {n}", e.param_info_gain);
            assert!(e.param_info_gain >= 0.0);
            assert!(e.state_info_gain >= -1e-12);
        }
    }
}

#[test]
fn shared_scoring_matches_direct_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let model = random_model(&mut rng, &shape());
        let dir = random_dirichlet(&mut rng, &model);
        let q = random_beliefs(&mut rng, &model);
        let policies = all_policies(&shape().controls, 3);
        let shared = score_policies(&model, &dir, &q, &policies).unwrap();
        for (p, s) in policies.iter().zip(&shared) {
            let d = score_policy(&model, &dir, &q, p).unwrap();
            for (a, b) in [
                (s.state_info_gain, d.state_info_gain),
                (s.pragmatic_value, d.pragmatic_value),
                (s.param_info_gain, d.param_info_gain),
                (s.risk, d.risk),
                (s.ambiguity, d.ambiguity),
                (s.g, d.g),
            ] {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn shared_scoring_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let model = random_model(&mut rng, &shape());
    let dir = random_dirichlet(&mut rng, &model);
    let q = random_beliefs(&mut rng, &model);
    let policies = all_policies(&shape().controls, 2);
    let a = score_policies(&model, &dir, &q, &policies).unwrap();
    let b = score_policies(&model, &dir, &q, &policies).unwrap();
    assert_eq!(a, b);
}

#[test]
fn novelty_decays_with_concentration() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let model = random_model(&mut rng, &shape());
        let dir = random_dirichlet(&mut rng, &model);
        let q = random_beliefs(&mut rng, &model);
        let p = &all_policies(&shape().controls, 1)[3];
        let mut last = f64::INFINITY;
        for k in [1.0, 2.0, 4.0, 16.0, 1e3, 1e6] {
            let scaled = DirichletState::new(
                dir.pa
                    .iter()
                    .map(|t| Tensor::from_vec(t.shape.clone(), t.data.iter().map(|v| v * k).collect()).unwrap())
                    .collect(),
                dir.pb.clone(),
            );
            let e = score_policy(&model, &scaled, &q, p).unwrap();
            assert!(e.param_info_gain <= last + 1e-15);
            last = e.param_info_gain;
        }
        assert!(last < 1e-5);
    }
}

#[test]
fn posterior_ignores_constant_shift_and_respects_habits() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let policies = enumerate_policies(3, 2, 1, PolicyMode::Cartesian).unwrap();
    let scores: Vec<EfeBreakdown> = (0..policies.len())
        .map(|_| EfeBreakdown {
            g: rng.random_range(-5.0..5.0),
            ..Default::default()
        })
        .collect();
    let shifted: Vec<EfeBreakdown> = scores.iter().map(|s| EfeBreakdown { g: s.g + 123.0, ..*s }).collect();
    let flat = LogPrefs::zeros(policies.len());
    let a = policy_posterior(&policies, &scores, 8.0, &flat).unwrap();
    let b = policy_posterior(&policies, &shifted, 8.0, &flat).unwrap();
    for (x, y) in a.probs.probs().iter().zip(b.probs.probs()) {
        assert!((x - y).abs() < 1e-12);
    }
    let mut h = vec![0.0; policies.len()];
    h[2] = 50.0;
    let biased = policy_posterior(&policies, &scores, 8.0, &LogPrefs::new(h).unwrap()).unwrap();
    assert!(biased.probs.probs()[2] > a.probs.probs()[2]);
}

#[test]
fn high_action_precision_approaches_argmax() {
    let policies = enumerate_policies(2, 1, 1, PolicyMode::Cartesian).unwrap();
    let scores: Vec<EfeBreakdown> = [0.0, 0.3, 0.1, 0.2]
        .iter()
        .map(|&g| EfeBreakdown {
            g,
            ..Default::default()
        })
        .collect();
    let post = policy_posterior(&policies, &scores, 8.0, &LogPrefs::zeros(4)).unwrap();
    let best = select_action(
        &post,
        1.0,
        SelectionMode::Deterministic,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let freq = |alpha: f64, rng: &mut ChaCha8Rng| {
        (0..1000)
            .filter(|_| select_action(&post, alpha, SelectionMode::Stochastic, rng).unwrap() == best)
            .count() as f64
            / 1000.0
    };
    let low = freq(1.0, &mut rng);
    let high = freq(64.0, &mut rng);
    assert!(high > low);
    assert!(high > 0.999, "{high}");
}

#[test]
fn enumerated_actions_are_legal() {
    for p in 1..=5 {
        for s in 1..=5 {
            for h in 1..=2 {
                for mode in [PolicyMode::Cartesian, PolicyMode::Repeated] {
                    for policy in enumerate_policies(p, s, h, mode).unwrap() {
                        policy.check().unwrap();
                        for step in &policy.steps {
                            assert!(check_action(step).is_ok());
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn predicted_observations_normalized_under_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let model = random_model(&mut rng, &shape());
    let q = random_beliefs(&mut rng, &model);
    for p in all_policies(&shape().controls, 1) {
        let next = predict_states(&model, &q, &p.steps[0]).unwrap();
        for o in predict_observations(&model, &next).unwrap() {
            assert!((o.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
