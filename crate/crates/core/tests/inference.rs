#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use inferact::inference::{compute_vfe, infer_states, predict_observations, predict_states, BeliefState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn single_factor_matches_exact_bayes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=5 {
        for _ in 0..40 {
            let modalities = rng.random_range(1..=3);
            let shape = ModelShape {
                factor_cards: vec![n],
                controls: vec![1],
                obs_cards: (0..modalities).map(|_| rng.random_range(2..=4)).collect(),
                a_deps: vec![vec![0]; modalities],
            };
            let model = random_model(&mut rng, &shape);
            let prior = random_beliefs(&mut rng, &model);
            let obs = random_obs(&mut rng, &model);
            let q = infer_states(&model, &prior, &obs, 10).unwrap();
            let (exact, evidence) = brute_posterior(&model, &prior, &obs);
            for (a, b) in q.factor(0).probs().iter().zip(&exact) {
                assert!((a - b).abs() < 1e-10, "n={n}: {a} vs {b}");
            }
            let f = compute_vfe(&model, &prior, &q, &obs).unwrap();
            assert!((f + evidence.ln()).abs() < 1e-10, "F={f} -ln p(o)={}", -evidence.ln());
        }
    }
}

fn coupled_shape() -> ModelShape {
    ModelShape {
        factor_cards: vec![3, 2, 4],
        controls: vec![2, 2, 1],
        obs_cards: vec![3, 4, 2],
        a_deps: vec![vec![0, 1], vec![1, 2], vec![2]],
    }
}

#[test]
fn vfe_bounds_surprise_for_any_beliefs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let model = random_model(&mut rng, &coupled_shape());
        let prior = random_beliefs(&mut rng, &model);
        let obs = random_obs(&mut rng, &model);
        let (_, evidence) = brute_posterior(&model, &prior, &obs);
        let q = infer_states(&model, &prior, &obs, 10).unwrap();
        let other = random_beliefs(&mut rng, &model);
        for b in [&q, &other, &prior] {
            let f = compute_vfe(&model, &prior, b, &obs).unwrap();
            assert!(f >= -evidence.ln() - 1e-12);
        }
    }
}

#[test]
fn vfe_non_increasing_over_sweeps() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let model = random_model(&mut rng, &coupled_shape());
        let prior = random_beliefs(&mut rng, &model);
        let obs = random_obs(&mut rng, &model);
        let mut last = compute_vfe(&model, &prior, &prior, &obs).unwrap();
        for iters in 1..=10 {
            let q = infer_states(&model, &prior, &obs, iters).unwrap();
            let f = compute_vfe(&model, &prior, &q, &obs).unwrap();
            assert!(f <= last + 1e-12, "sweep {iters}: {f} > {last}");
            last = f;
        }
    }
}

#[test]
fn posterior_factors_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let model = random_model(&mut rng, &coupled_shape());
        let prior = random_beliefs(&mut rng, &model);
        let q = infer_states(&model, &prior, &random_obs(&mut rng, &model), 10).unwrap();
        for f in &q.posteriors {
            assert!((f.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn predictions_match_joint_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let shape = ModelShape {
        factor_cards: vec![4, 3, 4],
        controls: vec![3, 2, 2],
        obs_cards: vec![3, 2, 4],
        a_deps: vec![vec![0, 2], vec![1], vec![0, 1, 2]],
    };
    for _ in 0..30 {
        let model = random_model(&mut rng, &shape);
        let q = random_beliefs(&mut rng, &model);
        let controls: Vec<usize> = shape.controls.iter().map(|&u| rng.random_range(0..u)).collect();
        let next = predict_states(&model, &q, &controls).unwrap();

        let cards = model.factor_cards();
        let states = joint_states(&cards);
        for f in 0..cards.len() {
            let mut expect = vec![0.0; cards[f]];
            for (i, e) in expect.iter_mut().enumerate() {
                for j in 0..cards[f] {
                    *e += model.b[f].get(&[i, j, controls[f]]) * q.factor(f).probs()[j];
                }
            }
            for (a, b) in next.factor(f).probs().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let pred = predict_observations(&model, &next).unwrap();
        for m in 0..model.num_modalities() {
            for o in 0..model.num_obs(m) {
                let brute: f64 = states
                    .iter()
                    .map(|s| {
                        let p: f64 = s.iter().enumerate().map(|(f, &i)| next.factor(f).probs()[i]).product();
                        p * likelihood(&model, m, o, s)
                    })
                    .sum();
                assert!((pred[m].probs()[o] - brute).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn uniform_prior_in_uniform_out_for_flat_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut model = random_model(&mut rng, &coupled_shape());
    for a in &mut model.a {
        let rows = a.rows() as f64;
        a.data.iter_mut().for_each(|v| *v = 1.0 / rows);
    }
    let prior = BeliefState::new(
        model
            .factor_cards()
            .iter()
            .map(|&n| inferact::prob::Categorical::uniform(n))
            .collect(),
    );
    let q = infer_states(&model, &prior, &random_obs(&mut rng, &model), 10).unwrap();
    assert!(q.max_abs_diff(&prior) < 1e-12);
}
