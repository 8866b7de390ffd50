//! Shared helpers for the integration tests: random model generation and
//! brute-force reference computations that enumerate the full joint state
//! space instead of using the library's factorized code paths.

#![allow(dead_code)]

use inferact::inference::{BeliefState, Observation};
use inferact::model::{DirichletState, GenerativeModel};
use inferact::prob::{Categorical, LogPrefs};
use inferact::tensor::Tensor;
use rand::Rng;

pub fn random_categorical<R: Rng>(rng: &mut R, n: usize) -> Categorical {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    Categorical::from_weights(w).unwrap()
}

/// Tensor of shape `[rows, cols...]` whose every column is a random
/// distribution over the leading axis.
pub fn random_stochastic<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let rows = t.rows();
    let cols = t.columns();
    for j in 0..cols {
        let col = random_categorical(rng, rows);
        for (i, &p) in col.probs().iter().enumerate() {
            t.data[i * cols + j] = p;
        }
    }
    t
}

pub struct ModelShape {
    pub factor_cards: Vec<usize>,
    pub controls: Vec<usize>,
    pub obs_cards: Vec<usize>,
    pub a_deps: Vec<Vec<usize>>,
}

pub fn random_model<R: Rng>(rng: &mut R, shape: &ModelShape) -> GenerativeModel {
    let a = shape
        .a_deps
        .iter()
        .zip(&shape.obs_cards)
        .map(|(deps, &n)| {
            let mut s = vec![n];
            s.extend(deps.iter().map(|&f| shape.factor_cards[f]));
            random_stochastic(rng, s)
        })
        .collect();
    let b = shape
        .factor_cards
        .iter()
        .zip(&shape.controls)
        .map(|(&n, &u)| random_stochastic(rng, vec![n, n, u]))
        .collect();
    let c = shape
        .obs_cards
        .iter()
        .map(|&n| LogPrefs::new((0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
        .collect();
    let d = shape.factor_cards.iter().map(|&n| random_categorical(rng, n)).collect();
    GenerativeModel {
        a,
        b,
        c,
        d,
        a_deps: shape.a_deps.clone(),
        b_deps: (0..shape.factor_cards.len()).map(|f| vec![f]).collect(),
    }
}

/// Concentrations whose normalized means are the model's A and B, scaled by
/// random totals.
pub fn random_dirichlet<R: Rng>(rng: &mut R, model: &GenerativeModel) -> DirichletState {
    let scale = |t: &Tensor, rng: &mut R| {
        let k = rng.random_range(1.0..20.0);
        Tensor::from_vec(t.shape.clone(), t.data.iter().map(|v| v * k).collect()).unwrap()
    };
    let pa = model.a.iter().map(|t| scale(t, rng)).collect();
    let pb = model.b.iter().map(|t| scale(t, rng)).collect();
    DirichletState::new(pa, pb)
}

/// All joint states in row-major order over `cards`.
pub fn joint_states(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut s = prefix.clone();
                    s.push(i);
                    s
                })
            })
            .collect();
    }
    out
}

/// `p(o_m = o | s)` read directly from the tensor.
pub fn likelihood(model: &GenerativeModel, m: usize, o: usize, s: &[usize]) -> f64 {
    let mut idx = vec![o];
    idx.extend(model.a_deps[m].iter().map(|&f| s[f]));
    model.a[m].get(&idx)
}

/// Exact joint posterior over all states and the evidence `p(o)`.
pub fn brute_posterior(model: &GenerativeModel, prior: &BeliefState, obs: &Observation) -> (Vec<f64>, f64) {
    let states = joint_states(&model.factor_cards());
    let mut joint: Vec<f64> = states
        .iter()
        .map(|s| {
            let p: f64 = s.iter().enumerate().map(|(f, &i)| prior.factor(f).probs()[i]).product();
            let l: f64 = (0..model.num_modalities())
                .map(|m| likelihood(model, m, obs.indices[m], s))
                .product();
            p * l
        })
        .collect();
    let evidence: f64 = joint.iter().sum();
    for v in &mut joint {
        *v /= evidence;
    }
    (joint, evidence)
}

/// Marginal of factor `f` from a joint over `cards`.
pub fn marginal(joint: &[f64], cards: &[usize], f: usize) -> Vec<f64> {
    let mut out = vec![0.0; cards[f]];
    for (s, &p) in joint_states(cards).iter().zip(joint) {
        out[s[f]] += p;
    }
    out
}

pub fn random_beliefs<R: Rng>(rng: &mut R, model: &GenerativeModel) -> BeliefState {
    BeliefState::new(
        model
            .factor_cards()
            .iter()
            .map(|&n| random_categorical(rng, n))
            .collect(),
    )
}

pub fn random_obs<R: Rng>(rng: &mut R, model: &GenerativeModel) -> Observation {
    Observation::new(model.obs_cards().iter().map(|&n| rng.random_range(0..n)).collect())
}
