//! Policy enumeration, expected free energy scoring and action selection.
//!
//! Scores are values to maximize:
//!
//! ```text
//! G(pi) = state info gain + pragmatic value + parameter info gain
//! ```
//!
//! The risk/ambiguity decomposition is computed alongside from the same
//! predictive distributions, so `-(risk + ambiguity)` must equal
//! `state info gain + pragmatic value` for every policy.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{predict_factor, predict_modality, predict_observations, predict_states, BeliefState};
use crate::model::{DirichletState, GenerativeModel, INFO, PROMPT, SEARCH};
use crate::prob::{entropy_of, safe_ln, softmax, Categorical, LogPrefs};

/// A fixed-horizon sequence of per-factor control vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy {
    pub steps: Vec<Vec<usize>>,
}

impl Policy {
    pub fn new(steps: Vec<Vec<usize>>) -> Self {
        Self { steps }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn first_action(&self) -> &[usize] {
        &self.steps[0]
    }

    /// Check the prompt/search/info action rules on every step.
    pub fn check(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        for (t, step) in self.steps.iter().enumerate() {
            check_action(step).map_err(|e| Error::InvalidPolicy(format!("step {t}: {e}")))?;
        }
        Ok(())
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let steps: Vec<String> = self
            .steps
            .iter()
            .map(|s| format!("[{}]", s.iter().map(usize::to_string).collect::<Vec<_>>().join(",")))
            .collect();
        write!(f, "{}", steps.join(" "))
    }
}

/// A single `[prompt, search, info]` control triple must not act on both
/// prompt and search, and never controls the information factor.
pub fn check_action(action: &[usize]) -> std::result::Result<(), String> {
    if action.len() != 3 {
        return Err(format!("expected 3 controls, got {}", action.len()));
    }
    if action[INFO] != 0 {
        return Err(format!("information factor is not controllable (got {})", action[INFO]));
    }
    if action[PROMPT] > 0 && action[SEARCH] > 0 {
        return Err(format!(
            "prompt {} and search {} in the same step",
            action[PROMPT], action[SEARCH]
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    None,
    Prompt,
    Search,
}

impl ActionKind {
    pub fn of(action: &[usize]) -> Self {
        if action[PROMPT] > 0 {
            Self::Prompt
        } else if action[SEARCH] > 0 {
            Self::Search
        } else {
            Self::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Prompt => "prompt",
            Self::Search => "search",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Every sequence of legal actions.
    #[default]
    Cartesian,
    /// The same legal action at every step.
    Repeated,
}

/// The legal single-step actions: no action, prompt-only, then search-only.
pub fn action_alphabet(num_prompts: usize, num_searches: usize) -> Vec<Vec<usize>> {
    let mut actions = vec![vec![0, 0, 0]];
    actions.extend((1..=num_prompts).map(|p| vec![p, 0, 0]));
    actions.extend((1..=num_searches).map(|s| vec![0, s, 0]));
    actions
}

pub fn enumerate_policies(
    num_prompts: usize,
    num_searches: usize,
    horizon: usize,
    mode: PolicyMode,
) -> Result<Vec<Policy>> {
    if horizon == 0 {
        return Err(Error::InvalidPolicy("horizon must be at least 1".into()));
    }
    let alphabet = action_alphabet(num_prompts, num_searches);
    let policies = match mode {
        PolicyMode::Repeated => alphabet.iter().map(|a| Policy::new(vec![a.clone(); horizon])).collect(),
        PolicyMode::Cartesian => {
            let mut seqs: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
            for _ in 0..horizon {
                seqs = seqs
                    .into_iter()
                    .flat_map(|prefix| {
                        alphabet.iter().map(move |a| {
                            let mut next = prefix.clone();
                            next.push(a.clone());
                            next
                        })
                    })
                    .collect();
            }
            seqs.into_iter().map(Policy::new).collect()
        }
    };
    Ok(policies)
}

/// Per-policy expected free energy components. `g` is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EfeBreakdown {
    pub state_info_gain: f64,
    pub pragmatic_value: f64,
    pub param_info_gain: f64,
    pub risk: f64,
    pub ambiguity: f64,
    #[serde(rename = "G")]
    pub g: f64,
}

impl EfeBreakdown {
    fn add(&mut self, t: &Terms) {
        self.state_info_gain += t.info_gain;
        self.pragmatic_value += t.utility;
        self.param_info_gain += t.novelty;
        self.risk += t.risk;
        self.ambiguity += t.ambiguity;
    }

    fn finish(mut self) -> Self {
        self.g = self.state_info_gain + self.pragmatic_value + self.param_info_gain;
        self
    }
}

/// `sum_t sum_m q(o_t^m) . ln softmax(C_m)`.
pub fn expected_utility(pred_obs: &[Vec<Categorical>], c: &[LogPrefs]) -> Result<f64> {
    let mut total = 0.0;
    for step in pred_obs {
        if step.len() != c.len() {
            return Err(Error::LengthMismatch {
                expected: c.len(),
                got: step.len(),
            });
        }
        for (qo, cm) in step.iter().zip(c) {
            if qo.len() != cm.len() {
                return Err(Error::LengthMismatch {
                    expected: cm.len(),
                    got: qo.len(),
                });
            }
            total += dot(qo.probs(), &cm.log_softmax());
        }
    }
    Ok(total)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Expected KL between the Bayes posterior over a modality's dependency
/// states and the predicted belief, weighted by `q(o)`: the mutual
/// information between states and that modality's outcome.
fn modality_info_gain(a: &[f64], rows: usize, joint: &[f64], qo: &[f64]) -> f64 {
    let cols = joint.len();
    let mut gain = 0.0;
    for o in 0..rows {
        if qo[o] <= 0.0 {
            continue;
        }
        let ln_qo = safe_ln(qo[o]);
        let row = &a[o * cols..(o + 1) * cols];
        for (&lik, &pj) in row.iter().zip(joint) {
            let joint_mass = lik * pj;
            if joint_mass > 0.0 {
                // posterior(j | o) = lik * pj / q(o); KL term ln(posterior / pj)
                gain += joint_mass * (safe_ln(lik) - ln_qo);
            }
        }
    }
    gain
}

fn modality_ambiguity(a: &[f64], rows: usize, joint: &[f64]) -> f64 {
    let cols = joint.len();
    let mut column = vec![0.0; rows];
    let mut amb = 0.0;
    for (j, &pj) in joint.iter().enumerate() {
        if pj <= 0.0 {
            continue;
        }
        for (o, slot) in column.iter_mut().enumerate() {
            *slot = a[o * cols + j];
        }
        amb += pj * entropy_of(&column);
    }
    amb
}

fn modality_risk(qo: &[f64], log_pref: &[f64]) -> f64 {
    qo.iter()
        .zip(log_pref)
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, &lp)| q * (safe_ln(q) - lp))
        .sum()
}

/// Dirichlet novelty of one modality: `-q(o) . (W . q(s))` with
/// `W = (1/colsum - 1/pA) / 2` on the learning mask.
fn modality_novelty(dir: &DirichletState, m: usize, joint: &[f64], qo: &[f64]) -> f64 {
    let pa = &dir.pa[m];
    let mask = &dir.mask_a[m];
    let cols = joint.len();
    let col_sums: Vec<f64> = (0..cols).map(|j| pa.column_sum(j)).collect();
    let mut gain = 0.0;
    for (o, &po) in qo.iter().enumerate() {
        if po <= 0.0 {
            continue;
        }
        let mut ws = 0.0;
        for (j, &pj) in joint.iter().enumerate() {
            let k = o * cols + j;
            if mask[k] && pa.data[k] > 0.0 && col_sums[j] > 0.0 {
                ws += 0.5 * (1.0 / col_sums[j] - 1.0 / pa.data[k]) * pj;
            }
        }
        gain -= po * ws;
    }
    gain
}

/// Summed over modalities for one predicted state.
pub fn state_info_gain(model: &GenerativeModel, q_pred: &BeliefState, pred_obs: &[Categorical]) -> f64 {
    model
        .a_deps
        .iter()
        .enumerate()
        .map(|(m, deps)| {
            let joint = q_pred.joint(deps);
            modality_info_gain(&model.a[m].data, model.num_obs(m), &joint, pred_obs[m].probs())
        })
        .sum()
}

/// `(sum_m KL[q(o_m) || softmax(C_m)], sum_m E_q(s) H[A_m(. | s)])`.
pub fn risk_and_ambiguity(
    model: &GenerativeModel,
    q_pred: &BeliefState,
    pred_obs: &[Categorical],
    c: &[LogPrefs],
) -> (f64, f64) {
    let mut risk = 0.0;
    let mut ambiguity = 0.0;
    for (m, deps) in model.a_deps.iter().enumerate() {
        let joint = q_pred.joint(deps);
        risk += modality_risk(pred_obs[m].probs(), &c[m].log_softmax());
        ambiguity += modality_ambiguity(&model.a[m].data, model.num_obs(m), &joint);
    }
    (risk, ambiguity)
}

pub fn param_info_gain(
    model: &GenerativeModel,
    dir: &DirichletState,
    q_pred: &BeliefState,
    pred_obs: &[Categorical],
) -> f64 {
    model
        .a_deps
        .iter()
        .enumerate()
        .map(|(m, deps)| modality_novelty(dir, m, &q_pred.joint(deps), pred_obs[m].probs()))
        .sum()
}

/// Score a single policy by rolling beliefs forward one step at a time.
/// [`score_policies`] computes the same quantities with shared
/// sub-results; this is the direct reference path.
pub fn score_policy(
    model: &GenerativeModel,
    dir: &DirichletState,
    beliefs: &BeliefState,
    policy: &Policy,
) -> Result<EfeBreakdown> {
    let mut q = beliefs.clone();
    let mut out = EfeBreakdown::default();
    for step in &policy.steps {
        q = predict_states(model, &q, step)?;
        let qo = predict_observations(model, &q)?;
        out.state_info_gain += state_info_gain(model, &q, &qo);
        out.pragmatic_value += expected_utility(std::slice::from_ref(&qo), &model.c)?;
        out.param_info_gain += param_info_gain(model, dir, &q, &qo);
        let (risk, amb) = risk_and_ambiguity(model, &q, &qo, &model.c);
        out.risk += risk;
        out.ambiguity += amb;
    }
    Ok(out.finish())
}

#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    info_gain: f64,
    utility: f64,
    novelty: f64,
    risk: f64,
    ambiguity: f64,
}

fn modality_terms(model: &GenerativeModel, dir: &DirichletState, log_prefs: &[f64], m: usize, joint: &[f64]) -> Terms {
    let rows = model.num_obs(m);
    let a = &model.a[m].data;
    let qo = predict_modality(model, m, joint);
    Terms {
        info_gain: modality_info_gain(a, rows, joint, &qo),
        utility: dot(&qo, log_prefs),
        novelty: modality_novelty(dir, m, joint, &qo),
        risk: modality_risk(&qo, log_prefs),
        ambiguity: modality_ambiguity(a, rows, joint),
    }
}

/// Score every policy. Each modality's contribution at step `t` depends
/// only on the control prefixes of the factors it reads, so those
/// contributions are computed once per distinct prefix (in parallel) and
/// summed per policy in a fixed order.
pub fn score_policies(
    model: &GenerativeModel,
    dir: &DirichletState,
    beliefs: &BeliefState,
    policies: &[Policy],
) -> Result<Vec<EfeBreakdown>> {
    let nf = model.num_factors();
    if beliefs.len() != nf {
        return Err(Error::LengthMismatch {
            expected: nf,
            got: beliefs.len(),
        });
    }
    for p in policies {
        if p.steps.iter().any(|s| s.len() != nf) {
            return Err(Error::InvalidPolicy(format!("policy {p} does not match {nf} factors")));
        }
    }

    // Predicted factor beliefs keyed by (factor, control prefix).
    let mut factor_beliefs: HashMap<(usize, Vec<usize>), Categorical> = HashMap::new();
    for p in policies {
        for f in 0..nf {
            let mut prefix = Vec::with_capacity(p.horizon());
            let mut current = beliefs.posteriors[f].clone();
            for step in &p.steps {
                prefix.push(step[f]);
                let key = (f, prefix.clone());
                if let Some(q) = factor_beliefs.get(&key) {
                    current = q.clone();
                } else {
                    current = predict_factor(model, f, &current, step[f])?;
                    factor_beliefs.insert(key, current.clone());
                }
            }
        }
    }

    // Distinct (modality, per-dependency prefixes) keys, in first-seen order.
    type Key = (usize, Vec<Vec<usize>>);
    let mut key_index: HashMap<Key, usize> = HashMap::new();
    let mut keys: Vec<Key> = Vec::new();
    let mut plan: Vec<Vec<usize>> = Vec::with_capacity(policies.len());
    for p in policies {
        let mut slots = Vec::with_capacity(p.horizon() * model.num_modalities());
        for t in 1..=p.horizon() {
            for (m, deps) in model.a_deps.iter().enumerate() {
                let prefixes: Vec<Vec<usize>> = deps
                    .iter()
                    .map(|&f| p.steps[..t].iter().map(|s| s[f]).collect())
                    .collect();
                let key = (m, prefixes);
                let idx = match key_index.get(&key) {
                    Some(&i) => i,
                    None => {
                        keys.push(key.clone());
                        key_index.insert(key, keys.len() - 1);
                        keys.len() - 1
                    }
                };
                slots.push(idx);
            }
        }
        plan.push(slots);
    }

    let log_prefs: Vec<Vec<f64>> = model.c.iter().map(LogPrefs::log_softmax).collect();
    let terms: Vec<Terms> = keys
        .par_iter()
        .map(|(m, prefixes)| {
            let factors: Vec<&Categorical> = model.a_deps[*m]
                .iter()
                .zip(prefixes)
                .map(|(&f, prefix)| &factor_beliefs[&(f, prefix.clone())])
                .collect();
            let joint = crate::prob::joint_belief(&factors);
            modality_terms(model, dir, &log_prefs[*m], *m, &joint)
        })
        .collect();

    Ok(plan
        .iter()
        .map(|slots| {
            let mut out = EfeBreakdown::default();
            for &i in slots {
                out.add(&terms[i]);
            }
            out.finish()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPosterior {
    pub policies: Vec<Policy>,
    pub probs: Categorical,
    pub habits: LogPrefs,
}

/// `q(pi) = softmax(gamma * G + ln E)`, with `habits` read as unnormalized
/// `ln E`.
pub fn policy_posterior(
    policies: &[Policy],
    scores: &[EfeBreakdown],
    gamma: f64,
    habits: &LogPrefs,
) -> Result<PolicyPosterior> {
    if scores.len() != policies.len() {
        return Err(Error::LengthMismatch {
            expected: policies.len(),
            got: scores.len(),
        });
    }
    if habits.len() != policies.len() {
        return Err(Error::LengthMismatch {
            expected: policies.len(),
            got: habits.len(),
        });
    }
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Config {
            field: "gamma".into(),
            reason: format!("must be positive, got {gamma}"),
        });
    }
    let ln_e = habits.log_softmax();
    let logits: Vec<f64> = scores.iter().zip(&ln_e).map(|(s, e)| gamma * s.g + e).collect();
    Ok(PolicyPosterior {
        policies: policies.to_vec(),
        probs: softmax(&logits)?,
        habits: habits.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// First action of the most probable policy (lowest index on ties).
    Deterministic,
    /// Sample from `softmax(alpha * ln marginal)` over first actions.
    #[default]
    Stochastic,
}

/// Marginal posterior mass of each distinct first action, in first-seen
/// policy order.
pub fn first_action_marginal(posterior: &PolicyPosterior) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut actions: Vec<Vec<usize>> = Vec::new();
    let mut mass: Vec<f64> = Vec::new();
    for (p, &q) in posterior.policies.iter().zip(posterior.probs.probs()) {
        let a = p.first_action();
        match actions.iter().position(|x| x == a) {
            Some(i) => mass[i] += q,
            None => {
                actions.push(a.to_vec());
                mass.push(q);
            }
        }
    }
    (actions, mass)
}

pub fn select_action<R: Rng + ?Sized>(
    posterior: &PolicyPosterior,
    alpha: f64,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if posterior.policies.is_empty() {
        return Err(Error::Empty("policy posterior"));
    }
    match mode {
        SelectionMode::Deterministic => {
            let best = posterior.probs.argmax();
            Ok(posterior.policies[best].first_action().to_vec())
        }
        SelectionMode::Stochastic => {
            let (actions, mass) = first_action_marginal(posterior);
            let logits: Vec<f64> = mass.iter().map(|&p| alpha * safe_ln(p)).collect();
            let dist = softmax(&logits)?;
            Ok(actions[dist.sample(rng)].clone())
        }
    }
}
