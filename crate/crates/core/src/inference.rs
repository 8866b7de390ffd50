//! Factorized posterior inference over hidden states, variational free
//! energy, and one-step prediction of states and observations.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::model::GenerativeModel;
use crate::prob::{joint_belief, safe_ln, softmax, Categorical};
use crate::tensor::unravel;

/// Default number of coordinate sweeps over factors.
pub const DEFAULT_ITERS: usize = 10;
/// Sweeps stop early once no belief entry moves more than this.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    pub posteriors: Vec<Categorical>,
}

impl BeliefState {
    pub fn new(posteriors: Vec<Categorical>) -> Self {
        Self { posteriors }
    }

    pub fn prior(model: &GenerativeModel) -> Self {
        Self::new(model.d.clone())
    }

    pub fn factor(&self, f: usize) -> &Categorical {
        &self.posteriors[f]
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }

    /// Flattened joint belief over the listed factors.
    pub fn joint(&self, deps: &[usize]) -> Vec<f64> {
        let factors: Vec<&Categorical> = deps.iter().map(|&f| &self.posteriors[f]).collect();
        joint_belief(&factors)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.posteriors
            .iter()
            .zip(&other.posteriors)
            .flat_map(|(a, b)| a.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// One outcome index per modality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation {
    pub indices: Vec<usize>,
}

impl Observation {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn validate(&self, model: &GenerativeModel) -> Result<()> {
        if self.indices.len() != model.num_modalities() {
            return Err(Error::LengthMismatch {
                expected: model.num_modalities(),
                got: self.indices.len(),
            });
        }
        for (m, &o) in self.indices.iter().enumerate() {
            let card = model.num_obs(m);
            if o >= card {
                return Err(Error::OutOfRange {
                    what: format!("observation of modality {m}"),
                    index: o,
                    card,
                });
            }
        }
        Ok(())
    }
}

fn check_beliefs(model: &GenerativeModel, q: &BeliefState) -> Result<()> {
    if q.len() != model.num_factors() {
        return Err(Error::LengthMismatch {
            expected: model.num_factors(),
            got: q.len(),
        });
    }
    for (f, p) in q.posteriors.iter().enumerate() {
        if p.len() != model.factor_card(f) {
            return Err(Error::LengthMismatch {
                expected: model.factor_card(f),
                got: p.len(),
            });
        }
    }
    Ok(())
}

/// Row `o` of modality `m`'s likelihood, indexed by flattened dependency state.
pub(crate) fn likelihood_row(model: &GenerativeModel, m: usize, o: usize) -> &[f64] {
    let cols = model.a[m].columns();
    &model.a[m].data[o * cols..(o + 1) * cols]
}

/// Mean-field fixed-point inference: each sweep replaces every factor's
/// posterior with `softmax(ln prior_f + sum_m E_{q(s_-f)}[ln A_m[o_m, .]])`
/// using the current beliefs over the other factors.
pub fn infer_states(
    model: &GenerativeModel,
    prior: &BeliefState,
    obs: &Observation,
    iters: usize,
) -> Result<BeliefState> {
    obs.validate(model)?;
    check_beliefs(model, prior)?;
    if iters == 0 {
        return Err(Error::InvalidDims("inference needs at least one sweep".into()));
    }

    let informative: Vec<bool> = (0..model.num_modalities())
        .map(|m| {
            let ok = likelihood_row(model, m, obs.indices[m]).iter().any(|&p| p > 0.0);
            if !ok {
                warn!(
                    modality = m,
                    obs = obs.indices[m],
                    "observation has zero likelihood everywhere; ignoring modality"
                );
            }
            ok
        })
        .collect();

    let mut q = prior.clone();
    for _ in 0..iters {
        let before = q.clone();
        for f in 0..model.num_factors() {
            let card = model.factor_card(f);
            let mut log_q: Vec<f64> = prior.posteriors[f].probs().iter().map(|&p| safe_ln(p)).collect();
            for (m, deps) in model.a_deps.iter().enumerate() {
                if !informative[m] {
                    continue;
                }
                let Some(pos) = deps.iter().position(|&g| g == f) else {
                    continue;
                };
                let dims: Vec<usize> = deps.iter().map(|&g| model.factor_card(g)).collect();
                let row = likelihood_row(model, m, obs.indices[m]);
                let mut idx = vec![0; deps.len()];
                let mut acc = vec![0.0; card];
                for (j, &lik) in row.iter().enumerate() {
                    unravel(j, &dims, &mut idx);
                    let mut w = 1.0;
                    for (k, &g) in deps.iter().enumerate() {
                        if k != pos {
                            w *= q.posteriors[g][idx[k]];
                        }
                    }
                    if w > 0.0 {
                        acc[idx[pos]] += w * safe_ln(lik);
                    }
                }
                for (l, a) in log_q.iter_mut().zip(acc) {
                    *l += a;
                }
            }
            q.posteriors[f] = softmax(&log_q)?;
        }
        if q.max_abs_diff(&before) < CONVERGENCE_TOL {
            break;
        }
    }
    Ok(q)
}

/// `F = KL[q || prior] - E_q[ln p(o | s)]`, an upper bound on `-ln p(o)`.
pub fn compute_vfe(model: &GenerativeModel, prior: &BeliefState, q: &BeliefState, obs: &Observation) -> Result<f64> {
    obs.validate(model)?;
    check_beliefs(model, prior)?;
    check_beliefs(model, q)?;
    let mut kl = 0.0;
    for (qf, pf) in q.posteriors.iter().zip(&prior.posteriors) {
        for (&qi, &pi) in qf.probs().iter().zip(pf.probs()) {
            if qi > 0.0 {
                kl += qi * (safe_ln(qi) - safe_ln(pi));
            }
        }
    }
    let mut expected_ll = 0.0;
    for (m, deps) in model.a_deps.iter().enumerate() {
        let joint = q.joint(deps);
        let row = likelihood_row(model, m, obs.indices[m]);
        expected_ll += joint
            .iter()
            .zip(row)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &lik)| w * safe_ln(lik))
            .sum::<f64>();
    }
    Ok(kl - expected_ll)
}

/// Push each factor through its transition under `controls[f]`.
pub fn predict_states(model: &GenerativeModel, q: &BeliefState, controls: &[usize]) -> Result<BeliefState> {
    check_beliefs(model, q)?;
    if controls.len() != model.num_factors() {
        return Err(Error::LengthMismatch {
            expected: model.num_factors(),
            got: controls.len(),
        });
    }
    let posteriors = q
        .posteriors
        .iter()
        .enumerate()
        .map(|(f, qf)| predict_factor(model, f, qf, controls[f]))
        .collect::<Result<_>>()?;
    Ok(BeliefState::new(posteriors))
}

pub(crate) fn predict_factor(
    model: &GenerativeModel,
    f: usize,
    qf: &Categorical,
    control: usize,
) -> Result<Categorical> {
    let b = &model.b[f];
    let (card, nc) = (b.shape[0], b.shape[2]);
    if control >= nc {
        return Err(Error::OutOfRange {
            what: format!("control of factor {f}"),
            index: control,
            card: nc,
        });
    }
    let mut next = vec![0.0; card];
    for (i, out) in next.iter_mut().enumerate() {
        for (j, &p) in qf.probs().iter().enumerate() {
            *out += b.data[(i * card + j) * nc + control] * p;
        }
    }
    Categorical::from_weights(next)
}

/// Predictive outcome distribution for one modality given a joint belief
/// over its dependencies.
pub(crate) fn predict_modality(model: &GenerativeModel, m: usize, joint: &[f64]) -> Vec<f64> {
    let a = &model.a[m];
    let cols = a.columns();
    (0..a.rows())
        .map(|o| {
            a.data[o * cols..(o + 1) * cols]
                .iter()
                .zip(joint)
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect()
}

pub fn predict_observations(model: &GenerativeModel, q: &BeliefState) -> Result<Vec<Categorical>> {
    check_beliefs(model, q)?;
    model
        .a_deps
        .iter()
        .enumerate()
        .map(|(m, deps)| Categorical::from_weights(predict_modality(model, m, &q.joint(deps))))
        .collect()
}
