//! Dirichlet concentration updates for likelihood and transition arrays.
//!
//! With `eta = 50` and base concentration 1.0 a single observation moves a
//! column to roughly 51:1, so one sample nearly fixes a mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{BeliefState, Observation};
use crate::model::{DirichletState, GenerativeModel, INFO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub eta: f64,
    pub learn_a: bool,
    pub learn_b: bool,
    /// Modalities whose `pA` is updated; `None` means all.
    pub modalities: Option<Vec<usize>>,
    /// Factors whose `pB` is updated; `None` means all.
    pub factors: Option<Vec<usize>>,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            eta: 50.0,
            learn_a: true,
            learn_b: true,
            modalities: None,
            factors: Some(vec![INFO]),
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::Config {
                field: "learning.eta".into(),
                reason: format!("must be a positive finite number, got {}", self.eta),
            });
        }
        Ok(())
    }

    pub fn learns_modality(&self, m: usize) -> bool {
        self.learn_a && self.modalities.as_ref().is_none_or(|ms| ms.contains(&m))
    }

    pub fn learns_factor(&self, f: usize) -> bool {
        self.learn_b && self.factors.as_ref().is_none_or(|fs| fs.contains(&f))
    }

    /// Number of modalities updated per step for a model with `n` modalities.
    pub fn learned_modalities(&self, n: usize) -> usize {
        (0..n).filter(|&m| self.learns_modality(m)).count()
    }
}

/// `pA_m += eta * (onehot(o_m) ⊗ q(s_deps)) ⊙ mask_m` for every enabled
/// modality.
pub fn update_likelihood(
    model: &GenerativeModel,
    dir: &DirichletState,
    obs: &Observation,
    q: &BeliefState,
    cfg: &LearningConfig,
) -> Result<DirichletState> {
    cfg.validate()?;
    obs.validate(model)?;
    let mut out = dir.clone();
    for (m, deps) in model.a_deps.iter().enumerate() {
        if !cfg.learns_modality(m) {
            continue;
        }
        let joint = q.joint(deps);
        let pa = &mut out.pa[m];
        let mask = &dir.mask_a[m];
        let cols = pa.columns();
        if cols != joint.len() {
            return Err(Error::LengthMismatch {
                expected: cols,
                got: joint.len(),
            });
        }
        let base = obs.indices[m] * cols;
        for (j, &w) in joint.iter().enumerate() {
            if mask[base + j] {
                pa.data[base + j] += cfg.eta * w;
            }
        }
    }
    Ok(out)
}

/// `pB_f[:, :, u_f] += eta * (q_post_f ⊗ q_prev_f) ⊙ mask_f` for every
/// enabled factor.
pub fn update_transitions(
    dir: &DirichletState,
    q_prev: &BeliefState,
    q_post: &BeliefState,
    controls: &[usize],
    cfg: &LearningConfig,
) -> Result<DirichletState> {
    cfg.validate()?;
    let mut out = dir.clone();
    if !cfg.learn_b {
        return Ok(out);
    }
    if controls.len() != dir.pb.len() {
        return Err(Error::LengthMismatch {
            expected: dir.pb.len(),
            got: controls.len(),
        });
    }
    for (f, &u) in controls.iter().enumerate() {
        let pb = &mut out.pb[f];
        let (card, nc) = (pb.shape[0], pb.shape[2]);
        if u >= nc {
            return Err(Error::OutOfRange {
                what: format!("control of factor {f}"),
                index: u,
                card: nc,
            });
        }
        if !cfg.learns_factor(f) {
            continue;
        }
        let mask = &dir.mask_b[f];
        let (prev, post) = (q_prev.factor(f).probs(), q_post.factor(f).probs());
        for (next, &pn) in post.iter().enumerate() {
            for (from, &pp) in prev.iter().enumerate() {
                let k = (next * card + from) * nc + u;
                if mask[k] {
                    pb.data[k] += cfg.eta * pn * pp;
                }
            }
        }
    }
    Ok(out)
}
