//! Categorical probability kernels shared by inference, policy scoring and
//! learning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-16;
/// Normalization drift above which a distribution is silently renormalized.
pub const RENORM_TOL: f64 = 1e-9;
/// Normalization drift above which a distribution is rejected.
pub const DRIFT_LIMIT: f64 = 1e-6;

#[inline]
pub fn safe_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// A normalized probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical(Vec<f64>);

impl Categorical {
    /// Validate `probs`, renormalizing small drift. Drift above
    /// [`DRIFT_LIMIT`] is an error.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            if value < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "negative entry {value} at index {index}"
                )));
            }
        }
        let total: f64 = probs.iter().sum();
        let drift = (total - 1.0).abs();
        if drift > DRIFT_LIMIT {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        if drift > RENORM_TOL {
            probs.iter_mut().for_each(|p| *p /= total);
        }
        Ok(Self(probs))
    }

    /// Normalize arbitrary non-negative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weights"));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::NonFinite { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidDistribution("zero total weight".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero outcomes");
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        assert!(index < n, "one-hot index {index} out of range {n}");
        let mut p = vec![0.0; n];
        p[index] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap at the top: take the last supported entry
        self.0.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(c: Categorical) -> Self {
        c.0
    }
}

impl std::ops::Index<usize> for Categorical {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Unnormalized log-preferences over one modality's outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogPrefs(Vec<f64>);

impl LogPrefs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("log-preferences"));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `ln softmax(C)`, computed without forming the softmax first.
    pub fn log_softmax(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.0);
        self.0.iter().map(|c| c - lse).collect()
    }
}

impl TryFrom<Vec<f64>> for LogPrefs {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LogPrefs> for Vec<f64> {
    fn from(c: LogPrefs) -> Self {
        c.0
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(values: &[f64]) -> Result<Categorical> {
    if values.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    check_finite(values)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Categorical(exps.into_iter().map(|e| e / total).collect()))
}

/// `KL[q || p]` in nats.
pub fn kl_divergence(q: &Categorical, p: &Categorical) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            got: p.len(),
        });
    }
    let mut kl = 0.0;
    for (index, (&qi, &pi)) in q.0.iter().zip(&p.0).enumerate() {
        if qi > 0.0 {
            if pi <= 0.0 {
                return Err(Error::SupportViolation { index, q: qi });
            }
            kl += qi * (safe_ln(qi) - safe_ln(pi));
        }
    }
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &Categorical) -> f64 {
    entropy_of(&p.0)
}

pub(crate) fn entropy_of(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * safe_ln(x)).sum::<f64>()
}

/// Joint tensor `o ⊗ q(s_1) ⊗ q(s_2) ⊗ ...`, shape `[len(o), len(f1), ...]`.
pub fn outer_product(o: &Categorical, factors: &[&Categorical]) -> Result<Tensor> {
    if factors.is_empty() {
        return Err(Error::Empty("factor list"));
    }
    let joint = joint_belief(factors);
    let mut shape = vec![o.len()];
    shape.extend(factors.iter().map(|f| f.len()));
    let data =
        o.0.iter()
            .flat_map(|&po| joint.iter().map(move |&pj| po * pj))
            .collect();
    Tensor::from_vec(shape, data)
}

/// Row-major flattened product of independent factor marginals.
pub fn joint_belief(factors: &[&Categorical]) -> Vec<f64> {
    let mut joint = vec![1.0];
    for f in factors {
        let mut next = Vec::with_capacity(joint.len() * f.len());
        for &a in &joint {
            next.extend(f.0.iter().map(|&b| a * b));
        }
        joint = next;
    }
    joint
}
