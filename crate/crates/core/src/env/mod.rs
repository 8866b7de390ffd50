//! Environments the agent acts in.
//!
//! [`SyntheticEnv`] is a seeded oracle standing in for LLM-scored prompt and
//! search quality; [`remote::RemoteEnv`] asks a chat-completion endpoint to
//! score caller-supplied texts instead.

pub mod remote;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::inference::Observation;
use crate::model::{Dims, INFO, PROMPT, SEARCH};
use crate::policy::check_action;

pub const PROFILE_VERSION: &str = "inferact-profile/1";

/// Grid spacing of evaluator scores.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSet {
    Prompt,
    Search,
}

impl MetricSet {
    pub fn keys(self) -> [&'static str; 3] {
        match self {
            Self::Prompt => ["accuracy", "relevance", "comprehensiveness"],
            Self::Search => ["info_relevance", "info_usefulness", "source_quality"],
        }
    }
}

/// Three scores on the `{0.0, 0.1, ..., 1.0}` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationScores {
    pub metrics: MetricSet,
    pub values: [f64; 3],
}

impl EvaluationScores {
    /// Reject scores outside `[0, 1]`; snap off-grid scores to the nearest
    /// tenth with a warning.
    pub fn new(metrics: MetricSet, values: [f64; 3]) -> Result<Self> {
        let mut snapped = [0.0; 3];
        for (i, (&v, name)) in values.iter().zip(metrics.keys()).enumerate() {
            if !v.is_finite() || !(-GRID_TOL..=1.0 + GRID_TOL).contains(&v) {
                return Err(Error::ScoreOutOfRange {
                    name: name.to_string(),
                    value: v,
                });
            }
            let grid = (v * 10.0).round() / 10.0;
            if (grid - v).abs() > GRID_TOL {
                warn!(metric = name, score = v, rounded = grid, "off-grid score rounded");
            }
            snapped[i] = grid.clamp(0.0, 1.0);
        }
        Ok(Self {
            metrics,
            values: snapped,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics
            .keys()
            .iter()
            .position(|k| *k == key)
            .map(|i| self.values[i])
    }
}

/// Map a score in `[0, 1]` onto `levels` outcome indices.
pub fn scale_score(score: f64, levels: usize) -> Result<usize> {
    if !score.is_finite() || !(-GRID_TOL..=1.0 + GRID_TOL).contains(&score) {
        return Err(Error::ScoreOutOfRange {
            name: "score".into(),
            value: score,
        });
    }
    let top = (levels - 1) as f64;
    Ok(((score.clamp(0.0, 1.0) * top).round() as usize).min(levels - 1))
}

/// Observation indices on the 11-point quality scale.
pub fn scale_scores(scores: &EvaluationScores) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for (slot, &v) in out.iter_mut().zip(&scores.values) {
        *slot = scale_score(v, 11)?;
    }
    Ok(out)
}

/// Ground-truth mean scores per prompt and search state for the synthetic
/// oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthProfile {
    pub version: String,
    /// Per prompt state: accuracy, relevance, comprehensiveness.
    pub prompt_quality: Vec<[f64; 3]>,
    /// Per search state: info relevance, info usefulness, source quality.
    pub search_quality: Vec<[f64; 3]>,
    pub noise_sd: f64,
    pub seed: u64,
}

impl GroundTruthProfile {
    /// Draw a profile where `good` prompt states have means in `[0.8, 0.95]`,
    /// the rest in `[0.2, 0.5]`, and search states in `[0.4, 0.6]`.
    pub fn synthetic(prompts: usize, searches: usize, good: usize, noise_sd: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..prompts).collect();
        for i in (1..prompts).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let good_set = &order[..good.min(prompts)];
        let prompt_quality = (0..prompts)
            .map(|p| {
                let (lo, hi) = if good_set.contains(&p) { (0.8, 0.95) } else { (0.2, 0.5) };
                [0; 3].map(|_| rng.random_range(lo..hi))
            })
            .collect();
        let search_quality = (0..searches)
            .map(|_| [0; 3].map(|_| rng.random_range(0.4..0.6)))
            .collect();
        Self {
            version: PROFILE_VERSION.into(),
            prompt_quality,
            search_quality,
            noise_sd,
            seed,
        }
    }

    /// Default draw: 20% of prompt states are good (at least one).
    pub fn default_for(dims: &Dims, seed: u64) -> Self {
        let good = ((dims.prompts as f64 * 0.2).round() as usize).max(1);
        Self::synthetic(dims.prompts, dims.searches, good, 0.05, seed)
    }

    pub fn validate(&self, dims: &Dims) -> Result<()> {
        let field = |f: &str, reason: String| Error::Config {
            field: format!("profile.{f}"),
            reason,
        };
        if self.version != PROFILE_VERSION {
            return Err(field("version", format!("unsupported {:?}", self.version)));
        }
        if self.prompt_quality.len() != dims.prompts {
            return Err(field(
                "prompt_quality",
                format!(
                    "{} entries for {} prompt states",
                    self.prompt_quality.len(),
                    dims.prompts
                ),
            ));
        }
        if self.search_quality.len() != dims.searches {
            return Err(field(
                "search_quality",
                format!(
                    "{} entries for {} search states",
                    self.search_quality.len(),
                    dims.searches
                ),
            ));
        }
        let all = self.prompt_quality.iter().chain(&self.search_quality).flatten();
        if let Some(v) = all.into_iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(field("quality", format!("mean {v} outside [0, 1]")));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(field(
                "noise_sd",
                format!("must be non-negative, got {}", self.noise_sd),
            ));
        }
        Ok(())
    }

    /// Prompt state with the highest mean score (lowest index on ties).
    pub fn best_prompt(&self) -> usize {
        let mean = |q: &[f64; 3]| q.iter().sum::<f64>() / 3.0;
        let mut best = 0;
        for (p, q) in self.prompt_quality.iter().enumerate() {
            if mean(q) > mean(&self.prompt_quality[best]) {
                best = p;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnvState {
    pub current_prompt: usize,
    pub current_search: usize,
    /// 0 no information, 1 basic, 2 detailed.
    pub info_level: usize,
}

pub trait Environment {
    /// Observation of the initial state.
    fn reset(&mut self) -> Result<Observation>;
    /// Apply `[prompt, search, info]` controls and observe the result.
    fn step(&mut self, action: &[usize]) -> Result<Observation>;
    fn state(&self) -> EnvState;
}

/// Check an action against the environment's cardinalities.
pub fn validate_action(action: &[usize], dims: &Dims) -> Result<()> {
    check_action(action).map_err(Error::InvalidAction)?;
    if action[PROMPT] > dims.prompts {
        return Err(Error::InvalidAction(format!(
            "prompt control {} exceeds {} prompts",
            action[PROMPT], dims.prompts
        )));
    }
    if action[SEARCH] > dims.searches {
        return Err(Error::InvalidAction(format!(
            "search control {} exceeds {} searches",
            action[SEARCH], dims.searches
        )));
    }
    Ok(())
}

/// Transition shared by both environments: prompt control `p` selects state
/// `p - 1` (otherwise it persists); search control `s` selects state `s - 1`
/// (otherwise it decays to 0). Returns whether a search was performed.
pub(crate) fn apply_controls(state: &mut EnvState, action: &[usize]) -> bool {
    if action[PROMPT] > 0 {
        state.current_prompt = action[PROMPT] - 1;
    }
    if action[SEARCH] > 0 {
        state.current_search = action[SEARCH] - 1;
        true
    } else {
        state.current_search = 0;
        false
    }
}

pub struct SyntheticEnv {
    profile: GroundTruthProfile,
    dims: Dims,
    state: EnvState,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl SyntheticEnv {
    pub fn new(profile: GroundTruthProfile, dims: Dims, seed: u64) -> Result<Self> {
        profile.validate(&dims)?;
        let noise = if profile.noise_sd > 0.0 {
            Some(Normal::new(0.0, profile.noise_sd).map_err(|e| Error::Config {
                field: "profile.noise_sd".into(),
                reason: e.to_string(),
            })?)
        } else {
            None
        };
        Ok(Self {
            profile,
            dims,
            state: EnvState::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        })
    }

    pub fn profile(&self) -> &GroundTruthProfile {
        &self.profile
    }

    fn emit(&mut self, means: [f64; 3]) -> [usize; 3] {
        let levels = self.dims.quality_levels;
        means.map(|mu| {
            let x = match &self.noise {
                Some(n) => mu + n.sample(&mut self.rng),
                None => mu,
            };
            // clamped to [0, 1] so scaling cannot fail
            scale_score(x.clamp(0.0, 1.0), levels).unwrap_or(0)
        })
    }

    fn observe(&mut self) -> Observation {
        let p = self.emit(self.profile.prompt_quality[self.state.current_prompt]);
        let s = self.emit(self.profile.search_quality[self.state.current_search]);
        let mut indices = Vec::with_capacity(7);
        indices.extend(p);
        indices.extend(s);
        indices.push(self.state.info_level);
        Observation::new(indices)
    }
}

impl Environment for SyntheticEnv {
    fn reset(&mut self) -> Result<Observation> {
        self.state = EnvState::default();
        Ok(self.observe())
    }

    fn step(&mut self, action: &[usize]) -> Result<Observation> {
        validate_action(action, &self.dims)?;
        if apply_controls(&mut self.state, action) {
            let usefulness = self.profile.search_quality[self.state.current_search][1];
            let u: f64 = self.rng.random();
            if u < usefulness {
                self.state.info_level = (self.state.info_level + 1).min(self.dims.info_levels - 1);
            }
        }
        debug_assert_eq!(action[INFO], 0);
        Ok(self.observe())
    }

    fn state(&self) -> EnvState {
        self.state
    }
}
