//! The perception-action loop: observe, infer, score, select, act, learn,
//! log. One [`StepRecord`] is written per step as a JSONL line, flushed
//! immediately so an aborted run keeps its prefix.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::remote::{EndpointConfig, RemoteEnv, RemoteEvaluator, TextCorpus};
use crate::env::{Environment, GroundTruthProfile, SyntheticEnv};
use crate::error::{Error, Result};
use crate::inference::{compute_vfe, infer_states, predict_states, BeliefState, Observation, DEFAULT_ITERS};
use crate::learning::{update_likelihood, update_transitions, LearningConfig};
use crate::model::{build_model_with, validate_model, Dims, DirichletState, GenerativeModel, PreferenceSpec};
use crate::policy::{
    check_action, enumerate_policies, policy_posterior, score_policies, select_action, ActionKind, EfeBreakdown,
    Policy, PolicyMode, SelectionMode,
};
use crate::prob::LogPrefs;

pub const LOG_SCHEMA: &str = "inferact-log/1";

/// Offset mixed into the seed for the action-sampling stream so it never
/// shares a sequence with the environment.
const SELECTION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Synthetic {
        /// Ground-truth profile file; drawn from the seed when absent.
        #[serde(default)]
        profile: Option<PathBuf>,
        /// Number of good prompt states in a drawn profile.
        #[serde(default)]
        good_prompts: Option<usize>,
        #[serde(default)]
        noise_sd: Option<f64>,
    },
    Remote {
        #[serde(default)]
        endpoint: EndpointConfig,
        /// Texts to score, as a JSON [`TextCorpus`].
        #[serde(default)]
        corpus: Option<PathBuf>,
    },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Synthetic {
            profile: None,
            good_prompts: None,
            noise_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dims: Dims,
    pub preferences: PreferenceSpec,
    pub learning: LearningConfig,
    /// Policy precision.
    pub gamma: f64,
    /// Action precision.
    pub alpha: f64,
    pub horizon: usize,
    pub policy_mode: PolicyMode,
    pub selection: SelectionMode,
    pub steps: usize,
    pub seed: u64,
    pub inference_iters: usize,
    pub env: EnvConfig,
    /// Attach the full EFE table to every n-th step record (and the last).
    pub snapshot_interval: Option<usize>,
    pub top_k: usize,
    /// Stop once the action and top policy have not changed for this many
    /// consecutive steps.
    pub early_stop: Option<usize>,
    /// Unnormalized log habits, one per policy. Flat when absent.
    pub habits: Option<Vec<f64>>,
    /// Record wall-clock step durations. Off by default so logs stay
    /// byte-identical across runs.
    pub record_timing: bool,
    pub check_invariants: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            preferences: PreferenceSpec::default(),
            learning: LearningConfig::default(),
            gamma: 8.0,
            alpha: 16.0,
            horizon: 2,
            policy_mode: PolicyMode::Cartesian,
            selection: SelectionMode::Stochastic,
            steps: 100,
            seed: 0,
            inference_iters: DEFAULT_ITERS,
            env: EnvConfig::default(),
            snapshot_interval: Some(25),
            top_k: 5,
            early_stop: None,
            habits: None,
            record_timing: false,
            check_invariants: true,
        }
    }
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| config_err(&json_error_field(&e), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.learning.validate()?;
        for (name, v) in [("gamma", self.gamma), ("alpha", self.alpha)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(config_err(name, format!("must be a positive finite number, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(config_err("steps", "must be at least 1"));
        }
        if self.inference_iters == 0 {
            return Err(config_err("inference_iters", "must be at least 1"));
        }
        if self.snapshot_interval == Some(0) {
            return Err(config_err("snapshot_interval", "must be at least 1"));
        }
        if self.early_stop == Some(0) {
            return Err(config_err("early_stop", "must be at least 1"));
        }
        if let Some(ms) = &self.learning.modalities {
            if let Some(&m) = ms.iter().find(|&&m| m >= 7) {
                return Err(config_err(
                    "learning.modalities",
                    format!("modality {m} does not exist"),
                ));
            }
        }
        if let Some(fs) = &self.learning.factors {
            if let Some(&f) = fs.iter().find(|&&f| f >= 3) {
                return Err(config_err("learning.factors", format!("factor {f} does not exist")));
            }
        }
        if let Some(h) = &self.habits {
            let n = self.policies()?.len();
            if h.len() != n {
                return Err(config_err("habits", format!("{} values for {n} policies", h.len())));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(config_err("habits", "values must be finite"));
            }
        }
        if let EnvConfig::Synthetic {
            good_prompts, noise_sd, ..
        } = &self.env
        {
            if good_prompts.is_some_and(|g| g == 0 || g > self.dims.prompts) {
                return Err(config_err(
                    "env.good_prompts",
                    format!("must be in 1..={}", self.dims.prompts),
                ));
            }
            if noise_sd.is_some_and(|s| !s.is_finite() || s < 0.0) {
                return Err(config_err("env.noise_sd", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn policies(&self) -> Result<Vec<Policy>> {
        enumerate_policies(self.dims.prompts, self.dims.searches, self.horizon, self.policy_mode)
    }

    /// Synthetic profile implied by this config, if the environment is
    /// synthetic.
    pub fn profile(&self) -> Result<Option<GroundTruthProfile>> {
        match &self.env {
            EnvConfig::Synthetic {
                profile: Some(path), ..
            } => {
                let p: GroundTruthProfile = serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| config_err("env.profile", e.to_string()))?;
                p.validate(&self.dims)?;
                Ok(Some(p))
            }
            EnvConfig::Synthetic {
                profile: None,
                good_prompts,
                noise_sd,
            } => {
                let mut p = GroundTruthProfile::default_for(&self.dims, self.seed);
                if good_prompts.is_some() || noise_sd.is_some() {
                    p = GroundTruthProfile::synthetic(
                        self.dims.prompts,
                        self.dims.searches,
                        good_prompts.unwrap_or(((self.dims.prompts as f64 * 0.2).round() as usize).max(1)),
                        noise_sd.unwrap_or(p.noise_sd),
                        self.seed,
                    );
                }
                Ok(Some(p))
            }
            EnvConfig::Remote { .. } => Ok(None),
        }
    }
}

/// Best-effort name of the offending key in a serde error message.
fn json_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPolicy {
    pub index: usize,
    pub policy: Policy,
    pub prob: f64,
    pub efe: EfeBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub prob: f64,
    pub efe: EfeBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub observation: Vec<usize>,
    pub prior: BeliefState,
    pub beliefs: BeliefState,
    pub vfe: f64,
    pub action: Vec<usize>,
    pub action_kind: ActionKind,
    pub top_policies: Vec<RankedPolicy>,
    /// Every policy, in enumeration order; present on snapshot steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efe_table: Option<Vec<PolicyScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config: RunConfig,
    pub num_policies: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<GroundTruthProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Header(Box<LogHeader>),
    Step(StepRecord),
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema: String,
    #[serde(flatten)]
    line: T,
}

pub fn write_log_line<W: Write>(w: &mut W, line: &LogLine) -> Result<()> {
    let env = Envelope {
        schema: LOG_SCHEMA.into(),
        line,
    };
    serde_json::to_writer(&mut *w, &env)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub header: LogHeader,
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let env: Envelope<LogLine> =
                serde_json::from_str(&line).map_err(|e| Error::Log(format!("line {}: {e}", i + 1)))?;
            if env.schema != LOG_SCHEMA {
                return Err(Error::Log(format!(
                    "line {}: unsupported schema {:?}",
                    i + 1,
                    env.schema
                )));
            }
            match env.line {
                LogLine::Header(h) if header.is_none() && i == 0 => header = Some(*h),
                LogLine::Header(_) => return Err(Error::Log(format!("line {}: unexpected header", i + 1))),
                LogLine::Step(s) => {
                    if s.step != records.len() {
                        return Err(Error::Log(format!(
                            "line {}: expected step {}, got {}",
                            i + 1,
                            records.len(),
                            s.step
                        )));
                    }
                    records.push(s)
                }
            }
        }
        let header = header.ok_or_else(|| Error::Log("missing header line".into()))?;
        Ok(Self { header, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(BufReader::new(File::open(path)?))
    }
}

/// Next step's prior: the posterior pushed through the chosen action's
/// transitions.
pub fn belief_rollover(prev_posterior: &BeliefState, model: &GenerativeModel, action: &[usize]) -> Result<BeliefState> {
    predict_states(model, prev_posterior, action)
}

/// Decision made at one step, before the environment responds.
struct Decision {
    observation: Observation,
    prior: BeliefState,
    beliefs: BeliefState,
    vfe: f64,
    action: Vec<usize>,
    top_policies: Vec<RankedPolicy>,
    efe_table: Option<Vec<PolicyScore>>,
    top_index: usize,
}

/// Agent state carried across steps.
pub struct Agent {
    cfg: RunConfig,
    template: GenerativeModel,
    dirichlet: DirichletState,
    policies: Vec<Policy>,
    habits: LogPrefs,
    rng: ChaCha8Rng,
    previous: Option<(BeliefState, Vec<usize>)>,
    step: usize,
}

impl Agent {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (template, dirichlet) = build_model_with(cfg.dims, &cfg.preferences)?;
        let policies = cfg.policies()?;
        let habits = match &cfg.habits {
            Some(h) => LogPrefs::new(h.clone())?,
            None => LogPrefs::zeros(policies.len()),
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ SELECTION_STREAM),
            cfg,
            template,
            dirichlet,
            policies,
            habits,
            previous: None,
            step: 0,
        })
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn dirichlet(&self) -> &DirichletState {
        &self.dirichlet
    }

    /// Current model: the fixed template with A and B replaced by the
    /// normalized concentrations.
    pub fn model(&self) -> Result<GenerativeModel> {
        self.template.with_learned(&self.dirichlet)
    }

    fn invariant(&self, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
        if self.cfg.check_invariants && !ok {
            return Err(Error::Invariant {
                step: self.step,
                detail: detail(),
            });
        }
        Ok(())
    }

    fn decide(&mut self, observation: Observation) -> Result<Decision> {
        let model = self.model()?;
        if self.cfg.check_invariants {
            let violations = validate_model(&model);
            self.invariant(violations.is_empty(), || format!("model invalid: {}", violations[0]))?;
        }
        let prior = match &self.previous {
            None => BeliefState::prior(&model),
            Some((q, a)) => belief_rollover(q, &model, a)?,
        };
        let beliefs = infer_states(&model, &prior, &observation, self.cfg.inference_iters)?;
        let vfe = compute_vfe(&model, &prior, &beliefs, &observation)?;
        self.invariant(vfe.is_finite(), || format!("non-finite VFE {vfe}"))?;

        let scores = score_policies(&model, &self.dirichlet, &beliefs, &self.policies)?;
        let posterior = policy_posterior(&self.policies, &scores, self.cfg.gamma, &self.habits)?;
        let action = select_action(&posterior, self.cfg.alpha, self.cfg.selection, &mut self.rng)?;
        self.invariant(check_action(&action).is_ok(), || format!("illegal action {action:?}"))?;

        let probs = posterior.probs.probs();
        let mut order: Vec<usize> = (0..self.policies.len()).collect();
        order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]));
        let top_policies = order
            .iter()
            .take(self.cfg.top_k)
            .map(|&i| RankedPolicy {
                index: i,
                policy: self.policies[i].clone(),
                prob: probs[i],
                efe: scores[i],
            })
            .collect();
        let snapshot = self
            .cfg
            .snapshot_interval
            .is_some_and(|k| self.step.is_multiple_of(k) || self.step + 1 == self.cfg.steps);
        let efe_table = snapshot.then(|| {
            scores
                .iter()
                .zip(probs)
                .map(|(efe, &prob)| PolicyScore { prob, efe: *efe })
                .collect()
        });
        Ok(Decision {
            observation,
            prior,
            beliefs,
            vfe,
            action,
            top_policies,
            efe_table,
            top_index: order[0],
        })
    }

    fn learn(&mut self, d: &Decision) -> Result<()> {
        let model = self.model()?;
        self.dirichlet = update_likelihood(&model, &self.dirichlet, &d.observation, &d.beliefs, &self.cfg.learning)?;
        if let Some((q_prev, a_prev)) = &self.previous {
            self.dirichlet = update_transitions(&self.dirichlet, q_prev, &d.beliefs, a_prev, &self.cfg.learning)?;
        }
        self.previous = Some((d.beliefs.clone(), d.action.clone()));
        self.step += 1;
        Ok(())
    }
}

/// Replays the learning updates recorded in a log and returns the
/// concentrations after the first `upto` steps.
pub fn replay_dirichlet(header: &LogHeader, records: &[StepRecord], upto: usize) -> Result<DirichletState> {
    if upto > records.len() {
        return Err(Error::OutOfRange {
            what: "log step".into(),
            index: upto,
            card: records.len() + 1,
        });
    }
    let cfg = &header.config;
    let (template, mut dir) = build_model_with(cfg.dims, &cfg.preferences)?;
    for (i, r) in records[..upto].iter().enumerate() {
        let model = template.with_learned(&dir)?;
        let obs = Observation::new(r.observation.clone());
        dir = update_likelihood(&model, &dir, &obs, &r.beliefs, &cfg.learning)?;
        if i > 0 {
            let prev = &records[i - 1];
            dir = update_transitions(&dir, &prev.beliefs, &r.beliefs, &prev.action, &cfg.learning)?;
        }
    }
    Ok(dir)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub header: LogHeader,
    pub records: Vec<StepRecord>,
    pub model: GenerativeModel,
    pub dirichlet: DirichletState,
    /// Concentrations before the first update.
    pub initial_dirichlet: DirichletState,
}

impl RunOutput {
    pub fn action_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for r in &self.records {
            c[r.action_kind as usize] += 1;
        }
        c
    }
}

/// Build the environment named by the config.
pub fn make_env(cfg: &RunConfig) -> Result<Box<dyn Environment>> {
    match &cfg.env {
        EnvConfig::Synthetic { .. } => {
            let profile = cfg.profile()?.expect("synthetic config has a profile");
            Ok(Box::new(SyntheticEnv::new(profile, cfg.dims, cfg.seed)?))
        }
        EnvConfig::Remote { endpoint, corpus } => {
            let evaluator = RemoteEvaluator::new(endpoint.clone())?;
            let corpus = corpus
                .as_ref()
                .ok_or_else(|| config_err("env.corpus", "required for the remote environment"))?;
            let text = std::fs::read_to_string(corpus)?;
            let corpus: TextCorpus =
                serde_json::from_str(&text).map_err(|e| config_err("env.corpus", e.to_string()))?;
            Ok(Box::new(RemoteEnv::new(evaluator, corpus, cfg.dims, cfg.seed)?))
        }
    }
}

/// Run with the environment named in the config, logging to `log` if given.
pub fn run_experiment<W: Write>(cfg: &RunConfig, log: Option<&mut W>) -> Result<RunOutput> {
    cfg.validate()?;
    let mut env = make_env(cfg)?;
    run_with_env(cfg, env.as_mut(), cfg.profile()?, log)
}

/// Run against a caller-supplied environment. `profile` is stored in the log
/// header for later analysis.
pub fn run_with_env<W: Write>(
    cfg: &RunConfig,
    env: &mut dyn Environment,
    profile: Option<GroundTruthProfile>,
    mut log: Option<&mut W>,
) -> Result<RunOutput> {
    let mut agent = Agent::new(cfg.clone())?;
    let initial_dirichlet = agent.dirichlet.clone();
    let header = LogHeader {
        config: cfg.clone(),
        num_policies: agent.policies.len(),
        profile,
    };
    if let Some(w) = log.as_deref_mut() {
        write_log_line(w, &LogLine::Header(Box::new(header.clone())))?;
    }

    let mut records = Vec::with_capacity(cfg.steps);
    let mut observation = env.reset()?;
    let mut streak: Option<(Vec<usize>, usize, usize)> = None;
    for t in 0..cfg.steps {
        let started = Instant::now();
        let d = agent.decide(observation)?;
        let next = env.step(&d.action)?;
        agent.learn(&d)?;
        let record = StepRecord {
            step: t,
            observation: d.observation.indices.clone(),
            prior: d.prior.clone(),
            beliefs: d.beliefs.clone(),
            vfe: d.vfe,
            action: d.action.clone(),
            action_kind: ActionKind::of(&d.action),
            top_policies: d.top_policies.clone(),
            efe_table: d.efe_table.clone(),
            duration_ms: cfg.record_timing.then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        if let Some(w) = log.as_deref_mut() {
            write_log_line(w, &LogLine::Step(record.clone()))?;
        }
        tracing::debug!(step = t, action = ?record.action, vfe = record.vfe, "step");
        records.push(record);
        observation = next;

        if let Some(k) = cfg.early_stop {
            let run = match &streak {
                Some((a, top, n)) if *a == d.action && *top == d.top_index => n + 1,
                _ => 1,
            };
            streak = Some((d.action.clone(), d.top_index, run));
            if run >= k {
                tracing::info!(step = t, "stopping early: choice unchanged for {k} steps");
                break;
            }
        }
    }

    if cfg.check_invariants {
        let expected = initial_dirichlet.total_pa()
            + cfg.learning.eta * (records.len() * cfg.learning.learned_modalities(7)) as f64;
        let got = agent.dirichlet.total_pa();
        let tol = 1e-6 * expected.max(1.0);
        if (got - expected).abs() > tol {
            return Err(Error::Invariant {
                step: records.len(),
                detail: format!("pA mass {got} differs from expected {expected}"),
            });
        }
    }

    Ok(RunOutput {
        model: agent.model()?,
        dirichlet: agent.dirichlet,
        header,
        records,
        initial_dirichlet,
    })
}
