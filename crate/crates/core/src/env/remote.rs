//! Chat-completion evaluator client and the environment built on it.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{apply_controls, scale_score, validate_action, EnvState, Environment, EvaluationScores, MetricSet};
use crate::error::{Error, Result};
use crate::inference::Observation;
use crate::model::Dims;

pub const API_KEY_VAR: &str = "INFERACT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub temperature: f64,
    /// Append request/response pairs here as JSONL.
    pub transcript: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            timeout_secs: 30,
            max_retries: 3,
            temperature: 0.0,
            transcript: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub metrics: MetricSet,
    /// What the text is supposed to accomplish.
    pub task: String,
    /// Search results or agent output to score.
    pub text: String,
}

/// Instruction block asking for exactly the three metric keys as JSON.
pub fn format_instructions(metrics: MetricSet) -> String {
    let fields: Vec<String> = metrics
        .keys()
        .iter()
        .map(|k| format!("    \"{k}\": [Score from 0.0 to 1.0 counting up by 0.1]"))
        .collect();
    format!(
        "Return only a JSON object with these three metrics, scored 0.0-1.0:\n{{\n{}\n}}",
        fields.join(",\n")
    )
}

pub fn build_messages(req: &EvaluationRequest) -> Value {
    let what = match req.metrics {
        MetricSet::Search => "search results",
        MetricSet::Prompt => "agent response",
    };
    json!([
        {
            "role": "system",
            "content": format!("You evaluate {what} for a research task. Respond with JSON only."),
        },
        {
            "role": "user",
            "content": format!(
                "Task:\n{}\n\n{} to evaluate:\n{}\n\n{}",
                req.task,
                what,
                req.text,
                format_instructions(req.metrics)
            ),
        }
    ])
}

/// First balanced `{...}` object in `text`, respecting JSON strings.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' if start.is_some() => in_str = true,
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    return start.map(|s| &text[s..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

enum Attempt {
    Done(EvaluationScores),
    Retry(String),
}

/// Parse evaluator message content. Malformed content asks for a retry;
/// out-of-range scores are a hard error.
fn parse_scores(content: &str, metrics: MetricSet) -> Result<Attempt> {
    let Some(obj) = extract_json_object(content) else {
        return Ok(Attempt::Retry(format!("no JSON object in {content:?}")));
    };
    let map: serde_json::Map<String, Value> = match serde_json::from_str(obj) {
        Ok(m) => m,
        Err(e) => return Ok(Attempt::Retry(format!("invalid JSON: {e}"))),
    };
    let keys = metrics.keys();
    if let Some(extra) = map.keys().find(|k| !keys.contains(&k.as_str())) {
        return Ok(Attempt::Retry(format!("unexpected key {extra:?}")));
    }
    let mut values = [0.0; 3];
    for (slot, key) in values.iter_mut().zip(keys) {
        match map.get(key).and_then(Value::as_f64) {
            Some(v) => *slot = v,
            None => return Ok(Attempt::Retry(format!("missing or non-numeric {key:?}"))),
        }
    }
    EvaluationScores::new(metrics, values).map(Attempt::Done)
}

pub struct RemoteEvaluator {
    cfg: EndpointConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl RemoteEvaluator {
    /// Reads the credential from `INFERACT_API_KEY`.
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        let api_key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(Error::MissingCredential(API_KEY_VAR))?;
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: EndpointConfig, api_key: String) -> Result<Self> {
        if cfg.url.is_empty() {
            return Err(Error::Config {
                field: "endpoint.url".into(),
                reason: "must not be empty".into(),
            });
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Remote(e.to_string()))?;
        Ok(Self { cfg, api_key, client })
    }

    fn log(&self, entry: Value) {
        let Some(path) = &self.cfg.transcript else {
            return;
        };
        let write = || -> std::io::Result<()> {
            let mut f: File = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{entry}")
        };
        if let Err(e) = write() {
            warn!(error = %e, "could not append evaluator transcript");
        }
    }

    /// One HTTP round trip returning the message content. Errors carry a
    /// retryable flag.
    fn send(&self, body: &Value) -> std::result::Result<String, (bool, String)> {
        let resp = self
            .client
            .post(&self.cfg.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| (true, format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, format!("reading body: {e}")))?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, format!("HTTP {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| (true, format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| (true, "response has no choices[0].message.content".to_string()))
    }

    pub fn evaluate(&self, req: &EvaluationRequest) -> Result<EvaluationScores> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "response_format": {"type": "json_object"},
            "messages": build_messages(req),
        });
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        let mut network = false;
        for attempt in 1..=attempts {
            match self.send(&body) {
                Ok(content) => {
                    self.log(json!({"attempt": attempt, "request": body, "content": content}));
                    match parse_scores(&content, req.metrics)? {
                        Attempt::Done(s) => return Ok(s),
                        Attempt::Retry(why) => {
                            warn!(attempt, reason = %why, "malformed evaluator output");
                            network = false;
                            last = why;
                        }
                    }
                }
                Err((retry, why)) => {
                    self.log(json!({"attempt": attempt, "request": body, "error": why}));
                    if !retry {
                        return Err(Error::Remote(why));
                    }
                    warn!(attempt, reason = %why, "evaluator request failed");
                    network = true;
                    last = why;
                }
            }
        }
        if network {
            Err(Error::Remote(format!("giving up after {attempts} attempts: {last}")))
        } else {
            Err(Error::MalformedResponse { attempts, detail: last })
        }
    }
}

/// Score `payload` against the configured endpoint.
pub fn remote_evaluate(payload: &EvaluationRequest, endpoint: &EndpointConfig) -> Result<EvaluationScores> {
    RemoteEvaluator::new(endpoint.clone())?.evaluate(payload)
}

/// Texts the remote environment submits for scoring: one output per prompt
/// state and one set of search results per search state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextCorpus {
    pub task: String,
    pub prompts: Vec<String>,
    pub searches: Vec<String>,
}

/// Environment whose quality observations come from a remote evaluator.
/// Information level advances after a search with probability equal to the
/// returned `info_usefulness` score.
pub struct RemoteEnv {
    evaluator: RemoteEvaluator,
    corpus: TextCorpus,
    dims: Dims,
    state: EnvState,
    rng: ChaCha8Rng,
    prompt_cache: Vec<Option<EvaluationScores>>,
    search_cache: Vec<Option<EvaluationScores>>,
}

impl RemoteEnv {
    pub fn new(evaluator: RemoteEvaluator, corpus: TextCorpus, dims: Dims, seed: u64) -> Result<Self> {
        if corpus.prompts.len() != dims.prompts || corpus.searches.len() != dims.searches {
            return Err(Error::Config {
                field: "corpus".into(),
                reason: format!(
                    "{} prompt texts and {} search texts for {} prompts and {} searches",
                    corpus.prompts.len(),
                    corpus.searches.len(),
                    dims.prompts,
                    dims.searches
                ),
            });
        }
        Ok(Self {
            evaluator,
            prompt_cache: vec![None; dims.prompts],
            search_cache: vec![None; dims.searches],
            corpus,
            dims,
            state: EnvState::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn scores(&mut self, metrics: MetricSet, index: usize, fresh: bool) -> Result<EvaluationScores> {
        let (cache, text) = match metrics {
            MetricSet::Prompt => (&self.prompt_cache, &self.corpus.prompts[index]),
            MetricSet::Search => (&self.search_cache, &self.corpus.searches[index]),
        };
        if let (false, Some(s)) = (fresh, cache[index]) {
            return Ok(s);
        }
        let req = EvaluationRequest {
            metrics,
            task: self.corpus.task.clone(),
            text: text.clone(),
        };
        let s = self.evaluator.evaluate(&req)?;
        match metrics {
            MetricSet::Prompt => self.prompt_cache[index] = Some(s),
            MetricSet::Search => self.search_cache[index] = Some(s),
        }
        Ok(s)
    }

    fn observe(&mut self, fresh_prompt: bool, fresh_search: bool) -> Result<Observation> {
        let p = self.scores(MetricSet::Prompt, self.state.current_prompt, fresh_prompt)?;
        let s = self.scores(MetricSet::Search, self.state.current_search, fresh_search)?;
        let levels = self.dims.quality_levels;
        let mut indices = Vec::with_capacity(7);
        for v in p.values.iter().chain(&s.values) {
            indices.push(scale_score(*v, levels)?);
        }
        indices.push(self.state.info_level);
        Ok(Observation::new(indices))
    }
}

impl Environment for RemoteEnv {
    fn reset(&mut self) -> Result<Observation> {
        self.state = EnvState::default();
        self.observe(false, false)
    }

    fn step(&mut self, action: &[usize]) -> Result<Observation> {
        validate_action(action, &self.dims)?;
        let prompted = action[0] > 0;
        let searched = apply_controls(&mut self.state, action);
        let obs = self.observe(prompted, searched)?;
        if searched {
            let usefulness = obs.indices[4] as f64 / (self.dims.quality_levels - 1) as f64;
            if self.rng.random::<f64>() < usefulness {
                self.state.info_level = (self.state.info_level + 1).min(self.dims.info_levels - 1);
            }
        }
        let mut obs = obs;
        obs.indices[6] = self.state.info_level;
        Ok(obs)
    }

    fn state(&self) -> EnvState {
        self.state
    }
}
