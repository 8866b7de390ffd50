//! Post-hoc exports and summary metrics computed from a run log. Every
//! output here is a pure function of the log file, so exporting twice gives
//! identical bytes.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{replay_dirichlet, LogHeader, RunLog, StepRecord};
use crate::error::{Error, Result};
use crate::inference::Observation;
use crate::learning::{update_likelihood, update_transitions};
use crate::model::{build_model_with, normalize_dirichlet, write_matrix_csv, DirichletState, PROMPT, SEARCH};
use crate::policy::{ActionKind, Policy};
use crate::prob::entropy_of;
use crate::tensor::Tensor;

/// Sliding window used to locate the search-to-prompt transition.
pub const TRANSITION_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    AMatrices,
    EfeGrid,
    ActionHeatmap,
    ActionTimeline,
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a_matrices" => Ok(Self::AMatrices),
            "efe_grid" => Ok(Self::EfeGrid),
            "action_heatmap" => Ok(Self::ActionHeatmap),
            "action_timeline" => Ok(Self::ActionTimeline),
            other => Err(Error::Export(format!(
                "unknown export kind {other:?} (expected a_matrices, efe_grid, action_heatmap or action_timeline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Export(format!(
                "unknown format {other:?} (expected csv or json)"
            ))),
        }
    }
}

/// Which steps an export covers. For `a_matrices`, step `k` means the model
/// after `k` learning updates, so `0` is the initial model and the log
/// length is the final one.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StepSelection {
    #[default]
    All,
    Last,
    List(Vec<usize>),
    /// Half-open range.
    Range(usize, usize),
}

impl FromStr for StepSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Export(format!("bad step selection {s:?} (use all, last, N, N,M,.. or A..B)"));
        match s.trim() {
            "all" => Ok(Self::All),
            "last" => Ok(Self::Last),
            t if t.contains("..") => {
                let (a, b) = t.split_once("..").ok_or_else(bad)?;
                let a = a.trim().parse().map_err(|_| bad())?;
                let b = b.trim().parse().map_err(|_| bad())?;
                if a >= b {
                    return Err(bad());
                }
                Ok(Self::Range(a, b))
            }
            t => t
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| bad()))
                .collect::<Result<Vec<usize>>>()
                .map(Self::List),
        }
    }
}

impl StepSelection {
    /// Resolve against valid steps `0..limit`, where `last` is `limit - 1`.
    pub fn resolve(&self, limit: usize) -> Result<Vec<usize>> {
        let out_of_range = |k: usize| Error::OutOfRange {
            what: "step selection".into(),
            index: k,
            card: limit,
        };
        let steps: Vec<usize> = match self {
            Self::All => (0..limit).collect(),
            Self::Last => vec![limit.checked_sub(1).ok_or(Error::Empty("run log"))?],
            Self::List(v) => v.clone(),
            Self::Range(a, b) => (*a..*b).collect(),
        };
        if let Some(&k) = steps.iter().find(|&&k| k >= limit) {
            return Err(out_of_range(k));
        }
        Ok(steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSpec {
    pub log: PathBuf,
    pub kind: ExportKind,
    pub steps: StepSelection,
    /// Output file, or a directory for `a_matrices`.
    pub out: PathBuf,
    pub format: ExportFormat,
}

/// Run an export and return the files written.
pub fn export(spec: &ExportSpec) -> Result<Vec<PathBuf>> {
    let log = RunLog::read(&spec.log)?;
    if log.records.is_empty() {
        return Err(Error::Empty("run log"));
    }
    match spec.kind {
        ExportKind::AMatrices => export_a_matrices(&log, &spec.steps, &spec.out, spec.format),
        kind => {
            let body = match kind {
                ExportKind::EfeGrid => efe_grid(&log, &spec.steps, spec.format)?,
                ExportKind::ActionHeatmap => action_heatmap(&log, &spec.steps, spec.format)?,
                ExportKind::ActionTimeline => action_timeline(&log, &spec.steps, spec.format)?,
                ExportKind::AMatrices => unreachable!(),
            };
            if let Some(parent) = spec.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&spec.out, body)?;
            Ok(vec![spec.out.clone()])
        }
    }
}

fn export_a_matrices(log: &RunLog, steps: &StepSelection, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    let steps = match steps {
        StepSelection::Last => vec![log.records.len()],
        s => s.resolve(log.records.len() + 1)?,
    };
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for k in steps {
        let dir_k = replay_dirichlet(&log.header, &log.records, k)?;
        let (a, _) = normalize_dirichlet(&dir_k)?;
        for (m, t) in a.iter().enumerate() {
            let path = match format {
                ExportFormat::Csv => dir.join(format!("A{m}_step{k:04}.csv")),
                ExportFormat::Json => dir.join(format!("A{m}_step{k:04}.json")),
            };
            match format {
                ExportFormat::Csv => {
                    let mut buf = Vec::new();
                    write_matrix_csv(&mut buf, t)?;
                    fs::write(&path, buf)?;
                }
                ExportFormat::Json => {
                    let doc = json!({ "modality": m, "step": k, "shape": t.shape, "data": t.data });
                    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
                }
            }
            written.push(path);
        }
    }
    Ok(written)
}

fn record_steps(log: &RunLog, steps: &StepSelection) -> Result<Vec<usize>> {
    steps.resolve(log.records.len())
}

/// Index of the policy that repeats `action` at every step.
fn repeated_policy_index(policies: &[Policy], action: &[usize]) -> Option<usize> {
    policies.iter().position(|p| p.steps.iter().all(|s| s == action))
}

/// G of the repeated single-action policies arranged on a prompt-control by
/// search-control grid. Cells combining a prompt and a search are illegal and
/// left empty.
pub fn efe_grid(log: &RunLog, steps: &StepSelection, format: ExportFormat) -> Result<String> {
    let cfg = &log.header.config;
    let policies = cfg.policies()?;
    let (np, ns) = (cfg.dims.prompts + 1, cfg.dims.searches + 1);
    let steps = match steps {
        StepSelection::All => log
            .records
            .iter()
            .filter(|r| r.efe_table.is_some())
            .map(|r| r.step)
            .collect(),
        s => record_steps(log, s)?,
    };
    let mut grids = Vec::new();
    for k in steps {
        let table = log.records[k].efe_table.as_ref().ok_or_else(|| {
            let available: Vec<usize> = log
                .records
                .iter()
                .filter(|r| r.efe_table.is_some())
                .map(|r| r.step)
                .collect();
            Error::Export(format!("step {k} has no EFE table; snapshot steps are {available:?}"))
        })?;
        let mut grid = vec![vec![None; ns]; np];
        for (p, row) in grid.iter_mut().enumerate() {
            for (s, cell) in row.iter_mut().enumerate() {
                if p > 0 && s > 0 {
                    continue;
                }
                if let Some(i) = repeated_policy_index(&policies, &[p, s, 0]) {
                    *cell = Some(table[i].efe.g);
                }
            }
        }
        grids.push((k, grid));
    }
    match format {
        ExportFormat::Csv => {
            let mut out = String::from("step,prompt,search,G\n");
            for (k, grid) in &grids {
                for (p, row) in grid.iter().enumerate() {
                    for (s, cell) in row.iter().enumerate() {
                        if let Some(g) = cell {
                            writeln!(out, "{k},{p},{s},{g}").unwrap();
                        }
                    }
                }
            }
            Ok(out)
        }
        ExportFormat::Json => {
            let doc: Vec<_> = grids
                .iter()
                .map(|(k, grid)| json!({ "step": k, "grid": grid }))
                .collect();
            Ok(serde_json::to_string_pretty(&doc)? + "\n")
        }
    }
}

/// Counts of logged actions by (prompt control, search control). The
/// no-action cell stays zero.
pub fn heatmap_counts(header: &LogHeader, records: &[&StepRecord]) -> Vec<Vec<usize>> {
    let dims = header.config.dims;
    let mut counts = vec![vec![0; dims.searches + 1]; dims.prompts + 1];
    for r in records {
        if ActionKind::of(&r.action) != ActionKind::None {
            counts[r.action[PROMPT]][r.action[SEARCH]] += 1;
        }
    }
    counts
}

fn selected<'a>(log: &'a RunLog, steps: &StepSelection) -> Result<Vec<&'a StepRecord>> {
    Ok(record_steps(log, steps)?.into_iter().map(|k| &log.records[k]).collect())
}

pub fn action_heatmap(log: &RunLog, steps: &StepSelection, format: ExportFormat) -> Result<String> {
    let counts = heatmap_counts(&log.header, &selected(log, steps)?);
    match format {
        ExportFormat::Csv => {
            let mut out = String::from("prompt");
            for s in 0..counts[0].len() {
                write!(out, ",search_{s}").unwrap();
            }
            out.push('\n');
            for (p, row) in counts.iter().enumerate() {
                write!(out, "{p}").unwrap();
                for c in row {
                    write!(out, ",{c}").unwrap();
                }
                out.push('\n');
            }
            Ok(out)
        }
        ExportFormat::Json => Ok(serde_json::to_string_pretty(&json!({ "counts": counts }))? + "\n"),
    }
}

/// Target state of a prompt or search action; `None` for no action.
fn action_id(action: &[usize]) -> Option<usize> {
    match ActionKind::of(action) {
        ActionKind::Prompt => Some(action[PROMPT] - 1),
        ActionKind::Search => Some(action[SEARCH] - 1),
        ActionKind::None => None,
    }
}

pub fn action_timeline(log: &RunLog, steps: &StepSelection, format: ExportFormat) -> Result<String> {
    let records = selected(log, steps)?;
    match format {
        ExportFormat::Csv => {
            let mut out = String::from("step,type,action_id\n");
            for r in records {
                let id = action_id(&r.action).map(|i| i.to_string()).unwrap_or_default();
                writeln!(out, "{},{},{id}", r.step, r.action_kind.as_str()).unwrap();
            }
            Ok(out)
        }
        ExportFormat::Json => {
            let rows: Vec<_> = records
                .iter()
                .map(|r| json!({ "step": r.step, "type": r.action_kind, "action_id": action_id(&r.action) }))
                .collect();
            Ok(serde_json::to_string_pretty(&rows)? + "\n")
        }
    }
}

/// Entropy of every column of a normalized likelihood tensor.
pub fn column_entropies(a: &Tensor) -> Vec<f64> {
    (0..a.columns()).map(|j| entropy_of(&a.column(j))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileStats {
    pub start: usize,
    pub end: usize,
    pub search_fraction: Option<f64>,
    pub prompt_fraction: Option<f64>,
    /// Mean observed prompt-quality score, scaled to `[0, 1]`.
    pub mean_prompt_quality: Option<f64>,
    /// Mean observed search-quality score, scaled to `[0, 1]`.
    pub mean_search_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub steps: usize,
    pub action_counts: ActionCounts,
    pub quartiles: Vec<QuartileStats>,
    /// `entropy[k][m]`: mean column entropy of modality `m` after `k` updates.
    pub entropy: Vec<Vec<f64>>,
    /// First window start at which prompt actions outnumber searches.
    pub transition_step: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionCounts {
    pub none: usize,
    pub prompt: usize,
    pub search: usize,
}

impl ActionCounts {
    pub fn of(records: &[StepRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.action_kind {
                ActionKind::None => c.none += 1,
                ActionKind::Prompt => c.prompt += 1,
                ActionKind::Search => c.search += 1,
            }
        }
        c
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn quartile(records: &[StepRecord], start: usize, end: usize, levels: usize) -> QuartileStats {
    let chunk = &records[start..end];
    let frac = |kind| mean(chunk.iter().map(|r| f64::from(u8::from(r.action_kind == kind))));
    let scale = (levels - 1) as f64;
    let quality = |mods: std::ops::Range<usize>| {
        mean(
            chunk
                .iter()
                .flat_map(|r| r.observation[mods.clone()].iter().map(|&o| o as f64 / scale)),
        )
    };
    QuartileStats {
        start,
        end,
        search_fraction: frac(ActionKind::Search),
        prompt_fraction: frac(ActionKind::Prompt),
        mean_prompt_quality: quality(0..3),
        mean_search_quality: quality(3..6),
    }
}

/// Start of the first window of `window` steps in which prompt actions
/// outnumber searches. Logs shorter than the window are treated as one
/// window.
pub fn transition_step(records: &[StepRecord], window: usize) -> Option<usize> {
    let w = window.min(records.len());
    if w == 0 {
        return None;
    }
    records.windows(w).position(|win| {
        let prompts = win.iter().filter(|r| r.action_kind == ActionKind::Prompt).count();
        let searches = win.iter().filter(|r| r.action_kind == ActionKind::Search).count();
        prompts > searches
    })
}

/// Mean column entropy per modality after each of `0..=n` learning updates.
pub fn entropy_trajectory(log: &RunLog) -> Result<Vec<Vec<f64>>> {
    let cfg = &log.header.config;
    let (template, mut dir) = build_model_with(cfg.dims, &cfg.preferences)?;
    fn snapshot(dir: &DirichletState) -> Result<Vec<f64>> {
        let (a, _) = normalize_dirichlet(dir)?;
        Ok(a.iter()
            .map(|t| mean(column_entropies(t).into_iter()).unwrap_or(0.0))
            .collect())
    }
    let mut out = vec![snapshot(&dir)?];
    for (i, r) in log.records.iter().enumerate() {
        let model = template.with_learned(&dir)?;
        dir = update_likelihood(
            &model,
            &dir,
            &Observation::new(r.observation.clone()),
            &r.beliefs,
            &cfg.learning,
        )?;
        if i > 0 {
            let prev = &log.records[i - 1];
            dir = update_transitions(&dir, &prev.beliefs, &r.beliefs, &prev.action, &cfg.learning)?;
        }
        out.push(snapshot(&dir)?);
    }
    Ok(out)
}

pub fn analyze(log: &RunLog) -> Result<AnalysisReport> {
    let n = log.records.len();
    if n == 0 {
        return Err(Error::Empty("run log"));
    }
    let levels = log.header.config.dims.quality_levels;
    let quartiles = (0..4)
        .map(|i| quartile(&log.records, i * n / 4, (i + 1) * n / 4, levels))
        .collect();
    Ok(AnalysisReport {
        steps: n,
        action_counts: ActionCounts::of(&log.records),
        quartiles,
        entropy: entropy_trajectory(log)?,
        transition_step: transition_step(&log.records, TRANSITION_WINDOW),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.action_counts;
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "actions: prompt {} search {} none {}", c.prompt, c.search, c.none)?;
        writeln!(f, "quartile  steps      search  prompt  prompt_q  search_q")?;
        for (i, q) in self.quartiles.iter().enumerate() {
            writeln!(
                f,
                "Q{}        {:>4}-{:<4}  {:>6}  {:>6}  {:>8}  {:>8}",
                i + 1,
                q.start,
                q.end,
                opt(q.search_fraction),
                opt(q.prompt_fraction),
                opt(q.mean_prompt_quality),
                opt(q.mean_search_quality)
            )?;
        }
        let first = self.entropy.first().cloned().unwrap_or_default();
        let last = self.entropy.last().cloned().unwrap_or_default();
        writeln!(f, "mean column entropy (start -> end):")?;
        for (m, (a, b)) in first.iter().zip(&last).enumerate() {
            writeln!(f, "  A{m}: {a:.4} -> {b:.4}")?;
        }
        match self.transition_step {
            Some(t) => writeln!(f, "transition step: {t}"),
            None => writeln!(f, "transition step: none"),
        }
    }
}
