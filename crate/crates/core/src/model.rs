//! Generative model (A, B, C, D plus dependency lists), its Dirichlet
//! concentration state, validation, and the prompt/search/info model builder.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{Categorical, LogPrefs};
use crate::tensor::Tensor;

pub const MODEL_VERSION: &str = "inferact-model/1";

/// Column-sum tolerance used by [`validate_model`].
pub const NORM_TOL: f64 = 1e-9;

pub const PROMPT: usize = 0;
pub const SEARCH: usize = 1;
pub const INFO: usize = 2;

/// Likelihood tensors have shape `[num_obs, card(deps[0]), card(deps[1]), ...]`
/// and transition tensors `[card, card, num_controls]` (next, previous,
/// control). Both are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    #[serde(rename = "A")]
    pub a: Vec<Tensor>,
    #[serde(rename = "B")]
    pub b: Vec<Tensor>,
    #[serde(rename = "C")]
    pub c: Vec<LogPrefs>,
    #[serde(rename = "D")]
    pub d: Vec<Categorical>,
    #[serde(rename = "A_deps")]
    pub a_deps: Vec<Vec<usize>>,
    #[serde(rename = "B_deps")]
    pub b_deps: Vec<Vec<usize>>,
}

impl GenerativeModel {
    pub fn num_factors(&self) -> usize {
        self.d.len()
    }

    pub fn num_modalities(&self) -> usize {
        self.a.len()
    }

    pub fn factor_card(&self, f: usize) -> usize {
        self.d[f].len()
    }

    pub fn num_controls(&self, f: usize) -> usize {
        self.b[f].shape[2]
    }

    pub fn num_obs(&self, m: usize) -> usize {
        self.a[m].shape[0]
    }

    pub fn factor_cards(&self) -> Vec<usize> {
        self.d.iter().map(Categorical::len).collect()
    }

    pub fn obs_cards(&self) -> Vec<usize> {
        self.a.iter().map(Tensor::rows).collect()
    }

    /// Copy of `self` with A and B replaced by the Dirichlet means of `dir`.
    pub fn with_learned(&self, dir: &DirichletState) -> Result<Self> {
        let (a, b) = normalize_dirichlet(dir)?;
        Ok(Self { a, b, ..self.clone() })
    }

    pub fn to_document(&self, dirichlet: Option<&DirichletState>, step: Option<usize>) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION.to_string(),
            step,
            model: self.clone(),
            p_a: dirichlet.map(|d| d.pa.clone()),
            p_b: dirichlet.map(|d| d.pb.clone()),
        }
    }
}

/// Dirichlet concentrations congruent to A and B, plus the learning masks
/// (initial support of each concentration array).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletState {
    #[serde(rename = "pA")]
    pub pa: Vec<Tensor>,
    #[serde(rename = "pB")]
    pub pb: Vec<Tensor>,
    pub mask_a: Vec<Vec<bool>>,
    pub mask_b: Vec<Vec<bool>>,
}

impl DirichletState {
    /// Build from concentrations; masks are taken from the strictly
    /// positive entries.
    pub fn new(pa: Vec<Tensor>, pb: Vec<Tensor>) -> Self {
        let support = |t: &Tensor| t.data.iter().map(|&x| x > 0.0).collect();
        let mask_a = pa.iter().map(support).collect();
        let mask_b = pb.iter().map(support).collect();
        Self { pa, pb, mask_a, mask_b }
    }

    pub fn total_pa(&self) -> f64 {
        self.pa.iter().map(Tensor::sum).sum()
    }

    pub fn total_pb(&self) -> f64 {
        self.pb.iter().map(Tensor::sum).sum()
    }
}

/// On-disk JSON form of a model, optionally carrying its concentrations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(flatten)]
    pub model: GenerativeModel,
    #[serde(rename = "pA", default, skip_serializing_if = "Option::is_none")]
    pub p_a: Option<Vec<Tensor>>,
    #[serde(rename = "pB", default, skip_serializing_if = "Option::is_none")]
    pub p_b: Option<Vec<Tensor>>,
}

impl ModelDocument {
    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.version != MODEL_VERSION {
            return Err(Error::InvalidDims(format!(
                "unsupported model version {:?}",
                doc.version
            )));
        }
        Ok(doc)
    }
}

/// Write one tensor as CSV: one row per leading index (observation or next
/// state), one column per flattened trailing index.
pub fn write_matrix_csv<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let cols = t.columns();
    let header: Vec<String> = (0..cols).map(|j| format!("s{j}")).collect();
    writeln!(w, "obs,{}", header.join(","))?;
    for r in 0..t.rows() {
        let row: Vec<String> = t.data[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        writeln!(w, "{r},{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tensor: String,
    pub coords: Vec<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}: {}", self.tensor, self.coords, self.message)
    }
}

fn violation(tensor: String, coords: Vec<usize>, message: impl Into<String>) -> Violation {
    Violation {
        tensor,
        coords,
        message: message.into(),
    }
}

fn check_columns(name: &str, t: &Tensor, out: &mut Vec<Violation>) {
    let cols = t.columns();
    for col in 0..cols {
        let column = t.column(col);
        if let Some(r) = column.iter().position(|v| !v.is_finite() || *v < 0.0) {
            out.push(violation(
                name.to_string(),
                vec![r, col],
                format!("entry {} is negative or non-finite", column[r]),
            ));
            continue;
        }
        let total: f64 = column.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            out.push(violation(
                name.to_string(),
                vec![col],
                format!("column sums to {total}"),
            ));
        }
    }
}

/// Every normalization, shape and dependency violation in `model`.
pub fn validate_model(model: &GenerativeModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let nf = model.d.len();
    let nm = model.a.len();
    if model.c.len() != nm {
        out.push(violation(
            "C".into(),
            vec![],
            format!("{} vectors for {nm} modalities", model.c.len()),
        ));
    }
    if model.a_deps.len() != nm {
        out.push(violation(
            "A_deps".into(),
            vec![],
            format!("{} lists for {nm} modalities", model.a_deps.len()),
        ));
    }
    if model.b.len() != nf {
        out.push(violation(
            "B".into(),
            vec![],
            format!("{} tensors for {nf} factors", model.b.len()),
        ));
    }
    if model.b_deps.len() != nf {
        out.push(violation(
            "B_deps".into(),
            vec![],
            format!("{} lists for {nf} factors", model.b_deps.len()),
        ));
    }

    for (m, a) in model.a.iter().enumerate() {
        let name = format!("A[{m}]");
        let Some(deps) = model.a_deps.get(m) else {
            continue;
        };
        if deps.is_empty() {
            out.push(violation(
                format!("A_deps[{m}]"),
                vec![],
                "modality depends on no factor",
            ));
            continue;
        }
        let mut deps_ok = true;
        for (k, &f) in deps.iter().enumerate() {
            if f >= nf {
                out.push(violation(
                    format!("A_deps[{m}]"),
                    vec![k],
                    format!("references factor {f} of a {nf}-factor model"),
                ));
                deps_ok = false;
            }
        }
        if !deps_ok {
            continue;
        }
        let mut expected = vec![a.shape.first().copied().unwrap_or(0)];
        expected.extend(deps.iter().map(|&f| model.d[f].len()));
        if a.shape != expected || a.data.len() != expected.iter().product::<usize>() {
            out.push(violation(
                name,
                vec![],
                format!("shape {:?}, expected {:?}", a.shape, expected),
            ));
            continue;
        }
        check_columns(&name, a, &mut out);
        if let Some(c) = model.c.get(m) {
            if c.len() != a.rows() {
                out.push(violation(
                    format!("C[{m}]"),
                    vec![],
                    format!("length {} for {} outcomes", c.len(), a.rows()),
                ));
            }
        }
    }

    for (f, b) in model.b.iter().enumerate() {
        let name = format!("B[{f}]");
        let Some(card) = model.d.get(f).map(Categorical::len) else {
            continue;
        };
        if b.ndim() != 3 || b.shape[0] != card || b.shape[1] != card || b.shape[2] == 0 {
            out.push(violation(
                name,
                vec![],
                format!("shape {:?} for factor of cardinality {card}", b.shape),
            ));
            continue;
        }
        check_columns(&name, b, &mut out);
    }
    for (f, deps) in model.b_deps.iter().enumerate() {
        for (k, &g) in deps.iter().enumerate() {
            if g >= nf {
                out.push(violation(
                    format!("B_deps[{f}]"),
                    vec![k],
                    format!("references factor {g} of a {nf}-factor model"),
                ));
            }
        }
    }
    out
}

/// Dirichlet means: every column of every concentration array divided by
/// its total.
pub fn normalize_dirichlet(dir: &DirichletState) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let norm = |name: String, t: &Tensor| -> Result<Tensor> {
        let cols = t.columns();
        let mut out = t.clone();
        for col in 0..cols {
            let total = t.column_sum(col);
            if total <= 0.0 || !total.is_finite() {
                return Err(Error::ZeroColumn {
                    tensor: name,
                    column: col,
                });
            }
            for r in 0..t.rows() {
                out.data[r * cols + col] /= total;
            }
        }
        Ok(out)
    };
    let a = dir
        .pa
        .iter()
        .enumerate()
        .map(|(m, t)| norm(format!("pA[{m}]"), t))
        .collect::<Result<_>>()?;
    let b = dir
        .pb
        .iter()
        .enumerate()
        .map(|(f, t)| norm(format!("pB[{f}]"), t))
        .collect::<Result<_>>()?;
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dims {
    pub prompts: usize,
    pub searches: usize,
    pub info_levels: usize,
    pub quality_levels: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            prompts: 33,
            searches: 11,
            info_levels: 3,
            quality_levels: 11,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prompts", self.prompts),
            ("searches", self.searches),
            ("info_levels", self.info_levels),
            ("quality_levels", self.quality_levels),
        ] {
            if v < 2 {
                return Err(Error::InvalidDims(format!("{name} = {v}, must be at least 2")));
            }
        }
        Ok(())
    }
}

/// Preference shaping for the quality and information modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreferenceSpec {
    /// Log-preference of the lowest quality level.
    pub quality_floor: f64,
    /// Multiplier on the quadratic curve over levels 1..L-1.
    pub quality_scale: f64,
    /// Log-preferences for no / basic / detailed information.
    pub info: [f64; 3],
}

impl Default for PreferenceSpec {
    fn default() -> Self {
        Self {
            quality_floor: -16.0,
            quality_scale: 2.0,
            info: [-32.0, 8.0, 64.0],
        }
    }
}

impl PreferenceSpec {
    /// `floor` at level 0, then `scale * 10 * (q / (L-1))^2`; for 11 levels
    /// this is `0.2 q^2` (level 5 -> 5.0, level 10 -> 20.0).
    pub fn quality_curve(&self, levels: usize) -> Vec<f64> {
        let top = (levels - 1) as f64;
        (0..levels)
            .map(|q| {
                if q == 0 {
                    self.quality_floor
                } else {
                    let x = q as f64 / top;
                    self.quality_scale * x * x * 10.0
                }
            })
            .collect()
    }

    /// The three anchors spread piecewise-linearly over `levels` outcomes.
    pub fn info_curve(&self, levels: usize) -> Vec<f64> {
        if levels == 3 {
            return self.info.to_vec();
        }
        (0..levels)
            .map(|i| {
                let x = 2.0 * i as f64 / (levels - 1) as f64;
                let k = (x.floor() as usize).min(1);
                let t = x - k as f64;
                self.info[k] * (1.0 - t) + self.info[k + 1] * t
            })
            .collect()
    }
}

pub const BASE_CONCENTRATION: f64 = 1.0;
pub const TRANSITION_BIAS: f64 = 0.1;

/// Build the three-factor, seven-modality research-agent model.
///
/// Factors: prompt (`prompts` states, `prompts + 1` controls), search
/// (`searches` states, `searches + 1` controls) and information level
/// (`info_levels` states, one uncontrollable control). Control 0 is always
/// "no action"; control `k > 0` moves the factor to state `k - 1`.
///
/// Modalities 0-2 read the prompt factor, 3-5 the search factor and 6 the
/// information factor. A starts uniform with all-ones `pA`. `pB` puts base
/// concentration 1.0 on every no-action transition with a 0.1 bias toward
/// prompt persistence, search decay to state 0 and forward information
/// progression; controlled columns are one-hot.
pub fn build_default_model(dims: Option<Dims>) -> Result<(GenerativeModel, DirichletState)> {
    build_model_with(dims.unwrap_or_default(), &PreferenceSpec::default())
}

pub fn build_model_with(dims: Dims, prefs: &PreferenceSpec) -> Result<(GenerativeModel, DirichletState)> {
    dims.validate()?;
    let Dims {
        prompts,
        searches,
        info_levels,
        quality_levels,
    } = dims;
    let cards = [prompts, searches, info_levels];

    let a_deps = vec![
        vec![PROMPT],
        vec![PROMPT],
        vec![PROMPT],
        vec![SEARCH],
        vec![SEARCH],
        vec![SEARCH],
        vec![INFO],
    ];
    let obs_cards = [
        quality_levels,
        quality_levels,
        quality_levels,
        quality_levels,
        quality_levels,
        quality_levels,
        info_levels,
    ];
    let pa: Vec<Tensor> = a_deps
        .iter()
        .zip(obs_cards)
        .map(|(deps, n)| {
            let mut shape = vec![n];
            shape.extend(deps.iter().map(|&f| cards[f]));
            Tensor::filled(shape, BASE_CONCENTRATION)
        })
        .collect();

    let pb = vec![
        controlled_transition(prompts, |next, prev| next == prev),
        controlled_transition(searches, |next, _| next == 0),
        {
            let mut t = Tensor::filled(vec![info_levels, info_levels, 1], BASE_CONCENTRATION);
            for prev in 0..info_levels {
                let next = (prev + 1).min(info_levels - 1);
                t.set(&[next, prev, 0], BASE_CONCENTRATION + TRANSITION_BIAS);
            }
            t
        },
    ];

    let quality = LogPrefs::new(prefs.quality_curve(quality_levels))?;
    let mut c = vec![quality; 6];
    c.push(LogPrefs::new(prefs.info_curve(info_levels))?);

    let d = cards.iter().map(|&n| Categorical::uniform(n)).collect();
    let dirichlet = DirichletState::new(pa, pb);
    let (a, b) = normalize_dirichlet(&dirichlet)?;
    let model = GenerativeModel {
        a,
        b,
        c,
        d,
        a_deps,
        b_deps: vec![vec![PROMPT], vec![SEARCH], vec![INFO]],
    };
    Ok((model, dirichlet))
}

/// Concentrations for a factor with `card + 1` controls: control 0 is the
/// biased no-action mix, control `k` deterministically selects state `k - 1`.
fn controlled_transition(card: usize, biased: impl Fn(usize, usize) -> bool) -> Tensor {
    let mut t = Tensor::zeros(vec![card, card, card + 1]);
    for next in 0..card {
        for prev in 0..card {
            let bias = if biased(next, prev) { TRANSITION_BIAS } else { 0.0 };
            t.set(&[next, prev, 0], BASE_CONCENTRATION + bias);
            for ctrl in 1..=card {
                if next == ctrl - 1 {
                    t.set(&[next, prev, ctrl], BASE_CONCENTRATION);
                }
            }
        }
    }
    t
}
