//! Hyperparameter search: declarative spaces, random sampling, a
//! tree-structured Parzen estimator, and the three fixed-budget regimes
//! (defaults only / 20 random / 20 random + 80 TPE).

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            ParamValue::Text(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(i) => Some(*i),
            ParamValue::Float(f) if f.fract() == 0.0 => Some(*f as i64),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform([f64; 2]),
    LogUniform([f64; 2]),
    UniformInt([i64; 2]),
    Categorical(Vec<String>),
}

/// Conditional guard: the parameter is active only when `param` (declared
/// earlier in the space) equals `equals` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub param: String,
    pub equals: ParamValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub dist: Distribution,
    /// Required by the Default regime.
    #[serde(default)]
    pub default: Option<ParamValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Condition>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

pub type Assignment = BTreeMap<String, ParamValue>;

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<&str> = Vec::new();
        for p in &self.params {
            match &p.dist {
                Distribution::Uniform([a, b]) => {
                    if *a >= *b || !a.is_finite() || !b.is_finite() {
                        return Err(Error::InvalidBounds {
                            name: p.name.clone(),
                            low: *a,
                            high: *b,
                        });
                    }
                }
                Distribution::LogUniform([a, b]) => {
                    if !(*a > 0.0 && a < b) || !b.is_finite() {
                        return Err(Error::InvalidBounds {
                            name: p.name.clone(),
                            low: *a,
                            high: *b,
                        });
                    }
                }
                Distribution::UniformInt([a, b]) => {
                    if a >= b {
                        return Err(Error::InvalidBounds {
                            name: p.name.clone(),
                            low: *a as f64,
                            high: *b as f64,
                        });
                    }
                }
                Distribution::Categorical(values) => {
                    if values.is_empty() {
                        return Err(Error::EmptyCategorical(p.name.clone()));
                    }
                    let mut sorted = values.clone();
                    sorted.sort();
                    sorted.dedup();
                    if sorted.len() != values.len() {
                        return Err(Error::SchemaViolation {
                            path: p.name.clone(),
                            msg: "categorical values must be unique".into(),
                        });
                    }
                }
            }
            if let Some(cond) = &p.when {
                if !seen.contains(&cond.param.as_str()) {
                    return Err(Error::SchemaViolation {
                        path: p.name.clone(),
                        msg: format!(
                            "guard references {:?}, which is not declared earlier",
                            cond.param
                        ),
                    });
                }
            }
            if seen.contains(&p.name.as_str()) {
                return Err(Error::SchemaViolation {
                    path: p.name.clone(),
                    msg: "duplicate parameter name".into(),
                });
            }
            seen.push(&p.name);
        }
        Ok(())
    }

    fn active(&self, p: &ParamSpec, partial: &Assignment) -> bool {
        match &p.when {
            None => true,
            Some(c) => partial.get(&c.param) == Some(&c.equals),
        }
    }

    /// The assignment the Default regime evaluates: every active parameter's
    /// declared default.
    pub fn default_assignment(&self) -> Result<Assignment> {
        let mut a = Assignment::new();
        for p in &self.params {
            if !self.active(p, &a) {
                continue;
            }
            let v = p
                .default
                .clone()
                .ok_or_else(|| Error::MissingDefault(p.name.clone()))?;
            a.insert(p.name.clone(), v);
        }
        Ok(a)
    }

    /// Bounds + guard admissibility of a full assignment.
    pub fn check_assignment(&self, a: &Assignment) -> Result<()> {
        let mut expected = Assignment::new();
        for p in &self.params {
            let is_active = self.active(p, &expected);
            let got = a.get(&p.name);
            if !is_active {
                if got.is_some() {
                    return Err(Error::SchemaViolation {
                        path: p.name.clone(),
                        msg: "inactive parameter present".into(),
                    });
                }
                continue;
            }
            let v = got.ok_or_else(|| Error::SchemaViolation {
                path: p.name.clone(),
                msg: "active parameter missing".into(),
            })?;
            let ok = match (&p.dist, v) {
                (Distribution::Uniform([a_, b]), v) => v
                    .as_f64()
                    .is_some_and(|x| x >= *a_ && x <= *b),
                (Distribution::LogUniform([a_, b]), v) => v
                    .as_f64()
                    .is_some_and(|x| x >= *a_ && x <= *b),
                (Distribution::UniformInt([a_, b]), v) => {
                    v.as_i64().is_some_and(|x| x >= *a_ && x <= *b)
                }
                (Distribution::Categorical(values), ParamValue::Text(s)) => {
                    values.contains(s)
                }
                _ => false,
            };
            if !ok {
                return Err(Error::SchemaViolation {
                    path: p.name.clone(),
                    msg: format!("value {v} outside the declared distribution"),
                });
            }
            expected.insert(p.name.clone(), v.clone());
        }
        Ok(())
    }
}

/// Parses and validates a search-space JSON document.
pub fn parse_space(doc: &str) -> Result<SearchSpace> {
    let space: SearchSpace = serde_json::from_str(doc)?;
    space.validate()?;
    Ok(space)
}

fn sample_param(p: &ParamSpec, rng: &mut ChaCha8Rng) -> ParamValue {
    match &p.dist {
        Distribution::Uniform([a, b]) => {
            ParamValue::Float(a + rng.random::<f64>() * (b - a))
        }
        Distribution::LogUniform([a, b]) => {
            let (la, lb) = (a.ln(), b.ln());
            ParamValue::Float((la + rng.random::<f64>() * (lb - la)).exp())
        }
        Distribution::UniformInt([a, b]) => ParamValue::Int(rng.random_range(*a..=*b)),
        Distribution::Categorical(values) => {
            ParamValue::Text(values[rng.random_range(0..values.len())].clone())
        }
    }
}

/// Independent draw from every active parameter's distribution; inactive
/// conditional parameters are omitted.
pub fn sample_random(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Assignment {
    let mut a = Assignment::new();
    for p in &space.params {
        if space.active(p, &a) {
            let v = sample_param(p, rng);
            a.insert(p.name.clone(), v);
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Assignment,
    /// Minimize-oriented objective; present iff Complete.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    /// True for random draws (warmup/LightHPO), false for TPE proposals.
    pub random: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 20,
        }
    }
}

/// Parzen density over one numeric parameter in transformed space: one
/// Gaussian kernel per observation plus a full-range prior kernel.
struct ParzenDensity {
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl ParzenDensity {
    fn fit(observations: &[f64], lo: f64, hi: f64) -> ParzenDensity {
        let range = hi - lo;
        let n = observations.len();
        let bw = if n >= 2 {
            let mean = observations.iter().sum::<f64>() / n as f64;
            let var = observations
                .iter()
                .map(|x| (x - mean) * (x - mean))
                .sum::<f64>()
                / n as f64;
            // Silverman-style rule with a floor so degenerate sets keep mass
            (1.06 * var.sqrt() * (n as f64).powf(-0.2)).max(range * 1e-3)
        } else {
            range * 1e-3
        };
        let mut centers: Vec<f64> = observations.to_vec();
        let mut bandwidths = vec![bw; n];
        // prior kernel spanning the full range
        centers.push(lo + range / 2.0);
        bandwidths.push(range);
        ParzenDensity {
            centers,
            bandwidths,
            lo,
            hi,
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (c, bw) in self.centers.iter().zip(&self.bandwidths) {
            let z = (x - c) / bw;
            acc += (-0.5 * z * z).exp() / (bw * (2.0 * std::f64::consts::PI).sqrt());
        }
        (acc / self.centers.len() as f64).max(1e-300).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let i = rng.random_range(0..self.centers.len());
        // Box–Muller standard normal
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        (self.centers[i] + z * self.bandwidths[i]).clamp(self.lo, self.hi)
    }
}

/// Add-one-smoothed categorical frequencies.
struct CategoricalDensity {
    probs: Vec<f64>,
}

impl CategoricalDensity {
    fn fit(values: &[String], observed: &[String]) -> CategoricalDensity {
        let total = observed.len() + values.len();
        let probs = values
            .iter()
            .map(|v| {
                let count = observed.iter().filter(|o| *o == v).count();
                (count + 1) as f64 / total as f64
            })
            .collect();
        CategoricalDensity { probs }
    }

    fn log_density(&self, idx: usize) -> f64 {
        self.probs[idx].ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

enum ParamDensity {
    Numeric { good: ParzenDensity, bad: ParzenDensity },
    Cat { good: CategoricalDensity, bad: CategoricalDensity, values: Vec<String> },
}

fn transform(dist: &Distribution, v: &ParamValue) -> Option<f64> {
    match dist {
        Distribution::Uniform(_) => v.as_f64(),
        Distribution::LogUniform(_) => v.as_f64().map(f64::ln),
        Distribution::UniformInt(_) => v.as_f64(),
        Distribution::Categorical(_) => None,
    }
}

fn numeric_bounds(dist: &Distribution) -> (f64, f64) {
    match dist {
        Distribution::Uniform([a, b]) => (*a, *b),
        Distribution::LogUniform([a, b]) => (a.ln(), b.ln()),
        Distribution::UniformInt([a, b]) => (*a as f64, *b as f64),
        Distribution::Categorical(_) => unreachable!(),
    }
}

fn untransform(dist: &Distribution, x: f64) -> ParamValue {
    match dist {
        Distribution::Uniform([a, b]) => ParamValue::Float(x.clamp(*a, *b)),
        Distribution::LogUniform([a, b]) => ParamValue::Float(x.exp().clamp(*a, *b)),
        Distribution::UniformInt([a, b]) => {
            ParamValue::Int((x.round() as i64).clamp(*a, *b))
        }
        Distribution::Categorical(_) => unreachable!(),
    }
}

/// TPE proposal: splits the complete history at the ⌈γ·n⌉ best trials,
/// models per-parameter good/bad densities, draws `n_candidates` joint
/// samples from the good densities, and returns the candidate maximizing
/// Σ log ℓ_good − log ℓ_bad. Falls back to a pure random draw until
/// `n_startup` complete trials exist.
pub fn tpe_suggest(
    space: &SearchSpace,
    history: &[Trial],
    rng: &mut ChaCha8Rng,
    cfg: &TpeConfig,
) -> Result<Assignment> {
    if space.params.is_empty() {
        return Err(Error::EmptySpace);
    }
    let mut complete: Vec<&Trial> = history
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .collect();
    if complete.len() < cfg.n_startup {
        return Ok(sample_random(space, rng));
    }
    // stable (objective, index) order keeps all-equal histories deterministic
    complete.sort_by(|a, b| {
        a.objective
            .unwrap()
            .total_cmp(&b.objective.unwrap())
            .then(a.index.cmp(&b.index))
    });
    let n_good = ((cfg.gamma * complete.len() as f64).ceil() as usize)
        .clamp(1, complete.len() - 1);
    let (good, bad) = complete.split_at(n_good);

    let densities: Vec<ParamDensity> = space
        .params
        .iter()
        .map(|p| match &p.dist {
            Distribution::Categorical(values) => {
                let collect = |set: &[&Trial]| -> Vec<String> {
                    set.iter()
                        .filter_map(|t| t.params.get(&p.name))
                        .filter_map(|v| v.as_text().map(str::to_string))
                        .collect()
                };
                ParamDensity::Cat {
                    good: CategoricalDensity::fit(values, &collect(good)),
                    bad: CategoricalDensity::fit(values, &collect(bad)),
                    values: values.clone(),
                }
            }
            dist => {
                let (lo, hi) = numeric_bounds(dist);
                let collect = |set: &[&Trial]| -> Vec<f64> {
                    set.iter()
                        .filter_map(|t| t.params.get(&p.name))
                        .filter_map(|v| transform(dist, v))
                        .collect()
                };
                ParamDensity::Numeric {
                    good: ParzenDensity::fit(&collect(good), lo, hi),
                    bad: ParzenDensity::fit(&collect(bad), lo, hi),
                }
            }
        })
        .collect();

    let mut best: Option<(f64, Assignment)> = None;
    for _ in 0..cfg.n_candidates {
        let mut assignment = Assignment::new();
        let mut score = 0.0;
        for (p, density) in space.params.iter().zip(&densities) {
            if !space.active(p, &assignment) {
                continue;
            }
            match density {
                ParamDensity::Numeric { good, bad } => {
                    let x = good.sample(rng);
                    score += good.log_density(x) - bad.log_density(x);
                    assignment.insert(p.name.clone(), untransform(&p.dist, x));
                }
                ParamDensity::Cat { good, bad, values } => {
                    let i = good.sample(rng);
                    score += good.log_density(i) - bad.log_density(i);
                    assignment.insert(p.name.clone(), ParamValue::Text(values[i].clone()));
                }
            }
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, assignment));
        }
    }
    Ok(best.expect("n_candidates >= 1").1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Default,
    LightHpo,
    ExtensiveHpo,
}

impl Regime {
    pub fn budget(&self) -> usize {
        match self {
            Regime::Default => 1,
            Regime::LightHpo => 20,
            Regime::ExtensiveHpo => 100,
        }
    }

    /// Trials drawn randomly before TPE takes over.
    pub fn n_random(&self) -> usize {
        match self {
            Regime::Default => 1,
            Regime::LightHpo => 20,
            Regime::ExtensiveHpo => 20,
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Default => write!(f, "default"),
            Regime::LightHpo => write!(f, "light_hpo"),
            Regime::ExtensiveHpo => write!(f, "extensive_hpo"),
        }
    }
}

/// Runs a full search regime. The objective is minimize-oriented; `None` or
/// a non-finite value marks the trial Failed (it still consumes budget).
/// Returns the best assignment (lowest objective, ties to the earliest
/// trial) and the complete history.
pub fn run_regime(
    regime: Regime,
    space: &SearchSpace,
    mut objective: impl FnMut(&Assignment) -> Option<f64>,
    master_seed: u64,
) -> Result<(Assignment, Vec<Trial>)> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let tpe_cfg = TpeConfig::default();
    let mut history: Vec<Trial> = Vec::new();
    for index in 0..regime.budget() {
        let (params, random) = if regime == Regime::Default {
            // Defaults are evaluated verbatim: a default may sit outside the
            // search distribution (e.g. a no-regularization default of 0
            // beside a log-scaled search range).
            (space.default_assignment()?, false)
        } else {
            let (params, random) = if index < regime.n_random() {
                (sample_random(space, &mut rng), true)
            } else {
                (tpe_suggest(space, &history, &mut rng, &tpe_cfg)?, false)
            };
            space.check_assignment(&params)?;
            (params, random)
        };
        let value = objective(&params).filter(|v| v.is_finite());
        history.push(Trial {
            index,
            params,
            objective: value,
            status: if value.is_some() {
                TrialStatus::Complete
            } else {
                TrialStatus::Failed
            },
            random,
        });
    }
    let best = history
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .min_by(|a, b| {
            a.objective
                .unwrap()
                .total_cmp(&b.objective.unwrap())
                .then(a.index.cmp(&b.index))
        })
        .ok_or(Error::AllTrialsFailed)?;
    Ok((best.params.clone(), history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> SearchSpace {
        parse_space(
            r#"{"params": [
                {"name": "x", "dist": {"uniform": [0.0, 1.0]}, "default": 0.5},
                {"name": "y", "dist": {"uniform": [0.0, 1.0]}, "default": 0.5}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parse_validates_bounds() {
        assert!(matches!(
            parse_space(r#"{"params": [{"name": "a", "dist": {"log_uniform": [0.0, 1.0]}}]}"#),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            parse_space(r#"{"params": [{"name": "a", "dist": {"categorical": []}}]}"#),
            Err(Error::EmptyCategorical(_))
        ));
        assert!(parse_space(
            r#"{"params": [{"name": "a", "dist": {"log_uniform": [0.001, 0.7]}}]}"#
        )
        .is_ok());
    }

    #[test]
    fn guard_must_reference_earlier_param() {
        let doc = r#"{"params": [
            {"name": "a", "dist": {"uniform": [0, 1]}, "when": {"param": "b", "equals": "x"}},
            {"name": "b", "dist": {"categorical": ["x", "y"]}}
        ]}"#;
        assert!(matches!(
            parse_space(doc),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn uniform_draw_statistics() {
        let space = parse_space(
            r#"{"params": [{"name": "u", "dist": {"uniform": [0.0, 1.0]}}]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            sum += sample_random(&space, &mut rng)["u"].as_f64().unwrap();
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn log_uniform_and_int_draws_within_bounds() {
        let space = parse_space(
            r#"{"params": [
                {"name": "lr", "dist": {"log_uniform": [0.001, 0.7]}},
                {"name": "depth", "dist": {"uniform_int": [1, 11]}}
            ]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen_low = false;
        let mut seen_high = false;
        for _ in 0..10_000 {
            let a = sample_random(&space, &mut rng);
            let lr = a["lr"].as_f64().unwrap();
            let d = a["depth"].as_i64().unwrap();
            assert!((0.001..=0.7).contains(&lr));
            assert!((1..=11).contains(&d));
            seen_low |= d == 1;
            seen_high |= d == 11;
        }
        assert!(seen_low && seen_high, "inclusive int bounds never drawn");
    }

    #[test]
    fn fixed_seed_reproduces_draws() {
        let space = unit_square();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_random(&space, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn conditional_params_omitted_when_inactive() {
        let space = parse_space(
            r#"{"params": [
                {"name": "kind", "dist": {"categorical": ["plain", "fancy"]}, "default": "plain"},
                {"name": "knob", "dist": {"uniform": [0, 1]}, "default": 0.5,
                 "when": {"param": "kind", "equals": "fancy"}}
            ]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = sample_random(&space, &mut rng);
            assert_eq!(a.contains_key("knob"), a["kind"] == ParamValue::Text("fancy".into()));
            space.check_assignment(&a).unwrap();
        }
        // defaults: kind=plain → knob inactive → omitted
        let d = space.default_assignment().unwrap();
        assert!(!d.contains_key("knob"));
    }

    #[test]
    fn default_regime_requires_defaults() {
        let space = parse_space(
            r#"{"params": [{"name": "x", "dist": {"uniform": [0, 1]}}]}"#,
        )
        .unwrap();
        assert!(matches!(
            run_regime(Regime::Default, &space, |_| Some(0.0), 0),
            Err(Error::MissingDefault(_))
        ));
    }

    #[test]
    fn default_regime_accepts_defaults_outside_the_search_support() {
        // A no-regularization default of 0 beside a log-scaled search range
        // is a legitimate configuration; only sampled trials are bound to
        // the distribution.
        let space = parse_space(
            r#"{"params": [
                {"name": "reg", "dist": {"log_uniform": [1e-8, 100.0]}, "default": 0.0}
            ]}"#,
        )
        .unwrap();
        let (best, hist) =
            run_regime(Regime::Default, &space, |a| a["reg"].as_f64(), 0).unwrap();
        assert_eq!(hist.len(), 1);
        assert_eq!(best["reg"].as_f64(), Some(0.0));
        let (_, hist) =
            run_regime(Regime::LightHpo, &space, |a| a["reg"].as_f64(), 0).unwrap();
        for t in &hist {
            let v = t.params["reg"].as_f64().unwrap();
            assert!((1e-8..=100.0).contains(&v), "sampled {v} out of bounds");
        }
    }

    #[test]
    fn regime_budgets_exact() {
        let space = unit_square();
        let obj = |a: &Assignment| {
            let x = a["x"].as_f64().unwrap();
            let y = a["y"].as_f64().unwrap();
            Some((x - 0.2) * (x - 0.2) + (y - 0.7) * (y - 0.7))
        };
        let (_, h) = run_regime(Regime::Default, &space, obj, 0).unwrap();
        assert_eq!(h.len(), 1);
        let (_, h) = run_regime(Regime::LightHpo, &space, obj, 0).unwrap();
        assert_eq!(h.len(), 20);
        assert!(h.iter().all(|t| t.random));
        let (_, h) = run_regime(Regime::ExtensiveHpo, &space, obj, 0).unwrap();
        assert_eq!(h.len(), 100);
        assert!(h[..20].iter().all(|t| t.random));
        assert!(h[20..].iter().all(|t| !t.random));
    }

    #[test]
    fn failed_trials_consume_budget() {
        let space = unit_square();
        let mut calls = 0usize;
        let (_, h) = run_regime(
            Regime::LightHpo,
            &space,
            |_| {
                calls += 1;
                if calls.is_multiple_of(2) {
                    None
                } else {
                    Some(calls as f64)
                }
            },
            0,
        )
        .unwrap();
        assert_eq!(h.len(), 20);
        assert_eq!(
            h.iter().filter(|t| t.status == TrialStatus::Failed).count(),
            10
        );
    }

    #[test]
    fn all_failed_reported() {
        let space = unit_square();
        assert!(matches!(
            run_regime(Regime::LightHpo, &space, |_| None, 0),
            Err(Error::AllTrialsFailed)
        ));
    }

    #[test]
    fn best_ties_resolve_to_earliest_trial() {
        let space = unit_square();
        let (best, h) = run_regime(Regime::LightHpo, &space, |_| Some(1.0), 5).unwrap();
        assert_eq!(best, h[0].params);
    }

    #[test]
    fn startup_fallback_matches_random_sampling() {
        let space = unit_square();
        let history: Vec<Trial> = (0..5)
            .map(|i| Trial {
                index: i,
                params: Assignment::new(),
                objective: Some(i as f64),
                status: TrialStatus::Complete,
                random: true,
            })
            .collect();
        let mut rng_a = ChaCha8Rng::seed_from_u64(11);
        let mut rng_b = ChaCha8Rng::seed_from_u64(11);
        let a = tpe_suggest(&space, &history, &mut rng_a, &TpeConfig::default()).unwrap();
        let b = sample_random(&space, &mut rng_b);
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_equal_objectives_stay_in_bounds() {
        let space = unit_square();
        let history: Vec<Trial> = (0..40)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                Trial {
                    index: i,
                    params: sample_random(&space, &mut rng),
                    objective: Some(1.0),
                    status: TrialStatus::Complete,
                    random: true,
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = tpe_suggest(&space, &history, &mut rng, &TpeConfig::default()).unwrap();
        space.check_assignment(&a).unwrap();
    }

    #[test]
    fn tpe_concentrates_near_optimum() {
        // objective (x − 0.8)²: TPE suggestions should sit closer to 0.8
        // than the median random draw, across seeds
        let space = parse_space(
            r#"{"params": [{"name": "x", "dist": {"uniform": [0.0, 1.0]}}]}"#,
        )
        .unwrap();
        let mut tpe_wins = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let history: Vec<Trial> = (0..40)
                .map(|i| {
                    let params = sample_random(&space, &mut rng);
                    let x = params["x"].as_f64().unwrap();
                    Trial {
                        index: i,
                        params,
                        objective: Some((x - 0.8) * (x - 0.8)),
                        status: TrialStatus::Complete,
                        random: true,
                    }
                })
                .collect();
            let suggestion =
                tpe_suggest(&space, &history, &mut rng, &TpeConfig::default()).unwrap();
            let sx = suggestion["x"].as_f64().unwrap();
            // median |x − 0.8| of a uniform draw is ~0.25
            if (sx - 0.8).abs() < 0.25 {
                tpe_wins += 1;
            }
        }
        assert!(tpe_wins >= 16, "TPE concentrated in only {tpe_wins}/20 seeds");
    }

    #[test]
    fn tpe_admissible_on_every_trial_with_conditionals() {
        let space = parse_space(
            r#"{"params": [
                {"name": "kind", "dist": {"categorical": ["a", "b"]}, "default": "a"},
                {"name": "depth", "dist": {"uniform_int": [1, 11]}, "default": 3},
                {"name": "knob", "dist": {"log_uniform": [0.01, 10.0]}, "default": 1.0,
                 "when": {"param": "kind", "equals": "b"}}
            ]}"#,
        )
        .unwrap();
        let obj = |a: &Assignment| {
            let d = a["depth"].as_i64().unwrap() as f64;
            Some(d + if a.contains_key("knob") { 0.0 } else { 1.0 })
        };
        let (_, h) = run_regime(Regime::ExtensiveHpo, &space, obj, 4).unwrap();
        for t in &h {
            space.check_assignment(&t.params).unwrap();
        }
        assert_eq!(h.len(), 100);
    }
}
