//! Market instances: generators, the aggregate demand agent, the scenario
//! set and the market design, plus JSON ingestion and validation.
//!
//! Monetary values are in $/MWh, quantities in MWh. Instances are immutable
//! once validated and can be shared freely between concurrent solves.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the probability normalization.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    #[serde(deserialize_with = "de_probabilities")]
    pub pi: Vec<f64>,
    pub d_rt: Vec<f64>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.d_rt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_rt.is_empty()
    }

    pub fn uniform(d_rt: Vec<f64>) -> Self {
        let n = d_rt.len();
        ScenarioSet {
            pi: vec![1.0 / n as f64; n],
            d_rt,
        }
    }

    /// Probability-weighted mean of a per-scenario series.
    pub fn expect(&self, xs: &[f64]) -> f64 {
        self.pi.iter().zip(xs).map(|(p, x)| p * x).sum()
    }
}

/// Either an explicit probability vector or the keyword `"uniform"`, which
/// is expanded against the length of `d_rt` after parsing.
#[derive(Deserialize)]
#[serde(untagged)]
enum Probabilities {
    Explicit(Vec<f64>),
    Keyword(String),
}

fn de_probabilities<'de, D>(de: D) -> std::result::Result<Vec<f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    match Probabilities::deserialize(de)? {
        Probabilities::Explicit(v) => Ok(v),
        Probabilities::Keyword(k) if k == "uniform" => Ok(Vec::new()),
        Probabilities::Keyword(k) => Err(serde::de::Error::custom(format!(
            "unknown probability keyword {k:?}; expected an array or \"uniform\""
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Marginal production cost excluding fuel.
    pub c: f64,
    /// Advance (day-ahead) fuel cost.
    pub c_f: f64,
    /// Capacity.
    pub q: f64,
    /// Starting fuel position.
    #[serde(default)]
    pub f: f64,
    /// CVaR risk level; 1 is risk neutral.
    #[serde(default = "one")]
    pub alpha: f64,
    /// Intraday (spot) fuel cost per scenario.
    pub c_i: Vec<f64>,
    /// Fuel resale price per scenario.
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    #[serde(default = "one")]
    pub alpha: f64,
    /// When false the day-ahead bid d^DA is pinned to zero.
    #[serde(default = "yes")]
    pub participates_da: bool,
}

impl Default for DemandParams {
    fn default() -> Self {
        DemandParams {
            alpha: 1.0,
            participates_da: true,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarketDesign {
    /// Energy market only.
    Emo,
    /// Energy market with imbalance reserve: strike price `k`, forecast
    /// energy requirement `fer`.
    Emir { k: f64, fer: f64 },
    /// Energy market with a hard day-ahead load-forecast constraint.
    EmoLf { fer: f64 },
}

impl MarketDesign {
    pub fn name(&self) -> &'static str {
        match self {
            MarketDesign::Emo => "emo",
            MarketDesign::Emir { .. } => "emir",
            MarketDesign::EmoLf { .. } => "emo_lf",
        }
    }

    pub fn fer(&self) -> Option<f64> {
        match *self {
            MarketDesign::Emo => None,
            MarketDesign::Emir { fer, .. } | MarketDesign::EmoLf { fer } => Some(fer),
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match *self {
            MarketDesign::Emir { k, .. } => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for MarketDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MarketDesign::Emo => write!(f, "EMO"),
            MarketDesign::Emir { k, fer } => write!(f, "EMIR(K={k}, FER={fer})"),
            MarketDesign::EmoLf { fer } => write!(f, "EMO-LF(FER={fer})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub scenarios: ScenarioSet,
    pub generators: Vec<GeneratorParams>,
    #[serde(default)]
    pub demand: DemandParams,
    pub design: MarketDesign,
    /// Fixed day-ahead demand. Listed among the model parameters but used by
    /// no equilibrium condition; carried through files untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_da: Option<f64>,
}

/// One violated invariant, located by a JSON-style field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl MarketInstance {
    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.q).sum()
    }

    pub fn is_risk_neutral(&self) -> bool {
        self.demand.alpha == 1.0 && self.generators.iter().all(|g| g.alpha == 1.0)
    }

    pub fn with_design(&self, design: MarketDesign) -> Self {
        MarketInstance {
            design,
            ..self.clone()
        }
    }

    /// Sets the same risk level on every generator.
    pub fn with_generator_alpha(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.generators {
            g.alpha = alpha;
        }
        out
    }

    pub fn with_demand_alpha(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.demand.alpha = alpha;
        out
    }

    /// Parses an instance from JSON text and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut inst: MarketInstance = serde_json::from_str(text)?;
        if inst.scenarios.pi.is_empty() && !inst.scenarios.d_rt.is_empty() {
            let n = inst.scenarios.d_rt.len();
            inst.scenarios.pi = vec![1.0 / n as f64; n];
        }
        let violations = validate(&inst);
        if violations.is_empty() {
            Ok(inst)
        } else {
            Err(Error::Invalid(violations))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization is infallible")
    }
}

/// Reads and validates an instance file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<MarketInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    MarketInstance::from_json(&text)
}

pub fn save_instance(inst: &MarketInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, inst.to_json()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Checks every instance invariant; an empty list means the instance is valid.
pub fn validate(inst: &MarketInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let sc = &inst.scenarios;
    let n = sc.d_rt.len();

    if n == 0 {
        out.push(Violation::new("scenarios.d_rt", "at least one scenario is required"));
    }
    if sc.pi.len() != n {
        out.push(Violation::new(
            "scenarios.pi",
            format!("has {} entries but d_rt has {n}", sc.pi.len()),
        ));
    }
    for (s, &p) in sc.pi.iter().enumerate() {
        if !(p > 0.0) || !p.is_finite() {
            out.push(Violation::new(
                format!("scenarios.pi[{s}]"),
                format!("probability must be positive, got {p}"),
            ));
        }
    }
    let total: f64 = sc.pi.iter().sum();
    if !sc.pi.is_empty() && (total - 1.0).abs() > PROBABILITY_SUM_TOL {
        out.push(Violation::new(
            "scenarios.pi",
            format!("probabilities sum to {}", fmt_sum(total)),
        ));
    }
    for (s, &d) in sc.d_rt.iter().enumerate() {
        if !(d >= 0.0) || !d.is_finite() {
            out.push(Violation::new(
                format!("scenarios.d_rt[{s}]"),
                format!("real-time demand must be nonnegative, got {d}"),
            ));
        }
    }

    if inst.generators.is_empty() {
        out.push(Violation::new("generators", "at least one generator is required"));
    }
    for (i, g) in inst.generators.iter().enumerate() {
        let at = |field: &str| format!("generators[{i}].{field}");
        for (name, v) in [("c", g.c), ("c_f", g.c_f), ("q", g.q), ("f", g.f)] {
            if !v.is_finite() {
                out.push(Violation::new(at(name), format!("must be finite, got {v}")));
            }
        }
        if !(g.q > 0.0) {
            out.push(Violation::new(at("q"), format!("capacity must be positive, got {}", g.q)));
        }
        if !(g.f >= 0.0) {
            out.push(Violation::new(at("f"), format!("initial fuel must be nonnegative, got {}", g.f)));
        }
        if !(g.alpha > 0.0 && g.alpha <= 1.0) {
            out.push(Violation::new(
                at("alpha"),
                format!("risk level must lie in (0,1], got {}", g.alpha),
            ));
        }
        if g.c_i.len() != n {
            out.push(Violation::new(
                at("c_i"),
                format!("has {} entries, expected {n}", g.c_i.len()),
            ));
        }
        if g.r.len() != n {
            out.push(Violation::new(at("r"), format!("has {} entries, expected {n}", g.r.len())));
        }
        for (s, (&ci, &r)) in g.c_i.iter().zip(&g.r).enumerate() {
            if !ci.is_finite() || !r.is_finite() {
                out.push(Violation::new(at(&format!("c_i[{s}]")), "fuel prices must be finite"));
            } else if r > ci {
                out.push(Violation::new(
                    at(&format!("r[{s}]")),
                    format!("resale price {r} exceeds intraday fuel cost {ci}"),
                ));
            }
        }
        if g.r.len() == n && sc.pi.len() == n {
            let er = sc.expect(&g.r);
            if er > g.c_f {
                out.push(Violation::new(
                    at("c_f"),
                    format!("advance fuel cost {} below expected resale price {er}", g.c_f),
                ));
            }
        }
    }

    let a = inst.demand.alpha;
    if !(a > 0.0 && a <= 1.0) {
        out.push(Violation::new(
            "demand.alpha",
            format!("risk level must lie in (0,1], got {a}"),
        ));
    }

    let cap = inst.total_capacity();
    match inst.design {
        MarketDesign::Emo => {}
        MarketDesign::Emir { k, fer } => {
            if !(k >= 0.0) {
                out.push(Violation::new("design.k", format!("strike price must be nonnegative, got {k}")));
            }
            check_fer(fer, cap, &mut out);
        }
        MarketDesign::EmoLf { fer } => check_fer(fer, cap, &mut out),
    }

    let peak = sc.d_rt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !inst.generators.is_empty() && n > 0 && cap < peak {
        out.push(Violation::new(
            "generators",
            format!("total capacity {cap} below peak real-time demand {peak}"),
        ));
    }
    out
}

fn check_fer(fer: f64, cap: f64, out: &mut Vec<Violation>) {
    if !(fer >= 0.0) {
        out.push(Violation::new("design.fer", format!("FER must be nonnegative, got {fer}")));
    } else if cap < fer {
        out.push(Violation::new(
            "design.fer",
            format!("capacity below FER ({cap} < {fer})"),
        ));
    }
}

// Prints 1.2 rather than 1.2000000000000002 for the usual decimal inputs.
fn fmt_sum(x: f64) -> String {
    let rounded = (x * 1e9).round() / 1e9;
    format!("{rounded}")
}

/// Reference instances used throughout the tests and experiments.
pub mod presets {
    use super::*;

    /// One generator, two equally likely scenarios. Capacity and the resale
    /// price are not part of the published inputs; Q = 150 keeps both
    /// real-time scenarios feasible and R = 0 is the only value consistent
    /// with the published load-forecast solutions.
    pub fn single_generator(design: MarketDesign) -> MarketInstance {
        MarketInstance {
            scenarios: ScenarioSet {
                pi: vec![0.5, 0.5],
                d_rt: vec![75.0, 125.0],
            },
            generators: vec![GeneratorParams {
                c: 0.0,
                c_f: 13.0,
                q: 150.0,
                f: 0.0,
                alpha: 1.0,
                c_i: vec![10.0, 15.0],
                r: vec![0.0, 0.0],
            }],
            demand: DemandParams {
                alpha: 1.0,
                participates_da: false,
            },
            design,
            d_da: None,
        }
    }

    /// Two generators, five equally likely scenarios.
    pub fn two_generator(design: MarketDesign) -> MarketInstance {
        let gen = |c: f64| GeneratorParams {
            c,
            c_f: 50.0,
            q: 100.0,
            f: 0.0,
            alpha: 1.0,
            c_i: vec![15.0, 20.0, 30.0, 50.0, 100.0],
            r: vec![10.0; 5],
        };
        MarketInstance {
            scenarios: ScenarioSet {
                pi: vec![0.2; 5],
                d_rt: vec![50.0, 75.0, 100.0, 125.0, 150.0],
            },
            generators: vec![gen(0.0), gen(5.0)],
            demand: DemandParams::default(),
            design,
            d_da: None,
        }
    }
}
