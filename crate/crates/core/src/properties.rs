//! Executable checks of the structural results for risk-neutral markets,
//! run on single solutions or on batches of seeded random instances.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::market::{validate, DemandParams, GeneratorParams, MarketDesign, MarketInstance, ScenarioSet};
use crate::model::{assemble_risk_neutral, transform_emir_to_emo, MarketModel, RiskForm};
use crate::oracle::solve_welfare_lp;
use crate::solver::{multistart, solve_model, SolveOptions, SolveReport};
use crate::{Error, Result};

/// Threshold for "dispatched", "positive award" and similar zero tests.
pub const ZERO_TOL: f64 = 1e-7;
/// Margin applied to strict inequalities in lemma hypotheses.
pub const HYPOTHESIS_MARGIN: f64 = 1e-9;
/// Largest acceptable spread of a price across restarts.
pub const PRICE_SPREAD_TOL: f64 = 1e-6;
/// Complementarity error required of a transformed solution.
pub const TRANSFORM_TOL: f64 = 1e-8;
/// Marginal-price agreement.
pub const MARGINAL_PRICE_TOL: f64 = 1e-6;
/// Welfare-LP versus equilibrium prices.
pub const ORACLE_PRICE_TOL: f64 = 1e-7;
/// Welfare-LP versus equilibrium expected cost, relative.
pub const ORACLE_COST_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyId {
    /// Zero reserve price and zero awards with total capacity above FER.
    ReservePriceZero,
    /// Reserve equilibria map onto energy-only equilibria.
    ReserveToEnergyOnly,
    /// Prices agree across multiple equilibria.
    UniquePrices,
    /// No advance fuel when spot fuel is cheaper in expectation.
    CheapSpotFuel,
    /// No advance fuel when real-time margins cannot recover it.
    LowMarginFuel,
    /// Real-time prices equal the marginal unit's production plus spot fuel cost.
    MarginalPricing,
    /// Equilibrium prices and cost equal the expected-cost LP's.
    WelfareEquivalence,
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PropertyId::ReservePriceZero => "reserve_price_zero",
            PropertyId::ReserveToEnergyOnly => "reserve_to_energy_only",
            PropertyId::UniquePrices => "unique_prices",
            PropertyId::CheapSpotFuel => "cheap_spot_fuel",
            PropertyId::LowMarginFuel => "low_margin_fuel",
            PropertyId::MarginalPricing => "marginal_pricing",
            PropertyId::WelfareEquivalence => "welfare_equivalence",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The solver did not deliver a point to check.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheckResult {
    pub property: PropertyId,
    pub instance: String,
    /// Seed that regenerates the instance via [`random_instance`], if it was random.
    pub seed: Option<u64>,
    pub verdict: Verdict,
    pub witnesses: Vec<Witness>,
    /// One line per violated assertion.
    pub violations: Vec<String>,
}

impl PropertyCheckResult {
    fn new(property: PropertyId, inst: &MarketInstance) -> Self {
        PropertyCheckResult {
            property,
            instance: describe(inst),
            seed: None,
            verdict: Verdict::Pass,
            witnesses: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn inconclusive(property: PropertyId, inst: &MarketInstance, report: &SolveReport) -> Self {
        let mut r = Self::new(property, inst);
        r.verdict = Verdict::Inconclusive;
        r.witness("solver_error", report.error);
        r
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    fn witness(&mut self, name: impl Into<String>, value: f64) {
        self.witnesses.push(Witness {
            name: name.into(),
            value,
        });
    }

    fn require(&mut self, ok: bool, message: impl FnOnce() -> String) {
        if !ok {
            self.verdict = Verdict::Fail;
            self.violations.push(message());
        }
    }

    fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

impl fmt::Display for PropertyCheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?} on {}", self.property, self.verdict, self.instance)?;
        if let Some(seed) = self.seed {
            write!(f, " (seed {seed})")?;
        }
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

fn describe(inst: &MarketInstance) -> String {
    format!(
        "I={} S={} {}",
        inst.num_generators(),
        inst.num_scenarios(),
        inst.design
    )
}

/// A random risk-neutral EMIR instance with up to three generators and five
/// scenarios. Total capacity exceeds both the peak demand and FER, resale
/// prices stay below every spot fuel price, and the strike price lies below
/// the largest real-time price of the expected-cost dispatch so the reserve
/// close-out is not identically zero.
pub fn random_instance(seed: u64) -> MarketInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ni = rng.gen_range(1..=3);
    let ns = rng.gen_range(2..=5);
    let weights: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut pi: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let head: f64 = pi[..ns - 1].iter().sum();
    pi[ns - 1] = 1.0 - head;

    let generators: Vec<GeneratorParams> = (0..ni)
        .map(|_| {
            let c_i: Vec<f64> = (0..ns).map(|_| rng.gen_range(5.0..100.0)).collect();
            let spot_floor = c_i.iter().cloned().fold(f64::INFINITY, f64::min);
            let r: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.0..0.9) * spot_floor).collect();
            let expected_spot: f64 = pi.iter().zip(&c_i).map(|(p, c)| p * c).sum();
            let expected_resale: f64 = pi.iter().zip(&r).map(|(p, x)| p * x).sum();
            let c_f = (expected_spot * rng.gen_range(0.6..1.4)).max(expected_resale + 1.0);
            GeneratorParams {
                c: rng.gen_range(0.0..30.0),
                c_f,
                q: rng.gen_range(50.0..150.0),
                f: 0.0,
                alpha: 1.0,
                c_i,
                r,
            }
        })
        .collect();
    let cap: f64 = generators.iter().map(|g| g.q).sum();
    let d_rt: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.1..0.95) * cap).collect();
    let fer = rng.gen_range(0.2..0.9) * cap;
    let strike_share = rng.gen_range(0.0..0.95);

    let mut inst = MarketInstance {
        scenarios: ScenarioSet { pi, d_rt },
        generators,
        demand: DemandParams::default(),
        design: MarketDesign::Emir { k: 0.0, fer },
        d_da: None,
    };
    let peak_price = solve_welfare_lp(&inst)
        .map(|w| w.lam_rt.iter().cloned().fold(0.0, f64::max))
        .unwrap_or(0.0);
    inst.design = MarketDesign::Emir {
        k: strike_share * peak_price,
        fer,
    };
    debug_assert!(validate(&inst).is_empty(), "{:?}", validate(&inst));
    inst
}

/// Expected reserve close-out per MWh, `E[(lam_rt - K)^+]`.
fn expected_closeout(model: &MarketModel, z: &[f64], k: f64) -> f64 {
    let v = model.view(z);
    let pi = &model.instance().scenarios.pi;
    (0..pi.len()).map(|s| pi[s] * (v.lam_rt(s) - k).max(0.0)).sum()
}

/// Reserve price and awards of a risk-neutral EMIR equilibrium: the price
/// is zero, and awards vanish when the expected close-out is positive.
pub fn check_prop1(inst: &MarketInstance, opts: &SolveOptions) -> Result<PropertyCheckResult> {
    let MarketDesign::Emir { k, fer } = inst.design else {
        return Err(Error::DesignMismatch {
            expected: "emir",
            found: inst.design.name(),
        });
    };
    if !(inst.total_capacity() > fer) {
        return Err(Error::Precondition("total capacity must exceed FER".into()));
    }
    let model = assemble_risk_neutral(inst)?;
    let report = solve_model(&model, opts)?;
    if !report.converged() {
        return Ok(PropertyCheckResult::inconclusive(PropertyId::ReservePriceZero, inst, &report));
    }
    let z = &report.point;
    let v = model.view(z);
    let mut out = PropertyCheckResult::new(PropertyId::ReservePriceZero, inst);
    let rho = v.rho();
    out.witness("rho", rho);
    out.require(rho.abs() <= ZERO_TOL, || format!("rho = {rho:e}"));
    let closeout = expected_closeout(&model, z, k);
    out.witness("expected_closeout", closeout);
    if closeout > HYPOTHESIS_MARGIN {
        for i in 0..inst.num_generators() {
            let e = v.e(i);
            out.witness(format!("e[{}]", i + 1), e);
            out.require(e <= ZERO_TOL, || format!("e[{}] = {e:e} with positive close-out", i + 1));
        }
    }
    Ok(out)
}

/// Maps an EMIR solution to the energy-only market and checks that it
/// solves that system with fuel positions and net day-ahead supply intact.
pub fn check_cor1(model: &MarketModel, z: &[f64]) -> Result<PropertyCheckResult> {
    let inst = model.instance();
    let (emo, w) = transform_emir_to_emo(model, z)?;
    let mut out = PropertyCheckResult::new(PropertyId::ReserveToEnergyOnly, inst);
    let err = emo.system().complementarity_error(&w)?;
    out.witness("energy_only_error", err);
    out.require(err <= TRANSFORM_TOL, || format!("complementarity error {err:e}"));

    let (src, dst) = (model.view(z), emo.view(&w));
    let mut fuel_shift: f64 = 0.0;
    for i in 0..inst.num_generators() {
        fuel_shift = fuel_shift.max((src.v_da(i) - dst.v_da(i)).abs());
        for s in 0..inst.num_scenarios() {
            fuel_shift = fuel_shift.max((src.v_rt(i, s) - dst.v_rt(i, s)).abs());
        }
    }
    out.witness("fuel_shift", fuel_shift);
    out.require(fuel_shift == 0.0, || format!("fuel positions moved by {fuel_shift:e}"));

    let net = |v: &crate::model::EquilibriumView| v.total_g_da() + v.a() - v.b();
    let procurement_shift = (net(&src) - net(&dst)).abs();
    out.witness("procurement_shift", procurement_shift);
    out.require(procurement_shift <= 1e-9 * (1.0 + net(&dst).abs()), || {
        format!("net day-ahead supply moved by {procurement_shift:e}")
    });
    Ok(out)
}

/// Spread of each price across converged restarts: `lam_da`, every
/// `lam_rt`, and `rho` or `lam_lf`. Quantities are not compared.
pub fn check_prop2(
    inst: &MarketInstance,
    opts: &SolveOptions,
    restarts: usize,
) -> Result<PropertyCheckResult> {
    let model = MarketModel::assemble(
        inst,
        if inst.is_risk_neutral() { RiskForm::Neutral } else { RiskForm::Cvar },
    )?;
    let runs = multistart(&model, opts, restarts);
    let points: Vec<&Vec<f64>> = runs.iter().filter(|r| r.converged()).map(|r| &r.point).collect();
    if points.len() < 2 {
        return Err(Error::Precondition(format!(
            "{} of {restarts} restarts converged; at least 2 are needed",
            points.len()
        )));
    }
    let prices = |z: &[f64]| -> Vec<(String, f64)> {
        let v = model.view(z);
        let mut p = vec![("lam_da".to_string(), v.lam_da())];
        for s in 0..inst.num_scenarios() {
            p.push((format!("lam_rt[{}]", s + 1), v.lam_rt(s)));
        }
        match inst.design {
            MarketDesign::Emir { .. } => p.push(("rho".into(), v.rho())),
            MarketDesign::EmoLf { .. } => p.push(("lam_lf".into(), v.lam_lf())),
            MarketDesign::Emo => {}
        }
        p
    };
    let all: Vec<Vec<(String, f64)>> = points.iter().map(|z| prices(z)).collect();
    let mut out = PropertyCheckResult::new(PropertyId::UniquePrices, inst);
    out.witness("converged_restarts", points.len() as f64);
    for (k, (name, _)) in all[0].iter().enumerate() {
        let lo = all.iter().map(|p| p[k].1).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(|p| p[k].1).fold(f64::NEG_INFINITY, f64::max);
        let spread = hi - lo;
        out.witness(format!("spread {name}"), spread);
        out.require(spread <= PRICE_SPREAD_TOL, || format!("{name} ranges over [{lo}, {hi}]"));
    }
    Ok(out)
}

/// Generators whose expected spot fuel cost is below the advance cost buy
/// no advance fuel, in the given design and in the energy-only market.
pub fn check_lemma1(inst: &MarketInstance, opts: &SolveOptions) -> Result<PropertyCheckResult> {
    if !inst.is_risk_neutral() {
        return Err(Error::Precondition("needs every risk level equal to 1".into()));
    }
    let mut designs = vec![inst.design];
    if inst.design != MarketDesign::Emo {
        designs.push(MarketDesign::Emo);
    }
    let mut out = PropertyCheckResult::new(PropertyId::CheapSpotFuel, inst);
    let pi = &inst.scenarios.pi;
    let cheap: Vec<usize> = (0..inst.num_generators())
        .filter(|&i| {
            let g = &inst.generators[i];
            inst.scenarios.expect(&g.c_i) < g.c_f - HYPOTHESIS_MARGIN
        })
        .collect();
    out.witness("generators_in_scope", cheap.len() as f64);
    if cheap.is_empty() {
        return Ok(out);
    }
    debug_assert_eq!(pi.len(), inst.num_scenarios());
    for design in designs {
        let model = assemble_risk_neutral(&inst.with_design(design))?;
        let report = solve_model(&model, opts)?;
        if !report.converged() {
            return Ok(PropertyCheckResult::inconclusive(PropertyId::CheapSpotFuel, inst, &report));
        }
        let v = model.view(&report.point);
        for &i in &cheap {
            let x = v.v_da(i);
            out.witness(format!("{} v_da[{}]", design.name(), i + 1), x);
            out.require(x <= ZERO_TOL, || format!("{design}: v_da[{}] = {x:e}", i + 1));
        }
    }
    Ok(out)
}

/// With the dispatch set read from the solution, a generator whose advance
/// fuel cost exceeds resale value where idle plus real-time margin where
/// dispatched, and does not exceed the expected spot cost, buys no advance
/// fuel.
pub fn check_lemma2(model: &MarketModel, z: &[f64]) -> Result<PropertyCheckResult> {
    let inst = model.instance();
    if !inst.is_risk_neutral() {
        return Err(Error::Precondition("needs every risk level equal to 1".into()));
    }
    let v = model.view(z);
    let pi = &inst.scenarios.pi;
    let mut out = PropertyCheckResult::new(PropertyId::LowMarginFuel, inst);
    let mut in_scope = 0;
    for (i, g) in inst.generators.iter().enumerate() {
        let bound: f64 = (0..pi.len())
            .map(|s| {
                if v.g_rt(i, s) > ZERO_TOL {
                    pi[s] * (v.lam_rt(s) - g.c)
                } else {
                    pi[s] * g.r[s]
                }
            })
            .sum();
        let spot = inst.scenarios.expect(&g.c_i);
        if spot >= g.c_f && g.c_f > bound + HYPOTHESIS_MARGIN {
            in_scope += 1;
            let x = v.v_da(i);
            out.witness(format!("v_da[{}]", i + 1), x);
            out.require(x <= ZERO_TOL, || {
                format!("v_da[{}] = {x:e} with C^F {} above recoverable {bound}", i + 1, g.c_f)
            });
        }
    }
    out.witness("generators_in_scope", in_scope as f64);
    Ok(out)
}

/// In each scenario with a generator strictly inside its capacity range
/// that buys spot fuel, the real-time price equals that generator's
/// production plus spot fuel cost.
pub fn check_marginal_pricing(model: &MarketModel, z: &[f64]) -> Result<PropertyCheckResult> {
    let inst = model.instance();
    if !inst.is_risk_neutral() {
        return Err(Error::Precondition("needs every risk level equal to 1".into()));
    }
    let v = model.view(z);
    let mut out = PropertyCheckResult::new(PropertyId::MarginalPricing, inst);
    let mut in_scope = 0;
    for s in 0..inst.num_scenarios() {
        for (i, g) in inst.generators.iter().enumerate() {
            let x = v.g_rt(i, s);
            if x > ZERO_TOL && x < g.q - ZERO_TOL && v.v_rt(i, s) > ZERO_TOL {
                in_scope += 1;
                let expected = g.c + g.c_i[s];
                let lam = v.lam_rt(s);
                out.witness(format!("lam_rt[{}] - marginal[{}]", s + 1, i + 1), lam - expected);
                out.require((lam - expected).abs() <= MARGINAL_PRICE_TOL, || {
                    format!("scenario {}: lam_rt = {lam}, generator {} marginal cost {expected}", s + 1, i + 1)
                });
            }
        }
    }
    out.witness("marginal_units", in_scope as f64);
    Ok(out)
}

/// Real-time prices and expected cost of a risk-neutral equilibrium against
/// the expected-cost dispatch LP.
pub fn check_oracle_equivalence(model: &MarketModel, z: &[f64]) -> Result<PropertyCheckResult> {
    let inst = model.instance();
    let lp = solve_welfare_lp(inst)?;
    let v = model.view(z);
    let mut out = PropertyCheckResult::new(PropertyId::WelfareEquivalence, inst);
    let mut worst: f64 = (v.lam_da() - lp.lam_da).abs();
    for s in 0..inst.num_scenarios() {
        worst = worst.max((v.lam_rt(s) - lp.lam_rt[s]).abs());
    }
    out.witness("max_price_gap", worst);
    out.require(worst <= ORACLE_PRICE_TOL, || {
        format!("prices {:?} vs LP {:?}", v.lam_rt_all(), lp.lam_rt)
    });
    let cost = v.expected_cost();
    let rel = (cost - lp.expected_cost).abs() / lp.expected_cost.abs().max(1.0);
    out.witness("relative_cost_gap", rel);
    out.require(rel <= ORACLE_COST_RTOL, || {
        format!("expected cost {cost} vs LP {}", lp.expected_cost)
    });
    Ok(out)
}

/// Solve-and-check entry points usable in seeded batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    ReservePriceZero,
    ReserveToEnergyOnly,
    CheapSpotFuel,
    LowMarginFuel,
    MarginalPricing,
    WelfareEquivalence,
}

impl Suite {
    pub fn property(self) -> PropertyId {
        match self {
            Suite::ReservePriceZero => PropertyId::ReservePriceZero,
            Suite::ReserveToEnergyOnly => PropertyId::ReserveToEnergyOnly,
            Suite::CheapSpotFuel => PropertyId::CheapSpotFuel,
            Suite::LowMarginFuel => PropertyId::LowMarginFuel,
            Suite::MarginalPricing => PropertyId::MarginalPricing,
            Suite::WelfareEquivalence => PropertyId::WelfareEquivalence,
        }
    }

    /// Looks a suite up by its property name, e.g. `"marginal_pricing"`.
    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.property().to_string() == name)
    }

    pub const ALL: [Suite; 6] = [
        Suite::ReservePriceZero,
        Suite::ReserveToEnergyOnly,
        Suite::CheapSpotFuel,
        Suite::LowMarginFuel,
        Suite::MarginalPricing,
        Suite::WelfareEquivalence,
    ];

    /// Runs this suite's check on one instance. Checks that need a solution
    /// solve the instance as given (EMIR for the reserve checks, energy-only
    /// otherwise) from the default start.
    pub fn check(self, inst: &MarketInstance, opts: &SolveOptions) -> Result<PropertyCheckResult> {
        match self {
            Suite::ReservePriceZero => check_prop1(inst, opts),
            Suite::CheapSpotFuel => check_lemma1(inst, opts),
            Suite::ReserveToEnergyOnly => {
                let model = assemble_risk_neutral(inst)?;
                let report = solve_model(&model, opts)?;
                if !report.converged() {
                    return Ok(PropertyCheckResult::inconclusive(
                        PropertyId::ReserveToEnergyOnly,
                        inst,
                        &report,
                    ));
                }
                check_cor1(&model, &report.point)
            }
            Suite::LowMarginFuel | Suite::MarginalPricing | Suite::WelfareEquivalence => {
                let (id, check): (PropertyId, fn(&MarketModel, &[f64]) -> Result<PropertyCheckResult>) =
                    match self {
                        Suite::LowMarginFuel => (PropertyId::LowMarginFuel, check_lemma2),
                        Suite::MarginalPricing => (PropertyId::MarginalPricing, check_marginal_pricing),
                        _ => (PropertyId::WelfareEquivalence, check_oracle_equivalence),
                    };
                let emo = inst.with_design(MarketDesign::Emo);
                let model = assemble_risk_neutral(&emo)?;
                let report = solve_model(&model, opts)?;
                if !report.converged() {
                    return Ok(PropertyCheckResult::inconclusive(id, inst, &report));
                }
                check(&model, &report.point)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub suite: Suite,
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
    pub results: Vec<PropertyCheckResult>,
}

impl SuiteSummary {
    pub fn all_passed(&self) -> bool {
        self.failed == 0 && self.inconclusive == 0
    }
}

/// Runs `suite` on [`random_instance`] for every seed, in parallel. Errors
/// from a check count as failures and are kept in the result's violations.
pub fn run_suite(suite: Suite, seeds: std::ops::Range<u64>, opts: &SolveOptions) -> SuiteSummary {
    let results: Vec<PropertyCheckResult> = seeds
        .into_par_iter()
        .map(|seed| {
            let inst = random_instance(seed);
            match suite.check(&inst, opts) {
                Ok(r) => r.with_seed(Some(seed)),
                Err(e) => {
                    let mut r = PropertyCheckResult::new(suite.property(), &inst).with_seed(Some(seed));
                    r.require(false, || e.to_string());
                    r
                }
            }
        })
        .collect();
    let count = |v: Verdict| results.iter().filter(|r| r.verdict == v).count();
    SuiteSummary {
        suite,
        passed: count(Verdict::Pass),
        failed: count(Verdict::Fail),
        inconclusive: count(Verdict::Inconclusive),
        results,
    }
}
