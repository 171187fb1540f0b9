//! Equilibrium systems for the three market designs.
//!
//! Each generator maximizes the CVaR of its per-scenario profit, the
//! aggregate demand agent does the same for its settlement, and risk-neutral
//! arbitragers trade the day-ahead/real-time spread. Stacking every agent's
//! KKT conditions with the market-clearing conditions gives one MCP per
//! design:
//!
//! * EMO: day-ahead and real-time energy clearing.
//! * EMIR: adds imbalance reserve awards `e_i`, priced at `rho` against the
//!   forecast energy requirement, with a real-time closeout `[lambda_s - K]^+`
//!   per MWh of reserve sold.
//! * EMO-LF: adds the load-forecast constraint `sum g_da >= FER`, priced at
//!   `lam_lf` and paid to day-ahead energy.
//!
//! In the full (CVaR) form the risk-adjusted probabilities `q` are variables;
//! in the risk-neutral form they are replaced by the scenario probabilities
//! and the `eta`/`u`/`q` blocks disappear.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::market::{MarketDesign, MarketInstance};
use crate::mcp::{KinkTape, McpSystem, Residual, VarKind, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskForm {
    /// CVaR agents with explicit risk-adjusted probabilities.
    Cvar,
    /// Expected-profit agents; requires every risk level to be 1.
    Neutral,
}

/// Slot indices for every symbol of the assembled system.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub n_gen: usize,
    pub n_scen: usize,
    pub form: RiskForm,
    g_rt: Vec<usize>,
    v_rt: Vec<usize>,
    w_rt: Vec<usize>,
    mu: Vec<usize>,
    gamma: Vec<usize>,
    u: Vec<usize>,
    q: Vec<usize>,
    g_da: Vec<usize>,
    v_da: Vec<usize>,
    delta: Vec<usize>,
    eta: Vec<usize>,
    e: Vec<usize>,
    pub d_da: usize,
    pub eta_d: Option<usize>,
    u_d: Vec<usize>,
    q_d: Vec<usize>,
    pub a: usize,
    pub b: usize,
    pub lam_da: usize,
    lam_rt: Vec<usize>,
    pub rho: Option<usize>,
    pub lam_lf: Option<usize>,
}

impl VariableLayout {
    fn is(&self, i: usize, s: usize) -> usize {
        i * self.n_scen + s
    }
    pub fn g_rt(&self, i: usize, s: usize) -> usize {
        self.g_rt[self.is(i, s)]
    }
    pub fn v_rt(&self, i: usize, s: usize) -> usize {
        self.v_rt[self.is(i, s)]
    }
    pub fn w_rt(&self, i: usize, s: usize) -> usize {
        self.w_rt[self.is(i, s)]
    }
    pub fn mu(&self, i: usize, s: usize) -> usize {
        self.mu[self.is(i, s)]
    }
    pub fn gamma(&self, i: usize, s: usize) -> usize {
        self.gamma[self.is(i, s)]
    }
    pub fn u(&self, i: usize, s: usize) -> Option<usize> {
        self.u.get(self.is(i, s)).copied()
    }
    pub fn q(&self, i: usize, s: usize) -> Option<usize> {
        self.q.get(self.is(i, s)).copied()
    }
    pub fn g_da(&self, i: usize) -> usize {
        self.g_da[i]
    }
    pub fn v_da(&self, i: usize) -> usize {
        self.v_da[i]
    }
    pub fn delta(&self, i: usize) -> usize {
        self.delta[i]
    }
    pub fn eta(&self, i: usize) -> Option<usize> {
        self.eta.get(i).copied()
    }
    pub fn e(&self, i: usize) -> Option<usize> {
        self.e.get(i).copied()
    }
    pub fn u_d(&self, s: usize) -> Option<usize> {
        self.u_d.get(s).copied()
    }
    pub fn q_d(&self, s: usize) -> Option<usize> {
        self.q_d.get(s).copied()
    }
    pub fn lam_rt(&self, s: usize) -> usize {
        self.lam_rt[s]
    }
}

struct LayoutBuilder {
    vars: Vec<VariableSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, kind: VarKind, block: &str) -> usize {
        self.vars.push(VariableSpec {
            name,
            kind,
            block: block.to_string(),
        });
        self.vars.len() - 1
    }
}

fn build_layout(inst: &MarketInstance, form: RiskForm) -> (VariableLayout, Vec<VariableSpec>) {
    use VarKind::*;
    let (ni, ns) = (inst.num_generators(), inst.num_scenarios());
    let cvar = form == RiskForm::Cvar;
    let emir = matches!(inst.design, MarketDesign::Emir { .. });
    let mut b = LayoutBuilder { vars: Vec::new() };
    let mut l = VariableLayout {
        n_gen: ni,
        n_scen: ns,
        form,
        g_rt: vec![],
        v_rt: vec![],
        w_rt: vec![],
        mu: vec![],
        gamma: vec![],
        u: vec![],
        q: vec![],
        g_da: vec![],
        v_da: vec![],
        delta: vec![],
        eta: vec![],
        e: vec![],
        d_da: 0,
        eta_d: None,
        u_d: vec![],
        q_d: vec![],
        a: 0,
        b: 0,
        lam_da: 0,
        lam_rt: vec![],
        rho: None,
        lam_lf: None,
    };

    for i in 0..ni {
        let blk = format!("gen{}", i + 1);
        for s in 0..ns {
            let at = format!("[{},{}]", i + 1, s + 1);
            l.g_rt.push(b.push(format!("g_rt{at}"), NonNegative, &blk));
            l.v_rt.push(b.push(format!("v_rt{at}"), NonNegative, &blk));
            l.w_rt.push(b.push(format!("w_rt{at}"), NonNegative, &blk));
            l.mu.push(b.push(format!("mu{at}"), Free, &blk));
            l.gamma.push(b.push(format!("gamma{at}"), NonNegative, &blk));
            if cvar {
                l.u.push(b.push(format!("u{at}"), NonNegative, &blk));
                l.q.push(b.push(format!("q{at}"), NonNegative, &blk));
            }
        }
        let at = format!("[{}]", i + 1);
        l.g_da.push(b.push(format!("g_da{at}"), NonNegative, &blk));
        l.v_da.push(b.push(format!("v_da{at}"), NonNegative, &blk));
        l.delta.push(b.push(format!("delta{at}"), NonNegative, &blk));
        if cvar {
            l.eta.push(b.push(format!("eta{at}"), Free, &blk));
        }
        if emir {
            l.e.push(b.push(format!("e{at}"), NonNegative, &blk));
        }
    }

    // a non-participating demand keeps its slot, pinned to zero by a free equation
    let d_kind = if inst.demand.participates_da { NonNegative } else { Free };
    l.d_da = b.push("d_da".into(), d_kind, "demand");
    if cvar {
        l.eta_d = Some(b.push("eta_d".into(), Free, "demand"));
        for s in 0..ns {
            l.u_d.push(b.push(format!("u_d[{}]", s + 1), NonNegative, "demand"));
        }
        for s in 0..ns {
            l.q_d.push(b.push(format!("q_d[{}]", s + 1), NonNegative, "demand"));
        }
    }

    l.a = b.push("a".into(), NonNegative, "arbitrage");
    l.b = b.push("b".into(), NonNegative, "arbitrage");

    l.lam_da = b.push("lam_da".into(), Free, "prices");
    for s in 0..ns {
        l.lam_rt.push(b.push(format!("lam_rt[{}]", s + 1), Free, "prices"));
    }
    match inst.design {
        MarketDesign::Emo => {}
        MarketDesign::Emir { .. } => l.rho = Some(b.push("rho".into(), NonNegative, "prices")),
        MarketDesign::EmoLf { .. } => {
            l.lam_lf = Some(b.push("lam_lf".into(), NonNegative, "prices"))
        }
    }
    (l, b.vars)
}

/// Natural magnitudes: energy in MWh of the largest capacity or demand,
/// prices in $/MWh of the most expensive marginal cost, profits in their
/// product, probabilities in 1.
fn variable_units(inst: &MarketInstance, l: &VariableLayout, n: usize) -> Vec<f64> {
    let energy = inst
        .generators
        .iter()
        .map(|g| g.q)
        .chain(inst.scenarios.d_rt.iter().copied())
        .fold(1.0, f64::max);
    let price = inst
        .generators
        .iter()
        .flat_map(|g| g.c_i.iter().map(move |ci| g.c + ci).chain([g.c_f]))
        .fold(1.0, f64::max);
    let money = energy * price;
    let mut units = vec![energy; n];
    let mut set = |k: usize, u: f64| units[k] = u;
    for i in 0..l.n_gen {
        for s in 0..l.n_scen {
            set(l.mu(i, s), price);
            set(l.gamma(i, s), price);
            if let (Some(u), Some(q)) = (l.u(i, s), l.q(i, s)) {
                set(u, money);
                set(q, 1.0);
            }
        }
        set(l.delta(i), price);
        if let Some(k) = l.eta(i) {
            set(k, money);
        }
    }
    if let Some(k) = l.eta_d {
        set(k, money);
        for s in 0..l.n_scen {
            set(l.u_d(s).unwrap(), money);
            set(l.q_d(s).unwrap(), 1.0);
        }
    }
    set(l.lam_da, price);
    for s in 0..l.n_scen {
        set(l.lam_rt(s), price);
    }
    for k in [l.rho, l.lam_lf].into_iter().flatten() {
        set(k, price);
    }
    units
}

/// Per-agent, per-scenario profits.
#[derive(Debug, Clone, PartialEq)]
pub struct Profits {
    /// `generator[i][s]`
    pub generator: Vec<Vec<f64>>,
    pub demand: Vec<f64>,
    pub arbitrage: Vec<f64>,
}

/// Profit formulas shared by the residual and by [`MarketModel::profits`].
struct Settlement<'a> {
    inst: &'a MarketInstance,
    l: &'a VariableLayout,
}

impl Settlement<'_> {
    /// Extra day-ahead payment per MWh of `g_da`: `rho` or `lam_lf`.
    fn da_premium(&self, z: &[f64]) -> f64 {
        self.l.rho.or(self.l.lam_lf).map_or(0.0, |k| z[k])
    }

    fn generator(&self, z: &[f64], i: usize, s: usize, tape: &mut KinkTape) -> f64 {
        let (l, g) = (self.l, &self.inst.generators[i]);
        let lam = z[l.lam_rt(s)];
        let g_da = z[l.g_da(i)];
        let g_rt = z[l.g_rt(i, s)];
        let mut profit = (z[l.lam_da] + self.da_premium(z)) * g_da + lam * (g_rt - g_da)
            - g.c * g_rt
            - g.c_f * z[l.v_da(i)]
            - g.c_i[s] * z[l.v_rt(i, s)]
            + g.r[s] * z[l.w_rt(i, s)];
        if let (Some(k), Some(ei)) = (self.inst.design.strike(), l.e(i)) {
            let e = z[ei];
            profit += (z[l.rho.unwrap()] - tape.plus(lam - k)) * e;
        }
        profit
    }

    fn demand(&self, z: &[f64], s: usize, tape: &mut KinkTape) -> f64 {
        let l = self.l;
        let lam = z[l.lam_rt(s)];
        let d = z[l.d_da];
        let mut profit = -z[l.lam_da] * d - lam * (self.inst.scenarios.d_rt[s] - d);
        if let Some(fer) = self.inst.design.fer() {
            profit -= self.da_premium(z) * fer;
        }
        if let Some(k) = self.inst.design.strike() {
            // price-taking: the reserve volume enters as an outcome, not a decision
            let total_e: f64 = (0..l.n_gen).map(|i| z[l.e(i).unwrap()]).sum();
            profit += tape.plus(lam - k) * total_e;
        }
        profit
    }

    fn arbitrage(&self, z: &[f64], s: usize) -> f64 {
        let l = self.l;
        let spread = z[l.lam_da] - z[l.lam_rt(s)];
        spread * z[l.a] - spread * z[l.b]
    }
}

struct MarketResidual {
    inst: MarketInstance,
    layout: VariableLayout,
}

impl MarketResidual {
    fn gen_weight(&self, z: &[f64], i: usize, s: usize) -> f64 {
        match self.layout.q(i, s) {
            Some(k) => z[k],
            None => self.inst.scenarios.pi[s],
        }
    }

    fn demand_weight(&self, z: &[f64], s: usize) -> f64 {
        match self.layout.q_d(s) {
            Some(k) => z[k],
            None => self.inst.scenarios.pi[s],
        }
    }
}

impl Residual for MarketResidual {
    fn eval(&self, z: &[f64], tape: &mut KinkTape, out: &mut [f64]) {
        let inst = &self.inst;
        let l = &self.layout;
        let pi = &inst.scenarios.pi;
        let (ni, ns) = (l.n_gen, l.n_scen);
        let settle = Settlement { inst, l };
        let lam_da = z[l.lam_da];
        let premium = settle.da_premium(z);
        let strike = inst.design.strike();
        let expected_rt: f64 = (0..ns).map(|s| pi[s] * z[l.lam_rt(s)]).sum();

        for (i, g) in inst.generators.iter().enumerate() {
            let g_da = z[l.g_da(i)];
            let e = l.e(i).map_or(0.0, |k| z[k]);
            let delta = z[l.delta(i)];
            let mut sum_mu = 0.0;
            let mut risk_adj_rt = 0.0;
            let mut closeout = 0.0;
            for s in 0..ns {
                let w = self.gen_weight(z, i, s);
                let lam = z[l.lam_rt(s)];
                let mu = z[l.mu(i, s)];
                sum_mu += mu;
                risk_adj_rt += w * lam;
                if let Some(k) = strike {
                    closeout += w * tape.plus(lam - k);
                }
                out[l.g_rt(i, s)] = g.c * w + mu - lam * w + z[l.gamma(i, s)];
                out[l.v_rt(i, s)] = g.c_i[s] * w - mu;
                out[l.w_rt(i, s)] = mu - g.r[s] * w;
                out[l.gamma(i, s)] = g.q - z[l.g_rt(i, s)];
                out[l.mu(i, s)] = z[l.g_rt(i, s)]
                    - (g.f + z[l.v_rt(i, s)] + z[l.v_da(i)] - z[l.w_rt(i, s)]);
                if let (Some(u), Some(q)) = (l.u(i, s), l.q(i, s)) {
                    out[u] = pi[s] / g.alpha - z[q];
                    let eta = z[l.eta(i).unwrap()];
                    out[q] = z[u] - eta + settle.generator(z, i, s, tape);
                }
            }
            out[l.v_da(i)] = g.c_f - sum_mu;
            out[l.g_da(i)] = risk_adj_rt - lam_da - premium + delta;
            out[l.delta(i)] = g.q - g_da - e;
            if let Some(k) = l.e(i) {
                out[k] = closeout - z[l.rho.unwrap()] + delta;
            }
            if let Some(k) = l.eta(i) {
                out[k] = (0..ns).map(|s| z[l.q(i, s).unwrap()]).sum::<f64>() - 1.0;
            }
        }

        out[l.d_da] = if inst.demand.participates_da {
            let risk_adj: f64 = (0..ns).map(|s| self.demand_weight(z, s) * z[l.lam_rt(s)]).sum();
            lam_da - risk_adj
        } else {
            z[l.d_da]
        };
        if let Some(eta_k) = l.eta_d {
            let eta = z[eta_k];
            let mut sum_q = 0.0;
            for s in 0..ns {
                let (u, q) = (l.u_d(s).unwrap(), l.q_d(s).unwrap());
                out[u] = pi[s] / inst.demand.alpha - z[q];
                out[q] = z[u] - eta + settle.demand(z, s, tape);
                sum_q += z[q];
            }
            out[eta_k] = sum_q - 1.0;
        }

        out[l.a] = expected_rt - lam_da;
        out[l.b] = lam_da - expected_rt;

        let total_da: f64 = (0..ni).map(|i| z[l.g_da(i)]).sum();
        out[l.lam_da] = total_da + z[l.a] - z[l.d_da] - z[l.b];
        for s in 0..ns {
            let supply: f64 = (0..ni).map(|i| z[l.g_rt(i, s)]).sum();
            out[l.lam_rt(s)] = supply - inst.scenarios.d_rt[s];
        }
        if let (Some(k), Some(fer)) = (l.rho, inst.design.fer()) {
            let total_e: f64 = (0..ni).map(|i| z[l.e(i).unwrap()]).sum();
            out[k] = total_da + total_e - fer;
        }
        if let (Some(k), Some(fer)) = (l.lam_lf, inst.design.fer()) {
            out[k] = total_da - fer;
        }
    }
}

/// An instance together with its assembled equilibrium system.
#[derive(Debug, Clone)]
pub struct MarketModel {
    instance: MarketInstance,
    layout: VariableLayout,
    system: McpSystem,
}

impl MarketModel {
    /// Assembles the system matching the instance's design.
    pub fn assemble(inst: &MarketInstance, form: RiskForm) -> Result<Self> {
        if form == RiskForm::Neutral && !inst.is_risk_neutral() {
            return Err(Error::Precondition(
                "the risk-neutral system needs every risk level equal to 1".into(),
            ));
        }
        let (layout, vars) = build_layout(inst, form);
        let units = variable_units(inst, &layout, vars.len());
        let residual = MarketResidual {
            inst: inst.clone(),
            layout: layout.clone(),
        };
        Ok(MarketModel {
            instance: inst.clone(),
            layout,
            system: McpSystem::new(vars, Arc::new(residual)).with_units(units),
        })
    }

    pub fn instance(&self) -> &MarketInstance {
        &self.instance
    }

    pub fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    pub fn system(&self) -> &McpSystem {
        &self.system
    }

    pub fn design(&self) -> MarketDesign {
        self.instance.design
    }

    pub fn view<'a>(&'a self, z: &'a [f64]) -> EquilibriumView<'a> {
        assert_eq!(z.len(), self.system.dim(), "point does not match the system");
        EquilibriumView { model: self, z }
    }

    /// Per-scenario profits of every agent at `z`.
    pub fn profits(&self, z: &[f64]) -> Result<Profits> {
        if z.len() != self.system.dim() {
            return Err(Error::Dimension {
                expected: self.system.dim(),
                got: z.len(),
            });
        }
        let settle = Settlement {
            inst: &self.instance,
            l: &self.layout,
        };
        let mut tape = KinkTape::exact();
        let ns = self.layout.n_scen;
        Ok(Profits {
            generator: (0..self.layout.n_gen)
                .map(|i| (0..ns).map(|s| settle.generator(z, i, s, &mut tape)).collect())
                .collect(),
            demand: (0..ns).map(|s| settle.demand(z, s, &mut tape)).collect(),
            arbitrage: (0..ns).map(|s| settle.arbitrage(z, s)).collect(),
        })
    }

    /// The day-ahead fuel and energy conditions in their original,
    /// unsimplified form, per generator: `(vda_condition, gda_condition)`.
    /// They coincide with the assembled ones whenever `sum_s q = 1`.
    pub fn unsimplified_da_conditions(&self, z: &[f64]) -> Vec<(f64, f64)> {
        let l = &self.layout;
        let pi = &self.instance.scenarios.pi;
        let premium = l.rho.or(l.lam_lf).map_or(0.0, |k| z[k]);
        self.instance
            .generators
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let w = |s: usize| l.q(i, s).map_or(pi[s], |k| z[k]);
                let sum_w: f64 = (0..l.n_scen).map(w).sum();
                let sum_mu: f64 = (0..l.n_scen).map(|s| z[l.mu(i, s)]).sum();
                let adj: f64 = (0..l.n_scen).map(|s| w(s) * z[l.lam_rt(s)]).sum();
                (
                    g.c_f * sum_w - sum_mu,
                    adj - (z[l.lam_da] + premium) * sum_w + z[l.delta(i)],
                )
            })
            .collect()
    }

    /// Recomputes `eta`/`u` (and their demand counterparts) so that the CVaR
    /// blocks hold for the current profits. Only meaningful for risk-neutral
    /// agents, whose `q` is pinned at the scenario probabilities.
    pub(crate) fn rebalance_neutral_cvar(&self, z: &mut [f64]) -> Result<()> {
        let l = &self.layout;
        if l.form != RiskForm::Cvar {
            return Ok(());
        }
        let p = self.profits(z)?;
        for i in 0..l.n_gen {
            let top = p.generator[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            z[l.eta(i).unwrap()] = top;
            for s in 0..l.n_scen {
                z[l.u(i, s).unwrap()] = top - p.generator[i][s];
            }
        }
        let top = p.demand.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        z[l.eta_d.unwrap()] = top;
        for s in 0..l.n_scen {
            z[l.u_d(s).unwrap()] = top - p.demand[s];
        }
        Ok(())
    }
}

/// Checks the design and assembles the full CVaR system.
pub fn assemble_emo(inst: &MarketInstance) -> Result<MarketModel> {
    require_design(inst, "emo")?;
    MarketModel::assemble(inst, RiskForm::Cvar)
}

pub fn assemble_emir(inst: &MarketInstance) -> Result<MarketModel> {
    require_design(inst, "emir")?;
    MarketModel::assemble(inst, RiskForm::Cvar)
}

pub fn assemble_emo_lf(inst: &MarketInstance) -> Result<MarketModel> {
    require_design(inst, "emo_lf")?;
    MarketModel::assemble(inst, RiskForm::Cvar)
}

/// The reduced expected-profit system; fails unless every agent is risk
/// neutral.
pub fn assemble_risk_neutral(inst: &MarketInstance) -> Result<MarketModel> {
    MarketModel::assemble(inst, RiskForm::Neutral)
}

fn require_design(inst: &MarketInstance, expected: &'static str) -> Result<()> {
    if inst.design.name() != expected {
        return Err(Error::DesignMismatch {
            expected,
            found: inst.design.name(),
        });
    }
    Ok(())
}

/// Maps a risk-neutral EMIR equilibrium onto the energy-only market: reserve
/// awards become day-ahead energy (`g_da += e`) offset by virtual demand
/// (`b += sum e`); real-time values, fuel positions, `lam_da` and `delta`
/// carry over unchanged.
pub fn transform_emir_to_emo(
    emir: &MarketModel,
    z: &[f64],
) -> Result<(MarketModel, Vec<f64>)> {
    let inst = emir.instance();
    let MarketDesign::Emir { fer, .. } = inst.design else {
        return Err(Error::DesignMismatch {
            expected: "emir",
            found: inst.design.name(),
        });
    };
    if !inst.is_risk_neutral() {
        return Err(Error::Precondition("transformation needs risk-neutral agents".into()));
    }
    if !(inst.total_capacity() > fer) {
        return Err(Error::Precondition("transformation needs total capacity above FER".into()));
    }
    if z.len() != emir.system().dim() {
        return Err(Error::Dimension {
            expected: emir.system().dim(),
            got: z.len(),
        });
    }
    let emo = MarketModel::assemble(&inst.with_design(MarketDesign::Emo), emir.layout.form)?;
    let src = emir.system();
    let mut out = vec![0.0; emo.system().dim()];
    for (k, v) in emo.system().variables().iter().enumerate() {
        let j = src
            .index_of(&v.name)
            .expect("energy-only variables are a subset of the reserve market's");
        out[k] = z[j];
    }
    let (le, lo) = (&emir.layout, &emo.layout);
    let mut total_e = 0.0;
    for i in 0..le.n_gen {
        let e = z[le.e(i).unwrap()];
        out[lo.g_da(i)] += e;
        total_e += e;
    }
    out[lo.b] += total_e;
    emo.rebalance_neutral_cvar(&mut out)?;
    Ok((emo, out))
}

/// Named read access to a point of a [`MarketModel`].
#[derive(Clone, Copy)]
pub struct EquilibriumView<'a> {
    model: &'a MarketModel,
    z: &'a [f64],
}

impl<'a> EquilibriumView<'a> {
    fn at(&self, k: usize) -> f64 {
        self.z[k]
    }
    pub fn values(&self) -> &'a [f64] {
        self.z
    }
    pub fn g_rt(&self, i: usize, s: usize) -> f64 {
        self.at(self.model.layout.g_rt(i, s))
    }
    pub fn v_rt(&self, i: usize, s: usize) -> f64 {
        self.at(self.model.layout.v_rt(i, s))
    }
    pub fn w_rt(&self, i: usize, s: usize) -> f64 {
        self.at(self.model.layout.w_rt(i, s))
    }
    pub fn mu(&self, i: usize, s: usize) -> f64 {
        self.at(self.model.layout.mu(i, s))
    }
    pub fn gamma(&self, i: usize, s: usize) -> f64 {
        self.at(self.model.layout.gamma(i, s))
    }
    /// Risk-adjusted probability; the scenario probability in the neutral form.
    pub fn q(&self, i: usize, s: usize) -> f64 {
        match self.model.layout.q(i, s) {
            Some(k) => self.at(k),
            None => self.model.instance.scenarios.pi[s],
        }
    }
    pub fn q_d(&self, s: usize) -> f64 {
        match self.model.layout.q_d(s) {
            Some(k) => self.at(k),
            None => self.model.instance.scenarios.pi[s],
        }
    }
    pub fn g_da(&self, i: usize) -> f64 {
        self.at(self.model.layout.g_da(i))
    }
    pub fn v_da(&self, i: usize) -> f64 {
        self.at(self.model.layout.v_da(i))
    }
    pub fn delta(&self, i: usize) -> f64 {
        self.at(self.model.layout.delta(i))
    }
    /// Reserve award; zero outside EMIR.
    pub fn e(&self, i: usize) -> f64 {
        self.model.layout.e(i).map_or(0.0, |k| self.at(k))
    }
    pub fn d_da(&self) -> f64 {
        self.at(self.model.layout.d_da)
    }
    pub fn a(&self) -> f64 {
        self.at(self.model.layout.a)
    }
    pub fn b(&self) -> f64 {
        self.at(self.model.layout.b)
    }
    pub fn lam_da(&self) -> f64 {
        self.at(self.model.layout.lam_da)
    }
    pub fn lam_rt(&self, s: usize) -> f64 {
        self.at(self.model.layout.lam_rt(s))
    }
    pub fn lam_rt_all(&self) -> Vec<f64> {
        (0..self.model.layout.n_scen).map(|s| self.lam_rt(s)).collect()
    }
    pub fn expected_lam_rt(&self) -> f64 {
        self.model.instance.scenarios.expect(&self.lam_rt_all())
    }
    /// Reserve price; zero outside EMIR.
    pub fn rho(&self) -> f64 {
        self.model.layout.rho.map_or(0.0, |k| self.at(k))
    }
    /// Load-forecast price; zero outside EMO-LF.
    pub fn lam_lf(&self) -> f64 {
        self.model.layout.lam_lf.map_or(0.0, |k| self.at(k))
    }
    pub fn total_v_da(&self) -> f64 {
        (0..self.model.layout.n_gen).map(|i| self.v_da(i)).sum()
    }
    pub fn total_g_da(&self) -> f64 {
        (0..self.model.layout.n_gen).map(|i| self.g_da(i)).sum()
    }
    pub fn total_e(&self) -> f64 {
        (0..self.model.layout.n_gen).map(|i| self.e(i)).sum()
    }
    pub fn profits(&self) -> Profits {
        self.model.profits(self.z).expect("view dimension is checked on construction")
    }
    /// Expected system cost: advance fuel plus expected production, spot
    /// fuel and resale.
    pub fn expected_cost(&self) -> f64 {
        let inst = &self.model.instance;
        let mut total = 0.0;
        for (i, g) in inst.generators.iter().enumerate() {
            total += g.c_f * self.v_da(i);
            for s in 0..self.model.layout.n_scen {
                total += inst.scenarios.pi[s]
                    * (g.c * self.g_rt(i, s) + g.c_i[s] * self.v_rt(i, s) - g.r[s] * self.w_rt(i, s));
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::presets::{single_generator, two_generator};

    const EMIR12: MarketDesign = MarketDesign::Emir { k: 12.0, fer: 90.0 };

    // Counting rule: per (i,s) g_rt v_rt w_rt mu gamma u q; per i g_da v_da
    // delta eta (+e); demand d_da eta_d u_d[s] q_d[s]; a b; lam_da lam_rt[s]
    // (+rho or lam_lf).
    fn counted(ni: usize, ns: usize, extra_gen: usize, extra_price: usize) -> usize {
        ni * (7 * ns + 4 + extra_gen) + (2 + 2 * ns) + 2 + (1 + ns + extra_price)
    }

    #[test]
    fn variable_counts() {
        let emo = assemble_emo(&single_generator(MarketDesign::Emo)).unwrap();
        assert_eq!(emo.system().dim(), 29);
        assert_eq!(emo.system().dim(), counted(1, 2, 0, 0));
        let emir = assemble_emir(&single_generator(EMIR12)).unwrap();
        assert_eq!(emir.system().dim(), 31);
        let lf = assemble_emo_lf(&single_generator(MarketDesign::EmoLf { fer: 90.0 })).unwrap();
        assert_eq!(lf.system().dim(), 30);
        let two = assemble_emo(&two_generator(MarketDesign::Emo)).unwrap();
        assert_eq!(two.system().dim(), 98);
        assert_eq!(two.system().dim(), counted(2, 5, 0, 0));
        let rn = assemble_risk_neutral(&single_generator(MarketDesign::Emo)).unwrap();
        assert_eq!(rn.system().dim(), 19);
    }

    #[test]
    fn design_mismatch() {
        let inst = single_generator(MarketDesign::Emo);
        assert!(matches!(assemble_emir(&inst), Err(Error::DesignMismatch { .. })));
        assert!(matches!(assemble_emo_lf(&inst), Err(Error::DesignMismatch { .. })));
        assert!(assemble_emo(&inst.with_design(EMIR12)).is_err());
    }

    #[test]
    fn risk_neutral_needs_unit_alpha() {
        let inst = single_generator(MarketDesign::Emo).with_generator_alpha(0.7);
        assert!(matches!(assemble_risk_neutral(&inst), Err(Error::Precondition(_))));
        let inst = single_generator(MarketDesign::Emo).with_demand_alpha(0.7);
        assert!(assemble_risk_neutral(&inst).is_err());
    }

    #[test]
    fn zero_point_clearing_residual() {
        let m = assemble_emo(&single_generator(MarketDesign::Emo)).unwrap();
        let z = vec![0.0; m.system().dim()];
        let f = m.system().residual(&z).unwrap();
        let l = m.layout();
        assert_eq!(f[l.lam_rt(0)], -75.0);
        assert_eq!(f[l.lam_rt(1)], -125.0);
    }

    #[test]
    fn sparsity_of_stacked_conditions() {
        let m = assemble_emir(&two_generator(MarketDesign::Emir { k: 50.0, fer: 90.0 })).unwrap();
        let sys = m.system();
        let l = m.layout();
        let z: Vec<f64> = (0..sys.dim()).map(|k| 0.3 + 0.01 * k as f64).collect();
        let base = sys.residual(&z).unwrap();
        let mut zp = z.clone();
        zp[l.v_rt(1, 3)] += 1.0;
        let pert = sys.residual(&zp).unwrap();
        let changed: Vec<&str> = (0..sys.dim())
            .filter(|&k| base[k] != pert[k])
            .map(|k| sys.variables()[k].name.as_str())
            .collect();
        // v_rt enters the fuel balance and the generator's scenario profit only
        assert_eq!(changed, vec!["mu[2,4]", "q[2,4]"]);
    }

    #[test]
    fn slot_kinds() {
        let m = assemble_emir(&single_generator(EMIR12)).unwrap();
        let sys = m.system();
        let kind = |name: &str| sys.variables()[sys.index_of(name).unwrap()].kind;
        for name in ["mu[1,1]", "eta[1]", "eta_d", "lam_da", "lam_rt[2]"] {
            assert_eq!(kind(name), VarKind::Free, "{name}");
        }
        for name in ["rho", "q[1,2]", "e[1]", "g_da[1]", "u_d[1]", "q_d[2]", "a", "b"] {
            assert_eq!(kind(name), VarKind::NonNegative, "{name}");
        }
        // single-generator example pins demand's bid with a free equation
        assert_eq!(kind("d_da"), VarKind::Free);
        let lf = assemble_emo_lf(&single_generator(MarketDesign::EmoLf { fer: 90.0 })).unwrap();
        assert!(lf.system().index_of("lam_lf").is_some());
        assert!(lf.system().index_of("rho").is_none());
    }

    #[test]
    fn arbitrage_profit_zero_without_positions() {
        let m = assemble_emo(&single_generator(MarketDesign::Emo)).unwrap();
        let mut z = vec![1.0; m.system().dim()];
        z[m.layout().a] = 0.0;
        z[m.layout().b] = 0.0;
        assert!(m.profits(&z).unwrap().arbitrage.iter().all(|&x| x == 0.0));
    }

    /// Hand-built risk-neutral EMO-LF equilibrium of the single-generator
    /// instance with FER = 90: spot fuel only, prices (10, 15) and 12.5.
    fn lf_neutral_point(m: &MarketModel) -> Vec<f64> {
        let l = m.layout();
        let mut z = vec![0.0; m.system().dim()];
        let lam = [10.0, 15.0];
        let d = [75.0, 125.0];
        for s in 0..2 {
            z[l.g_rt(0, s)] = d[s];
            z[l.v_rt(0, s)] = d[s];
            z[l.mu(0, s)] = lam[s] * 0.5;
            z[l.q(0, s).unwrap()] = 0.5;
            z[l.q_d(s).unwrap()] = 0.5;
            z[l.lam_rt(s)] = lam[s];
        }
        z[l.g_da(0)] = 90.0;
        z[l.b] = 90.0;
        z[l.lam_da] = 12.5;
        m.rebalance_neutral_cvar(&mut z).unwrap();
        z
    }

    #[test]
    fn load_forecast_neutral_profits() {
        let m = assemble_emo_lf(&single_generator(MarketDesign::EmoLf { fer: 90.0 })).unwrap();
        let z = lf_neutral_point(&m);
        assert!(m.system().complementarity_error(&z).unwrap() < 1e-12);
        let p = m.profits(&z).unwrap();
        assert_eq!(p.generator[0], vec![225.0, -225.0]);
    }

    #[test]
    fn unsimplified_forms_agree_at_solution() {
        let m = assemble_emo_lf(&single_generator(MarketDesign::EmoLf { fer: 90.0 })).unwrap();
        let z = lf_neutral_point(&m);
        let f = m.system().residual(&z).unwrap();
        let l = m.layout();
        let (vda, gda) = m.unsimplified_da_conditions(&z)[0];
        assert!((vda - f[l.v_da(0)]).abs() < 1e-12);
        assert!((gda - f[l.g_da(0)]).abs() < 1e-12);
    }

    #[test]
    fn transform_identity_when_no_reserve() {
        let inst = single_generator(EMIR12);
        let m = assemble_risk_neutral(&inst).unwrap();
        let z: Vec<f64> = (0..m.system().dim()).map(|k| k as f64).collect();
        let mut z = z;
        z[m.layout().e(0).unwrap()] = 0.0;
        let (emo, out) = transform_emir_to_emo(&m, &z).unwrap();
        for (k, v) in emo.system().variables().iter().enumerate() {
            assert_eq!(out[k], z[m.system().index_of(&v.name).unwrap()], "{}", v.name);
        }
    }

    #[test]
    fn transform_shifts_reserve_into_energy() {
        let inst = single_generator(EMIR12);
        let m = assemble_risk_neutral(&inst).unwrap();
        let l = m.layout();
        let mut z = vec![0.0; m.system().dim()];
        z[l.e(0).unwrap()] = 10.0;
        z[l.g_da(0)] = 5.0;
        let (emo, out) = transform_emir_to_emo(&m, &z).unwrap();
        let v = emo.view(&out);
        assert_eq!(v.g_da(0), 15.0);
        assert_eq!(v.b(), 10.0);
    }

    #[test]
    fn transform_preconditions() {
        let inst = single_generator(EMIR12).with_generator_alpha(0.5);
        let m = MarketModel::assemble(&inst, RiskForm::Cvar).unwrap();
        let z = vec![0.0; m.system().dim()];
        assert!(matches!(transform_emir_to_emo(&m, &z), Err(Error::Precondition(_))));
        let m = assemble_emo(&single_generator(MarketDesign::Emo)).unwrap();
        assert!(transform_emir_to_emo(&m, &vec![0.0; 29]).is_err());
        let tight = single_generator(MarketDesign::Emir { k: 12.0, fer: 150.0 });
        let m = assemble_risk_neutral(&tight).unwrap();
        assert!(transform_emir_to_emo(&m, &vec![0.0; m.system().dim()]).is_err());
    }
}
