//! Independent checks of equilibrium candidates.
//!
//! Everything here is linear programming: a dense two-phase simplex with
//! Bland's rule, the expected-cost dispatch problem whose duals are the
//! risk-neutral prices, each agent's CVaR problem at fixed prices, and a
//! cash audit of the settlement. None of it touches the Newton solver.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{MarketDesign, MarketInstance};
use crate::model::MarketModel;

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarBound {
    NonNegative,
    /// `0 <= x <= ub`
    Upper(f64),
    Free,
}

#[derive(Debug, Clone)]
struct Row {
    terms: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

/// A linear program over named columns, stored densely when solved.
#[derive(Debug, Clone, Default)]
pub struct LpModel {
    cost: Vec<f64>,
    bounds: Vec<VarBound>,
    rows: Vec<Row>,
    maximize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Sensitivity of the optimal objective to each row's right-hand side,
    /// in the model's own sense (max or min).
    pub duals: Vec<f64>,
}

impl LpModel {
    pub fn minimize() -> Self {
        LpModel::default()
    }

    pub fn maximize() -> Self {
        LpModel {
            maximize: true,
            ..Default::default()
        }
    }

    pub fn add_var(&mut self, bound: VarBound, cost: f64) -> usize {
        self.cost.push(cost);
        self.bounds.push(bound);
        self.cost.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_row(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) -> usize {
        assert!(terms.iter().all(|&(j, _)| j < self.num_vars()), "row refers to an unknown variable");
        self.rows.push(Row {
            terms: terms.to_vec(),
            sense,
            rhs,
        });
        self.rows.len() - 1
    }

    /// Largest violation of a row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().map(|r| {
            let lhs: f64 = r.terms.iter().map(|&(j, v)| v * x[j]).sum();
            match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            }
        });
        let bounds = self.bounds.iter().zip(x).map(|(b, &v)| match *b {
            VarBound::NonNegative => -v,
            VarBound::Upper(ub) => (-v).max(v - ub),
            VarBound::Free => 0.0,
        });
        rows.chain(bounds).fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.num_vars();
        let sign = if self.maximize { -1.0 } else { 1.0 };

        // user variable j -> (positive column, optional negative column)
        let mut cols: Vec<(usize, Option<usize>)> = Vec::with_capacity(n);
        let mut ncols = 0;
        for b in &self.bounds {
            let pos = ncols;
            ncols += 1;
            let neg = if *b == VarBound::Free {
                ncols += 1;
                Some(pos + 1)
            } else {
                None
            };
            cols.push((pos, neg));
        }
        let mut cost = vec![0.0; ncols];
        for (j, &(p, m)) in cols.iter().enumerate() {
            cost[p] = sign * self.cost[j];
            if let Some(m) = m {
                cost[m] = -sign * self.cost[j];
            }
        }

        let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::new();
        for r in &self.rows {
            let mut a = vec![0.0; ncols];
            for &(j, v) in &r.terms {
                a[cols[j].0] += v;
                if let Some(m) = cols[j].1 {
                    a[m] -= v;
                }
            }
            rows.push((a, r.sense, r.rhs));
        }
        let user_rows = rows.len();
        for (j, b) in self.bounds.iter().enumerate() {
            if let VarBound::Upper(ub) = *b {
                let mut a = vec![0.0; ncols];
                a[cols[j].0] = 1.0;
                rows.push((a, Sense::Le, ub));
            }
        }

        let sol = simplex(ncols, &cost, &rows)?;
        let x: Vec<f64> = cols
            .iter()
            .map(|&(p, m)| sol.x[p] - m.map_or(0.0, |m| sol.x[m]))
            .collect();
        let worst = self.max_violation(&x);
        let scale = self.rows.iter().fold(1.0_f64, |a, r| a.max(r.rhs.abs()));
        if worst > 1e-7 * scale {
            return Err(Error::Unknown(format!("simplex returned a point violating a constraint by {worst:e}")));
        }
        let objective = self.cost.iter().zip(&x).map(|(c, x)| c * x).sum();
        let duals = sol.duals[..user_rows].iter().map(|y| sign * y).collect();
        Ok(LpSolution { x, objective, duals })
    }
}

struct StandardSolution {
    x: Vec<f64>,
    duals: Vec<f64>,
}

/// Minimizes `cost . x` over `x >= 0` subject to `rows`.
fn simplex(n: usize, cost: &[f64], rows: &[(Vec<f64>, Sense, f64)]) -> Result<StandardSolution> {
    let m = rows.len();
    // normalize to nonnegative right-hand sides
    let mut flip = vec![false; m];
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let mut sense = Vec::with_capacity(m);
    for (i, (row, s, rhs)) in rows.iter().enumerate() {
        if *rhs < 0.0 {
            flip[i] = true;
            a.push(row.iter().map(|v| -v).collect());
            b.push(-rhs);
            sense.push(match s {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            });
        } else {
            a.push(row.clone());
            b.push(*rhs);
            sense.push(*s);
        }
    }

    // columns: structural | slacks/surpluses | artificials
    let n_slack = sense.iter().filter(|s| **s != Sense::Eq).count();
    let n_art = sense.iter().filter(|s| **s != Sense::Le).count();
    let total = n + n_slack + n_art;
    let art_start = n + n_slack;
    let mut t = vec![vec![0.0; total + 1]; m];
    let mut basis = vec![0; m];
    let (mut ks, mut ka) = (n, art_start);
    for i in 0..m {
        t[i][..n].copy_from_slice(&a[i]);
        t[i][total] = b[i];
        match sense[i] {
            Sense::Le => {
                t[i][ks] = 1.0;
                basis[i] = ks;
                ks += 1;
            }
            Sense::Ge => {
                t[i][ks] = -1.0;
                ks += 1;
                t[i][ka] = 1.0;
                basis[i] = ka;
                ka += 1;
            }
            Sense::Eq => {
                t[i][ka] = 1.0;
                basis[i] = ka;
                ka += 1;
            }
        }
    }
    let original: Vec<Vec<f64>> = t.iter().map(|r| r[..total].to_vec()).collect();
    let mut tab = Tableau {
        source: DMatrix::from_fn(m, total + 1, |i, j| t[i][j]),
        t,
        basis,
        total,
        live: None,
    };

    let scale = b.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut phase1 = vec![0.0; total];
    phase1[art_start..].iter_mut().for_each(|c| *c = 1.0);
    let all = vec![true; total];
    tab.optimize(&phase1, &all)?;
    let infeas: f64 = (0..m)
        .filter(|&i| tab.basis[i] >= art_start)
        .map(|i| tab.t[i][total])
        .sum();
    if infeas > 1e-7 * scale {
        return Err(Error::Infeasible);
    }
    // drive zero-level artificials out of the basis, dropping redundant rows
    let mut live = vec![true; m];
    for i in 0..m {
        if tab.basis[i] < art_start {
            continue;
        }
        match (0..art_start).find(|&j| !tab.basis.contains(&j) && tab.t[i][j].abs() > PIVOT_EPS) {
            Some(j) => tab.pivot(i, j),
            None => live[i] = false,
        }
    }
    let mut allowed = vec![true; total];
    allowed[art_start..].iter_mut().for_each(|a| *a = false);
    let mut phase2 = cost.to_vec();
    phase2.resize(total, 0.0);
    tab.live = Some(live.clone());
    tab.optimize(&phase2, &allowed)?;

    let mut x = vec![0.0; total];
    for i in 0..m {
        if live[i] {
            x[tab.basis[i]] = tab.t[i][total];
        }
    }

    // duals from B' y = c_B over the live rows
    let live_rows: Vec<usize> = (0..m).filter(|&i| live[i]).collect();
    let k = live_rows.len();
    let mut duals = vec![0.0; m];
    if k > 0 {
        let bmat = DMatrix::from_fn(k, k, |r, c| original[live_rows[r]][tab.basis[live_rows[c]]]);
        let cb = DVector::from_fn(k, |c, _| phase2[tab.basis[live_rows[c]]]);
        if let Some(y) = bmat.transpose().lu().solve(&cb) {
            for (r, &i) in live_rows.iter().enumerate() {
                duals[i] = if flip[i] { -y[r] } else { y[r] };
            }
        }
    }
    x.truncate(n);
    Ok(StandardSolution { x, duals })
}

struct Tableau {
    t: Vec<Vec<f64>>,
    /// The initial tableau `[A | b]`, used to recompute `B^-1 [A | b]`.
    source: DMatrix<f64>,
    basis: Vec<usize>,
    total: usize,
    live: Option<Vec<bool>>,
}

impl Tableau {
    fn is_live(&self, i: usize) -> bool {
        self.live.as_ref().is_none_or(|l| l[i])
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
        self.basis[r] = c;
        self.refactor();
    }

    /// Recomputes the tableau from the initial one and the current basis.
    /// Without this, eliminations leave roundoff where exact zeros belong,
    /// and a later pivot on such an entry ruins the tableau.
    fn refactor(&mut self) {
        let m = self.t.len();
        let b = DMatrix::from_fn(m, m, |i, k| self.source[(i, self.basis[k])]);
        let Some(fresh) = b.lu().solve(&self.source) else { return };
        if fresh.iter().any(|v| !v.is_finite()) {
            return;
        }
        for (i, row) in self.t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let x = fresh[(i, j)];
                *v = if x.abs() < 1e-12 { 0.0 } else { x };
            }
        }
    }

    /// Primal simplex with Bland's rule from the current feasible basis.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        let m = self.t.len();
        let rhs = self.total;
        let cmax = cost.iter().fold(1.0_f64, |a, c| a.max(c.abs()));
        let cap = 50 * (m + self.total);
        for _ in 0..cap {
            let entering = (0..self.total).find(|&j| {
                if !allowed[j] || self.basis.contains(&j) {
                    return false;
                }
                let mut r = cost[j];
                for i in 0..m {
                    if self.is_live(i) {
                        r -= cost[self.basis[i]] * self.t[i][j];
                    }
                }
                r < -COST_EPS * cmax
            });
            let Some(j) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if !self.is_live(i) || self.t[i][j] <= PIVOT_EPS {
                    continue;
                }
                let ratio = self.t[i][rhs].max(0.0) / self.t[i][j];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else { return Err(Error::Unbounded) };
            self.pivot(r, j);
        }
        Err(Error::Unknown(format!("simplex did not terminate within {cap} pivots")))
    }
}

/// Expected-cost dispatch of a risk-neutral instance.
#[derive(Debug, Clone, Serialize)]
pub struct WelfareSolution {
    pub v_da: Vec<f64>,
    /// `[i][s]`
    pub g_rt: Vec<Vec<f64>>,
    pub v_rt: Vec<Vec<f64>>,
    pub w_rt: Vec<Vec<f64>>,
    pub lam_rt: Vec<f64>,
    pub lam_da: f64,
    pub expected_cost: f64,
}

/// Minimizes expected fuel and production cost subject to real-time
/// clearing, fuel balance and capacity. Prices are the clearing duals
/// divided by the scenario probabilities.
pub fn solve_welfare_lp(inst: &MarketInstance) -> Result<WelfareSolution> {
    if !inst.is_risk_neutral() {
        return Err(Error::Precondition("welfare LP needs every risk level equal to 1".into()));
    }
    let (ni, ns) = (inst.num_generators(), inst.num_scenarios());
    let pi = &inst.scenarios.pi;
    let mut lp = LpModel::minimize();
    let mut v_da = Vec::new();
    let mut g = vec![vec![0; ns]; ni];
    let mut v = vec![vec![0; ns]; ni];
    let mut w = vec![vec![0; ns]; ni];
    for (i, gen) in inst.generators.iter().enumerate() {
        v_da.push(lp.add_var(VarBound::NonNegative, gen.c_f));
        for s in 0..ns {
            g[i][s] = lp.add_var(VarBound::Upper(gen.q), pi[s] * gen.c);
            v[i][s] = lp.add_var(VarBound::NonNegative, pi[s] * gen.c_i[s]);
            w[i][s] = lp.add_var(VarBound::NonNegative, -pi[s] * gen.r[s]);
            lp.add_row(
                &[(g[i][s], 1.0), (v[i][s], -1.0), (v_da[i], -1.0), (w[i][s], 1.0)],
                Sense::Eq,
                gen.f,
            );
        }
    }
    let clearing: Vec<usize> = (0..ns)
        .map(|s| {
            let terms: Vec<(usize, f64)> = (0..ni).map(|i| (g[i][s], 1.0)).collect();
            lp.add_row(&terms, Sense::Eq, inst.scenarios.d_rt[s])
        })
        .collect();
    let sol = lp.solve()?;
    let lam_rt: Vec<f64> = (0..ns).map(|s| sol.duals[clearing[s]] / pi[s]).collect();
    let pick = |ix: &Vec<Vec<usize>>| -> Vec<Vec<f64>> {
        ix.iter().map(|r| r.iter().map(|&k| sol.x[k]).collect()).collect()
    };
    Ok(WelfareSolution {
        v_da: v_da.iter().map(|&k| sol.x[k]).collect(),
        g_rt: pick(&g),
        v_rt: pick(&v),
        w_rt: pick(&w),
        lam_da: inst.scenarios.expect(&lam_rt),
        lam_rt,
        expected_cost: sol.objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Agent {
    Generator(usize),
    Demand,
    Arbitrager,
}

impl std::fmt::Display for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Agent::Generator(i) => write!(f, "generator {}", i + 1),
            Agent::Demand => f.write_str("demand"),
            Agent::Arbitrager => f.write_str("arbitrager"),
        }
    }
}

/// Prices an agent takes as given, plus the reserve volume the demand
/// agent's closeout income depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSignal {
    pub lam_da: f64,
    pub lam_rt: Vec<f64>,
    pub rho: f64,
    pub lam_lf: f64,
    pub total_e: f64,
}

impl PriceSignal {
    pub fn from_solution(model: &MarketModel, z: &[f64]) -> Self {
        let v = model.view(z);
        PriceSignal {
            lam_da: v.lam_da(),
            lam_rt: v.lam_rt_all(),
            rho: v.rho(),
            lam_lf: v.lam_lf(),
            total_e: v.total_e(),
        }
    }

    fn da_premium(&self, design: MarketDesign) -> f64 {
        match design {
            MarketDesign::Emo => 0.0,
            MarketDesign::Emir { .. } => self.rho,
            MarketDesign::EmoLf { .. } => self.lam_lf,
        }
    }
}

/// `max_eta eta - (1/alpha) sum_s pi_s [eta - z_s]^+`, attained at one of
/// the `z_s`.
pub fn cvar(z: &[f64], pi: &[f64], alpha: f64) -> f64 {
    z.iter()
        .map(|&eta| {
            eta - pi
                .iter()
                .zip(z)
                .map(|(p, zs)| p * (eta - zs).max(0.0))
                .sum::<f64>()
                / alpha
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOptimum {
    pub value: f64,
    /// The agent's decisions, in the order documented on
    /// [`solve_agent_lp`].
    pub decision: Vec<f64>,
}

/// Adds `eta` and `u_s` with `u_s >= eta - Z_s` where `Z_s = k_s + sum terms`,
/// and sets the CVaR objective.
fn add_cvar(lp: &mut LpModel, pi: &[f64], alpha: f64, profit: &[(f64, Vec<(usize, f64)>)]) {
    let eta = lp.add_var(VarBound::Free, 1.0);
    for (s, (constant, terms)) in profit.iter().enumerate() {
        let u = lp.add_var(VarBound::NonNegative, -pi[s] / alpha);
        // u - eta + sum terms >= -constant
        let mut row = vec![(u, 1.0), (eta, -1.0)];
        row.extend_from_slice(terms);
        lp.add_row(&row, Sense::Ge, -constant);
    }
}

/// Optimal value of one agent's problem at fixed prices.
///
/// Decisions are returned as: generator `[g_da, e, v_da, (g_rt, v_rt, w_rt)
/// per scenario]` (`e` is 0 outside EMIR), demand `[d_da]`, arbitrager
/// `[a, b]`. `position_bound`, if given, caps every otherwise unbounded
/// decision so that the problem stays bounded at slightly inexact prices.
pub fn solve_agent_lp(
    inst: &MarketInstance,
    agent: Agent,
    prices: &PriceSignal,
    position_bound: Option<f64>,
) -> Result<AgentOptimum> {
    let ns = inst.num_scenarios();
    if prices.lam_rt.len() != ns {
        return Err(Error::Dimension {
            expected: ns,
            got: prices.lam_rt.len(),
        });
    }
    let finite = [prices.lam_da, prices.rho, prices.lam_lf, prices.total_e]
        .iter()
        .chain(&prices.lam_rt)
        .all(|p| p.is_finite());
    if !finite {
        return Err(Error::Precondition("prices must be finite".into()));
    }
    let pi = &inst.scenarios.pi;
    let open = match position_bound {
        Some(m) => VarBound::Upper(m),
        None => VarBound::NonNegative,
    };
    let premium = prices.da_premium(inst.design);
    let closeout: Vec<f64> = match inst.design.strike() {
        Some(k) => prices.lam_rt.iter().map(|l| (l - k).max(0.0)).collect(),
        None => vec![0.0; ns],
    };
    let mut lp = LpModel::maximize();
    let decision_vars: Vec<usize>;
    match agent {
        Agent::Generator(i) => {
            let gen = inst
                .generators
                .get(i)
                .ok_or_else(|| Error::Unknown(format!("generator {}", i + 1)))?;
            let g_da = lp.add_var(VarBound::NonNegative, 0.0);
            let e = lp.add_var(
                if inst.design.strike().is_some() { VarBound::NonNegative } else { VarBound::Upper(0.0) },
                0.0,
            );
            let v_da = lp.add_var(open, 0.0);
            lp.add_row(&[(g_da, 1.0), (e, 1.0)], Sense::Le, gen.q);
            let mut vars = vec![g_da, e, v_da];
            let mut profit = Vec::with_capacity(ns);
            for s in 0..ns {
                let g = lp.add_var(VarBound::Upper(gen.q), 0.0);
                let v = lp.add_var(open, 0.0);
                let w = lp.add_var(open, 0.0);
                lp.add_row(&[(g, 1.0), (v, -1.0), (v_da, -1.0), (w, 1.0)], Sense::Eq, gen.f);
                vars.extend([g, v, w]);
                let lam = prices.lam_rt[s];
                profit.push((
                    0.0,
                    vec![
                        (g_da, prices.lam_da + premium - lam),
                        (e, prices.rho - closeout[s]),
                        (g, lam - gen.c),
                        (v_da, -gen.c_f),
                        (v, -gen.c_i[s]),
                        (w, gen.r[s]),
                    ],
                ));
            }
            add_cvar(&mut lp, pi, gen.alpha, &profit);
            decision_vars = vars;
        }
        Agent::Demand => {
            let d = lp.add_var(
                if inst.demand.participates_da { open } else { VarBound::Upper(0.0) },
                0.0,
            );
            let fixed = inst.design.fer().map_or(0.0, |fer| -premium * fer);
            let profit: Vec<(f64, Vec<(usize, f64)>)> = (0..ns)
                .map(|s| {
                    let lam = prices.lam_rt[s];
                    (
                        -lam * inst.scenarios.d_rt[s] + fixed + closeout[s] * prices.total_e,
                        vec![(d, lam - prices.lam_da)],
                    )
                })
                .collect();
            add_cvar(&mut lp, pi, inst.demand.alpha, &profit);
            decision_vars = vec![d];
        }
        Agent::Arbitrager => {
            let expected = inst.scenarios.expect(&prices.lam_rt);
            let spread = prices.lam_da - expected;
            let a = lp.add_var(open, spread);
            let b = lp.add_var(open, -spread);
            decision_vars = vec![a, b];
        }
    }
    let sol = lp.solve()?;
    Ok(AgentOptimum {
        value: sol.objective,
        decision: decision_vars.iter().map(|&k| sol.x[k]).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentGap {
    pub agent: Agent,
    /// Risk-adjusted objective of the candidate's own decisions.
    pub realized: f64,
    /// Best achievable objective at the candidate's prices.
    pub optimum: f64,
    pub gap: f64,
    /// Largest violation of the agent's own constraints by the candidate.
    pub infeasibility: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BestResponseReport {
    pub agents: Vec<AgentGap>,
    /// Largest violation among the market-clearing conditions.
    pub clearing_violation: f64,
    pub max_gap: f64,
    pub certified: bool,
}

pub const GAP_TOL: f64 = 1e-6;
pub const CLEARING_TOL: f64 = 1e-7;
pub const MONEY_TOL: f64 = 1e-8;

/// Cap on otherwise unbounded positions in the best-response problems: ten
/// times total capacity plus peak demand.
pub fn position_bound(inst: &MarketInstance) -> f64 {
    let peak = inst.scenarios.d_rt.iter().cloned().fold(0.0, f64::max);
    10.0 * (inst.total_capacity() + peak)
}

/// Best-response gap of every agent and the clearing conditions at `z`.
pub fn check_equilibrium(model: &MarketModel, z: &[f64]) -> Result<BestResponseReport> {
    let inst = model.instance();
    let v = model.view(z);
    let prices = PriceSignal::from_solution(model, z);
    let profits = model.profits(z)?;
    let pi = &inst.scenarios.pi;
    let ns = inst.num_scenarios();
    let bound = Some(position_bound(inst));
    let mut agents = Vec::new();

    for (i, gen) in inst.generators.iter().enumerate() {
        let opt = solve_agent_lp(inst, Agent::Generator(i), &prices, bound)?;
        let mut infeas = [v.g_da(i), v.e(i), v.v_da(i)]
            .iter()
            .fold(0.0_f64, |m, x| m.max(-x))
            .max(v.g_da(i) + v.e(i) - gen.q);
        for s in 0..ns {
            let balance = v.g_rt(i, s) - v.v_rt(i, s) - v.v_da(i) + v.w_rt(i, s) - gen.f;
            infeas = infeas
                .max(balance.abs())
                .max(v.g_rt(i, s) - gen.q)
                .max(-v.g_rt(i, s))
                .max(-v.v_rt(i, s))
                .max(-v.w_rt(i, s));
        }
        let realized = cvar(&profits.generator[i], pi, gen.alpha);
        agents.push(AgentGap {
            agent: Agent::Generator(i),
            realized,
            optimum: opt.value,
            gap: opt.value - realized,
            infeasibility: infeas,
        });
    }

    let opt = solve_agent_lp(inst, Agent::Demand, &prices, bound)?;
    let realized = cvar(&profits.demand, pi, inst.demand.alpha);
    let d_infeas = if inst.demand.participates_da { -v.d_da() } else { v.d_da().abs() };
    agents.push(AgentGap {
        agent: Agent::Demand,
        realized,
        optimum: opt.value,
        gap: opt.value - realized,
        infeasibility: d_infeas.max(0.0),
    });

    let opt = solve_agent_lp(inst, Agent::Arbitrager, &prices, bound)?;
    let realized = inst.scenarios.expect(&profits.arbitrage);
    agents.push(AgentGap {
        agent: Agent::Arbitrager,
        realized,
        optimum: opt.value,
        gap: opt.value - realized,
        infeasibility: (-v.a()).max(-v.b()).max(0.0),
    });

    let mut clearing: f64 = (v.total_g_da() + v.a() - v.d_da() - v.b()).abs();
    for s in 0..ns {
        let supply: f64 = (0..inst.num_generators()).map(|i| v.g_rt(i, s)).sum();
        clearing = clearing.max((supply - inst.scenarios.d_rt[s]).abs());
    }
    if let Some(fer) = inst.design.fer() {
        let (price, slack) = match inst.design {
            MarketDesign::Emir { .. } => (v.rho(), v.total_g_da() + v.total_e() - fer),
            _ => (v.lam_lf(), v.total_g_da() - fer),
        };
        let scale = 1.0 + fer;
        clearing = clearing
            .max(-slack)
            .max(-price)
            .max((price * slack).abs() / scale);
    }

    let max_gap = agents.iter().map(|a| a.gap).fold(f64::NEG_INFINITY, f64::max);
    let max_infeas = agents.iter().map(|a| a.infeasibility).fold(0.0, f64::max);
    let clearing_violation = clearing.max(max_infeas);
    Ok(BestResponseReport {
        certified: max_gap <= GAP_TOL && clearing_violation <= CLEARING_TOL,
        agents,
        clearing_violation,
        max_gap,
    })
}

/// Per-scenario cash residual: generator receipts net of fuel and
/// production costs, plus demand and arbitrage cash flows, plus those
/// external costs. Every settlement term cancels at a cleared solution, so
/// each entry should be zero.
pub fn money_balance(model: &MarketModel, z: &[f64]) -> Result<Vec<f64>> {
    let inst = model.instance();
    let v = model.view(z);
    let p = model.profits(z)?;
    Ok((0..inst.num_scenarios())
        .map(|s| {
            let mut total = p.demand[s] + p.arbitrage[s];
            for (i, g) in inst.generators.iter().enumerate() {
                let cost = g.c * v.g_rt(i, s) + g.c_f * v.v_da(i) + g.c_i[s] * v.v_rt(i, s)
                    - g.r[s] * v.w_rt(i, s);
                total += p.generator[i][s] + cost;
            }
            total
        })
        .collect())
}

/// Brute-force lower bound on a single generator's best response: a grid
/// over `(v_da, g_da, e)` with the real-time stage optimized exactly per
/// scenario. A pass at `coarse` MWh is refined tenfold around its best
/// point until the step reaches `fine` MWh.
pub fn grid_search_generator(
    inst: &MarketInstance,
    i: usize,
    prices: &PriceSignal,
    coarse: f64,
    fine: f64,
) -> f64 {
    let gen = &inst.generators[i];
    let ns = inst.num_scenarios();
    let pi = &inst.scenarios.pi;
    let premium = prices.da_premium(inst.design);
    let has_e = inst.design.strike().is_some();
    let closeout: Vec<f64> = match inst.design.strike() {
        Some(k) => prices.lam_rt.iter().map(|l| (l - k).max(0.0)).collect(),
        None => vec![0.0; ns],
    };
    // best real-time margin given the advance fuel position
    let rt_value = |s: usize, v_da: f64| -> f64 {
        let lam = prices.lam_rt[s];
        let owned = gen.f + v_da;
        let value = |g: f64| {
            (lam - gen.c) * g - gen.c_i[s] * (g - owned).max(0.0) + gen.r[s] * (owned - g).max(0.0)
        };
        [0.0, owned.min(gen.q), gen.q].into_iter().map(value).fold(f64::NEG_INFINITY, f64::max)
    };
    let objective = |v_da: f64, g_da: f64, e: f64| -> f64 {
        let z: Vec<f64> = (0..ns)
            .map(|s| {
                let lam = prices.lam_rt[s];
                (prices.lam_da + premium - lam) * g_da + (prices.rho - closeout[s]) * e
                    - gen.c_f * v_da
                    + rt_value(s, v_da)
            })
            .collect();
        cvar(&z, pi, gen.alpha)
    };
    let v_max = gen.q + inst.scenarios.d_rt.iter().cloned().fold(0.0, f64::max);
    let search = |v0: f64, v1: f64, g0: f64, g1: f64, e0: f64, e1: f64, step: f64| {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
        let count = |a: f64, b: f64| ((b - a) / step).round().max(0.0) as usize;
        for a in 0..=count(v0, v1) {
            let v = v0 + a as f64 * step;
            for b in 0..=count(g0, g1) {
                let g = g0 + b as f64 * step;
                let emax = if has_e { e1.min(gen.q - g) } else { 0.0 };
                for c in 0..=count(e0, emax.max(e0)) {
                    let e = e0 + c as f64 * step;
                    if g + e > gen.q + 1e-12 {
                        continue;
                    }
                    let val = objective(v, g, e);
                    if val > best.0 {
                        best = (val, v, g, e);
                    }
                }
            }
        }
        best
    };
    let e_max = if has_e { gen.q } else { 0.0 };
    let mut best = search(0.0, v_max, 0.0, gen.q, 0.0, e_max, coarse);
    let mut width = coarse;
    while width > fine {
        let step = (width / 10.0).max(fine);
        let (_, v, g, e) = best;
        let lo = |x: f64| (x - width).max(0.0);
        best = search(
            lo(v),
            (v + width).min(v_max),
            lo(g),
            (g + width).min(gen.q),
            lo(e),
            (e + width).min(e_max),
            step,
        );
        width = step;
    }
    best.0
}
