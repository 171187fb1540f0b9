//! Damped semismooth Newton method on the Fischer–Burmeister reformulation.
//!
//! Each iteration solves `(H + zeta I) d = -Phi` with `H` the generalized
//! Jacobian. When that direction is not a sufficient descent direction for
//! `psi = |Phi|^2 / 2`, a Levenberg–Marquardt step `(H'H + nu I) d = -H'Phi`
//! is used instead. The step length comes from Armijo backtracking on `psi`.
//! Converged points get further Newton steps, accepted only while the
//! complementarity error keeps dropping.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mcp::{fb_partials, McpSystem, VarKind};
use crate::model::MarketModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Target complementarity error.
    pub tol: f64,
    pub max_iters: usize,
    pub armijo_sigma: f64,
    pub max_halvings: usize,
    /// Perturbed restarts tried after the first attempt fails.
    pub restarts: usize,
    pub seed: u64,
    /// Proximal weight added to the Jacobian of `F`; 0 disables it.
    pub proximal: f64,
    pub fd_step: f64,
    /// Weight each residual row by the inverse of its largest unit-scaled
    /// Jacobian entry at the start point.
    pub row_scaling: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_iters: 200,
            armijo_sigma: 1e-4,
            max_halvings: 40,
            restarts: 20,
            seed: 0,
            proximal: 0.0,
            fd_step: 1e-6,
            row_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// No usable direction or step could be found.
    Singular,
    /// Iterates left every reasonable bound or became non-finite.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Complementarity error of the returned point.
    pub error: f64,
    /// Iterations used by the attempt that produced the point.
    pub iterations: usize,
    /// Iterations summed over every attempt.
    pub total_iterations: usize,
    /// Index of the attempt that produced the point; 0 is the supplied
    /// start. With row scaling, attempt 1 is the supplied start without row
    /// weights and later attempts alternate between the two on perturbed
    /// starts.
    pub restart: usize,
    /// `psi` at the start of every iteration of the returned attempt.
    pub merit_trace: Vec<f64>,
    pub point: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

const ZETA_START: f64 = 1e-10;
const ZETA_MAX: f64 = 1e-4;
const DESCENT_RHO: f64 = 1e-10;
const DESCENT_POWER: f64 = 2.1;
const DIVERGENCE_BOUND: f64 = 1e12;
const POLISH_STEPS: usize = 30;
const POLISH_FACTOR: f64 = 1e-4;

fn merit(phi: &[f64]) -> f64 {
    0.5 * phi.iter().map(|x| x * x).sum::<f64>()
}

/// Solves `(H + zeta I) d = rhs`, raising `zeta` until the solve succeeds.
fn regularized_solve(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let good = |d: &DVector<f64>| d.iter().all(|x| x.is_finite());
    if let Some(d) = h.clone().lu().solve(rhs) {
        if good(&d) {
            return Some(d);
        }
    }
    let n = h.nrows();
    let mut zeta = ZETA_START;
    while zeta <= ZETA_MAX {
        let m = h + DMatrix::identity(n, n) * zeta;
        if let Some(d) = m.lu().solve(rhs) {
            if good(&d) {
                return Some(d);
            }
        }
        zeta *= 10.0;
    }
    None
}

fn levenberg_marquardt(h: &DMatrix<f64>, grad: &DVector<f64>, phi_norm: f64) -> Option<DVector<f64>> {
    let n = h.nrows();
    let nu = phi_norm.max(1e-12);
    let m = h.transpose() * h + DMatrix::identity(n, n) * nu;
    let d = m.cholesky()?.solve(&(-grad));
    d.iter().all(|x| x.is_finite()).then_some(d)
}

struct Attempt {
    status: SolveStatus,
    z: Vec<f64>,
    error: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// Newton iterations run in unit-free coordinates `y = z / unit`. Row `j`
/// of `F` is weighted by `1 / max_k |J_jk unit_k|` taken at the start point,
/// so the FB function compares `y_j` with a dimensionless residual. Positive
/// weights leave the solution set unchanged.
struct Newton<'a> {
    sys: &'a McpSystem,
    opts: &'a SolveOptions,
    weighted: bool,
    row_weight: Vec<f64>,
}

impl Newton<'_> {
    fn units(&self) -> &[f64] {
        self.sys.units()
    }

    fn scaled_phi(&self, z: &[f64], f: &[f64]) -> Vec<f64> {
        let u = self.units();
        let a: Vec<f64> = z.iter().zip(u).map(|(z, u)| z / u).collect();
        let b: Vec<f64> = f.iter().zip(&self.row_weight).map(|(f, w)| f * w).collect();
        self.sys.fb_from(&a, &b)
    }

    fn fb(&self, z: &[f64]) -> Option<(Vec<f64>, f64)> {
        let f = self.sys.residual(z).ok()?;
        if f.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let err = self.sys.complementarity_error_from(z, &f);
        Some((self.scaled_phi(z, &f), err))
    }

    /// Generalized Jacobian of the scaled FB residual with respect to `y`,
    /// with the proximal term folded into the scaled `J`.
    fn jacobian(&self, z: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (f, mut h) = self.sys.residual_jacobian(z, self.opts.fd_step)?;
        let u = self.units();
        for (k, uk) in u.iter().enumerate() {
            h.column_mut(k).scale_mut(*uk);
        }
        for (j, v) in self.sys.variables().iter().enumerate() {
            let w = self.row_weight[j];
            let mut row = h.row_mut(j);
            row *= w;
            row[j] += self.opts.proximal;
            if v.kind == VarKind::NonNegative {
                let (da, db) = fb_partials(z[j] / u[j], f[j] * w);
                row *= db;
                row[j] += da;
            }
        }
        Ok((self.scaled_phi(z, &f), h))
    }

    fn set_row_weights(&mut self, z: &[f64]) {
        let n = self.sys.dim();
        self.row_weight = match self.sys.residual_jacobian(z, self.opts.fd_step) {
            Ok((_, j)) if self.weighted => (0..n)
                .map(|r| {
                    let m = (0..n)
                        .map(|k| (j[(r, k)] * self.units()[k]).abs())
                        .fold(0.0, f64::max);
                    if m > 0.0 { 1.0 / m } else { 1.0 }
                })
                .collect(),
            _ => vec![1.0; n],
        };
    }

    fn step(&self, z: &[f64], d: &DVector<f64>, t: f64) -> Vec<f64> {
        z.iter()
            .zip(self.units())
            .zip(d.iter())
            .map(|((z, u), d)| z + t * u * d)
            .collect()
    }

    fn run(&mut self, start: &[f64]) -> Attempt {
        self.set_row_weights(start);
        let mut z = start.to_vec();
        let mut trace = Vec::new();
        let Some((mut phi, mut err)) = self.fb(&z) else {
            return Attempt {
                status: SolveStatus::Diverged,
                z,
                error: f64::INFINITY,
                iterations: 0,
                trace,
            };
        };
        let mut iters = 0;
        let mut status = SolveStatus::MaxIters;
        while iters < self.opts.max_iters {
            let psi = merit(&phi);
            trace.push(psi);
            if err <= self.opts.tol {
                status = SolveStatus::Converged;
                break;
            }
            iters += 1;
            let Ok((_, h)) = self.jacobian(&z) else {
                status = SolveStatus::Diverged;
                break;
            };
            let phi_v = DVector::from_column_slice(&phi);
            let grad = h.transpose() * &phi_v;

            let mut dirs = Vec::with_capacity(3);
            if let Some(d) = regularized_solve(&h, &(-&phi_v)) {
                let slope = grad.dot(&d);
                if slope <= -DESCENT_RHO * d.norm().powf(DESCENT_POWER) {
                    dirs.push(d);
                }
            }
            if dirs.is_empty() {
                debug!("iteration {iters}: Newton direction rejected, using LM step");
            }
            if let Some(d) = levenberg_marquardt(&h, &grad, phi_v.norm()) {
                dirs.push(d);
            }
            dirs.push(-&grad);

            let mut moved = false;
            for d in &dirs {
                let slope = grad.dot(d);
                if !(slope < 0.0) {
                    continue;
                }
                let mut t = 1.0;
                for _ in 0..=self.opts.max_halvings {
                    let trial = self.step(&z, d, t);
                    if let Some((tphi, terr)) = self.fb(&trial) {
                        if merit(&tphi) <= psi + self.opts.armijo_sigma * t * slope {
                            z = trial;
                            phi = tphi;
                            err = terr;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if moved {
                    break;
                }
            }
            if !moved {
                debug!("iteration {iters}: line search failed, psi = {psi:e}");
                status = SolveStatus::Singular;
                break;
            }
            if z.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_BOUND) {
                status = SolveStatus::Diverged;
                break;
            }
            debug!("iteration {iters}: psi = {:e}, error = {err:e}", merit(&phi));
        }
        if status == SolveStatus::MaxIters && err <= self.opts.tol {
            status = SolveStatus::Converged;
        }
        if status == SolveStatus::Converged {
            self.polish(&mut z, &mut err);
        }
        Attempt {
            status,
            z,
            error: err,
            iterations: iters,
            trace,
        }
    }

    /// Extra damped Newton steps after convergence, kept only while they
    /// reduce the complementarity error; stops at `tol * POLISH_FACTOR`.
    fn polish(&self, z: &mut Vec<f64>, err: &mut f64) {
        for _ in 0..POLISH_STEPS {
            if *err <= self.opts.tol * POLISH_FACTOR {
                return;
            }
            let Ok((phi, h)) = self.jacobian(z) else { return };
            let phi_v = DVector::from_column_slice(&phi);
            let grad = h.transpose() * &phi_v;
            let dirs = [
                regularized_solve(&h, &(-&phi_v)),
                levenberg_marquardt(&h, &grad, phi_v.norm()),
            ];
            let psi = merit(&phi);
            let mut improved = false;
            for d in dirs.iter().flatten() {
                let mut t = 1.0;
                for _ in 0..=self.opts.max_halvings {
                    let trial = self.step(z, d, t);
                    if let Some((tphi, terr)) = self.fb(&trial) {
                        if terr < *err && merit(&tphi) <= psi {
                            *z = trial;
                            *err = terr;
                            improved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if improved {
                    break;
                }
            }
            debug!("polish: error {err:e}");
            if !improved {
                return;
            }
        }
    }
}

/// Perturbs every component uniformly by up to `0.5 (1 + |c|)`, keeping
/// nonnegative variables nonnegative.
pub fn perturb(sys: &McpSystem, center: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    sys.variables()
        .iter()
        .zip(center)
        .map(|(v, &c)| {
            let x = c + rng.gen_range(-1.0..=1.0) * 0.5 * (1.0 + c.abs());
            match v.kind {
                VarKind::NonNegative => x.max(0.0),
                VarKind::Free => x,
            }
        })
        .collect()
}

/// Runs Newton from `start`, then from seeded perturbations of it, until one
/// attempt converges. Without convergence the attempt with the smallest
/// error is reported.
pub fn solve(sys: &McpSystem, start: &[f64], opts: &SolveOptions) -> Result<SolveReport> {
    if start.len() != sys.dim() {
        return Err(crate::Error::Dimension {
            expected: sys.dim(),
            got: start.len(),
        });
    }
    let mut newton = Newton {
        sys,
        opts,
        weighted: opts.row_scaling,
        row_weight: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, Attempt)> = None;
    let mut total = 0;
    for k in 0..=opts.restarts {
        // With row scaling on, odd attempts run without weights: the
        // weighted merit occasionally stalls at a point the plain one does
        // not, and vice versa. Attempt 1 reuses the supplied start.
        let alternate = opts.row_scaling;
        newton.weighted = opts.row_scaling && k % 2 == 0;
        let fresh = if alternate { k <= 1 } else { k == 0 };
        let from = if fresh { start.to_vec() } else { perturb(sys, start, &mut rng) };
        let attempt = newton.run(&from);
        total += attempt.iterations;
        debug!("attempt {k}: {:?} error {:e} after {} iterations", attempt.status, attempt.error, attempt.iterations);
        let done = attempt.status == SolveStatus::Converged;
        let better = best.as_ref().is_none_or(|(_, b)| attempt.error < b.error);
        if done || better {
            best = Some((k, attempt));
        }
        if done {
            break;
        }
    }
    let (restart, a) = best.expect("at least one attempt runs");
    info!("solve finished: {:?}, error {:e}, restart {restart}", a.status, a.error);
    Ok(SolveReport {
        status: a.status,
        error: a.error,
        iterations: a.iterations,
        total_iterations: total,
        restart,
        merit_trace: a.trace,
        point: a.z,
    })
}

/// Starting point with zero quantities, `q` at the scenario probabilities,
/// real-time prices at the most expensive marginal spot cost and the
/// day-ahead price at their expectation.
pub fn default_start(model: &MarketModel) -> Vec<f64> {
    let inst = model.instance();
    let l = model.layout();
    let pi = &inst.scenarios.pi;
    let mut z = vec![0.0; model.system().dim()];
    let mut expected = 0.0;
    for s in 0..l.n_scen {
        let lam = inst
            .generators
            .iter()
            .map(|g| g.c + g.c_i[s])
            .fold(f64::NEG_INFINITY, f64::max);
        z[l.lam_rt(s)] = lam;
        expected += pi[s] * lam;
        for i in 0..l.n_gen {
            if let Some(k) = l.q(i, s) {
                z[k] = pi[s];
            }
        }
        if let Some(k) = l.q_d(s) {
            z[k] = pi[s];
        }
    }
    z[l.lam_da] = expected;
    z
}

/// Solves a market model from [`default_start`].
pub fn solve_model(model: &MarketModel, opts: &SolveOptions) -> Result<SolveReport> {
    solve(model.system(), &default_start(model), opts)
}

/// Independent solves from the default start and `n - 1` perturbations of
/// it. Each start gets one weighted and, with row scaling, one plain
/// attempt but no perturbed restarts. Useful to probe for multiple
/// equilibria.
pub fn multistart(model: &MarketModel, opts: &SolveOptions, n: usize) -> Vec<SolveReport> {
    use rayon::prelude::*;
    let sys = model.system();
    let center = default_start(model);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..n)
        .map(|k| if k == 0 { center.clone() } else { perturb(sys, &center, &mut rng) })
        .collect();
    let single = SolveOptions {
        restarts: usize::from(opts.row_scaling),
        ..*opts
    };
    starts
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let mut r = solve(sys, s, &single).expect("start has the system's dimension");
            r.restart = k;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcp::{KinkTape, VariableSpec};
    use std::sync::Arc;

    fn var(name: &str, kind: VarKind) -> VariableSpec {
        VariableSpec {
            name: name.into(),
            kind,
            block: "t".into(),
        }
    }

    /// LCP with M = [[2,1],[1,2]], q = (-5, -6): solution (4/3, 7/3).
    fn lcp() -> McpSystem {
        let f = |z: &[f64], _: &mut KinkTape, out: &mut [f64]| {
            out[0] = 2.0 * z[0] + z[1] - 5.0;
            out[1] = z[0] + 2.0 * z[1] - 6.0;
        };
        McpSystem::new(
            vec![var("x", VarKind::NonNegative), var("y", VarKind::NonNegative)],
            Arc::new(f),
        )
    }

    #[test]
    fn solves_small_lcp() {
        let r = solve(&lcp(), &[0.0, 0.0], &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert!((r.point[0] - 4.0 / 3.0).abs() < 1e-9);
        assert!((r.point[1] - 7.0 / 3.0).abs() < 1e-9);
        assert!(r.error <= 1e-9);
    }

    #[test]
    fn lcp_with_inactive_component() {
        // q = (1, -2): x = 0, y = 1
        let f = |z: &[f64], _: &mut KinkTape, out: &mut [f64]| {
            out[0] = 2.0 * z[0] + z[1] + 1.0;
            out[1] = z[0] + 2.0 * z[1] - 2.0;
        };
        let sys = McpSystem::new(
            vec![var("x", VarKind::NonNegative), var("y", VarKind::NonNegative)],
            Arc::new(f),
        );
        let r = solve(&sys, &[5.0, 5.0], &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert!(r.point[0].abs() < 1e-9 && (r.point[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn merit_decreases_monotonically() {
        let r = solve(&lcp(), &[10.0, 0.0], &SolveOptions::default()).unwrap();
        for w in r.merit_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn free_variable_equation() {
        let f = |z: &[f64], _: &mut KinkTape, out: &mut [f64]| {
            out[0] = z[0] * z[0] * z[0] - 8.0;
        };
        let sys = McpSystem::new(vec![var("x", VarKind::Free)], Arc::new(f));
        let r = solve(&sys, &[1.0], &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert!((r.point[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn plus_function_system() {
        // x >= 0 ⊥ x - [3 - x]^+ : solution x = 1.5
        let f = |z: &[f64], tape: &mut KinkTape, out: &mut [f64]| {
            out[0] = z[0] - tape.plus(3.0 - z[0]);
        };
        let sys = McpSystem::new(vec![var("x", VarKind::NonNegative)], Arc::new(f));
        let r = solve(&sys, &[10.0], &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert!((r.point[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_problem_reports_failure() {
        // x >= 0 ⊥ F = -1 has no solution
        let f = |_: &[f64], _: &mut KinkTape, out: &mut [f64]| out[0] = -1.0;
        let sys = McpSystem::new(vec![var("x", VarKind::NonNegative)], Arc::new(f));
        let opts = SolveOptions {
            restarts: 2,
            max_iters: 50,
            ..Default::default()
        };
        let r = solve(&sys, &[1.0], &opts).unwrap();
        assert!(!r.converged());
        assert!(r.error > 1e-3);
    }

    #[test]
    fn dimension_checked() {
        assert!(solve(&lcp(), &[0.0], &SolveOptions::default()).is_err());
    }

    #[test]
    fn perturbation_is_deterministic_and_bounded() {
        let sys = lcp();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let pa = perturb(&sys, &[2.0, 0.0], &mut a);
        let pb = perturb(&sys, &[2.0, 0.0], &mut b);
        assert_eq!(pa, pb);
        assert!(pa.iter().all(|&x| x >= 0.0));
        assert!((pa[0] - 2.0).abs() <= 1.5 && pa[1] <= 0.5);
    }

    #[test]
    fn proximal_term_still_converges() {
        let opts = SolveOptions {
            proximal: 1e-3,
            ..Default::default()
        };
        let r = solve(&lcp(), &[0.0, 0.0], &opts).unwrap();
        assert!(r.converged());
    }
}
