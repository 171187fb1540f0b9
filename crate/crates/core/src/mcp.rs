//! Mixed complementarity problems and their Fischer–Burmeister
//! reformulation.
//!
//! A system pairs each variable `z_j` with one residual component `F_j(z)`.
//! For a nonnegative variable the pairing reads `0 <= F_j ⊥ z_j >= 0`; for a
//! free variable it reads `F_j = 0`. Nothing here knows about markets.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    NonNegative,
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    /// Agent or equation group, e.g. `"gen1"`, `"demand"`, `"prices"`.
    pub block: String,
}

/// Records and replays the arguments of every plus-function `[x]^+`
/// evaluated by a residual.
///
/// During Jacobian assembly the residual is first evaluated with
/// [`KinkTape::record`]; the perturbed evaluations then run in replay mode,
/// where each plus-function is frozen to the branch selected at the base
/// point. At an argument of exactly zero the slope is fixed to 0.5.
#[derive(Debug, Default, Clone)]
pub struct KinkTape {
    mode: TapeMode,
    args: Vec<f64>,
    cursor: usize,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
enum TapeMode {
    #[default]
    Exact,
    Record,
    Replay,
}

/// Generalized derivative element of `[x]^+` at `x = 0`.
pub const PLUS_KINK_SLOPE: f64 = 0.5;

impl KinkTape {
    pub fn exact() -> Self {
        KinkTape::default()
    }

    pub fn record() -> Self {
        KinkTape {
            mode: TapeMode::Record,
            ..Default::default()
        }
    }

    fn rewind_for_replay(&mut self) {
        self.mode = TapeMode::Replay;
        self.cursor = 0;
    }

    /// Arguments seen by the last recorded evaluation, in call order.
    pub fn arguments(&self) -> &[f64] {
        &self.args
    }

    pub fn plus(&mut self, x: f64) -> f64 {
        match self.mode {
            TapeMode::Exact => x.max(0.0),
            TapeMode::Record => {
                self.args.push(x);
                x.max(0.0)
            }
            TapeMode::Replay => {
                let x0 = self.args[self.cursor];
                self.cursor += 1;
                x0.max(0.0) + plus_slope(x0) * (x - x0)
            }
        }
    }
}

pub fn plus_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        PLUS_KINK_SLOPE
    }
}

/// The residual map `F`. Implementations must call [`KinkTape::plus`] for
/// every plus-function, in an order that depends only on the problem and not
/// on `z`.
pub trait Residual: Send + Sync {
    fn eval(&self, z: &[f64], tape: &mut KinkTape, out: &mut [f64]);
}

impl<F> Residual for F
where
    F: Fn(&[f64], &mut KinkTape, &mut [f64]) + Send + Sync,
{
    fn eval(&self, z: &[f64], tape: &mut KinkTape, out: &mut [f64]) {
        self(z, tape, out)
    }
}

#[derive(Clone)]
pub struct McpSystem {
    variables: Vec<VariableSpec>,
    residual: Arc<dyn Residual>,
    units: Vec<f64>,
}

impl std::fmt::Debug for McpSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("McpSystem")
            .field("dim", &self.dim())
            .finish_non_exhaustive()
    }
}

impl McpSystem {
    /// Panics if two variables share a name.
    pub fn new(variables: Vec<VariableSpec>, residual: Arc<dyn Residual>) -> Self {
        let mut seen = std::collections::HashSet::new();
        for v in &variables {
            assert!(seen.insert(v.name.as_str()), "duplicate variable name {}", v.name);
        }
        let units = vec![1.0; variables.len()];
        McpSystem {
            variables,
            residual,
            units,
        }
    }

    /// Typical magnitude of each variable, used by the solver to scale its
    /// iterates. Panics unless every unit is positive and finite.
    pub fn with_units(mut self, units: Vec<f64>) -> Self {
        assert_eq!(units.len(), self.dim(), "one unit per variable");
        assert!(units.iter().all(|u| u.is_finite() && *u > 0.0), "units must be positive");
        self.units = units;
        self
    }

    pub fn units(&self) -> &[f64] {
        &self.units
    }

    pub fn dim(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// `F(z)` exactly as assembled.
    pub fn residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let mut out = vec![0.0; z.len()];
        self.residual.eval(z, &mut KinkTape::exact(), &mut out);
        Ok(out)
    }

    fn residual_with(&self, z: &[f64], tape: &mut KinkTape, out: &mut [f64]) {
        self.residual.eval(z, tape, out);
    }

    /// Componentwise FB residual: `phi(z_j, F_j)` for nonnegative variables,
    /// `F_j` for free ones.
    pub fn fb_residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        let f = self.residual(z)?;
        Ok(self.fb_from(z, &f))
    }

    pub(crate) fn fb_from(&self, z: &[f64], f: &[f64]) -> Vec<f64> {
        self.variables
            .iter()
            .enumerate()
            .map(|(j, v)| match v.kind {
                VarKind::NonNegative => fischer_burmeister(z[j], f[j]),
                VarKind::Free => f[j],
            })
            .collect()
    }

    /// Central finite-difference Jacobian of `F`, with plus-functions frozen
    /// to their base-point branch. Column `j` uses step `h * max(1, |z_j|)`.
    pub fn residual_jacobian(&self, z: &[f64], h: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_dim(z)?;
        let n = z.len();
        let mut tape = KinkTape::record();
        let mut f0 = vec![0.0; n];
        self.residual_with(z, &mut tape, &mut f0);
        if let Some(j) = f0.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                index: j,
                name: self.variables[j].name.clone(),
            });
        }
        tape.rewind_for_replay();

        let mut jac = DMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let step = h * z[j].abs().max(1.0);
            zp[j] = z[j] + step;
            tape.cursor = 0;
            self.residual_with(&zp, &mut tape, &mut fp);
            zp[j] = z[j] - step;
            tape.cursor = 0;
            self.residual_with(&zp, &mut tape, &mut fm);
            zp[j] = z[j];
            // the actual spacing can differ from 2*step after rounding
            let width = (z[j] + step) - (z[j] - step);
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / width;
            }
        }
        Ok((f0, jac))
    }

    /// Generalized Jacobian of the FB residual at `z`.
    ///
    /// Returns `(F(z), Phi(z), H)`. Rows of nonnegative variables are
    /// `da * e_j + db * J_j` with `(da, db)` the partials of `phi`; at the
    /// FB kink `(0, 0)` both are `1 - 1/sqrt(2)`.
    pub fn generalized_jacobian(
        &self,
        z: &[f64],
        h: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
        if !(h > 0.0) {
            return Err(Error::Precondition(format!("finite-difference step must be positive, got {h}")));
        }
        let (f, mut jac) = self.residual_jacobian(z, h)?;
        let phi = self.fb_from(z, &f);
        for (j, v) in self.variables.iter().enumerate() {
            if v.kind == VarKind::Free {
                continue;
            }
            let (da, db) = fb_partials(z[j], f[j]);
            let mut row = jac.row_mut(j);
            row *= db;
            row[j] += da;
        }
        Ok((f, phi, jac))
    }

    /// Largest violation of any pairing: for nonnegative pairs the maximum of
    /// `|min(z_j, F_j)|`, `-z_j` and `-F_j`; for free pairs `|F_j|`.
    pub fn complementarity_error(&self, z: &[f64]) -> Result<f64> {
        let f = self.residual(z)?;
        Ok(self.complementarity_error_from(z, &f))
    }

    pub(crate) fn complementarity_error_from(&self, z: &[f64], f: &[f64]) -> f64 {
        self.variables
            .iter()
            .enumerate()
            .map(|(j, v)| pair_error(v.kind, z[j], f[j]))
            .fold(0.0, f64::max)
    }

    /// Per-component pairing errors, same measure as
    /// [`complementarity_error`](Self::complementarity_error).
    pub fn pair_errors(&self, z: &[f64]) -> Result<Vec<f64>> {
        let f = self.residual(z)?;
        Ok(self
            .variables
            .iter()
            .enumerate()
            .map(|(j, v)| pair_error(v.kind, z[j], f[j]))
            .collect())
    }
}

fn pair_error(kind: VarKind, z: f64, f: f64) -> f64 {
    if !z.is_finite() || !f.is_finite() {
        return f64::INFINITY;
    }
    match kind {
        VarKind::NonNegative => z.min(f).abs().max(-z).max(-f),
        VarKind::Free => f.abs(),
    }
}

/// `phi(a, b) = a + b - sqrt(a^2 + b^2)`; zero iff `a >= 0`, `b >= 0`, `ab = 0`.
pub fn fischer_burmeister(a: f64, b: f64) -> f64 {
    a + b - a.hypot(b)
}

/// Partial derivatives of `phi`, using the fixed element at the origin.
pub fn fb_partials(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        let c = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        (c, c)
    } else {
        (1.0 - a / r, 1.0 - b / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nn(name: &str) -> VariableSpec {
        VariableSpec {
            name: name.into(),
            kind: VarKind::NonNegative,
            block: "test".into(),
        }
    }

    fn free(name: &str) -> VariableSpec {
        VariableSpec {
            name: name.into(),
            kind: VarKind::Free,
            block: "test".into(),
        }
    }

    #[test]
    fn fb_values() {
        assert_eq!(fischer_burmeister(0.0, 3.0), 0.0);
        assert_eq!(fischer_burmeister(3.0, 0.0), 0.0);
        assert!((fischer_burmeister(1.0, 1.0) - (2.0 - 2f64.sqrt())).abs() < 1e-15);
        assert!((fischer_burmeister(1.0, 1.0) - 0.585786).abs() < 1e-6);
    }

    #[test]
    fn fb_partials_closed_form() {
        let (da, db) = fb_partials(1.0, 1.0);
        let want = 1.0 - 1.0 / 2f64.sqrt();
        assert!((da - want).abs() < 1e-15 && (db - want).abs() < 1e-15);
        let (ka, kb) = fb_partials(0.0, 0.0);
        assert!((ka - want).abs() < 1e-15 && (kb - want).abs() < 1e-15);
    }

    #[test]
    fn fb_zero_set_on_grid() {
        let grid: Vec<f64> = (0..=40).map(|k| -2.0 + 0.1 * k as f64).collect();
        for &a in &grid {
            for &b in &grid {
                let zero = fischer_burmeister(a, b).abs() < 1e-12;
                let comp = a >= -1e-12 && b >= -1e-12 && (a * b).abs() < 1e-12;
                assert_eq!(zero, comp, "a={a} b={b}");
            }
        }
    }

    proptest! {
        #[test]
        fn fb_sign_matches_complementarity(a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let phi = fischer_burmeister(a, b);
            if a > 1e-9 && b > 1e-9 {
                prop_assert!(phi > 0.0);
            }
            if a < -1e-9 || b < -1e-9 {
                prop_assert!(phi < 0.0);
            }
        }
    }

    fn toy() -> McpSystem {
        // x >= 0 ⊥ x - 1 + 2y ; y free ⊥ y - 3 ; w >= 0 ⊥ [x - 2]^+ + w
        let f = |z: &[f64], tape: &mut KinkTape, out: &mut [f64]| {
            out[0] = z[0] - 1.0 + 2.0 * z[1];
            out[1] = z[1] - 3.0;
            out[2] = 4.0 * tape.plus(z[0] - 2.0) + z[2];
        };
        McpSystem::new(vec![nn("x"), free("y"), nn("w")], Arc::new(f))
    }

    #[test]
    fn residual_dimension_mismatch() {
        assert!(matches!(
            toy().residual(&[0.0]),
            Err(Error::Dimension { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn linear_rows_are_exact() {
        let (_, jac) = toy().residual_jacobian(&[0.3, -1.7, 2.0], 1e-6).unwrap();
        assert!((jac[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((jac[(0, 1)] - 2.0).abs() < 1e-9);
        assert!(jac[(0, 2)].abs() < 1e-12);
        assert!((jac[(1, 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plus_function_branches() {
        let sys = toy();
        // active branch: [x-2]^+ at x = 3 has slope 1, times coefficient 4
        let (_, jac) = sys.residual_jacobian(&[3.0, 0.0, 0.0], 1e-6).unwrap();
        assert!((jac[(2, 0)] - 4.0).abs() < 1e-9);
        // inactive branch
        let (_, jac) = sys.residual_jacobian(&[1.0, 0.0, 0.0], 1e-6).unwrap();
        assert!(jac[(2, 0)].abs() < 1e-12);
        // exactly on the kink: fixed element 0.5
        let (_, jac) = sys.residual_jacobian(&[2.0, 0.0, 0.0], 1e-6).unwrap();
        assert!((jac[(2, 0)] - 2.0).abs() < 1e-9);
        // just off the kink, inside the difference stencil: still the branch slope
        let (_, jac) = sys.residual_jacobian(&[2.0 + 1e-9, 0.0, 0.0], 1e-6).unwrap();
        assert!((jac[(2, 0)] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn generalized_jacobian_rows() {
        let sys = toy();
        let z = [1.0, 0.0, 0.0];
        // F = (0, -3, 0): x row at (1, 0) has da = 0, db = 1
        let (f, phi, h) = sys.generalized_jacobian(&z, 1e-6).unwrap();
        assert_eq!(f, vec![0.0, -3.0, 0.0]);
        assert_eq!(phi[1], -3.0);
        assert!((h[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((h[(0, 1)] - 2.0).abs() < 1e-9);
        // w row at the origin uses the centered element on both sides
        let c = 1.0 - 1.0 / 2f64.sqrt();
        assert!((h[(2, 2)] - (c + c * 1.0)).abs() < 1e-9);
        assert!(sys.generalized_jacobian(&z, 0.0).is_err());
    }

    #[test]
    fn complementarity_error_cases() {
        let sys = toy();
        // solution: y = 3, x - 1 + 6 > 0 so x = 0, w = 0
        assert_eq!(sys.complementarity_error(&[0.0, 3.0, 0.0]).unwrap(), 0.0);
        assert!(sys.fb_residual(&[0.0, 3.0, 0.0]).unwrap().iter().all(|x| x.abs() < 1e-15));
        // bound violation
        assert!(sys.complementarity_error(&[-0.5, 3.0, 0.0]).unwrap() >= 0.5);
        // free equation violated by 2
        assert!(sys.complementarity_error(&[0.0, 5.0, 0.0]).unwrap() >= 2.0);
    }

    #[test]
    fn analytic_row_spot_check() {
        // bilinear residual: F0 = z0 * z1 - z2^2
        let f = |z: &[f64], _: &mut KinkTape, out: &mut [f64]| {
            out[0] = z[0] * z[1] - z[2] * z[2];
            out[1] = z[1];
            out[2] = z[2];
        };
        let sys = McpSystem::new(vec![free("a"), free("b"), free("c")], Arc::new(f));
        let z = [1.7, -2.3, 40.0];
        let (_, jac) = sys.residual_jacobian(&z, 1e-6).unwrap();
        let analytic = [z[1], z[0], -2.0 * z[2]];
        for k in 0..3 {
            let rel = (jac[(0, k)] - analytic[k]).abs() / analytic[k].abs().max(1.0);
            assert!(rel < 1e-6, "col {k}: {} vs {}", jac[(0, k)], analytic[k]);
        }
    }

    #[test]
    #[should_panic(expected = "duplicate variable name")]
    fn duplicate_names_rejected() {
        let f = |_: &[f64], _: &mut KinkTape, _: &mut [f64]| {};
        McpSystem::new(vec![nn("x"), nn("x")], Arc::new(f));
    }
}
