//! Ergodic constants on the torus by the small-discount method.
//!
//! For each discount `δ` the problem `F(D²u, p + Du, y) + δu = 0` is solved;
//! `-δ u(anchor)` converges to the ergodic constant `λ` at rate `O(δ)`, and
//! Richardson extrapolation over consecutive discounts removes the leading term.

use serde::Serialize;

use crate::dsl::Expr;
use crate::error::{Error, Result};
use crate::grid::{Mesh, TorusGrid};
use crate::model::{LinearSpec, OperatorSpec, Vec2};
use crate::problem::{halved_without_source, sample_interior, torus_problem, PointMap};
use crate::scheme::{sup, DriftStencil, InteriorOps, SolverParams};
use crate::sparse::Triplets;

/// Settings of the discount method.
#[derive(Debug, Clone)]
pub struct ErgodicParams {
    /// Decreasing discounts; default `[1e-2, 5e-3, 2.5e-3]`.
    pub deltas: Vec<f64>,
    /// Target accuracy of the constant; successive extrapolations may differ by at most ten times this.
    pub target_tol: f64,
    /// Bound on the sup-norm residual of the extrapolated pair.
    pub residual_tol: f64,
    pub solver: SolverParams,
    pub drift: DriftStencil,
    pub anchor: usize,
}

impl Default for ErgodicParams {
    fn default() -> Self {
        ErgodicParams {
            deltas: vec![1e-2, 5e-3, 2.5e-3],
            target_tol: 1e-4,
            residual_tol: 1e-3,
            solver: SolverParams::default(),
            drift: DriftStencil::Hybrid,
            anchor: 0,
        }
    }
}

/// One discount solve.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct DiscountStep {
    pub delta: f64,
    pub estimate: f64,
}

/// An ergodic constant with its corrector.
#[derive(Debug, Clone, Serialize)]
pub struct ErgodicSolution {
    pub constant: f64,
    pub residual: f64,
    pub history: Vec<DiscountStep>,
    /// Richardson estimates from consecutive discount pairs.
    pub extrapolations: Vec<f64>,
    #[serde(skip)]
    pub corrector: Vec<f64>,
    #[serde(skip)]
    pub grid: TorusGrid,
}

fn richardson(coarse: f64, fine: f64, ratio: f64) -> f64 {
    (ratio * fine - coarse) / (ratio - 1.0)
}

/// Ergodic constant of `F(D²w, shift + Dw) = λ` for already sampled operator data.
pub fn ergodic_constant(interior: &InteriorOps, grid: &TorusGrid, shift: Vec2, params: &ErgodicParams) -> Result<ErgodicSolution> {
    if params.deltas.is_empty() || params.deltas.windows(2).any(|w| w[1] >= w[0]) || params.deltas.iter().any(|&d| d <= 0.0) {
        return Err(Error::Config("discounts must be positive and strictly decreasing".into()));
    }
    let mesh = Mesh::Torus(grid.clone());
    let a = params.anchor;
    let mut history = Vec::new();
    let mut correctors: Vec<Vec<f64>> = Vec::new();
    for &delta in &params.deltas {
        let pb = torus_problem(interior.clone(), mesh.clone(), delta, 0.0, shift, params.drift);
        let u = pb.solve(&params.solver)?.values;
        history.push(DiscountStep {
            delta,
            estimate: -delta * u[a],
        });
        correctors.push(u.iter().map(|v| v - u[a]).collect());
    }
    let mut extrapolations = Vec::new();
    for k in 1..history.len() {
        let r = history[k - 1].delta / history[k].delta;
        extrapolations.push(richardson(history[k - 1].estimate, history[k].estimate, r));
    }
    if extrapolations.len() >= 2 {
        let (p, q) = (extrapolations[extrapolations.len() - 2], extrapolations[extrapolations.len() - 1]);
        if (p - q).abs() > 10.0 * params.target_tol {
            return Err(Error::ExtrapolationUnstable { first: p, second: q });
        }
    }
    let (constant, corrector) = match history.len() {
        1 => (history[0].estimate, correctors.pop().unwrap()),
        k => {
            let r = history[k - 2].delta / history[k - 1].delta;
            let fine = &correctors[k - 1];
            let coarse = &correctors[k - 2];
            (
                *extrapolations.last().unwrap(),
                fine.iter().zip(coarse).map(|(f, c)| richardson(*c, *f, r)).collect(),
            )
        }
    };
    let check = torus_problem(interior.clone(), mesh, 0.0, constant, shift, params.drift);
    let residual = sup(&check.residual(&corrector)?.0);
    if residual > params.residual_tol {
        return Err(Error::NonConvergence {
            iterations: params.deltas.len(),
            residual,
            history: history.iter().map(|h| h.estimate).collect(),
        });
    }
    Ok(ErgodicSolution {
        constant,
        residual,
        history,
        extrapolations,
        corrector,
        grid: grid.clone(),
    })
}

/// Ergodic constant `λ` of `F(D²ū, Dū, y) = λ` with the slow variable frozen at `x`.
pub fn lambda_torus(op: &OperatorSpec, grid: &TorusGrid, x: Vec2, params: &ErgodicParams) -> Result<ErgodicSolution> {
    let interior = sample_interior(op, &Mesh::Torus(grid.clone()), &PointMap::Cell { x })?;
    ergodic_constant(&interior, grid, [0.0; 2], params)
}

/// `λ̄(p)` of the drift cell problem `-tr(A D²v) - b·(p + Dv) = λ̄(p)`.
pub fn drift_cell_lambda(spec: &LinearSpec, p: Vec2, grid: &TorusGrid, x: Vec2, params: &ErgodicParams) -> Result<ErgodicSolution> {
    let mut l = spec.clone();
    l.f = Expr::constant(0.0);
    let interior = sample_interior(&OperatorSpec::Linear(l), &Mesh::Torus(grid.clone()), &PointMap::Cell { x })?;
    ergodic_constant(&interior, grid, p, params)
}

/// Least-squares linear fit of `p ↦ λ̄(p)`.
#[derive(Debug, Clone, Serialize)]
pub struct LinearityReport {
    pub samples: Vec<(Vec2, f64)>,
    pub slope: Vec2,
    pub deviation: f64,
}

pub fn linearity_audit(spec: &LinearSpec, ps: &[Vec2], grid: &TorusGrid, x: Vec2, params: &ErgodicParams) -> Result<LinearityReport> {
    let dim = grid.dim;
    if ps.len() < dim {
        return Err(Error::Config(format!("need at least {dim} slope samples")));
    }
    let samples: Vec<(Vec2, f64)> = ps
        .iter()
        .map(|&p| Ok((p, drift_cell_lambda(spec, p, grid, x, params)?.constant)))
        .collect::<Result<_>>()?;
    let slope = least_squares_linear(&samples, dim)?;
    let deviation = samples
        .iter()
        .map(|(p, l)| (l - slope[0] * p[0] - slope[1] * p[1]).abs())
        .fold(0.0, f64::max);
    Ok(LinearityReport { samples, slope, deviation })
}

fn least_squares_linear(samples: &[(Vec2, f64)], dim: usize) -> Result<Vec2> {
    let mut g = [[0.0; 2]; 2];
    let mut r = [0.0; 2];
    for (p, l) in samples {
        for i in 0..dim {
            r[i] += p[i] * l;
            for j in 0..dim {
                g[i][j] += p[i] * p[j];
            }
        }
    }
    if dim == 1 {
        if g[0][0] == 0.0 {
            return Err(Error::Config("slope samples are all zero".into()));
        }
        return Ok([r[0] / g[0][0], 0.0]);
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    if det.abs() < 1e-12 * (g[0][0] * g[1][1]).max(1e-300) {
        return Err(Error::Config("slope samples are collinear".into()));
    }
    Ok([(r[0] * g[1][1] - r[1] * g[0][1]) / det, (g[0][0] * r[1] - g[1][0] * r[0]) / det])
}

/// Outcome of the ergodic criterion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftCriterionReport {
    pub satisfied: bool,
    pub lambda_hat: f64,
}

/// Ergodic constant `λ̂` of `sup_α {-½ tr(a_α D²w) - b_α·(-f_N + Dw)}`; satisfied iff `λ̂ ≤ tol`.
pub fn inward_drift_criterion(op: &OperatorSpec, f_n: Vec2, grid: &TorusGrid, x: Vec2, params: &ErgodicParams, tol: f64) -> Result<DriftCriterionReport> {
    let hat = halved_without_source(op)?;
    let interior = sample_interior(&hat, &Mesh::Torus(grid.clone()), &PointMap::Cell { x })?;
    let sol = ergodic_constant(&interior, grid, [-f_n[0], -f_n[1]], params)?;
    Ok(DriftCriterionReport {
        satisfied: sol.constant <= tol,
        lambda_hat: sol.constant,
    })
}

/// Discrete ergodic pair of a linear operator from the bordered system `[L, -1; e_aᵀ, 0]`.
pub fn bordered_ergodic(interior: &InteriorOps, grid: &TorusGrid, shift: Vec2, drift: DriftStencil, anchor: usize) -> Result<(f64, Vec<f64>)> {
    if !matches!(interior, InteriorOps::Linear(_)) {
        return Err(Error::Unsupported("bordered solves need a linear operator".into()));
    }
    let n = grid.len();
    let rows = torus_problem(interior.clone(), Mesh::Torus(grid.clone()), 0.0, 0.0, shift, drift).assemble(None, None)?;
    let base = rows.triplets();
    let mut t = Triplets::with_capacity(n + 1, 0);
    for (i, j, v) in base.entries() {
        t.push(i, j, v);
    }
    for i in 0..n {
        t.push(i, n, -1.0);
    }
    t.push(n, anchor, 1.0);
    let mut rhs = rows.rhs.clone();
    rhs.push(0.0);
    let mut x = t.solve(&rhs)?;
    let lambda = x.pop().unwrap();
    Ok((lambda, x))
}

/// Invariant probability `m` of a linear operator: `Lᵀ m = 0`, `Σ m = 1`.
pub fn invariant_measure(interior: &InteriorOps, grid: &TorusGrid, drift: DriftStencil) -> Result<Vec<f64>> {
    if !matches!(interior, InteriorOps::Linear(_)) {
        return Err(Error::Unsupported("invariant measures need a linear operator".into()));
    }
    let n = grid.len();
    let rows = torus_problem(interior.clone(), Mesh::Torus(grid.clone()), 0.0, 0.0, [0.0; 2], drift).assemble(None, None)?;
    let base = rows.triplets().transpose();
    let mut t = Triplets::with_capacity(n + 1, 0);
    for (i, j, v) in base.entries() {
        t.push(i, j, v);
    }
    for i in 0..n {
        t.push(i, n, 1.0);
        t.push(n, i, 1.0);
    }
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = 1.0;
    let mut m = t.solve(&rhs)?;
    m.pop();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use std::f64::consts::PI;

    fn lin1(a: &str, b: &str, f: &str) -> LinearSpec {
        LinearSpec::new(vec![parse(a).unwrap()], vec![parse(b).unwrap()], parse(f).unwrap()).unwrap()
    }

    fn quad(f: impl Fn(f64) -> f64) -> f64 {
        let n = 20000;
        (0..n).map(|k| f((k as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
    }

    #[test]
    fn constant_source() {
        let g = TorusGrid::new(1, 32).unwrap();
        let s = lambda_torus(&OperatorSpec::Linear(lin1("1", "0", "2.5")), &g, [0.0; 2], &Default::default()).unwrap();
        // The discount rows have condition number ~ 1/(δ h²).
        assert!((s.constant + 2.5).abs() < 1e-8, "{}", s.constant);
        assert!(s.corrector.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn quadrature_oracle() {
        let g = TorusGrid::new(1, 256).unwrap();
        let s = lambda_torus(
            &OperatorSpec::Linear(lin1("1 + 0.5*sin(2*pi*y1)", "0", "cos(2*pi*y1)")),
            &g,
            [0.0; 2],
            &Default::default(),
        )
        .unwrap();
        let a = |y: f64| 1.0 + 0.5 * (2.0 * PI * y).sin();
        let oracle = -quad(|y| (2.0 * PI * y).cos() / a(y)) / quad(|y| 1.0 / a(y));
        assert!((s.constant - oracle).abs() < 1e-4, "{} vs {oracle}", s.constant);
    }

    #[test]
    fn hjb_picks_smaller_source() {
        let g = TorusGrid::new(1, 16).unwrap();
        let op = OperatorSpec::Hjb {
            controls: vec![lin1("1", "0", "1"), lin1("1", "0", "3")],
        };
        let s = lambda_torus(&op, &g, [0.0; 2], &Default::default()).unwrap();
        assert!((s.constant + 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_drift_cell() {
        let g = TorusGrid::new(1, 32).unwrap();
        let s = drift_cell_lambda(&lin1("1.3", "0.7", "0"), [2.0, 0.0], &g, [0.0; 2], &Default::default()).unwrap();
        assert!((s.constant + 1.4).abs() < 1e-10);
    }

    #[test]
    fn divergence_form_corrector_matches_quadrature() {
        let n = 512;
        let g = TorusGrid::new(1, n).unwrap();
        let s = drift_cell_lambda(
            &lin1("2 + sin(2*pi*y1)", "2*pi*cos(2*pi*y1)", "0"),
            [1.0, 0.0],
            &g,
            [0.0; 2],
            &Default::default(),
        )
        .unwrap();
        assert!(s.constant.abs() < 1e-6, "{}", s.constant);
        // v' = -1 + c / a with c the harmonic mean.
        let a = |y: f64| 2.0 + (2.0 * PI * y).sin();
        let c = 1.0 / quad(|y| 1.0 / a(y));
        let h = g.h();
        for k in (0..n).step_by(37) {
            let d = (s.corrector[(k + 1) % n] - s.corrector[(k + n - 1) % n]) / (2.0 * h);
            let y = k as f64 * h;
            assert!((d - (-1.0 + c / a(y))).abs() < 1e-3, "{d} at {y}");
        }
    }

    #[test]
    fn e1_signs() {
        let g = TorusGrid::new(1, 16).unwrap();
        let toward = inward_drift_criterion(&OperatorSpec::Linear(lin1("1", "-1", "0")), [1.0, 0.0], &g, [0.0; 2], &Default::default(), 1e-6).unwrap();
        assert!(toward.satisfied && (toward.lambda_hat + 1.0).abs() < 1e-10);
        let away = inward_drift_criterion(&OperatorSpec::Linear(lin1("1", "1", "0")), [1.0, 0.0], &g, [0.0; 2], &Default::default(), 1e-6).unwrap();
        assert!(!away.satisfied && (away.lambda_hat - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bordered_and_measure_routes_agree() {
        let g = TorusGrid::new(1, 128).unwrap();
        let op = OperatorSpec::Linear(lin1("1 + 0.3*cos(2*pi*y1)", "0.5*sin(2*pi*y1) + 0.2", "exp(sin(2*pi*y1))"));
        let interior = sample_interior(&op, &Mesh::Torus(g.clone()), &PointMap::Cell { x: [0.0; 2] }).unwrap();
        let d = DriftStencil::Hybrid;
        let (lam, _) = bordered_ergodic(&interior, &g, [0.0; 2], d, 0).unwrap();
        let m = invariant_measure(&interior, &g, d).unwrap();
        assert!(m.iter().all(|&v| v > 0.0));
        let InteriorOps::Linear(c) = &interior else { unreachable!() };
        let via_m: f64 = -m.iter().zip(c).map(|(m, c)| m * c.f).sum::<f64>();
        assert!((lam - via_m).abs() < 1e-10);
        let disc = ergodic_constant(&interior, &g, [0.0; 2], &Default::default()).unwrap();
        assert!((disc.constant - lam).abs() < 1e-5, "{} vs {lam}", disc.constant);
    }

    #[test]
    fn unstable_extrapolation_is_reported() {
        let g = TorusGrid::new(1, 16).unwrap();
        let params = ErgodicParams {
            deltas: vec![10.0, 5.0, 2.5],
            target_tol: 1e-12,
            ..Default::default()
        };
        let op = OperatorSpec::Linear(lin1("1", "0", "cos(2*pi*y1)"));
        assert!(matches!(
            lambda_torus(&op, &g, [0.0; 2], &params),
            Err(Error::ExtrapolationUnstable { .. })
        ));
    }
}
