//! Oscillating problems on `Ω_ε` and their homogenized limits.
//!
//! The ε-problem is `F(D²u, Du, x, x/ε) + u = f` above the graph `x_N = εψ(x'/ε)`
//! with `L(Du, x, x/ε) = 0` on the graph, truncated by a Neumann lid. Singular
//! drifts and Hamiltonians carry the factor `1/ε`.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::correctors::{effective_boundary, effective_interior, CellResolution, CorrectorParams, EffectiveBoundary, EffectiveInterior};
use crate::dsl::{Env, Expr, Var};
use crate::error::{Error, Result};
use crate::grid::{Mesh, StripGrid, TorusGrid};
use crate::model::{BoundaryOperatorSpec, Graph, LinCoef, LinearSpec, Mat2, OperatorSpec, Vec2};
use crate::problem::{sample_boundary, sample_interior, PointMap};
use crate::scheme::{sup_abs, BoundaryOps, DiscreteProblem, DriftStencil, InteriorOps, SolverParams};

/// Minimum number of nodes per fast period.
pub const MIN_NODES_PER_PERIOD: usize = 16;

/// Data of an oscillating problem.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub op: OperatorSpec,
    pub bop: BoundaryOperatorSpec,
    pub graph: Graph,
}

impl CoefficientSet {
    pub fn dim(&self) -> Result<usize> {
        self.op.dim().ok_or_else(|| Error::Unsupported("oscillating problems need a linear or linear-plus-Hamiltonian operator".into()))
    }

    fn exprs(&self) -> Vec<&Expr> {
        let mut out = self.op.exprs();
        out.extend(self.bop.exprs());
        out.push(&self.graph.psi);
        out
    }

    /// Whether any datum depends on the tangential slow variable.
    fn depends_on_x_tangential(&self) -> bool {
        self.exprs().iter().any(|e| e.free_vars().contains(&Var::X(0)))
    }
}

/// Resolution of an ε-problem, in nodes per fast period.
///
/// The two directions are separate because the flattened cross term
/// `a12 - ψ'a11` needs `|ã12| h_t ≤ a11 h_z` for a monotone stencil.
#[derive(Debug, Clone, Copy)]
pub struct EpsGrid {
    /// Tangential nodes per period (2D).
    pub nt_per_period: usize,
    pub nz_per_period: usize,
    /// Height of the Neumann lid.
    pub lid: f64,
    pub drift: DriftStencil,
}

impl Default for EpsGrid {
    fn default() -> Self {
        EpsGrid {
            nt_per_period: MIN_NODES_PER_PERIOD,
            nz_per_period: MIN_NODES_PER_PERIOD,
            lid: 4.0,
            drift: DriftStencil::Hybrid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpsSolution {
    pub eps: f64,
    pub strip: StripGrid,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// `‖u‖_∞ ≤ ‖f‖_∞`, checked when the boundary data vanish.
    pub max_principle: Option<bool>,
}

fn integer_ratio(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() < 1e-9 * x.max(1.0) && r >= 1.0).then_some(r as usize)
}

/// Solves the ε-problem on a strip of height `grid.lid`.
///
/// Tangentially the strip spans one fast period when no datum depends on `x'`,
/// and one unit slow period otherwise.
pub fn solve_epsilon_problem(data: &CoefficientSet, eps: f64, grid: &EpsGrid, solver: &SolverParams) -> Result<EpsSolution> {
    let (strip, pb) = epsilon_problem(data, eps, grid)?;
    let Some(boundary) = &pb.boundary else { unreachable!() };
    let zero_data = boundary.g.iter().all(|&g| g == 0.0) && boundary.nonlinear.is_none();
    let f_sup = match &pb.interior {
        InteriorOps::Linear(c) | InteriorOps::Hamiltonian { linear: c, .. } => sup_abs(&c.iter().map(|c| c.f).collect::<Vec<_>>()),
        InteriorOps::Max(cs) => cs.iter().map(|c| sup_abs(&c.iter().map(|c| c.f).collect::<Vec<_>>())).fold(0.0, f64::max),
    };
    let r = pb.solve(solver)?;
    let max_principle = zero_data.then(|| sup_abs(&r.values) <= f_sup * (1.0 + 1e-9) + 1e-9);
    Ok(EpsSolution {
        eps,
        strip,
        values: r.values,
        iterations: r.iterations,
        max_principle,
    })
}

/// The discrete ε-problem and its strip.
pub fn epsilon_problem(data: &CoefficientSet, eps: f64, grid: &EpsGrid) -> Result<(StripGrid, DiscreteProblem)> {
    let dim = data.dim()?;
    let (npt, npz) = (grid.nt_per_period, grid.nz_per_period);
    let coarsest = if dim == 1 { npz } else { npt.min(npz) };
    if coarsest < MIN_NODES_PER_PERIOD {
        return Err(Error::ResolutionInsufficient { nodes: coarsest });
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let (width, nt) = if dim == 1 {
        (1.0, 1)
    } else if data.depends_on_x_tangential() {
        let k = integer_ratio(1.0 / eps).ok_or_else(|| Error::Config(format!("1/eps must be an integer for x-dependent data, got eps = {eps}")))?;
        (1.0, k * npt)
    } else {
        (eps, npt)
    };
    let hz = eps / npz as f64;
    let nz = integer_ratio(grid.lid / hz).ok_or_else(|| Error::Config(format!("lid {} is not a multiple of eps/{npz}", grid.lid)))? + 1;
    let strip = StripGrid::scaled(dim, nt, nz, grid.lid, &data.graph, eps, width)?;
    let mesh = Mesh::Strip(strip.clone());
    let map = PointMap::Scaled { eps };
    let interior = sample_interior(&data.op, &mesh, &map)?;
    let boundary = sample_boundary(&data.bop, &strip, &map, 0.0)?;
    let n = strip.len();
    let pb = DiscreteProblem {
        mesh,
        interior,
        zeroth: vec![1.0; n],
        source: vec![0.0; n],
        shift: [0.0; 2],
        boundary: Some(boundary),
        lid_target: None,
        drift: grid.drift,
    };
    Ok((strip, pb))
}

/// Effective source `f̄(x)`.
#[derive(Debug, Clone)]
pub enum EffectiveSource {
    Constant(f64),
    /// `f̄(x) = Σ_j m_j f(x, y_j)` against the invariant measure of the cell operator.
    Averaged { f: Expr, grid: TorusGrid, measure: Vec<f64> },
}

impl EffectiveSource {
    pub fn at(&self, x: &[f64]) -> Result<f64> {
        match self {
            EffectiveSource::Constant(c) => Ok(*c),
            EffectiveSource::Averaged { f, grid, measure } => {
                let mut s = 0.0;
                for (node, m) in measure.iter().enumerate() {
                    let y = grid.coords(node);
                    s += m * f.eval(&Env::new().with_x(x).with_y(&y[..grid.dim]))?;
                }
                Ok(s)
            }
        }
    }
}

/// The homogenized problem `-tr(Ā D²ū) - b̄·Dū - f̄ + ū = 0`, `γ̄·Dū - ḡ = 0` on `{x_N = 0}`.
#[derive(Debug, Clone)]
pub struct EffectiveProblem {
    pub dim: usize,
    pub a_bar: Mat2,
    pub b_bar: Vec2,
    pub f_bar: EffectiveSource,
    pub gamma_bar: Vec2,
    pub g_bar: f64,
}

impl EffectiveProblem {
    pub fn from_parts(dim: usize, interior: &EffectiveInterior, boundary: &EffectiveBoundary, f: Option<(Expr, TorusGrid)>) -> Self {
        let f_bar = match f {
            Some((f, grid)) => EffectiveSource::Averaged {
                f,
                grid,
                measure: interior.measure.clone(),
            },
            None => EffectiveSource::Constant(interior.f_bar),
        };
        EffectiveProblem {
            dim,
            a_bar: interior.a_bar,
            b_bar: interior.b_bar,
            f_bar,
            gamma_bar: boundary.gamma_bar,
            g_bar: boundary.g_bar,
        }
    }
}

/// Effective data of a linear oscillating problem, with cell problems at the resolution of `grid`.
pub fn effective_problem(data: &CoefficientSet, grid: &EpsGrid, params: &CorrectorParams) -> Result<EffectiveProblem> {
    let dim = data.dim()?;
    let OperatorSpec::Linear(l) = &data.op else {
        return Err(Error::Unsupported("effective problems are built for linear operators only".into()));
    };
    let slow = |e: &Expr| e.depends_on_x();
    if l.a.iter().chain(&l.b).any(slow) || data.bop.exprs().iter().any(|e| slow(e)) || slow(&data.graph.psi) {
        return Err(Error::Unsupported("only the source may depend on the slow variable in effective problems".into()));
    }
    let n = if dim == 1 { grid.nz_per_period } else { grid.nt_per_period };
    let torus = TorusGrid::new(dim, n)?;
    let interior = effective_interior(l, &torus, [0.0; 2], params)?;
    let res = CellResolution {
        n,
        hz: 1.0 / grid.nz_per_period as f64,
    };
    let boundary = effective_boundary(&data.op, &data.bop, &data.graph, res, [0.0; 2], params)?;
    let f = l.f.depends_on_x().then(|| (l.f.clone(), torus));
    Ok(EffectiveProblem::from_parts(dim, &interior, &boundary, f))
}

/// Resolution of the effective solve.
#[derive(Debug, Clone, Copy)]
pub struct EffectiveGrid {
    /// Tangential nodes over a unit period (2D).
    pub nt: usize,
    pub hz: f64,
    pub lid: f64,
}

impl Default for EffectiveGrid {
    fn default() -> Self {
        EffectiveGrid {
            nt: 8,
            hz: 1.0 / 512.0,
            lid: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EffectiveSolution {
    pub strip: StripGrid,
    pub values: Vec<f64>,
}

impl EffectiveSolution {
    pub fn at(&self, x: &[f64]) -> f64 {
        self.strip.interpolate(&self.values, x)
    }
}

pub fn solve_effective(eff: &EffectiveProblem, grid: &EffectiveGrid, solver: &SolverParams) -> Result<EffectiveSolution> {
    let dim = eff.dim;
    let nz = integer_ratio(grid.lid / grid.hz).ok_or_else(|| Error::Config(format!("lid {} is not a multiple of hz {}", grid.lid, grid.hz)))? + 1;
    let strip = StripGrid::new(dim, grid.nt, nz, grid.lid, &Graph::flat())?;
    let n = strip.len();
    let coefs = (0..n)
        .map(|k| {
            let c = strip.coords(k);
            Ok(LinCoef {
                a: eff.a_bar,
                b: eff.b_bar,
                f: eff.f_bar.at(&c[..dim])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let boundary = BoundaryOps {
        gamma: vec![[-eff.gamma_bar[0], -eff.gamma_bar[1]]; strip.nt],
        g: vec![-eff.g_bar; strip.nt],
        nonlinear: None,
        alpha: 0.0,
    };
    let pb = DiscreteProblem {
        mesh: Mesh::Strip(strip.clone()),
        interior: InteriorOps::Linear(coefs),
        zeroth: vec![1.0; n],
        source: vec![0.0; n],
        shift: [0.0; 2],
        boundary: Some(boundary),
        lid_target: None,
        drift: DriftStencil::Hybrid,
    };
    Ok(EffectiveSolution {
        values: pb.solve(solver)?.values,
        strip,
    })
}

/// What the ε-solutions are compared with.
#[derive(Debug, Clone)]
pub enum Reference {
    Effective(EffectiveSolution),
    /// A fine ε-solution, for problems without a computed effective operator.
    Fine(EpsSolution),
}

impl Reference {
    fn at(&self, x: &[f64]) -> f64 {
        match self {
            Reference::Effective(s) => s.at(x),
            Reference::Fine(s) => s.strip.interpolate(&s.values, x),
        }
    }

    fn describe(&self) -> String {
        match self {
            Reference::Effective(s) => format!("effective solve, hz = {}", s.strip.hz),
            Reference::Fine(s) => format!("eps-problem at eps = {}", s.eps),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StudyRow {
    pub eps: f64,
    pub error: f64,
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
    pub window_height: f64,
    pub reference: String,
}

impl ConvergenceStudy {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error <= w[0].error)
    }

    /// CSV table; runtimes go in a comment line so the table itself is reproducible.
    pub fn to_csv(&self) -> String {
        let total: f64 = self.rows.iter().map(|r| r.runtime_s).sum();
        let mut s = format!("# reference: {}; window 0 <= x_N <= {}; runtime {total:.3} s\neps,error\n", self.reference, self.window_height);
        for r in &self.rows {
            s.push_str(&format!("{:.10e},{:.10e}\n", r.eps, r.error));
        }
        s
    }

    /// Whitespace-separated `eps error` columns for plotting.
    pub fn plot_data(&self) -> String {
        self.rows.iter().map(|r| format!("{:.10e} {:.10e}\n", r.eps, r.error)).collect()
    }
}

/// `sup |u^ε - reference|` over the nodes of the ε-grid with `0 ≤ x_N ≤ window_height`.
pub fn window_error(sol: &EpsSolution, reference: &Reference, window_height: f64) -> f64 {
    let strip = &sol.strip;
    let nd = strip.dim - 1;
    (0..strip.len())
        .filter_map(|k| {
            let c = strip.coords(k);
            (c[nd] >= 0.0 && c[nd] <= window_height).then(|| (sol.values[k] - reference.at(&c[..strip.dim])).abs())
        })
        .fold(0.0, f64::max)
}

pub fn convergence_study(data: &CoefficientSet, eps_list: &[f64], grid: &EpsGrid, reference: &Reference, window_height: f64, solver: &SolverParams) -> Result<ConvergenceStudy> {
    if window_height > grid.lid - 1.0 {
        return Err(Error::Config(format!("window height {window_height} must stay at least 1 below the lid {}", grid.lid)));
    }
    let rows = eps_list
        .par_iter()
        .map(|&eps| {
            let t = Instant::now();
            let sol = solve_epsilon_problem(data, eps, grid, solver)?;
            let error = window_error(&sol, reference, window_height);
            Ok(StudyRow {
                eps,
                error,
                runtime_s: t.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy {
        rows,
        window_height,
        reference: reference.describe(),
    })
}

/// Linear spec helper for the rescaled problem used in tests and the guide.
pub fn constant_linear(a: &[f64], b: &[f64], f: f64) -> Result<LinearSpec> {
    LinearSpec::new(a.iter().map(|&v| Expr::constant(v)).collect(), b.iter().map(|&v| Expr::constant(v)).collect(), Expr::constant(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::model::{GammaSpec, LinearOblique};

    fn oblique(g: &str) -> BoundaryOperatorSpec {
        BoundaryOperatorSpec::LinearOblique(LinearOblique::new(GammaSpec::Normal, parse(g).unwrap()))
    }

    fn linear(a: &[&str], b: &[&str], f: &str, singular: bool) -> OperatorSpec {
        OperatorSpec::Linear(
            LinearSpec::new(a.iter().map(|s| parse(s).unwrap()).collect(), b.iter().map(|s| parse(s).unwrap()).collect(), parse(f).unwrap())
                .unwrap()
                .singular(singular),
        )
    }

    #[test]
    fn resolution_is_checked() {
        let data = CoefficientSet {
            op: linear(&["1"], &["0"], "1", false),
            bop: oblique("0"),
            graph: Graph::flat(),
        };
        let grid = EpsGrid {
            nz_per_period: 8,
            ..Default::default()
        };
        assert!(matches!(
            solve_epsilon_problem(&data, 0.25, &grid, &SolverParams::default()),
            Err(Error::ResolutionInsufficient { nodes: 8 })
        ));
    }

    #[test]
    fn y_independent_data_do_not_depend_on_eps() {
        let data = CoefficientSet {
            op: linear(&["1"], &["0"], "1", false),
            bop: oblique("0.5"),
            graph: Graph::flat(),
        };
        // Same node spacing at both ε, so the discrete solutions coincide too.
        let s = SolverParams::default();
        let coarse = solve_epsilon_problem(&data, 0.25, &EpsGrid { nz_per_period: 32, ..Default::default() }, &s).unwrap();
        let fine = solve_epsilon_problem(&data, 0.125, &EpsGrid::default(), &s).unwrap();
        for (k, v) in coarse.values.iter().enumerate() {
            let x = coarse.strip.coords(k);
            assert!((v - fine.strip.interpolate(&fine.values, &x[..1])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_effective_solution() {
        let eff = EffectiveProblem {
            dim: 1,
            a_bar: [[2.0, 0.0], [0.0, 0.0]],
            b_bar: [0.0; 2],
            f_bar: EffectiveSource::Constant(1.0),
            gamma_bar: [1.0, 0.0],
            g_bar: 0.0,
        };
        let s = solve_effective(&eff, &EffectiveGrid::default(), &SolverParams::default()).unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn effective_neumann_profile() {
        // -ū'' + ū = 1, ū'(0) = ḡ/γ̄ = -1, ū'(4) = 0: ū = 1 + cosh(4 - z) / sinh(4).
        let eff = EffectiveProblem {
            dim: 1,
            a_bar: [[1.0, 0.0], [0.0, 0.0]],
            b_bar: [0.0; 2],
            f_bar: EffectiveSource::Constant(1.0),
            gamma_bar: [1.0, 0.0],
            g_bar: -1.0,
        };
        let run = |hz: f64| solve_effective(&eff, &EffectiveGrid { hz, ..Default::default() }, &SolverParams::default()).unwrap().at(&[0.0]);
        let exact = 1.0 + 4f64.cosh() / 4f64.sinh();
        let (e1, e2) = ((run(1.0 / 128.0) - exact).abs(), (run(1.0 / 256.0) - exact).abs());
        assert!(e2 < 1e-2 && e2 < 0.6 * e1, "{e1} {e2}");
    }

    #[test]
    fn rescaled_problem_matches_direct_assembly() {
        // u(x) = U(x/ε) where U solves the problem with A/ε², b/ε and g·ε above the unscaled graph.
        let eps = 0.25;
        let data = CoefficientSet {
            op: linear(&["1 + 0.3*sin(2*pi*y1)", "0.1", "1.2"], &["0.5*cos(2*pi*y2)", "0"], "1 + y2", false),
            bop: oblique("0.4 + 0.2*cos(2*pi*y1)"),
            graph: Graph {
                psi: parse("0.1*sin(2*pi*y1)").unwrap(),
            },
        };
        let grid = EpsGrid::default();
        let direct = solve_epsilon_problem(&data, eps, &grid, &SolverParams::default()).unwrap();
        let s = 1.0 / (eps * eps);
        let rescaled = CoefficientSet {
            op: linear(
                &[&format!("{s}*(1 + 0.3*sin(2*pi*y1))"), &format!("{s}*0.1"), &format!("{s}*1.2")],
                &[&format!("{}*0.5*cos(2*pi*y2)", 1.0 / eps), "0"],
                "1 + y2",
                false,
            ),
            bop: oblique(&format!("{eps}*(0.4 + 0.2*cos(2*pi*y1))")),
            graph: data.graph.clone(),
        };
        let cell = solve_epsilon_problem(
            &rescaled,
            1.0,
            &EpsGrid {
                lid: grid.lid / eps,
                ..grid
            },
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(direct.values.len(), cell.values.len());
        for (a, b) in direct.values.iter().zip(&cell.values) {
            assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn maximum_principle_with_zero_data() {
        let data = CoefficientSet {
            op: linear(&["2 + sin(2*pi*y1)"], &["2*pi*cos(2*pi*y1)"], "cos(x1) + 0.5*sin(2*pi*y1)", true),
            bop: oblique("0"),
            graph: Graph::flat(),
        };
        let sol = solve_epsilon_problem(&data, 0.125, &EpsGrid::default(), &SolverParams::default()).unwrap();
        assert_eq!(sol.max_principle, Some(true));
    }
}
