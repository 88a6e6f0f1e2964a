//! Cell problems and effective coefficients.
//!
//! For the singular linear problem
//! `-tr(A D²u) - ε⁻¹ b·Du + u = f` the first corrector is `v = χ·p` with
//! `-tr(A D²χ_k) - b·(e_k + Dχ_k) = 0`, and `F̄(M, p)` is the ergodic constant of
//!
//! ```text
//! -tr(A (M + JM + MJᵀ + K + Kᵀ + D²w)) - b·(Mχ + X p + Dw) - f
//! ```
//!
//! with `J = D_y χ`, `X = D_x χ` and `K = D_y X p`. For regular problems
//! (no `ε⁻¹`) there is no first corrector and the cell operator is
//! `-tr(A (M + D²w)) - b·(p + Dw) - f`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boundary::{mu_limit, BoundaryCell, InteriorPair, MuSchedule, UniquenessFlag};
use crate::dsl::Expr;
use crate::error::{Error, Result};
use crate::grid::{Mesh, TorusGrid};
use crate::interior::{inward_drift_criterion, ergodic_constant, invariant_measure, DriftCriterionReport, ErgodicParams, ErgodicSolution};
use crate::model::{random_sym, random_vec, BoundaryOperatorSpec, Graph, LinCoef, LinearSpec, Mat2, OperatorSpec, Vec2};
use crate::problem::{sample_interior, PointMap};
use crate::scheme::{DriftStencil, InteriorOps};

/// Settings shared by the cell solves.
#[derive(Debug, Clone)]
pub struct CorrectorParams {
    pub ergodic: ErgodicParams,
    pub schedule: MuSchedule,
    /// Bound on `|λ̄(p)|` for the first corrector to exist.
    pub cell_tol: f64,
    /// Relative bound on deviations from the affine models.
    pub affinity_tol: f64,
    /// Finite-difference step for derivatives in `x` and `p`.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for CorrectorParams {
    fn default() -> Self {
        CorrectorParams {
            ergodic: ErgodicParams::default(),
            schedule: MuSchedule::default(),
            cell_tol: 1e-3,
            affinity_tol: 1e-3,
            fd_step: 1e-4,
            seed: 0xCE11,
        }
    }
}

fn dim_of(op: &OperatorSpec) -> Result<usize> {
    op.dim().ok_or_else(|| Error::Unsupported("cell problems need a linear or linear-plus-Hamiltonian operator".into()))
}

fn without_source(l: &LinearSpec) -> LinearSpec {
    let mut l = l.clone();
    l.f = Expr::constant(0.0);
    l
}

/// Operator of the first and boundary cell problems: `F` without its source and,
/// for regular problems, without its drift.
pub fn cell_operator(op: &OperatorSpec) -> Result<OperatorSpec> {
    match op {
        OperatorSpec::Linear(l) => {
            let mut c = without_source(l);
            if !l.singular {
                c.b = c.b.iter().map(|_| Expr::constant(0.0)).collect();
            }
            Ok(OperatorSpec::Linear(c))
        }
        OperatorSpec::LinearPlusH { linear, hamiltonian } => Ok(OperatorSpec::LinearPlusH {
            linear: without_source(linear),
            hamiltonian: hamiltonian.clone(),
        }),
        _ => Err(Error::Unsupported("cell problems need a linear or linear-plus-Hamiltonian operator".into())),
    }
}

fn first_corrector_ops(op: &OperatorSpec, grid: &TorusGrid, x: Vec2, p: Vec2, params: &CorrectorParams) -> Result<ErgodicSolution> {
    let interior = sample_interior(op, &Mesh::Torus(grid.clone()), &PointMap::Cell { x })?;
    let sol = ergodic_constant(&interior, grid, p, &params.ergodic)?;
    if sol.constant.abs() > params.cell_tol {
        return Err(Error::NonzeroCellConstant { lambda: sol.constant });
    }
    Ok(sol)
}

/// First corrector `v(p, x, ·)` of `-tr(A D²v) - b·(p + Dv) = 0`.
pub fn first_corrector(spec: &LinearSpec, p: Vec2, grid: &TorusGrid, x: Vec2, params: &CorrectorParams) -> Result<ErgodicSolution> {
    first_corrector_ops(&OperatorSpec::Linear(without_source(spec)), grid, x, p, params)
}

/// Unit-slope correctors `χ_k`, or zeros for regular problems.
fn unit_correctors(spec: &LinearSpec, grid: &TorusGrid, x: Vec2, params: &CorrectorParams) -> Result<Vec<Vec<f64>>> {
    let dim = grid.dim;
    if !spec.singular {
        return Ok(vec![vec![0.0; grid.len()]; dim]);
    }
    (0..dim)
        .map(|k| {
            let mut e = [0.0; 2];
            e[k] = 1.0;
            Ok(first_corrector(spec, e, grid, x, params)?.corrector)
        })
        .collect()
}

/// Correctors and their slow derivatives, reusable across `(M, p)`.
#[derive(Debug, Clone)]
pub struct CellData {
    pub spec: LinearSpec,
    pub grid: TorusGrid,
    pub x: Vec2,
    /// `chi[k][node]`.
    pub chi: Vec<Vec<f64>>,
    /// `dchi_dx[i][k][node] = ∂_{x_i} χ_k`.
    pub dchi_dx: Vec<Vec<Vec<f64>>>,
    pub coefs: Vec<LinCoef>,
}

impl CellData {
    pub fn new(spec: &LinearSpec, grid: &TorusGrid, x: Vec2, params: &CorrectorParams) -> Result<Self> {
        let dim = grid.dim;
        if spec.dim() != dim {
            return Err(Error::Dimension(format!("operator is {}-dimensional, grid is {dim}-dimensional", spec.dim())));
        }
        let chi = unit_correctors(spec, grid, x, params)?;
        let mut dchi_dx = vec![vec![vec![0.0; grid.len()]; dim]; dim];
        if spec.singular && spec.principal_depends_on_x() {
            let h = params.fd_step;
            for (i, di) in dchi_dx.iter_mut().enumerate() {
                let (mut xp, mut xm) = (x, x);
                xp[i] += h;
                xm[i] -= h;
                let cp = unit_correctors(spec, grid, xp, params)?;
                let cm = unit_correctors(spec, grid, xm, params)?;
                for k in 0..dim {
                    for node in 0..grid.len() {
                        di[k][node] = (cp[k][node] - cm[k][node]) / (2.0 * h);
                    }
                }
            }
        }
        let InteriorOps::Linear(coefs) = sample_interior(&OperatorSpec::Linear(spec.clone()), &Mesh::Torus(grid.clone()), &PointMap::Cell { x })? else {
            unreachable!("linear specs sample to linear operators")
        };
        Ok(CellData {
            spec: spec.clone(),
            grid: grid.clone(),
            x,
            chi,
            dchi_dx,
            coefs,
        })
    }

    /// Coefficients of the second cell problem at `(M, p)`.
    pub fn second_cell(&self, m: &Mat2, p: &Vec2) -> Vec<LinCoef> {
        let dim = self.grid.dim;
        let g = &self.grid;
        (0..g.len())
            .map(|node| {
                let c = self.coefs[node];
                let mut t = *m;
                let mut drift_arg = [0.0; 2];
                if self.spec.singular {
                    // J[i][k] = ∂_{y_i} χ_k, K[i][j] = Σ_k ∂_{y_i} ∂_{x_j} χ_k p_k.
                    let mut jm = [[0.0; 2]; 2];
                    let mut kk = [[0.0; 2]; 2];
                    let grads: Vec<Vec2> = (0..dim).map(|k| g.gradient(&self.chi[k], node)).collect();
                    for i in 0..dim {
                        for j in 0..dim {
                            for (k, gk) in grads.iter().enumerate() {
                                jm[i][j] += gk[i] * m[k][j];
                            }
                        }
                    }
                    for j in 0..dim {
                        for k in 0..dim {
                            let gx = g.gradient(&self.dchi_dx[j][k], node);
                            for i in 0..dim {
                                kk[i][j] += gx[i] * p[k];
                            }
                        }
                    }
                    for i in 0..dim {
                        for j in 0..dim {
                            t[i][j] += jm[i][j] + jm[j][i] + kk[i][j] + kk[j][i];
                        }
                    }
                    for i in 0..dim {
                        for k in 0..dim {
                            drift_arg[i] += m[i][k] * self.chi[k][node] + self.dchi_dx[i][k][node] * p[k];
                        }
                    }
                } else {
                    drift_arg = *p;
                }
                let mut f = c.f;
                for i in 0..dim {
                    f += c.b[i] * drift_arg[i];
                    for j in 0..dim {
                        f += c.a[i][j] * t[j][i];
                    }
                }
                LinCoef { a: c.a, b: c.b, f }
            })
            .collect()
    }
}

/// `F̄(M, p)` and the second corrector `w`.
#[derive(Debug, Clone, Serialize)]
pub struct FbarSample {
    pub m: Mat2,
    pub p: Vec2,
    pub value: f64,
    #[serde(skip)]
    pub w: Vec<f64>,
}

pub fn second_corrector_and_fbar(data: &CellData, m: Mat2, p: Vec2, params: &CorrectorParams) -> Result<FbarSample> {
    let sol = ergodic_constant(&InteriorOps::Linear(data.second_cell(&m, &p)), &data.grid, [0.0; 2], &params.ergodic)?;
    Ok(FbarSample {
        m,
        p,
        value: sol.constant,
        w: sol.corrector,
    })
}

/// Effective interior coefficients `F̄(M, p) = -tr(Ā M) - b̄·p - f̄`.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveInterior {
    pub a_bar: Mat2,
    pub b_bar: Vec2,
    pub f_bar: f64,
    pub affinity_deviation: f64,
    pub samples: Vec<FbarSample>,
    /// Invariant measure of the second cell operator, for `f̄` at other slow points.
    #[serde(skip)]
    pub measure: Vec<f64>,
}

fn basis(dim: usize) -> Vec<(Mat2, Vec2)> {
    let mut out = vec![([[0.0; 2]; 2], [0.0; 2])];
    for i in 0..dim {
        let mut m = [[0.0; 2]; 2];
        m[i][i] = 1.0;
        out.push((m, [0.0; 2]));
    }
    if dim == 2 {
        out.push(([[0.0, 1.0], [1.0, 0.0]], [0.0; 2]));
    }
    for k in 0..dim {
        let mut p = [0.0; 2];
        p[k] = 1.0;
        out.push(([[0.0; 2]; 2], p));
    }
    out
}

fn affine_value(a: &Mat2, b: &Vec2, f: f64, m: &Mat2, p: &Vec2, dim: usize) -> f64 {
    LinCoef { a: *a, b: *b, f }.apply(m, p, dim)
}

pub fn effective_interior(spec: &LinearSpec, grid: &TorusGrid, x: Vec2, params: &CorrectorParams) -> Result<EffectiveInterior> {
    let data = CellData::new(spec, grid, x, params)?;
    let dim = grid.dim;
    let mut samples: Vec<FbarSample> = basis(dim)
        .into_iter()
        .map(|(m, p)| second_corrector_and_fbar(&data, m, p, params))
        .collect::<Result<_>>()?;
    let f_bar = -samples[0].value;
    let mut a_bar = [[0.0; 2]; 2];
    for i in 0..dim {
        a_bar[i][i] = -(samples[1 + i].value + f_bar);
    }
    let mut next = 1 + dim;
    if dim == 2 {
        a_bar[0][1] = -(samples[next].value + f_bar) / 2.0;
        a_bar[1][0] = a_bar[0][1];
        next += 1;
    }
    let mut b_bar = [0.0; 2];
    for (k, b) in b_bar.iter_mut().enumerate().take(dim) {
        *b = -(samples[next + k].value + f_bar);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut deviation: f64 = 0.0;
    for _ in 0..3 {
        let m = random_sym(&mut rng, dim, 1.0);
        let p = random_vec(&mut rng, dim, 1.0);
        let s = second_corrector_and_fbar(&data, m, p, params)?;
        let model = affine_value(&a_bar, &b_bar, f_bar, &m, &p, dim);
        deviation = deviation.max((s.value - model).abs() / s.value.abs().max(1.0));
        samples.push(s);
    }
    if deviation > params.affinity_tol {
        return Err(Error::AffinityViolation { deviation });
    }
    let measure = invariant_measure(&InteriorOps::Linear(data.coefs.clone()), grid, params.ergodic.drift)?;
    Ok(EffectiveInterior {
        a_bar,
        b_bar,
        f_bar,
        affinity_deviation: deviation,
        samples,
        measure,
    })
}

impl EffectiveInterior {
    /// `f̄(x) = Σ_j m_j f(x, y_j)` for a source depending on the slow variable.
    pub fn f_bar_at(&self, f: &Expr, grid: &TorusGrid, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (node, m) in self.measure.iter().enumerate() {
            let y = grid.coords(node);
            s += m * f.eval(&crate::dsl::Env::new().with_x(x).with_y(&y[..grid.dim]))?;
        }
        Ok(s)
    }
}

/// `F̄(M, p)` for `F = -tr(A M) - b·p + H(p)` with source `f`, by linearizing along the first corrector.
pub fn fbar_hamiltonian(linear: &LinearSpec, hamiltonian: &Expr, m: Mat2, p: Vec2, grid: &TorusGrid, x: Vec2, params: &CorrectorParams) -> Result<f64> {
    if linear.principal_depends_on_x() || hamiltonian.depends_on_x() {
        return Err(Error::Unsupported("slow dependence of a nonlinear cell operator".into()));
    }
    let dim = grid.dim;
    let cell = cell_operator(&OperatorSpec::LinearPlusH {
        linear: linear.clone(),
        hamiltonian: hamiltonian.clone(),
    })?;
    let vbar = first_corrector_ops(&cell, grid, x, p, params)?;
    let h = params.fd_step;
    let mut chi = Vec::with_capacity(dim);
    for k in 0..dim {
        let (mut pp, mut pm) = (p, p);
        pp[k] += h;
        pm[k] -= h;
        let vp = first_corrector_ops(&cell, grid, x, pp, params)?.corrector;
        let vm = first_corrector_ops(&cell, grid, x, pm, params)?.corrector;
        chi.push(vp.iter().zip(&vm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>());
    }
    let mesh = Mesh::Torus(grid.clone());
    let InteriorOps::Hamiltonian { linear: coefs, h: field } = sample_interior(
        &OperatorSpec::LinearPlusH {
            linear: linear.clone(),
            hamiltonian: hamiltonian.clone(),
        },
        &mesh,
        &PointMap::Cell { x },
    )?
    else {
        unreachable!()
    };
    let mut cell_coefs = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        let c = coefs[node];
        let dv = grid.gradient(&vbar.corrector, node);
        let q = [p[0] + dv[0], p[1] + dv[1]];
        let (_, hp) = field.jet(node, &q, dim)?;
        let mut b = c.b;
        for k in 0..dim {
            b[k] -= hp[k];
        }
        let grads: Vec<Vec2> = (0..dim).map(|k| grid.gradient(&chi[k], node)).collect();
        let mut t = m;
        for i in 0..dim {
            for j in 0..dim {
                for (k, gk) in grads.iter().enumerate() {
                    t[i][j] += gk[i] * m[k][j] + gk[j] * m[k][i];
                }
            }
        }
        let mut f = c.f;
        for i in 0..dim {
            let mut mchi = 0.0;
            for k in 0..dim {
                mchi += m[i][k] * chi[k][node];
            }
            f += b[i] * mchi;
            for j in 0..dim {
                f += c.a[i][j] * t[j][i];
            }
        }
        cell_coefs.push(LinCoef { a: c.a, b, f });
    }
    Ok(ergodic_constant(&InteriorOps::Linear(cell_coefs), grid, [0.0; 2], &params.ergodic)?.constant)
}

/// Sampled `F̄` over the `(M, p)` basis for nonlinear operators.
pub fn fbar_table(linear: &LinearSpec, hamiltonian: &Expr, grid: &TorusGrid, x: Vec2, params: &CorrectorParams) -> Result<Vec<FbarSample>> {
    basis(grid.dim)
        .into_iter()
        .map(|(m, p)| {
            Ok(FbarSample {
                m,
                p,
                value: fbar_hamiltonian(linear, hamiltonian, m, p, grid, x, params)?,
                w: Vec::new(),
            })
        })
        .collect()
}

/// Resolution of the boundary cell problems.
#[derive(Debug, Clone, Copy)]
pub struct CellResolution {
    /// Nodes per period of the torus, and tangential nodes of the strip.
    pub n: usize,
    /// Normal spacing of the strip.
    pub hz: f64,
}

/// `μ̄(p)` in the convention `(p + Dz)·γ = g - μ̄`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MuBarSample {
    pub p: Vec2,
    pub mu_bar: f64,
    pub flag: UniquenessFlag,
}

/// Effective boundary data `μ̄(p) = γ̄·p - ḡ`.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveBoundary {
    pub gamma_bar: Vec2,
    pub g_bar: f64,
    pub affinity_deviation: f64,
    pub drift_criterion: Option<DriftCriterionReport>,
    pub samples: Vec<MuBarSample>,
}

impl EffectiveBoundary {
    /// The effective condition as an oblique operator with outward-pointing direction.
    pub fn as_oblique(&self, dim: usize) -> BoundaryOperatorSpec {
        let gamma = (0..dim).map(|k| Expr::constant(-self.gamma_bar[k])).collect();
        BoundaryOperatorSpec::LinearOblique(crate::model::LinearOblique::new(
            crate::model::GammaSpec::Field(gamma),
            Expr::constant(-self.g_bar),
        ))
    }
}

/// `μ̄(p)` of the boundary cell problem at slope `p`.
pub fn mu_bar(op: &OperatorSpec, bop: &BoundaryOperatorSpec, graph: &Graph, res: CellResolution, x: Vec2, p: Vec2, params: &CorrectorParams) -> Result<MuBarSample> {
    let dim = dim_of(op)?;
    let cell_op = cell_operator(op)?;
    let grid = TorusGrid::new(dim, res.n)?;
    let singular = match op {
        OperatorSpec::Linear(l) => l.singular,
        _ => true,
    };
    let interior = if singular {
        InteriorPair::from_solution(&first_corrector_ops(&cell_op, &grid, x, p, params)?)
    } else {
        InteriorPair::zero()
    };
    let mut cell = BoundaryCell::new(cell_op, bop.clone(), dim, res.n, res.hz);
    cell.graph = graph.clone();
    cell.x = x;
    cell.shift = p;
    cell.interior = interior;
    cell.drift = params.ergodic.drift;
    cell.solver = params.ergodic.solver;
    let r = mu_limit(&cell, &params.schedule)?;
    Ok(MuBarSample {
        p,
        mu_bar: -r.mu,
        flag: r.uniqueness_flag,
    })
}

pub fn effective_boundary(op: &OperatorSpec, bop: &BoundaryOperatorSpec, graph: &Graph, res: CellResolution, x: Vec2, params: &CorrectorParams) -> Result<EffectiveBoundary> {
    let dim = dim_of(op)?;
    let drift_criterion = match cell_operator(op)? {
        lin @ OperatorSpec::Linear(_) => {
            let mut f_n = [0.0; 2];
            f_n[dim - 1] = 1.0;
            let r = inward_drift_criterion(&lin, f_n, &TorusGrid::new(dim, res.n)?, x, &params.ergodic, params.ergodic.target_tol)?;
            if !r.satisfied {
                return Err(Error::CriterionViolated { lambda_hat: r.lambda_hat });
            }
            Some(r)
        }
        _ => None,
    };
    let mut ps = vec![[0.0; 2]];
    for k in 0..dim {
        let mut e = [0.0; 2];
        e[k] = 1.0;
        ps.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0xB0);
    for _ in 0..3 {
        ps.push(random_vec(&mut rng, dim, 1.0));
    }
    let samples: Vec<MuBarSample> = ps.iter().map(|&p| mu_bar(op, bop, graph, res, x, p, params)).collect::<Result<_>>()?;
    let g_bar = -samples[0].mu_bar;
    let mut gamma_bar = [0.0; 2];
    for k in 0..dim {
        gamma_bar[k] = samples[1 + k].mu_bar + g_bar;
    }
    let mut deviation: f64 = 0.0;
    for s in &samples[1 + dim..] {
        let model = gamma_bar[0] * s.p[0] + gamma_bar[1] * s.p[1] - g_bar;
        deviation = deviation.max((s.mu_bar - model).abs() / s.mu_bar.abs().max(1.0));
    }
    if deviation > params.affinity_tol {
        return Err(Error::AffinityViolation { deviation });
    }
    Ok(EffectiveBoundary {
        gamma_bar,
        g_bar,
        affinity_deviation: deviation,
        drift_criterion,
        samples,
    })
}

/// Effective data at a frozen slow point.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveData {
    pub x: Vec2,
    pub interior: EffectiveInterior,
    pub boundary: Option<EffectiveBoundary>,
}

/// Drift stencil used by default in cell solves.
pub fn default_drift() -> DriftStencil {
    ErgodicParams::default().drift
}
