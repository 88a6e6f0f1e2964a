//! Boundary ergodic constants on periodic half-strips.
//!
//! `μ` is the constant for which `F(D²u, p + Du) = λ` in the half-space type
//! domain and `L(p + Du) = μ` on its boundary admit a bounded solution. It is
//! approximated by the penalized problem
//!
//! ```text
//! F(D²ũ, p + Dũ) + εũ = λ + εū    in the strip 0 < z < R
//! L(p + Dũ) + αũ = 0               on z = 0
//! ∂_z(ũ - ū) = 0                   on z = R
//! ```
//!
//! where `ū` is the interior corrector, and `μ = lim -αũ(0)` as first `ε → 0`,
//! then `α → 0`, then `R → ∞`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Mesh, NodeClass, StripGrid, TorusGrid};
use crate::interior::ErgodicSolution;
use crate::model::{BoundaryOperatorSpec, Graph, OperatorSpec, Vec2};
use crate::problem::{sample_boundary, sample_interior, PointMap};
use crate::scheme::{DiscreteProblem, DriftStencil, SolverParams};

/// Interior ergodic pair feeding the boundary problem.
#[derive(Debug, Clone, Default)]
pub struct InteriorPair {
    pub lambda: f64,
    /// Torus corrector, interpolated onto the strip; zero if absent.
    pub corrector: Option<(TorusGrid, Vec<f64>)>,
}

impl InteriorPair {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_solution(s: &ErgodicSolution) -> Self {
        InteriorPair {
            lambda: s.constant,
            corrector: Some((s.grid.clone(), s.corrector.clone())),
        }
    }

    fn on_strip(&self, strip: &StripGrid) -> Vec<f64> {
        match &self.corrector {
            None => vec![0.0; strip.len()],
            Some((g, v)) => (0..strip.len()).map(|k| g.interpolate(v, &strip.coords(k)[..strip.dim])).collect(),
        }
    }
}

/// A boundary cell problem at a frozen slow point.
#[derive(Debug, Clone)]
pub struct BoundaryCell {
    pub op: OperatorSpec,
    pub bop: BoundaryOperatorSpec,
    pub dim: usize,
    pub graph: Graph,
    /// Tangential nodes per period (2D only).
    pub nt: usize,
    /// Normal spacing.
    pub hz: f64,
    pub x: Vec2,
    pub shift: Vec2,
    pub interior: InteriorPair,
    pub drift: DriftStencil,
    pub solver: SolverParams,
}

impl BoundaryCell {
    pub fn new(op: OperatorSpec, bop: BoundaryOperatorSpec, dim: usize, nt: usize, hz: f64) -> Self {
        BoundaryCell {
            op,
            bop,
            dim,
            graph: Graph::flat(),
            nt,
            hz,
            x: [0.0; 2],
            shift: [0.0; 2],
            interior: InteriorPair::zero(),
            drift: DriftStencil::Hybrid,
            solver: SolverParams::default(),
        }
    }

    pub fn strip(&self, height: f64) -> Result<StripGrid> {
        let nz = (height / self.hz).round() as usize + 1;
        if ((nz - 1) as f64 * self.hz - height).abs() > 1e-9 * height {
            return Err(Error::Config(format!("height {height} is not a multiple of the normal spacing {}", self.hz)));
        }
        StripGrid::new(self.dim, self.nt, nz, height, &self.graph)
    }

    /// The discrete penalized problem; `zeroth = false` drops the `εũ` term and its source.
    pub fn problem(&self, strip: &StripGrid, eps: f64, alpha: f64, zeroth: bool) -> Result<DiscreteProblem> {
        let mesh = Mesh::Strip(strip.clone());
        let map = PointMap::Cell { x: self.x };
        let interior = sample_interior(&self.op, &mesh, &map)?;
        let boundary = sample_boundary(&self.bop, strip, &map, alpha)?;
        let ubar = self.interior.on_strip(strip);
        let source = ubar.iter().map(|u| self.interior.lambda + if zeroth { eps * u } else { 0.0 }).collect();
        let lid: Vec<f64> = (0..strip.nt)
            .map(|i| {
                let top = strip.index(i as isize, strip.nz - 1);
                let below = strip.index(i as isize, strip.nz - 2);
                (ubar[top] - ubar[below]) / strip.hz
            })
            .collect();
        Ok(DiscreteProblem {
            mesh,
            interior,
            zeroth: vec![if zeroth { eps } else { 0.0 }; strip.len()],
            source,
            shift: self.shift,
            boundary: Some(boundary),
            lid_target: Some(lid),
            drift: self.drift,
        })
    }

    /// The penalized solution `ũ_R`.
    pub fn solve_penalized(&self, strip: &StripGrid, eps: f64, alpha: f64) -> Result<Vec<f64>> {
        if !(0.0 < eps && eps < alpha && alpha < 1.0) {
            return Err(Error::Config(format!("need 0 < eps < alpha < 1, got eps = {eps}, alpha = {alpha}")));
        }
        Ok(self.problem(strip, eps, alpha, true)?.solve(&self.solver)?.values)
    }
}

/// Limit schedules. Defaults: `ε = ρα` with `ρ ∈ {1e-4, 1e-5}`, `α ∈ {1e-1, 3e-2, 1e-2}`, `R ∈ {4, 8}`.
#[derive(Debug, Clone)]
pub struct MuSchedule {
    pub eps_ratios: Vec<f64>,
    pub alphas: Vec<f64>,
    pub heights: Vec<f64>,
    /// Relative R-drift above which the limit is flagged.
    pub drift_tol: f64,
}

impl Default for MuSchedule {
    fn default() -> Self {
        MuSchedule {
            eps_ratios: vec![1e-4, 1e-5],
            alphas: vec![1e-1, 3e-2, 1e-2],
            heights: vec![4.0, 8.0],
            drift_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniquenessFlag {
    UniqueConsistent,
    SuspectNonunique,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PenalizedSample {
    pub height: f64,
    pub alpha: f64,
    pub eps: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AlphaSample {
    pub height: f64,
    pub alpha: f64,
    /// `-αũ(0)` extrapolated to `ε = 0`.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HeightSample {
    pub height: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MuDiagnostics {
    pub epsilon_history: Vec<PenalizedSample>,
    pub alpha_history: Vec<AlphaSample>,
    pub r_history: Vec<HeightSample>,
}

/// A boundary ergodic constant in the `L(Du) = μ` convention.
#[derive(Debug, Clone, Serialize)]
pub struct MuResult {
    pub mu: f64,
    pub r_drift: f64,
    pub uniqueness_flag: UniquenessFlag,
    pub diagnostics: MuDiagnostics,
    #[serde(skip)]
    pub corrector: Vec<f64>,
    #[serde(skip)]
    pub strip: Option<StripGrid>,
}

fn linear_extrapolation(x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    y2 - x2 * (y1 - y2) / (x1 - x2)
}

/// `μ` by the penalization limit.
pub fn mu_limit(cell: &BoundaryCell, schedule: &MuSchedule) -> Result<MuResult> {
    let sorted = |v: &[f64], up: bool| v.windows(2).all(|w| if up { w[1] > w[0] } else { w[1] < w[0] });
    if schedule.eps_ratios.is_empty()
        || schedule.alphas.is_empty()
        || schedule.heights.is_empty()
        || !sorted(&schedule.eps_ratios, false)
        || !sorted(&schedule.alphas, false)
        || !sorted(&schedule.heights, true)
    {
        return Err(Error::Config("schedules must be nonempty, ε and α decreasing, R increasing".into()));
    }
    let strips: Vec<StripGrid> = schedule.heights.iter().map(|&r| cell.strip(r)).collect::<Result<_>>()?;
    let jobs: Vec<(usize, f64, f64)> = (0..strips.len())
        .flat_map(|k| {
            schedule
                .alphas
                .iter()
                .flat_map(move |&a| schedule.eps_ratios.iter().map(move |&r| (k, a, r * a)))
        })
        .collect();
    let solutions: Vec<(PenalizedSample, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(k, alpha, eps)| {
            let u = cell.solve_penalized(&strips[k], eps, alpha)?;
            Ok((
                PenalizedSample {
                    height: strips[k].height,
                    alpha,
                    eps,
                    value: -alpha * u[0],
                },
                u,
            ))
        })
        .collect::<Result<_>>()?;
    let mut diagnostics = MuDiagnostics::default();
    let ne = schedule.eps_ratios.len();
    let na = schedule.alphas.len();
    for (k, strip) in strips.iter().enumerate() {
        let mut per_alpha = Vec::new();
        for (ia, &alpha) in schedule.alphas.iter().enumerate() {
            let base = (k * na + ia) * ne;
            let s = &solutions[base..base + ne];
            let value = if ne == 1 {
                s[0].0.value
            } else {
                let (a, b) = (&s[ne - 2].0, &s[ne - 1].0);
                linear_extrapolation(a.eps, a.value, b.eps, b.value)
            };
            per_alpha.push(AlphaSample {
                height: strip.height,
                alpha,
                value,
            });
        }
        let mu = if na == 1 {
            per_alpha[0].value
        } else {
            let (a, b) = (&per_alpha[na - 2], &per_alpha[na - 1]);
            linear_extrapolation(a.alpha, a.value, b.alpha, b.value)
        };
        diagnostics.alpha_history.extend(per_alpha);
        diagnostics.r_history.push(HeightSample { height: strip.height, mu });
    }
    diagnostics.epsilon_history = solutions.iter().map(|s| s.0).collect();
    let nr = diagnostics.r_history.len();
    let mu = diagnostics.r_history[nr - 1].mu;
    let r_drift = if nr > 1 { (mu - diagnostics.r_history[nr - 2].mu).abs() } else { 0.0 };
    let uniqueness_flag = if r_drift > schedule.drift_tol * mu.abs().max(1.0) {
        UniquenessFlag::SuspectNonunique
    } else {
        UniquenessFlag::UniqueConsistent
    };
    let finest = &solutions.last().unwrap().1;
    let corrector = finest.iter().map(|v| v - finest[0]).collect();
    Ok(MuResult {
        mu,
        r_drift,
        uniqueness_flag,
        diagnostics,
        corrector,
        strip: strips.last().cloned(),
    })
}

/// Residuals of a candidate `(μ, corrector)` and the drift of `μ` on a doubled strip.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub interior_residual: f64,
    pub boundary_residual: f64,
    pub mu_doubled: f64,
    pub r_drift: f64,
}

pub fn verify_mu(cell: &BoundaryCell, schedule: &MuSchedule, mu: f64, corrector: &[f64], strip: &StripGrid) -> Result<VerifyReport> {
    let pb = cell.problem(strip, 0.0, 0.0, false)?;
    let (r, _) = pb.residual(corrector)?;
    let mut interior: f64 = 0.0;
    let mut boundary: f64 = 0.0;
    for (k, v) in r.iter().enumerate() {
        match strip.class(k) {
            NodeClass::Interior => interior = interior.max(v.abs()),
            NodeClass::Bottom => boundary = boundary.max((v - mu).abs()),
            NodeClass::Lid => {}
        }
    }
    let doubled = MuSchedule {
        heights: vec![2.0 * strip.height],
        ..schedule.clone()
    };
    let mu2 = mu_limit(cell, &doubled)?.mu;
    Ok(VerifyReport {
        interior_residual: interior,
        boundary_residual: boundary,
        mu_doubled: mu2,
        r_drift: (mu2 - mu).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::model::{GammaSpec, LinearOblique, LinearSpec};

    fn op1(b: &str) -> OperatorSpec {
        OperatorSpec::Linear(LinearSpec::new(vec![parse("1").unwrap()], vec![parse(b).unwrap()], parse("0").unwrap()).unwrap())
    }

    fn neumann(g: &str) -> BoundaryOperatorSpec {
        BoundaryOperatorSpec::LinearOblique(LinearOblique::new(GammaSpec::Normal, parse(g).unwrap()))
    }

    #[test]
    fn zero_data_gives_zero() {
        let cell = BoundaryCell::new(op1("0"), neumann("0"), 1, 1, 1.0 / 32.0);
        let strip = cell.strip(4.0).unwrap();
        let u = cell.solve_penalized(&strip, 1e-4, 1e-2).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_point_problem_against_dense_solve() {
        // -u'' + εu = 0 on (0, R), -u'(0) - g0 + αu(0) = 0, u'(R) = 0 has
        // u = C cosh(√ε (R - z)) with C (α cosh(√ε R) + √ε sinh(√ε R)) = g0.
        let (g0, eps, alpha, r) = (0.5, 1e-3, 1e-1, 4.0);
        let cell = BoundaryCell::new(op1("0"), neumann("0.5"), 1, 1, 1.0 / 256.0);
        let u = cell.solve_penalized(&cell.strip(r).unwrap(), eps, alpha).unwrap();
        let s = f64::sqrt(eps);
        let c = g0 / (alpha * (s * r).cosh() + s * (s * r).sinh());
        assert!((u[0] - c * (s * r).cosh()).abs() < 1e-3 * u[0], "{} vs {}", u[0], c * (s * r).cosh());
    }

    #[test]
    fn shifting_g_shifts_mu() {
        let sched = MuSchedule {
            heights: vec![4.0],
            ..Default::default()
        };
        let a = mu_limit(&BoundaryCell::new(op1("-1"), neumann("0.5"), 1, 1, 1.0 / 32.0), &sched).unwrap();
        let b = mu_limit(&BoundaryCell::new(op1("-1"), neumann("0.6"), 1, 1, 1.0 / 32.0), &sched).unwrap();
        assert!((a.mu + 0.5).abs() < 1e-6, "{}", a.mu);
        assert!((b.mu - a.mu + 0.1).abs() < 1e-8);
    }

    #[test]
    fn counterexample_is_flagged() {
        let cell = BoundaryCell::new(op1("1"), neumann("0.5"), 1, 1, 1.0 / 32.0);
        let toward = mu_limit(&BoundaryCell::new(op1("-1"), neumann("0.5"), 1, 1, 1.0 / 32.0), &Default::default()).unwrap();
        assert_eq!(toward.uniqueness_flag, UniquenessFlag::UniqueConsistent);
        assert!((toward.mu + 0.5).abs() < 1e-4);
        let away = mu_limit(&cell, &Default::default()).unwrap();
        assert_eq!(away.uniqueness_flag, UniquenessFlag::SuspectNonunique, "{:?}", away.diagnostics.r_history);
    }

    #[test]
    fn flux_balance_2d() {
        let op = OperatorSpec::Linear(
            LinearSpec::new(
                vec![parse("1").unwrap(), parse("0").unwrap(), parse("1").unwrap()],
                vec![parse("0").unwrap(), parse("0").unwrap()],
                parse("0").unwrap(),
            )
            .unwrap(),
        );
        let mut cell = BoundaryCell::new(op, neumann("sin(2*pi*x1) + sin(2*pi*y1) + 0.3"), 2, 16, 1.0 / 16.0);
        cell.x = [0.0, 0.0];
        let r = mu_limit(
            &cell,
            &MuSchedule {
                heights: vec![2.0, 4.0],
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.mu + 0.3).abs() < 1e-6, "{}", r.mu);
        let v = verify_mu(&cell, &MuSchedule::default(), r.mu, &r.corrector, r.strip.as_ref().unwrap()).unwrap();
        assert!(v.r_drift < 1e-6);
    }
}
