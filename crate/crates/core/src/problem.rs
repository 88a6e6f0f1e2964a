//! Sampling operator specs onto meshes.

use crate::dsl::Env;
use crate::error::{Error, Result};
use crate::grid::{Mesh, StripGrid};
use crate::model::{BoundaryOperatorSpec, LinCoef, LinearSpec, OperatorSpec, Vec2};
use crate::scheme::{BoundaryOps, DiscreteProblem, DriftStencil, HamiltonianField, InteriorOps};

/// How node coordinates map to the slow and fast variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointMap {
    /// Cell problems: `x` frozen, `y` = node coordinates.
    Cell { x: Vec2 },
    /// Oscillating problems: `x` = node coordinates, `y = x / ε`; singular drifts carry `1/ε`.
    Scaled { eps: f64 },
}

impl PointMap {
    pub fn xy(&self, c: Vec2) -> (Vec2, Vec2) {
        match *self {
            PointMap::Cell { x } => (x, c),
            PointMap::Scaled { eps } => (c, [c[0] / eps, c[1] / eps]),
        }
    }

    pub fn env(&self, c: Vec2, dim: usize) -> Env {
        let (x, y) = self.xy(c);
        Env::new().with_x(&x[..dim]).with_y(&y[..dim])
    }

    fn drift_scale(&self, singular: bool) -> f64 {
        match *self {
            PointMap::Scaled { eps } if singular => 1.0 / eps,
            _ => 1.0,
        }
    }
}

fn sample_linear(l: &LinearSpec, mesh: &Mesh, map: &PointMap) -> Result<Vec<LinCoef>> {
    let dim = mesh.dim();
    let s = map.drift_scale(l.singular);
    (0..mesh.len())
        .map(|k| {
            let mut c = l.sample_env(&map.env(mesh.coords(k), dim))?;
            c.b[0] *= s;
            c.b[1] *= s;
            Ok(c)
        })
        .collect()
}

/// Diffusion matrices spanning the Pucci control set `κ ≤ A ≤ K`.
///
/// In 2D these are the extreme points aligned with the axes and with the diagonals;
/// the discrete maximum is exact whenever the eigenvectors of `D²u` lie in one of the two frames.
pub fn pucci_controls(kappa: f64, big_kappa: f64, dim: usize) -> Vec<[[f64; 2]; 2]> {
    if dim == 1 {
        return vec![[[kappa, 0.0], [0.0, 0.0]], [[big_kappa, 0.0], [0.0, 0.0]]];
    }
    let mut out = Vec::new();
    for &(c1, c2) in &[(kappa, kappa), (kappa, big_kappa), (big_kappa, kappa), (big_kappa, big_kappa)] {
        out.push([[c1, 0.0], [0.0, c2]]);
    }
    let (m, d) = ((kappa + big_kappa) / 2.0, (big_kappa - kappa) / 2.0);
    out.push([[m, d], [d, m]]);
    out.push([[m, -d], [-d, m]]);
    out
}

/// Interior operator data on every node of `mesh`.
pub fn sample_interior(op: &OperatorSpec, mesh: &Mesh, map: &PointMap) -> Result<InteriorOps> {
    op.validate()?;
    let dim = mesh.dim();
    if let Some(d) = op.dim() {
        if d != dim {
            return Err(Error::Dimension(format!("operator is {d}-dimensional, mesh is {dim}-dimensional")));
        }
    }
    Ok(match op {
        OperatorSpec::Linear(l) => InteriorOps::Linear(sample_linear(l, mesh, map)?),
        OperatorSpec::Hjb { controls } => InteriorOps::Max(
            controls
                .iter()
                .map(|c| sample_linear(c, mesh, map))
                .collect::<Result<_>>()?,
        ),
        OperatorSpec::PucciMinus { kappa, big_kappa, f } => {
            let fs: Vec<f64> = (0..mesh.len())
                .map(|k| Ok(f.eval(&map.env(mesh.coords(k), dim))?))
                .collect::<Result<_>>()?;
            InteriorOps::Max(
                pucci_controls(*kappa, *big_kappa, dim)
                    .into_iter()
                    .map(|a| fs.iter().map(|&f| LinCoef { a, b: [0.0; 2], f }).collect())
                    .collect(),
            )
        }
        OperatorSpec::LinearPlusH { linear, hamiltonian } => {
            let envs = (0..mesh.len()).map(|k| map.env(mesh.coords(k), dim)).collect();
            InteriorOps::Hamiltonian {
                linear: sample_linear(linear, mesh, map)?,
                h: HamiltonianField {
                    expr: hamiltonian.clone(),
                    envs,
                    scale: map.drift_scale(linear.singular),
                },
            }
        }
    })
}

/// Boundary operator data on the bottom nodes of `strip`.
pub fn sample_boundary(bop: &BoundaryOperatorSpec, strip: &StripGrid, map: &PointMap, alpha: f64) -> Result<BoundaryOps> {
    let dim = strip.dim;
    let base = bop.base();
    let mut gamma = Vec::with_capacity(strip.nt);
    let mut g = Vec::with_capacity(strip.nt);
    let mut envs = Vec::with_capacity(strip.nt);
    for i in strip.bottom_nodes() {
        let env = map.env(strip.coords(i), dim);
        gamma.push(base.gamma_env(&env, &strip.normal(i), dim)?);
        g.push(base.g.eval(&env)?);
        envs.push(env);
    }
    let nonlinear = match bop {
        BoundaryOperatorSpec::LinearOblique(_) => None,
        BoundaryOperatorSpec::NonlinearHomogeneous { nonlinearity, .. } => Some((nonlinearity.clone(), envs)),
    };
    Ok(BoundaryOps {
        gamma,
        g,
        nonlinear,
        alpha,
    })
}

/// Torus problem `F(D²u, p + Du) + δ u = s`.
pub fn torus_problem(interior: InteriorOps, mesh: Mesh, delta: f64, source: f64, shift: Vec2, drift: DriftStencil) -> DiscreteProblem {
    let n = mesh.len();
    DiscreteProblem {
        mesh,
        interior,
        zeroth: vec![delta; n],
        source: vec![source; n],
        shift,
        boundary: None,
        lid_target: None,
        drift,
    }
}

/// Linear operators with `A` halved and `f` dropped, as in the ergodic criterion.
pub fn halved_without_source(op: &OperatorSpec) -> Result<OperatorSpec> {
    let strip = |l: &LinearSpec| -> LinearSpec {
        let mut l = l.clone();
        l.a = l
            .a
            .iter()
            .map(|e| crate::dsl::parse(&format!("0.5*({})", e.source())))
            .collect::<std::result::Result<_, _>>()
            .expect("wrapping a parsed expression reparses");
        l.f = crate::dsl::Expr::constant(0.0);
        l
    };
    match op {
        OperatorSpec::Linear(l) => Ok(OperatorSpec::Linear(strip(l))),
        OperatorSpec::Hjb { controls } => Ok(OperatorSpec::Hjb {
            controls: controls.iter().map(strip).collect(),
        }),
        _ => Err(Error::Unsupported("the ergodic criterion needs a linear or HJB operator".into())),
    }
}
