//! Reference problems used by the tests, the guide and the bundled configs.

use crate::dsl::parse;
use crate::homogenize::CoefficientSet;
use crate::model::{BoundaryOperatorSpec, GammaSpec, Graph, LinearOblique, LinearSpec, OperatorSpec};

fn expr(s: &str) -> crate::dsl::Expr {
    parse(s).expect("corpus expressions parse")
}

/// Linear operator from expression strings; `a` is row-major upper triangle in 2D.
pub fn linear(a: &[&str], b: &[&str], f: &str, singular: bool) -> LinearSpec {
    LinearSpec::new(a.iter().map(|s| expr(s)).collect(), b.iter().map(|s| expr(s)).collect(), expr(f))
        .expect("corpus operators are well formed")
        .singular(singular)
}

/// `γ = n`, `g` given.
pub fn neumann(g: &str) -> BoundaryOperatorSpec {
    BoundaryOperatorSpec::LinearOblique(LinearOblique::new(GammaSpec::Normal, expr(g)))
}

pub fn graph(psi: &str) -> Graph {
    Graph { psi: expr(psi) }
}

/// `a(y) = 2 + sin(2πy)`.
pub const DIVERGENCE_A: &str = "2 + sin(2*pi*y1)";
/// `a'(y)`, the drift that puts `-a u'' - a' u'` in divergence form.
pub const DIVERGENCE_B: &str = "2*pi*cos(2*pi*y1)";

/// `-(a(x/ε) u')' + u = 1` on `x > 0` with `-u'(0) = 0.5`.
pub fn divergence_1d() -> CoefficientSet {
    CoefficientSet {
        op: OperatorSpec::Linear(linear(&[DIVERGENCE_A], &[DIVERGENCE_B], "1", true)),
        bop: neumann("0.5"),
        graph: Graph::flat(),
    }
}

/// `-Δu + u = 1` above `x₂ = 0.2 ε sin(2π x₁/ε)` with `∂_n u = 0.5`.
pub fn oscillating_boundary_2d() -> CoefficientSet {
    CoefficientSet {
        op: OperatorSpec::Linear(linear(&["1", "0", "1"], &["0", "0"], "1", false)),
        bop: neumann("0.5"),
        graph: graph("0.2*sin(2*pi*y1)"),
    }
}

/// `-a u'' - ε⁻¹ a' k(u') + u = 1` with `k(q) = q + θq³/(1+q²)`, `θ = 1/2`, and `-u'(0) = 0.5`.
///
/// The Hamiltonian `H(y, p) = -a'(y)(k(p) - p)` is smooth with bounded slope.
pub fn nonlinear_1d() -> CoefficientSet {
    CoefficientSet {
        op: OperatorSpec::LinearPlusH {
            linear: linear(&[DIVERGENCE_A], &[DIVERGENCE_B], "1", true),
            hamiltonian: expr("-(2*pi*cos(2*pi*y1))*0.5*p1^3/(1 + p1^2)"),
        },
        bop: neumann("0.5"),
        graph: Graph::flat(),
    }
}

/// `-u'' + s u'` with `s = ±1` for the half-line uniqueness dichotomy.
pub fn drift_pair(s: f64) -> OperatorSpec {
    OperatorSpec::Linear(linear(&["1"], &[&format!("{}", -s)], "0", false))
}
