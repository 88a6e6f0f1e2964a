//! Operators, boundary operators and domains, plus sampled checks of the
//! structural assumptions the solvers rely on.
//!
//! Conventions: a linear operator reads `F(M, p, x) = -tr(A M) - b·p - f`,
//! an HJB operator is the pointwise maximum of finitely many linear ones, and
//! a linear boundary operator reads `L(p, x) = p·γ - g` with `γ` pointing out
//! of the domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dsl::{periodicity_defect, Env, Expr};
use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];
pub type Vec2 = [f64; 2];

/// Step used for finite-difference derivatives of the graph function.
pub(crate) const PSI_FD_STEP: f64 = 1e-4;

pub(crate) fn trace_prod(a: &Mat2, m: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += a[i][j] * m[j][i];
        }
    }
    s
}

pub(crate) fn dot(a: &Vec2, b: &Vec2, dim: usize) -> f64 {
    (0..dim).map(|i| a[i] * b[i]).sum()
}

/// Eigenvalues of a symmetric matrix, ascending. In 1D the second slot repeats the first.
pub fn sym_eigenvalues(m: &Mat2, dim: usize) -> (f64, f64) {
    if dim == 1 {
        return (m[0][0], m[0][0]);
    }
    let tr = m[0][0] + m[1][1];
    let disc = ((m[0][0] - m[1][1]).powi(2) / 4.0 + m[0][1] * m[1][0]).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

/// Coefficients of one linear operator sampled at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinCoef {
    pub a: Mat2,
    pub b: Vec2,
    pub f: f64,
}

impl LinCoef {
    pub fn apply(&self, m: &Mat2, p: &Vec2, dim: usize) -> f64 {
        -trace_prod(&self.a, m, dim) - dot(&self.b, p, dim) - self.f
    }
}

/// `-tr(A M) - b·p - f` with expression-valued coefficients.
#[derive(Debug, Clone)]
pub struct LinearSpec {
    /// `[a11]` in 1D, `[a11, a12, a22]` in 2D.
    pub a: Vec<Expr>,
    pub b: Vec<Expr>,
    pub f: Expr,
    /// Whether the drift carries the `1/ε` factor in the oscillating problem.
    pub singular: bool,
}

impl LinearSpec {
    pub fn new(a: Vec<Expr>, b: Vec<Expr>, f: Expr) -> Result<Self> {
        let s = LinearSpec {
            a,
            b,
            f,
            singular: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn singular(mut self, flag: bool) -> Self {
        self.singular = flag;
        self
    }

    pub fn dim(&self) -> usize {
        if self.a.len() == 3 {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = match self.a.len() {
            1 => 1,
            3 => 2,
            n => return Err(Error::Dimension(format!("diffusion needs 1 or 3 entries, got {n}"))),
        };
        if self.b.len() != dim {
            return Err(Error::Dimension(format!(
                "drift has {} entries in dimension {dim}",
                self.b.len()
            )));
        }
        if self.exprs().any(|e| e.depends_on_p()) {
            return Err(Error::Config("linear coefficients may not depend on p".into()));
        }
        Ok(())
    }

    pub fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.a.iter().chain(self.b.iter()).chain(std::iter::once(&self.f))
    }

    pub fn depends_on_x(&self) -> bool {
        self.exprs().any(|e| e.depends_on_x())
    }

    pub fn depends_on_y(&self) -> bool {
        self.exprs().any(|e| e.depends_on_y())
    }

    /// Whether `A` or `b` (not only `f`) depend on the slow variable.
    pub fn principal_depends_on_x(&self) -> bool {
        self.a.iter().chain(self.b.iter()).any(|e| e.depends_on_x())
    }

    pub fn sample_env(&self, env: &Env) -> Result<LinCoef> {
        let mut c = LinCoef::default();
        if self.a.len() == 1 {
            c.a[0][0] = self.a[0].eval(env)?;
            c.b[0] = self.b[0].eval(env)?;
        } else {
            c.a[0][0] = self.a[0].eval(env)?;
            c.a[0][1] = self.a[1].eval(env)?;
            c.a[1][0] = c.a[0][1];
            c.a[1][1] = self.a[2].eval(env)?;
            c.b[0] = self.b[0].eval(env)?;
            c.b[1] = self.b[1].eval(env)?;
        }
        c.f = self.f.eval(env)?;
        Ok(c)
    }

    pub fn sample(&self, x: &[f64], y: &[f64]) -> Result<LinCoef> {
        self.sample_env(&Env::new().with_x(x).with_y(y))
    }
}

/// Interior operator.
#[derive(Debug, Clone)]
pub enum OperatorSpec {
    Linear(LinearSpec),
    /// Pointwise maximum over the listed linear operators.
    Hjb { controls: Vec<LinearSpec> },
    /// `-M⁻(M) - f`, with `M⁻(M) = κ Σ e⁺ + K Σ e⁻` over the eigenvalues `e` of `M`.
    PucciMinus { kappa: f64, big_kappa: f64, f: Expr },
    /// A linear operator plus a smooth Hamiltonian `H(p, x, y)`.
    LinearPlusH { linear: LinearSpec, hamiltonian: Expr },
}

impl OperatorSpec {
    /// Spatial dimension implied by the coefficients, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            OperatorSpec::Linear(l) | OperatorSpec::LinearPlusH { linear: l, .. } => Some(l.dim()),
            OperatorSpec::Hjb { controls } => controls.first().map(|c| c.dim()),
            OperatorSpec::PucciMinus { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorSpec::Linear(l) => l.validate(),
            OperatorSpec::LinearPlusH { linear, .. } => linear.validate(),
            OperatorSpec::Hjb { controls } => {
                if controls.is_empty() {
                    return Err(Error::Config("an HJB operator needs at least one control".into()));
                }
                let d = controls[0].dim();
                for c in controls {
                    c.validate()?;
                    if c.dim() != d {
                        return Err(Error::Dimension("controls of different dimensions".into()));
                    }
                }
                Ok(())
            }
            OperatorSpec::PucciMinus { kappa, big_kappa, .. } => {
                if !(*kappa > 0.0 && big_kappa >= kappa) {
                    return Err(Error::Config(format!(
                        "Pucci constants need 0 < kappa <= Kappa, got {kappa}, {big_kappa}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn exprs(&self) -> Vec<&Expr> {
        match self {
            OperatorSpec::Linear(l) => l.exprs().collect(),
            OperatorSpec::LinearPlusH { linear, hamiltonian } => {
                let mut v: Vec<&Expr> = linear.exprs().collect();
                v.push(hamiltonian);
                v
            }
            OperatorSpec::Hjb { controls } => controls.iter().flat_map(|c| c.exprs()).collect(),
            OperatorSpec::PucciMinus { f, .. } => vec![f],
        }
    }

    pub fn is_singular(&self) -> bool {
        match self {
            OperatorSpec::Linear(l) | OperatorSpec::LinearPlusH { linear: l, .. } => l.singular,
            OperatorSpec::Hjb { controls } => controls.iter().any(|c| c.singular),
            OperatorSpec::PucciMinus { .. } => false,
        }
    }
}

/// Value of an operator together with the maximizing control for HJB operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorValue {
    pub value: f64,
    pub control: Option<usize>,
}

/// `F(M, p, x)` with coefficients sampled at `(x, y)`.
pub fn evaluate_operator(op: &OperatorSpec, dim: usize, m: &Mat2, p: &Vec2, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(evaluate_operator_with_control(op, dim, m, p, x, y)?.value)
}

/// As [`evaluate_operator`], also reporting the active control (lowest index on ties).
pub fn evaluate_operator_with_control(
    op: &OperatorSpec,
    dim: usize,
    m: &Mat2,
    p: &Vec2,
    x: &[f64],
    y: &[f64],
) -> Result<OperatorValue> {
    if let Some(d) = op.dim() {
        if d != dim {
            return Err(Error::Dimension(format!("operator is {d}-dimensional, point is {dim}-dimensional")));
        }
    }
    let env = Env::new().with_x(x).with_y(y);
    Ok(match op {
        OperatorSpec::Linear(l) => OperatorValue {
            value: l.sample_env(&env)?.apply(m, p, dim),
            control: None,
        },
        OperatorSpec::LinearPlusH { linear, hamiltonian } => {
            let lin = linear.sample_env(&env)?.apply(m, p, dim);
            let h = hamiltonian.eval(&env.with_p(&p[..dim]))?;
            OperatorValue {
                value: lin + h,
                control: None,
            }
        }
        OperatorSpec::Hjb { controls } => {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (k, c) in controls.iter().enumerate() {
                let v = c.sample_env(&env)?.apply(m, p, dim);
                if v > best {
                    best = v;
                    arg = k;
                }
            }
            OperatorValue {
                value: best,
                control: Some(arg),
            }
        }
        OperatorSpec::PucciMinus { kappa, big_kappa, f } => {
            let (e1, e2) = sym_eigenvalues(m, dim);
            let eig: &[f64] = if dim == 1 { &[e1][..] } else { &[e1, e2][..] };
            let mut s = 0.0;
            for &e in eig {
                s += if e > 0.0 { kappa * e } else { big_kappa * e };
            }
            OperatorValue {
                value: -s - f.eval(&env)?,
                control: None,
            }
        }
    })
}

/// Direction field of an oblique boundary condition.
#[derive(Debug, Clone)]
pub enum GammaSpec {
    /// The outward unit normal of the domain.
    Normal,
    Field(Vec<Expr>),
}

/// `L(p, x) = p·γ(x) - g(x)`.
#[derive(Debug, Clone)]
pub struct LinearOblique {
    pub gamma: GammaSpec,
    pub g: Expr,
}

impl LinearOblique {
    pub fn new(gamma: GammaSpec, g: Expr) -> Self {
        LinearOblique { gamma, g }
    }

    /// `γ` at a boundary point with outward normal `normal`.
    pub fn gamma_env(&self, env: &Env, normal: &Vec2, dim: usize) -> Result<Vec2> {
        match &self.gamma {
            GammaSpec::Normal => Ok(*normal),
            GammaSpec::Field(f) => {
                if f.len() != dim {
                    return Err(Error::Dimension(format!("gamma has {} entries in dimension {dim}", f.len())));
                }
                let mut g = [0.0; 2];
                for (i, e) in f.iter().enumerate() {
                    g[i] = e.eval(env)?;
                }
                Ok(g)
            }
        }
    }

    pub fn exprs(&self) -> Vec<&Expr> {
        let mut v = vec![&self.g];
        if let GammaSpec::Field(f) = &self.gamma {
            v.extend(f.iter());
        }
        v
    }
}

/// Boundary operator.
#[derive(Debug, Clone)]
pub enum BoundaryOperatorSpec {
    LinearOblique(LinearOblique),
    /// `L(p, x) = p·γ - g + N(|p|, x)` with `N` given as an expression in `pnorm`.
    NonlinearHomogeneous { base: LinearOblique, nonlinearity: Expr },
}

impl BoundaryOperatorSpec {
    pub fn base(&self) -> &LinearOblique {
        match self {
            BoundaryOperatorSpec::LinearOblique(b) => b,
            BoundaryOperatorSpec::NonlinearHomogeneous { base, .. } => base,
        }
    }

    pub fn base_mut(&mut self) -> &mut LinearOblique {
        match self {
            BoundaryOperatorSpec::LinearOblique(b) => b,
            BoundaryOperatorSpec::NonlinearHomogeneous { base, .. } => base,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, BoundaryOperatorSpec::LinearOblique(_))
    }

    pub fn exprs(&self) -> Vec<&Expr> {
        let mut v = self.base().exprs();
        if let BoundaryOperatorSpec::NonlinearHomogeneous { nonlinearity, .. } = self {
            v.push(nonlinearity);
        }
        v
    }

    /// `L(p, x)` at a boundary point with outward normal `normal`.
    pub fn evaluate(&self, p: &Vec2, x: &[f64], y: &[f64], normal: &Vec2, dim: usize) -> Result<f64> {
        let env = Env::new().with_x(x).with_y(y);
        let base = self.base();
        let gamma = base.gamma_env(&env, normal, dim)?;
        let mut v = dot(p, &gamma, dim) - base.g.eval(&env)?;
        if let BoundaryOperatorSpec::NonlinearHomogeneous { nonlinearity, .. } = self {
            v += nonlinearity.eval(&env.with_p(&p[..dim]))?;
        }
        Ok(v)
    }
}

/// A periodic graph `y_N = ψ(y')` with finite-difference derivatives.
#[derive(Debug, Clone)]
pub struct Graph {
    pub psi: Expr,
}

impl Graph {
    pub fn flat() -> Self {
        Graph {
            psi: Expr::constant(0.0),
        }
    }

    pub fn is_flat(&self) -> bool {
        self.psi.as_constant() == Some(0.0)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        Ok(self.psi.eval(&Env::new().with_y(&[t]))?)
    }

    /// `(ψ, ψ', ψ'')` by central differences with step `h`.
    pub fn jet(&self, t: f64, h: f64) -> Result<(f64, f64, f64)> {
        let c = self.value(t)?;
        let r = self.value(t + h)?;
        let l = self.value(t - h)?;
        Ok((c, (r - l) / (2.0 * h), (r - 2.0 * c + l) / (h * h)))
    }

    /// Outward unit normal `(ψ', -1)/sqrt(1 + ψ'^2)` at tangential coordinate `t`.
    pub fn normal(&self, t: f64) -> Result<Vec2> {
        let (_, d, _) = self.jet(t, PSI_FD_STEP)?;
        let s = (1.0 + d * d).sqrt();
        Ok([d / s, -1.0 / s])
    }

    pub fn max_value(&self, samples: usize) -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        for k in 0..samples {
            m = m.max(self.value(k as f64 / samples as f64)?);
        }
        Ok(m)
    }
}

/// Domain descriptions.
#[derive(Debug, Clone)]
pub enum DomainSpec {
    Torus { dim: usize },
    /// `{ ψ(y') < y_N < R }`, periodic in `y'`. In 1D the graph is ignored and the strip is `(0, R)`.
    HalfStrip { dim: usize, graph: Graph, height: f64 },
    /// `Ω_ε = { x_N > ε ψ(x'/ε) }`.
    OscillatingHalfPlane { dim: usize, graph: Graph, epsilon: f64 },
}

impl DomainSpec {
    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Torus { dim }
            | DomainSpec::HalfStrip { dim, .. }
            | DomainSpec::OscillatingHalfPlane { dim, .. } => *dim,
        }
    }

    /// Boundary height and its slope at tangential coordinate `t`.
    fn boundary_at(&self, t: f64) -> Result<(f64, f64)> {
        match self {
            DomainSpec::Torus { .. } => Err(Error::Unsupported("a torus has no boundary".into())),
            DomainSpec::HalfStrip { dim, graph, .. } => {
                if *dim == 1 {
                    return Ok((0.0, 0.0));
                }
                let (v, d, _) = graph.jet(t, PSI_FD_STEP)?;
                Ok((v, d))
            }
            DomainSpec::OscillatingHalfPlane { dim, graph, epsilon } => {
                if *dim == 1 {
                    return Ok((0.0, 0.0));
                }
                let (v, d, _) = graph.jet(t / epsilon, PSI_FD_STEP)?;
                Ok((epsilon * v, d))
            }
        }
    }

    /// Whether `x` lies in the (untruncated) domain.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        let dim = self.dim();
        if let DomainSpec::Torus { .. } = self {
            return Ok(true);
        }
        let t = if dim == 2 { x[0] } else { 0.0 };
        let (b, _) = self.boundary_at(t)?;
        Ok(x[dim - 1] > b)
    }
}

/// Signed distance (positive inside) and outward unit normal at the foot of `x`.
///
/// For graph domains the distance is the vertical offset divided by
/// `sqrt(1 + |Dψ|^2)`: exact for flat boundaries and accurate to first order
/// in the curvature otherwise.
pub fn signed_distance_and_normal(dom: &DomainSpec, x: &[f64]) -> Result<(f64, Vec2)> {
    let dim = dom.dim();
    if x.len() != dim {
        return Err(Error::Dimension(format!("point has {} coordinates in dimension {dim}", x.len())));
    }
    if dim == 1 {
        if let DomainSpec::Torus { .. } = dom {
            return Err(Error::Unsupported("a torus has no boundary".into()));
        }
        return Ok((x[0], [-1.0, 0.0]));
    }
    let (b, d) = dom.boundary_at(x[0])?;
    let s = (1.0 + d * d).sqrt();
    Ok(((x[1] - b) / s, [d / s, -1.0 / s]))
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub name: String,
    pub passed: bool,
    /// Worst observed constant (ellipticity, obliqueness, Lipschitz bound, defect).
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn get(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.get(name).map(|e| e.passed).unwrap_or(false)
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    fn push(&mut self, name: &str, passed: bool, margin: f64, detail: String) {
        self.entries.push(AuditEntry {
            name: name.to_string(),
            passed,
            margin,
            detail,
        });
    }
}

pub(crate) fn random_sym(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Mat2 {
    let mut m = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in i..dim {
            let v = rng.gen_range(-scale..scale);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub(crate) fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec2 {
    let mut v = [0.0; 2];
    for x in v.iter_mut().take(dim) {
        *x = rng.gen_range(-scale..scale);
    }
    v
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()
}

fn norm_m(m: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += m[i][j] * m[i][j];
        }
    }
    s.sqrt()
}

/// Smallest eigenvalue of the diffusion over probes and controls, for operators that have one.
fn analytic_ellipticity(op: &OperatorSpec, dim: usize, points: &[(Vec<f64>, Vec<f64>)]) -> Result<Option<f64>> {
    let specs: Vec<&LinearSpec> = match op {
        OperatorSpec::Linear(l) | OperatorSpec::LinearPlusH { linear: l, .. } => vec![l],
        OperatorSpec::Hjb { controls } => controls.iter().collect(),
        OperatorSpec::PucciMinus { kappa, .. } => return Ok(Some(*kappa)),
    };
    let mut worst = f64::INFINITY;
    for (x, y) in points {
        for s in &specs {
            let c = s.sample(x, y)?;
            worst = worst.min(sym_eigenvalues(&c.a, dim).0);
        }
    }
    Ok(Some(worst))
}

/// Samples the structural assumptions on random tuples with a fixed seed.
///
/// Checks: periodicity of all coefficients in `y`, a Lipschitz bound by
/// difference quotients, degenerate and uniform ellipticity, the smallest
/// diffusion eigenvalue, obliqueness, the recession limit of nonlinear
/// boundary operators and the geometry of the domain.
pub fn audit_assumptions(
    op: &OperatorSpec,
    bop: Option<&BoundaryOperatorSpec>,
    dom: &DomainSpec,
    probes: usize,
) -> Result<AuditReport> {
    let probes = probes.max(1);
    let dim = dom.dim();
    op.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0D1);
    let mut report = AuditReport::default();

    let mut exprs = op.exprs();
    if let Some(b) = bop {
        exprs.extend(b.exprs());
    }
    let mut per = 0.0f64;
    for e in &exprs {
        per = per.max(periodicity_defect(e, dim, probes, 17)?);
    }
    report.push("periodicity", per < 1e-12, per, "largest change under unit shifts in y".into());

    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..probes)
        .map(|_| (random_point(&mut rng, dim), random_point(&mut rng, dim)))
        .collect();
    let eval = |m: &Mat2, p: &Vec2, x: &[f64], y: &[f64]| evaluate_operator(op, dim, m, p, x, y);

    // Lipschitz bound in (M, p) and in x.
    let mut lip: f64 = 0.0;
    let mut lip_x: f64 = 0.0;
    for (x, y) in &points {
        let m1 = random_sym(&mut rng, dim, 10.0);
        let p1 = random_vec(&mut rng, dim, 10.0);
        let dm = random_sym(&mut rng, dim, 1e-3);
        let dp = random_vec(&mut rng, dim, 1e-3);
        let mut m2 = m1;
        let mut p2 = p1;
        for i in 0..dim {
            p2[i] += dp[i];
            for j in 0..dim {
                m2[i][j] += dm[i][j];
            }
        }
        let f1 = eval(&m1, &p1, x, y)?;
        let f2 = eval(&m2, &p2, x, y)?;
        let den = norm_m(&dm, dim) + dot(&dp, &dp, dim).sqrt();
        if den > 0.0 {
            lip = lip.max((f1 - f2).abs() / den);
        }
        let dx = random_vec(&mut rng, dim, 1e-3);
        let x2: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
        let f3 = eval(&m1, &p1, &x2, y)?;
        let scale = dot(&dx, &dx, dim).sqrt() * (1.0 + dot(&p1, &p1, dim).sqrt() + norm_m(&m1, dim));
        if scale > 0.0 {
            lip_x = lip_x.max((f1 - f3).abs() / scale);
        }
    }
    let k = lip.max(lip_x);
    report.push(
        "lipschitz",
        k.is_finite() && k < 1e6,
        k,
        format!("difference quotients: {lip:.3e} in (M,p), {lip_x:.3e} in x"),
    );

    // Ellipticity along rank-one increments N = v vᵀ.
    let mut kappa_f2 = f64::INFINITY;
    let mut kappa_f3 = f64::INFINITY;
    for (x, y) in &points {
        let m = random_sym(&mut rng, dim, 10.0);
        let p = random_vec(&mut rng, dim, 100.0);
        let pn = dot(&p, &p, dim).sqrt();
        let f0 = eval(&m, &p, x, y)?;
        // Along p̂, for degenerate ellipticity.
        let mut mp = m;
        for i in 0..dim {
            for j in 0..dim {
                mp[i][j] += p[i] * p[j] / (pn * pn);
            }
        }
        kappa_f2 = kappa_f2.min(f0 - eval(&mp, &p, x, y)?);
        // Along a random direction, for uniform ellipticity.
        let v = random_vec(&mut rng, dim, 1.0);
        let vn2 = dot(&v, &v, dim);
        if vn2 > 1e-6 {
            let mut mv = m;
            for i in 0..dim {
                for j in 0..dim {
                    mv[i][j] += v[i] * v[j];
                }
            }
            kappa_f3 = kappa_f3.min((f0 - eval(&mv, &p, x, y)?) / vn2);
        }
    }
    let analytic = analytic_ellipticity(op, dim, &points)?;
    if let Some(a) = analytic {
        kappa_f3 = kappa_f3.min(a);
        kappa_f2 = kappa_f2.min(a);
    }
    let tol = 1e-12;
    report.push(
        "degenerate_ellipticity",
        kappa_f2 > -tol,
        kappa_f2,
        "F(M,p) - F(M + p̂p̂ᵀ,p) lower bound".into(),
    );
    let f3_detail = if kappa_f3 <= tol {
        format!("zero or negative eigenvalue {kappa_f3:.3e} in the diffusion")
    } else {
        "uniform ellipticity constant".into()
    };
    report.push("uniform_ellipticity", kappa_f3 > tol, kappa_f3, f3_detail);
    if let Some(a) = analytic {
        report.push("diffusion_lower_bound", a > tol, a, "smallest diffusion eigenvalue over probes".into());
    }

    if let Some(b) = bop {
        if let Some((nu, detail)) = obliqueness(b, dom, &mut rng, probes)? {
            report.push("obliqueness", nu > tol, nu, detail);
        }
        if let BoundaryOperatorSpec::NonlinearHomogeneous { .. } = b {
            let mut worst: f64 = 0.0;
            for _ in 0..probes {
                let p = random_vec(&mut rng, dim, 1.0);
                let t = random_point(&mut rng, dim);
                let (_, n) = signed_distance_and_normal(dom, &boundary_point(dom, &t)?)?;
                let xb = boundary_point(dom, &t)?;
                let l1 = b.evaluate(&[p[0] * 1e4, p[1] * 1e4], &xb, &xb, &n, dim)? / 1e4;
                let l2 = b.evaluate(&[p[0] * 1e5, p[1] * 1e5], &xb, &xb, &n, dim)? / 1e5;
                worst = worst.max((l1 - l2).abs());
            }
            report.push("recession_limit", worst < 1e-3, worst, "change of t⁻¹L(tp) between t = 1e4 and 1e5".into());
        }
    }

    match dom {
        DomainSpec::Torus { .. } => {}
        DomainSpec::HalfStrip { dim, graph, height } => {
            let defect = if *dim == 2 { periodicity_defect(&graph.psi, 1, probes, 5)? } else { 0.0 };
            let top = if *dim == 2 { graph.max_value(512)? } else { 0.0 };
            let ok = defect < 1e-12 && *height > top + 1.0;
            report.push(
                "domain_geometry",
                ok,
                height - top - 1.0,
                format!("graph periodicity defect {defect:.1e}, lid clearance {:.3}", height - top),
            );
        }
        DomainSpec::OscillatingHalfPlane { dim, graph, .. } => {
            let defect = if *dim == 2 { periodicity_defect(&graph.psi, 1, probes, 5)? } else { 0.0 };
            report.push("domain_geometry", defect < 1e-12, defect, "graph periodicity defect".into());
        }
    }
    Ok(report)
}

fn boundary_point(dom: &DomainSpec, t: &[f64]) -> Result<Vec<f64>> {
    let dim = dom.dim();
    if dim == 1 {
        return Ok(vec![0.0]);
    }
    let (b, _) = dom.boundary_at(t[0])?;
    Ok(vec![t[0], b])
}

fn obliqueness(
    b: &BoundaryOperatorSpec,
    dom: &DomainSpec,
    rng: &mut ChaCha8Rng,
    probes: usize,
) -> Result<Option<(f64, String)>> {
    if let DomainSpec::Torus { .. } = dom {
        return Ok(None);
    }
    let dim = dom.dim();
    let mut nu = f64::INFINITY;
    for _ in 0..probes {
        let t = random_point(rng, dim);
        let xb = boundary_point(dom, &t)?;
        let (_, n) = signed_distance_and_normal(dom, &xb)?;
        let p = random_vec(rng, dim, 10.0);
        let s: f64 = rng.gen_range(0.1..10.0);
        let mut q = p;
        for i in 0..dim {
            q[i] += s * n[i];
        }
        let l0 = b.evaluate(&p, &xb, &xb, &n, dim)?;
        let l1 = b.evaluate(&q, &xb, &xb, &n, dim)?;
        nu = nu.min((l1 - l0) / s);
    }
    Ok(Some((nu, "smallest (L(p + t n) - L(p)) / t over probes".into())))
}
