//! Monotone finite-difference schemes on tori and flattened strips.
//!
//! Every discrete equation is stored in the row form
//! `S_i(u) = d_i u_i - Σ_j w_ij u_j - r_i` with `w_ij ≥ 0`, so that `S_i` is
//! nonincreasing in each neighbor value. Interior rows discretize
//! `F(D²u, Du) + c u = s`; bottom rows of a strip discretize
//! `L(Du) + α u = 0`; lid rows impose a homogeneous normal derivative.

use crate::dsl::{Env, Expr};
use crate::error::{Error, Result};
use crate::grid::{Mesh, NodeClass};
use crate::model::{LinCoef, Vec2};
use crate::sparse::Triplets;

/// Drift discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftStencil {
    /// One-sided differences in the direction of the drift.
    #[default]
    Upwind,
    /// Central differences on rows where they keep all weights nonnegative, upwind elsewhere.
    Hybrid,
}

/// Rows `d_i u_i - Σ w_ij u_j - r_i` in compressed form.
#[derive(Debug, Clone, Default)]
pub struct RowSet {
    pub diag: Vec<f64>,
    pub start: Vec<usize>,
    pub cols: Vec<usize>,
    pub weights: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl RowSet {
    pub fn with_capacity(n: usize) -> Self {
        let mut r = RowSet {
            diag: Vec::with_capacity(n),
            start: Vec::with_capacity(n + 1),
            cols: Vec::with_capacity(9 * n),
            weights: Vec::with_capacity(9 * n),
            rhs: Vec::with_capacity(n),
        };
        r.start.push(0);
        r
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn push(&mut self, diag: f64, entries: &[(usize, f64)], rhs: f64) {
        for &(c, w) in entries {
            if w != 0.0 {
                self.cols.push(c);
                self.weights.push(w);
            }
        }
        self.diag.push(diag);
        self.rhs.push(rhs);
        self.start.push(self.cols.len());
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.start[i]..self.start[i + 1]).map(move |k| (self.cols[k], self.weights[k]))
    }

    pub fn row_value(&self, i: usize, u: &[f64]) -> f64 {
        let mut s = self.diag[i] * u[i] - self.rhs[i];
        for (c, w) in self.row(i) {
            s -= w * u[c];
        }
        s
    }

    /// `S(u)` for all rows.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row_value(i, u)).collect()
    }

    /// Smallest off-diagonal weight and smallest `d_i - Σ_j w_ij`.
    pub fn monotonicity_margins(&self) -> (f64, f64) {
        let mut wmin = f64::INFINITY;
        let mut excess = f64::INFINITY;
        for i in 0..self.len() {
            let mut s = 0.0;
            for (_, w) in self.row(i) {
                wmin = wmin.min(w);
                s += w;
            }
            excess = excess.min(self.diag[i] - s);
        }
        (wmin, excess)
    }

    /// Whether every row is monotone, up to roundoff relative to the row scale.
    pub fn is_monotone(&self) -> bool {
        (0..self.len()).all(|i| {
            let scale = self.diag[i].abs().max(1e-300);
            let mut s = 0.0;
            for (_, w) in self.row(i) {
                if w < -1e-12 * scale {
                    return false;
                }
                s += w;
            }
            self.diag[i] - s >= -1e-10 * scale
        })
    }

    pub fn triplets(&self) -> Triplets {
        let mut t = Triplets::with_capacity(self.len(), self.cols.len() + self.len());
        for i in 0..self.len() {
            t.push(i, i, self.diag[i]);
            for (c, w) in self.row(i) {
                t.push(i, c, -w);
            }
        }
        t
    }

    /// Solves `S(u) = 0` directly.
    pub fn solve_direct(&self) -> Result<Vec<f64>> {
        self.triplets().solve(&self.rhs)
    }

    /// Gauss-Seidel sweeps until the update falls below `tol`.
    pub fn solve_gauss_seidel(&self, start: &[f64], tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
        let mut u = start.to_vec();
        let mut history = Vec::new();
        // With a positive diagonal excess c, |u - u*| ≤ |S(u)| / c.
        let excess = self.monotonicity_margins().1;
        for sweep in 0..max_sweeps {
            let mut change: f64 = 0.0;
            for i in 0..self.len() {
                let mut s = self.rhs[i];
                for (c, w) in self.row(i) {
                    s += w * u[c];
                }
                let v = s / self.diag[i];
                change = change.max((v - u[i]).abs());
                u[i] = v;
            }
            history.push(change);
            let converged = if excess > 0.0 {
                change < tol && sup(&self.apply(&u)) < tol * excess
            } else {
                change < tol
            };
            if converged {
                return Ok(u);
            }
            if sweep + 1 == max_sweeps {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: max_sweeps,
            residual: *history.last().unwrap_or(&f64::INFINITY),
            history,
        })
    }
}

/// Maps physical coefficients to the flattened coordinates `(t, z = y_N - ψ(t))`.
pub fn flatten(c: &LinCoef, dpsi: f64, d2psi: f64) -> LinCoef {
    if dpsi == 0.0 && d2psi == 0.0 {
        return *c;
    }
    let a = c.a;
    let a12 = a[0][1] - dpsi * a[0][0];
    LinCoef {
        a: [[a[0][0], a12], [a12, a[0][0] * dpsi * dpsi - 2.0 * a[0][1] * dpsi + a[1][1]]],
        b: [c.b[0], c.b[1] - dpsi * c.b[0] - d2psi * a[0][0]],
        f: c.f,
    }
}

/// Physical gradient from flattened derivatives.
pub fn unflatten_gradient(g: &Vec2, dpsi: f64) -> Vec2 {
    [g[0] - dpsi * g[1], g[1]]
}

/// Weights `w[d0 + 1][d1 + 1]` of `-tr(A D²) - b·D` on a uniform stencil.
pub fn interior_weights(c: &LinCoef, dim: usize, h: Vec2, drift: DriftStencil) -> std::result::Result<[[f64; 3]; 3], String> {
    let mut w = [[0.0f64; 3]; 3];
    if dim == 1 {
        let a = c.a[0][0] / (h[0] * h[0]);
        w[0][1] += a;
        w[2][1] += a;
    } else {
        let (a11, a12, a22) = (c.a[0][0], c.a[0][1], c.a[1][1]);
        let x = a12.abs() / (h[0] * h[1]);
        let e = a11 / (h[0] * h[0]) - x;
        let n = a22 / (h[1] * h[1]) - x;
        w[0][1] += e;
        w[2][1] += e;
        w[1][0] += n;
        w[1][2] += n;
        if a12 >= 0.0 {
            w[2][2] += x;
            w[0][0] += x;
        } else {
            w[2][0] += x;
            w[0][2] += x;
        }
        if e < -1e-12 * (a11 / (h[0] * h[0])).abs() || n < -1e-12 * (a22 / (h[1] * h[1])).abs() {
            return Err(format!(
                "cross term a12 = {a12:.4} too large for a11 = {a11:.4}, a22 = {a22:.4} at spacing ({:.3e}, {:.3e})",
                h[0], h[1]
            ));
        }
    }
    for k in 0..dim {
        let b = c.b[k];
        if b == 0.0 {
            continue;
        }
        let (plus, minus): ((usize, usize), (usize, usize)) = if k == 0 { ((2, 1), (0, 1)) } else { ((1, 2), (1, 0)) };
        let hk = h[k];
        let central_ok = drift == DriftStencil::Hybrid && {
            let half = b / (2.0 * hk);
            w[plus.0][plus.1] + half >= 0.0 && w[minus.0][minus.1] - half >= 0.0
        };
        if central_ok {
            w[plus.0][plus.1] += b / (2.0 * hk);
            w[minus.0][minus.1] -= b / (2.0 * hk);
        } else if b > 0.0 {
            w[plus.0][plus.1] += b / hk;
        } else {
            w[minus.0][minus.1] -= b / hk;
        }
    }
    Ok(w)
}

/// A Hamiltonian term `scale · H(shift + Du, x, y)`.
#[derive(Debug, Clone)]
pub struct HamiltonianField {
    pub expr: Expr,
    /// Per-node environments with `x` and `y` bound.
    pub envs: Vec<Env>,
    pub scale: f64,
}

impl HamiltonianField {
    pub fn value(&self, node: usize, p: &Vec2, dim: usize) -> Result<f64> {
        let mut env = self.envs[node];
        env.set_p(&p[..dim]);
        Ok(self.scale * self.expr.eval(&env)?)
    }

    /// Value and gradient in `p` by central differences.
    pub fn jet(&self, node: usize, p: &Vec2, dim: usize) -> Result<(f64, Vec2)> {
        let h0 = self.value(node, p, dim)?;
        let mut g = [0.0; 2];
        for k in 0..dim {
            let step = 1e-6 * (1.0 + p[k].abs());
            let mut pp = *p;
            let mut pm = *p;
            pp[k] += step;
            pm[k] -= step;
            g[k] = (self.value(node, &pp, dim)? - self.value(node, &pm, dim)?) / (2.0 * step);
        }
        Ok((h0, g))
    }
}

/// Interior operator data sampled per node, in physical coordinates.
#[derive(Debug, Clone)]
pub enum InteriorOps {
    Linear(Vec<LinCoef>),
    /// Pointwise maximum over controls: `controls[k][node]`.
    Max(Vec<Vec<LinCoef>>),
    Hamiltonian { linear: Vec<LinCoef>, h: HamiltonianField },
}

impl InteriorOps {
    pub fn control_count(&self) -> usize {
        match self {
            InteriorOps::Max(c) => c.len(),
            _ => 1,
        }
    }
}

/// Boundary data sampled per bottom node, in physical coordinates.
#[derive(Debug, Clone)]
pub struct BoundaryOps {
    pub gamma: Vec<Vec2>,
    pub g: Vec<f64>,
    /// `N(|p|)` with per-node environments, for nonlinear boundary operators.
    pub nonlinear: Option<(Expr, Vec<Env>)>,
    pub alpha: f64,
}

/// How a nonlinear system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonlinearMethod {
    /// Policy iteration for maxima, iterated linearization for smooth nonlinearities.
    #[default]
    Newton,
    /// Explicit monotone pseudo-time marching with local CFL-limited steps.
    PseudoTime,
}

/// Solver settings. Defaults: linear tolerance 1e-10, nonlinear residual 1e-8, CFL factor 0.9.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    pub linear_tol: f64,
    pub nonlinear_tol: f64,
    pub cfl: f64,
    pub max_iter: usize,
    pub max_pseudo_steps: usize,
    pub method: NonlinearMethod,
    pub gauss_seidel: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            linear_tol: 1e-10,
            nonlinear_tol: 1e-8,
            cfl: 0.9,
            max_iter: 100,
            max_pseudo_steps: 5_000_000,
            method: NonlinearMethod::Newton,
            gauss_seidel: false,
        }
    }
}

/// Result of [`DiscreteProblem::solve`].
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub values: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub policy: Option<Vec<usize>>,
}

/// A fully sampled discrete problem.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub mesh: Mesh,
    pub interior: InteriorOps,
    /// Zeroth-order coefficient `c` of interior rows.
    pub zeroth: Vec<f64>,
    /// Source `s` of interior rows: `F + c u = s`.
    pub source: Vec<f64>,
    /// Gradient shift `p` in `F(D²u, p + Du)` and `L(p + Du)`.
    pub shift: Vec2,
    pub boundary: Option<BoundaryOps>,
    /// Prescribed normal differences `(u_J - u_{J-1}) / h_z` on the lid, per tangential node; zero if absent.
    pub lid_target: Option<Vec<f64>>,
    pub drift: DriftStencil,
}

impl DiscreteProblem {
    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn dim(&self) -> usize {
        self.mesh.dim()
    }

    fn is_nonlinear_smooth(&self) -> bool {
        matches!(self.interior, InteriorOps::Hamiltonian { .. })
            || self.boundary.as_ref().map(|b| b.nonlinear.is_some()).unwrap_or(false)
    }

    /// Central flattened gradient at an interior node.
    fn flat_gradient(&self, node: usize, u: &[f64]) -> Vec2 {
        let h = self.mesh.spacing();
        let dim = self.dim();
        let mut g = [0.0; 2];
        for (k, gk) in g.iter_mut().enumerate().take(dim) {
            let (d0, d1) = if k == 0 { (1, 0) } else { (0, 1) };
            let p = self.mesh.neighbor(node, d0, d1);
            let m = self.mesh.neighbor(node, -d0, -d1);
            *gk = match (p, m) {
                (Some(p), Some(m)) => (u[p] - u[m]) / (2.0 * h[k]),
                (Some(p), None) => (u[p] - u[node]) / h[k],
                (None, Some(m)) => (u[node] - u[m]) / h[k],
                (None, None) => 0.0,
            };
        }
        g
    }

    /// Linear coefficients of the interior row at `node`, linearized at `state` if needed.
    fn interior_coef(&self, node: usize, control: usize, state: Option<&[f64]>) -> Result<LinCoef> {
        let dim = self.dim();
        let (dpsi, _) = self.mesh.slope(node);
        let shift = self.shift;
        let mut c = match &self.interior {
            InteriorOps::Linear(v) => v[node],
            InteriorOps::Max(ctrl) => ctrl[control][node],
            InteriorOps::Hamiltonian { linear, h } => {
                let mut c = linear[node];
                let pk = match state {
                    Some(u) => {
                        let g = unflatten_gradient(&self.flat_gradient(node, u), dpsi);
                        [shift[0] + g[0], shift[1] + g[1]]
                    }
                    None => shift,
                };
                let (hv, hp) = h.jet(node, &pk, dim)?;
                let mut lin = hv;
                for k in 0..dim {
                    c.b[k] -= hp[k];
                    lin += hp[k] * (shift[k] - pk[k]);
                }
                c.f -= lin;
                // The shift of the linear part is added below with the original drift.
                for k in 0..dim {
                    c.f += hp[k] * shift[k];
                }
                c
            }
        };
        // -b·(shift + Du) - f = -b·Du - (f + b·shift)
        for k in 0..dim {
            c.f += c.b[k] * shift[k];
        }
        Ok(c)
    }

    fn push_interior_row(&self, rows: &mut RowSet, node: usize, control: usize, state: Option<&[f64]>) -> Result<()> {
        let dim = self.dim();
        let (dpsi, d2psi) = self.mesh.slope(node);
        let c = flatten(&self.interior_coef(node, control, state)?, dpsi, d2psi);
        let w = interior_weights(&c, dim, self.mesh.spacing(), self.drift)
            .map_err(|detail| Error::MonotonicityViolation { node, detail })?;
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(9);
        let mut diag = 0.0;
        for (a, row) in w.iter().enumerate() {
            for (b, &wt) in row.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                if wt < 0.0 {
                    return Err(Error::MonotonicityViolation {
                        node,
                        detail: format!("negative weight {wt:.3e} at offset ({}, {})", a as isize - 1, b as isize - 1),
                    });
                }
                let nb = self
                    .mesh
                    .neighbor(node, a as isize - 1, b as isize - 1)
                    .ok_or_else(|| Error::Dimension(format!("interior stencil leaves the mesh at node {node}")))?;
                entries.push((nb, wt));
                diag += wt;
            }
        }
        rows.push(diag + self.zeroth[node], &entries, c.f + self.source[node]);
        Ok(())
    }

    fn push_bottom_row(&self, rows: &mut RowSet, node: usize, state: Option<&[f64]>) -> Result<()> {
        let Mesh::Strip(strip) = &self.mesh else {
            unreachable!("bottom rows exist only on strips")
        };
        let bd = self
            .boundary
            .as_ref()
            .ok_or_else(|| Error::Config("strip problem without boundary operator".into()))?;
        let dim = strip.dim;
        let (i, _) = strip.ij(node);
        let dpsi = if dim == 2 { strip.dpsi[i] } else { 0.0 };
        let mut gamma = bd.gamma[i];
        let mut g = bd.g[i];
        if let Some((expr, envs)) = &bd.nonlinear {
            let pk = match state {
                Some(u) => {
                    let up = self.mesh.neighbor(node, if dim == 1 { 1 } else { 0 }, if dim == 1 { 0 } else { 1 }).unwrap();
                    let dz = (u[up] - u[node]) / strip.hz;
                    let flat = if dim == 1 {
                        [dz, 0.0]
                    } else {
                        let e = strip.index(i as isize + 1, 0);
                        let wv = strip.index(i as isize - 1, 0);
                        [(u[e] - u[wv]) / (2.0 * strip.ht), dz]
                    };
                    let gr = unflatten_gradient(&flat, dpsi);
                    [self.shift[0] + gr[0], self.shift[1] + gr[1]]
                }
                None => self.shift,
            };
            let norm = (pk[0] * pk[0] + pk[1] * pk[1]).sqrt();
            let eval = |r: f64| -> Result<f64> {
                let mut env = envs[i];
                env.set(crate::dsl::Var::PNorm, r);
                Ok(expr.eval(&env)?)
            };
            let step = 1e-6 * (1.0 + norm);
            let nv = eval(norm)?;
            let dn = (eval(norm + step)? - eval((norm - step).max(0.0))?) / (norm + step - (norm - step).max(0.0));
            if norm > 1e-14 {
                for k in 0..dim {
                    gamma[k] += dn * pk[k] / norm;
                }
            }
            g = g - nv + dn * norm;
        }
        for k in 0..dim {
            g -= self.shift[k] * gamma[k];
        }
        // Flattened direction.
        let (gt, gn) = if dim == 1 { (0.0, -gamma[0]) } else { (gamma[0], -(gamma[1] - dpsi * gamma[0])) };
        if gn <= 0.0 || (dim == 2 && gn < 10.0 * strip.ht * gt.abs()) {
            return Err(Error::ObliquenessTooWeak {
                node,
                normal: gn,
                tangential: gt.abs(),
            });
        }
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2);
        let up = if dim == 1 { 1 } else { strip.index(i as isize, 1) };
        entries.push((up, gn / strip.hz));
        let mut diag = gn / strip.hz + bd.alpha;
        if dim == 2 && gt != 0.0 {
            // Upwind: backward difference for positive tangential component.
            let nb = if gt > 0.0 {
                strip.index(i as isize - 1, 0)
            } else {
                strip.index(i as isize + 1, 0)
            };
            entries.push((nb, gt.abs() / strip.ht));
            diag += gt.abs() / strip.ht;
        }
        rows.push(diag, &entries, g);
        Ok(())
    }

    fn push_lid_row(&self, rows: &mut RowSet, node: usize) {
        let Mesh::Strip(strip) = &self.mesh else { unreachable!() };
        let (i, j) = strip.ij(node);
        let below = if strip.dim == 1 { j - 1 } else { strip.index(i as isize, j - 1) };
        let target = self.lid_target.as_ref().map(|t| t[i]).unwrap_or(0.0);
        rows.push(1.0 / strip.hz, &[(below, 1.0 / strip.hz)], target);
    }

    /// Rows for a given policy (one control per node) and linearization point.
    pub fn assemble(&self, policy: Option<&[usize]>, state: Option<&[f64]>) -> Result<RowSet> {
        let n = self.len();
        let mut rows = RowSet::with_capacity(n);
        for node in 0..n {
            match self.mesh.class(node) {
                NodeClass::Interior => {
                    let c = policy.map(|p| p[node]).unwrap_or(0);
                    self.push_interior_row(&mut rows, node, c, state)?;
                }
                NodeClass::Bottom => self.push_bottom_row(&mut rows, node, state)?,
                NodeClass::Lid => self.push_lid_row(&mut rows, node),
            }
        }
        Ok(rows)
    }

    /// Rows of every control, for policy improvement.
    fn assemble_all(&self, state: Option<&[f64]>) -> Result<Vec<RowSet>> {
        let n = self.len();
        (0..self.interior.control_count())
            .map(|k| self.assemble(Some(&vec![k; n]), state))
            .collect()
    }

    /// Nonlinear residual `max_k S_k(u)` and the maximizing policy (lowest index on ties).
    pub fn residual(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
        let all = self.assemble_all(Some(u))?;
        let n = self.len();
        let mut r = vec![f64::NEG_INFINITY; n];
        let mut pol = vec![0usize; n];
        for (k, rows) in all.iter().enumerate() {
            for i in 0..n {
                let v = rows.row_value(i, u);
                if v > r[i] + 1e-13 * (1.0 + v.abs()) {
                    r[i] = v;
                    pol[i] = k;
                }
            }
        }
        Ok((r, pol))
    }

    /// Solves `S(u) = 0`.
    pub fn solve(&self, params: &SolverParams) -> Result<SolveReport> {
        match params.method {
            NonlinearMethod::PseudoTime => self.solve_pseudo_time(params, None),
            NonlinearMethod::Newton => self.solve_newton(params),
        }
    }

    fn linear_solve(&self, rows: &RowSet, start: &[f64], params: &SolverParams) -> Result<Vec<f64>> {
        if params.gauss_seidel {
            rows.solve_gauss_seidel(start, params.linear_tol, 1_000_000)
        } else {
            rows.solve_direct()
        }
    }

    fn solve_newton(&self, params: &SolverParams) -> Result<SolveReport> {
        let n = self.len();
        let controls = self.interior.control_count();
        let smooth = self.is_nonlinear_smooth();
        let mut u = vec![0.0; n];
        let mut policy = vec![0usize; n];
        let mut history = Vec::new();
        if controls > 1 {
            policy = self.residual(&u)?.1;
        }
        for it in 0..params.max_iter {
            let rows = self.assemble(Some(&policy), if smooth { Some(&u) } else { None })?;
            let next = self.linear_solve(&rows, &u, params)?;
            let change = next.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            u = next;
            if controls == 1 && !smooth {
                let res = sup(&rows.apply(&u));
                history.push(res);
                return Ok(SolveReport {
                    values: u,
                    residual: res,
                    iterations: 1,
                    history,
                    policy: None,
                });
            }
            let (r, new_policy) = self.residual(&u)?;
            let res = sup_abs(&r);
            history.push(res);
            let policy_fixed = new_policy == policy;
            policy = new_policy;
            let scale = 1.0 + sup_abs(&u);
            if (policy_fixed || controls == 1) && (!smooth || change < params.linear_tol * scale) && res < params.nonlinear_tol.max(params.linear_tol) * scale.max(1.0) * residual_scale(&self.mesh) {
                return Ok(SolveReport {
                    values: u,
                    residual: res,
                    iterations: it + 1,
                    history,
                    policy: (controls > 1).then_some(policy),
                });
            }
            if policy_fixed && !smooth {
                // Policy fixed but residual above tolerance: roundoff floor reached.
                return Ok(SolveReport {
                    values: u,
                    residual: res,
                    iterations: it + 1,
                    history,
                    policy: (controls > 1).then_some(policy),
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: params.max_iter,
            residual: *history.last().unwrap_or(&f64::INFINITY),
            history,
        })
    }

    /// Explicit monotone marching `u ← u - Δt_i S_i(u)` with `Δt_i = cfl / max_k d_i`.
    pub fn solve_pseudo_time(&self, params: &SolverParams, start: Option<&[f64]>) -> Result<SolveReport> {
        let n = self.len();
        let smooth = self.is_nonlinear_smooth();
        let mut u = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut all = self.assemble_all(None)?;
        let mut dt = vec![f64::INFINITY; n];
        for rows in &all {
            for (i, d) in dt.iter_mut().enumerate() {
                *d = d.min(params.cfl / rows.diag[i]);
            }
        }
        let mut history = Vec::new();
        for step in 0..params.max_pseudo_steps {
            if smooth && step % 50 == 0 {
                all = self.assemble_all(Some(&u))?;
            }
            let mut res: f64 = 0.0;
            let mut next = u.clone();
            for i in 0..n {
                let mut r = f64::NEG_INFINITY;
                for rows in &all {
                    r = r.max(rows.row_value(i, &u));
                }
                res = res.max(r.abs());
                next[i] = u[i] - dt[i] * r;
            }
            u = next;
            if step % 1000 == 0 {
                history.push(res);
            }
            if res < params.nonlinear_tol {
                history.push(res);
                return Ok(SolveReport {
                    values: u,
                    residual: res,
                    iterations: step + 1,
                    history,
                    policy: None,
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: params.max_pseudo_steps,
            residual: *history.last().unwrap_or(&f64::INFINITY),
            history,
        })
    }
}

/// Residuals of rows scaled by `1/h²` are compared against a tolerance relative to that scale.
fn residual_scale(mesh: &Mesh) -> f64 {
    let h = mesh.spacing();
    1.0 / (h[0].min(h[1]) * h[0].min(h[1]))
}

pub(crate) fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) fn sup_abs(v: &[f64]) -> f64 {
    sup(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{StripGrid, TorusGrid};
    use crate::model::Graph;

    fn lin(a: f64, b: f64, f: f64) -> LinCoef {
        LinCoef {
            a: [[a, 0.0], [0.0, 0.0]],
            b: [b, 0.0],
            f,
        }
    }

    #[test]
    fn laplacian_weights_1d() {
        let h = 0.25;
        let w = interior_weights(&lin(1.0, 0.0, 0.0), 1, [h, h], DriftStencil::Upwind).unwrap();
        assert_eq!(w[0][1], 1.0 / (h * h));
        assert_eq!(w[2][1], 1.0 / (h * h));
        let diag: f64 = w.iter().flatten().sum();
        assert_eq!(diag, 2.0 / (h * h));
    }

    #[test]
    fn upwind_drift_points_forward_for_positive_b() {
        let h = 0.25;
        let w = interior_weights(&lin(1.0, 1.0, 0.0), 1, [h, h], DriftStencil::Upwind).unwrap();
        // -b (u(i+1) - u(i)) / h adds b/h to the forward neighbor and the diagonal.
        assert_eq!(w[2][1], 1.0 / (h * h) + 1.0 / h);
        assert_eq!(w[0][1], 1.0 / (h * h));
    }

    #[test]
    fn rotated_cross_stencil_by_enumeration() {
        let mk = |a12: f64| LinCoef {
            a: [[1.0, a12], [a12, 1.0]],
            b: [0.0; 2],
            f: 0.0,
        };
        let h = 0.1;
        let w = interior_weights(&mk(0.9), 2, [h, h], DriftStencil::Upwind).unwrap();
        for row in &w {
            for &v in row {
                assert!(v >= 0.0);
            }
        }
        assert!(w[2][2] > 0.0 && w[0][0] > 0.0 && w[2][0] == 0.0);
        let w = interior_weights(&mk(-0.9), 2, [h, h], DriftStencil::Upwind).unwrap();
        assert!(w[2][0] > 0.0 && w[0][2] > 0.0 && w[2][2] == 0.0);
        assert!(interior_weights(&mk(1.5), 2, [h, h], DriftStencil::Upwind).is_err());
    }

    #[test]
    fn consistency_on_quadratics() {
        // Apply the 2D stencil to u = ½ xᵀMx + p·x around the origin.
        let m = [[0.7, -0.3], [-0.3, 1.1]];
        let p = [0.4, -0.2];
        let c = LinCoef {
            a: [[1.2, 0.35], [0.35, 0.9]],
            b: [0.5, -0.8],
            f: 0.25,
        };
        let u = |x: f64, y: f64| 0.5 * (m[0][0] * x * x + 2.0 * m[0][1] * x * y + m[1][1] * y * y) + p[0] * x + p[1] * y;
        let exact = c.apply(&m, &p, 2);
        let mut errs = Vec::new();
        for &h in &[0.1, 0.05, 0.025] {
            let w = interior_weights(&c, 2, [h, h], DriftStencil::Upwind).unwrap();
            let mut s = -c.f;
            for (a, row) in w.iter().enumerate() {
                for (b, &wt) in row.iter().enumerate() {
                    let (dx, dy) = ((a as f64 - 1.0) * h, (b as f64 - 1.0) * h);
                    s += wt * (u(0.0, 0.0) - u(dx, dy));
                }
            }
            errs.push((s - exact).abs());
        }
        assert!(errs[1] < 0.6 * errs[0] && errs[2] < 0.6 * errs[1], "{errs:?}");
        // Central drift is exact on quadratics.
        let w = interior_weights(&c, 2, [0.01, 0.01], DriftStencil::Hybrid).unwrap();
        let mut s = -c.f;
        for (a, row) in w.iter().enumerate() {
            for (b, &wt) in row.iter().enumerate() {
                s += wt * (u(0.0, 0.0) - u((a as f64 - 1.0) * 0.01, (b as f64 - 1.0) * 0.01));
            }
        }
        assert!((s - exact).abs() < 1e-9);
    }

    fn torus_problem(n: usize, coefs: Vec<LinCoef>, zeroth: f64) -> DiscreteProblem {
        let t = TorusGrid::new(1, n).unwrap();
        let len = t.len();
        DiscreteProblem {
            mesh: Mesh::Torus(t),
            interior: InteriorOps::Linear(coefs),
            zeroth: vec![zeroth; len],
            source: vec![0.0; len],
            shift: [0.0; 2],
            boundary: None,
            lid_target: None,
            drift: DriftStencil::Upwind,
        }
    }

    #[test]
    fn constant_solution() {
        let pb = torus_problem(32, vec![lin(1.0, 0.0, 1.0); 32], 1.0);
        let r = pb.solve(&SolverParams::default()).unwrap();
        for v in r.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_mode() {
        // -u'' + u = 1 + sin(2πy) has u = 1 + sin(2πy)/(1 + 4π²).
        let mut errs = Vec::new();
        for &n in &[64usize, 128] {
            let t = TorusGrid::new(1, n).unwrap();
            let coefs: Vec<LinCoef> = (0..n)
                .map(|k| lin(1.0, 0.0, 1.0 + (2.0 * std::f64::consts::PI * t.coords(k)[0]).sin()))
                .collect();
            let pb = torus_problem(n, coefs, 1.0);
            let r = pb.solve(&SolverParams::default()).unwrap();
            let four = 4.0 * std::f64::consts::PI.powi(2);
            let e = (0..n)
                .map(|k| (r.values[k] - 1.0 - (2.0 * std::f64::consts::PI * t.coords(k)[0]).sin() / (1.0 + four)).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] < 1e-4 && errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn hjb_constant_controls() {
        let n = 16;
        let t = TorusGrid::new(1, n).unwrap();
        let pb = DiscreteProblem {
            mesh: Mesh::Torus(t),
            interior: InteriorOps::Max(vec![vec![lin(1.0, 0.0, 1.0); n], vec![lin(1.0, 0.0, 3.0); n]]),
            zeroth: vec![1.0; n],
            source: vec![0.0; n],
            shift: [0.0; 2],
            boundary: None,
            lid_target: None,
            drift: DriftStencil::Upwind,
        };
        let r = pb.solve(&SolverParams::default()).unwrap();
        for v in &r.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(r.policy.unwrap(), vec![0; n]);
    }

    #[test]
    fn gauss_seidel_agrees_with_direct() {
        let n = 32;
        let t = TorusGrid::new(1, n).unwrap();
        let coefs: Vec<LinCoef> = (0..n).map(|k| lin(1.0, 0.5, (k as f64 * 0.3).cos())).collect();
        let _ = t;
        let pb = torus_problem(n, coefs, 1.0);
        let direct = pb.solve(&SolverParams::default()).unwrap().values;
        let gs = pb
            .solve(&SolverParams {
                gauss_seidel: true,
                ..Default::default()
            })
            .unwrap()
            .values;
        for (a, b) in direct.iter().zip(&gs) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pseudo_time_matches_policy_iteration() {
        let n = 16;
        let t = TorusGrid::new(1, n).unwrap();
        let f: Vec<f64> = (0..n).map(|k| (2.0 * std::f64::consts::PI * t.coords(k)[0]).cos()).collect();
        let ctrl = |a: f64| (0..n).map(|k| lin(a, 0.0, f[k])).collect::<Vec<_>>();
        let pb = DiscreteProblem {
            mesh: Mesh::Torus(t),
            interior: InteriorOps::Max(vec![ctrl(1.0), ctrl(2.0)]),
            zeroth: vec![1.0; n],
            source: vec![0.0; n],
            shift: [0.0; 2],
            boundary: None,
            lid_target: None,
            drift: DriftStencil::Upwind,
        };
        let a = pb.solve(&SolverParams::default()).unwrap();
        let b = pb
            .solve(&SolverParams {
                method: NonlinearMethod::PseudoTime,
                ..Default::default()
            })
            .unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    fn strip_problem(gamma: Vec2, alpha: f64) -> DiscreteProblem {
        let s = StripGrid::new(2, 8, 6, 1.0, &Graph::flat()).unwrap();
        let n = s.len();
        let nt = s.nt;
        DiscreteProblem {
            mesh: Mesh::Strip(s),
            interior: InteriorOps::Linear(vec![
                LinCoef {
                    a: [[1.0, 0.0], [0.0, 1.0]],
                    b: [0.0; 2],
                    f: 0.0
                };
                n
            ]),
            zeroth: vec![0.0; n],
            source: vec![0.0; n],
            shift: [0.0; 2],
            boundary: Some(BoundaryOps {
                gamma: vec![gamma; nt],
                g: vec![0.0; nt],
                nonlinear: None,
                alpha,
            }),
            lid_target: None,
            drift: DriftStencil::Upwind,
        }
    }

    #[test]
    fn oblique_row_is_exact_on_linear_fields() {
        let s = (1.25f64).sqrt();
        let gamma = [0.5 / s, -1.0 / s];
        let pb = strip_problem(gamma, 0.0);
        let rows = pb.assemble(None, None).unwrap();
        let Mesh::Strip(strip) = &pb.mesh else { unreachable!() };
        let p = [0.7, -1.3];
        // A linear field that is periodic on the nodes touched by the row.
        let u: Vec<f64> = (0..pb.len())
            .map(|k| {
                let c = strip.coords(k);
                p[0] * c[0] + p[1] * c[1]
            })
            .collect();
        for i in 1..strip.nt {
            let row = rows.row_value(i, &u) + rows.rhs[i];
            // diag u - Σ w u = γ·D_h u
            assert!((row - (p[0] * gamma[0] + p[1] * gamma[1])).abs() < 1e-10, "{row}");
        }
    }

    #[test]
    fn normal_row_pattern() {
        let pb = strip_problem([0.0, -1.0], 0.0);
        let rows = pb.assemble(None, None).unwrap();
        let Mesh::Strip(s) = &pb.mesh else { unreachable!() };
        let entries: Vec<(usize, f64)> = rows.row(3).collect();
        assert_eq!(entries, vec![(s.index(3, 1), 1.0 / s.hz)]);
        assert_eq!(rows.diag[3], 1.0 / s.hz);
    }

    #[test]
    fn weak_obliqueness_is_rejected() {
        let pb = strip_problem([1.0, -0.01], 0.0);
        assert!(matches!(pb.assemble(None, None), Err(Error::ObliquenessTooWeak { .. })));
    }

    #[test]
    fn flattening_transforms_quadratics() {
        // u(y) = U(y1, y2 - ψ(y1)): check the transformed operator on U = z^2/2 + t z.
        let (d, dd) = (0.6, -1.7);
        let c = LinCoef {
            a: [[1.3, 0.2], [0.2, 0.8]],
            b: [0.4, -0.3],
            f: 0.0,
        };
        let ft = flatten(&c, d, dd);
        // At a point with ψ' = d, ψ'' = dd and z = 0.5, t = 0:
        // U_t = z, U_z = z + t, U_tt = 0, U_tz = 1, U_zz = 1.
        let (t, z) = (0.0, 0.5);
        let flat_val = -(2.0 * ft.a[0][1] * 1.0 + ft.a[1][1] * 1.0) - ft.b[0] * z - ft.b[1] * (z + t);
        // Physical derivatives by the chain rule.
        let uz = z + t;
        let ut = z;
        let du = [ut - d * uz, uz];
        // D²u = Jᵀ D²U J + U_z D²(z) with D²(z) = [[-ψ'', 0], [0, 0]].
        let h = [[0.0, 1.0], [1.0, 1.0]];
        let j = [[1.0, 0.0], [-d, 1.0]];
        let mut m = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        m[a][b] += j[k][a] * h[k][l] * j[l][b];
                    }
                }
            }
        }
        m[0][0] -= dd * uz;
        let phys = c.apply(&m, &du, 2);
        assert!((phys - flat_val).abs() < 1e-12, "{phys} vs {flat_val}");
    }
}
