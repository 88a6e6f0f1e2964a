//! Averages of periodic boundary data over the boundary lines of tilted half-planes.
//!
//! For `H_q = {q·x > 0}` in the plane, `μ(q) = -lim_R avg_{∂H_q ∩ B(0,R)} g`.
//! Along a line of rational slope the data are periodic, so averages over
//! whole super-periods are exact; irrational slopes equidistribute and the
//! limit is fitted as `avg(R) = μ + c/R`.

use rayon::prelude::*;
use serde::Serialize;

use crate::dsl::{Env, Expr};
use crate::error::{Error, Result};
use crate::model::Vec2;

/// Largest denominator treated as a rational slope.
pub const MAX_DENOMINATOR: u64 = 1000;

/// Quadrature nodes per unit length of the line.
pub const NODES_PER_UNIT: f64 = 64.0;

fn eval(g: &Expr, x: Vec2) -> Result<f64> {
    Ok(g.eval(&Env::new().with_x(&x).with_y(&x))?)
}

fn unit(q: Vec2) -> Result<Vec2> {
    let n = (q[0] * q[0] + q[1] * q[1]).sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("q must be a unit vector, |q| = {n}")));
    }
    Ok(q)
}

/// Midpoint-rule average of `g` over `{s t : |s| ≤ R}`, `t ⊥ q`, with `nodes` points.
pub fn boundary_average(g: &Expr, q: Vec2, radius: f64, nodes: usize) -> Result<f64> {
    let q = unit(q)?;
    if radius < 1.0 || nodes == 0 {
        return Err(Error::Config(format!("need R >= 1 and at least one node, got R = {radius}, {nodes} nodes")));
    }
    let t = [q[1], -q[0]];
    let h = 2.0 * radius / nodes as f64;
    let mut s = 0.0;
    for k in 0..nodes {
        let r = -radius + (k as f64 + 0.5) * h;
        s += eval(g, [r * t[0], r * t[1]])?;
    }
    Ok(s / nodes as f64)
}

/// Best rational approximation `p/k` of `x` with `k ≤ max_den` if it is exact to `tol`.
pub fn rational(x: f64, max_den: u64, tol: f64) -> Option<(i64, u64)> {
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let (h2, k2) = (a as i64 * h1 + h0, a as u64 * k1 + k0);
        if k2 > max_den {
            return None;
        }
        if (x - h2 as f64 / k2 as f64).abs() <= tol {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac.abs() < 1e-15 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

/// Length of the line `{s t}` after which lattice-periodic data repeat, if the slope is rational.
pub fn super_period(q: Vec2) -> Option<f64> {
    let t = [q[1], -q[0]];
    let (major, minor) = if t[0].abs() >= t[1].abs() { (t[0], t[1]) } else { (t[1], t[0]) };
    let (_, k) = rational((minor / major).abs(), MAX_DENOMINATOR, 1e-12)?;
    Some(k as f64 / major.abs())
}

/// Average over the largest symmetric window of whole super-periods inside `B(0,R)`, or over `B(0,R)`.
pub fn period_average(g: &Expr, q: Vec2, radius: f64) -> Result<(f64, f64)> {
    let q = unit(q)?;
    let r = match super_period(q) {
        Some(l) if 2.0 * radius >= l => (2.0 * radius / l).floor() * l / 2.0,
        _ => radius,
    };
    let nodes = (2.0 * r * NODES_PER_UNIT).ceil() as usize;
    Ok((boundary_average(g, q, r.max(1.0), nodes)?, r))
}

/// `q_α = (α, 1)/sqrt(1 + α²)`.
pub fn tilted(alpha: f64) -> Vec2 {
    let s = (1.0 + alpha * alpha).sqrt();
    [alpha / s, 1.0 / s]
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanRow {
    pub alpha: f64,
    pub radius: f64,
    pub average: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeEntry {
    pub alpha: f64,
    pub rational: bool,
    /// Fitted `lim_R` of the averages.
    pub limit_average: f64,
    /// `μ(q_α) = -limit_average`.
    pub mu: f64,
    /// Largest absolute residual of the `μ + c/R` fit.
    pub fit_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeScan {
    pub entries: Vec<SlopeEntry>,
    pub rows: Vec<ScanRow>,
    /// Limit average at `α = 0`.
    pub normal_average: f64,
    /// Mean limit average over the nonzero slopes.
    pub tilted_average: f64,
    /// `|μ(e₂) - lim_{α→0} μ(q_α)|`.
    pub gap: f64,
}

impl SlopeScan {
    /// Long-format `alpha,R,average` table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,R,average\n");
        for r in &self.rows {
            s.push_str(&format!("{:.10e},{:.10e},{:.10e}\n", r.alpha, r.radius, r.average));
        }
        s
    }
}

/// Least-squares fit `y = a + c/R`; returns `(a, max residual)`.
fn fit_inverse(rs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = rs.len() as f64;
    let xs: Vec<f64> = rs.iter().map(|r| 1.0 / r).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - c * mx;
    let res = xs.iter().zip(ys).map(|(x, y)| (y - a - c * x).abs()).fold(0.0, f64::max);
    (a, res)
}

pub fn slope_scan(g: &Expr, alphas: &[f64], radii: &[f64]) -> Result<SlopeScan> {
    if !alphas.contains(&0.0) || alphas.iter().all(|&a| a == 0.0) {
        return Err(Error::Config("slope scan needs alpha = 0 and at least one nonzero alpha".into()));
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("radii must be increasing".into()));
    }
    let per_alpha = alphas
        .par_iter()
        .map(|&alpha| {
            let q = tilted(alpha);
            let avgs = radii.iter().map(|&r| Ok(period_average(g, q, r)?.0)).collect::<Result<Vec<_>>>()?;
            let (limit, fit_residual) = fit_inverse(radii, &avgs);
            let rows: Vec<ScanRow> = radii
                .iter()
                .zip(&avgs)
                .map(|(&radius, &average)| ScanRow { alpha, radius, average })
                .collect();
            Ok((
                SlopeEntry {
                    alpha,
                    rational: super_period(q).is_some(),
                    limit_average: limit,
                    mu: -limit,
                    fit_residual,
                },
                rows,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (entries, rows): (Vec<_>, Vec<_>) = per_alpha.into_iter().unzip();
    let rows: Vec<ScanRow> = rows.into_iter().flatten().collect();
    let normal_average = entries.iter().find(|e| e.alpha == 0.0).unwrap().limit_average;
    let tilted: Vec<f64> = entries.iter().filter(|e| e.alpha != 0.0).map(|e| e.limit_average).collect();
    let tilted_average = tilted.iter().sum::<f64>() / tilted.len() as f64;
    Ok(SlopeScan {
        entries,
        rows,
        normal_average,
        tilted_average,
        gap: (normal_average - tilted_average).abs(),
    })
}

/// Default radii.
pub fn default_radii() -> Vec<f64> {
    vec![50.0, 100.0, 200.0, 400.0, 800.0]
}

/// Default slopes: zero, rationals `1/k` and irrational surrogates `√2/k`.
pub fn default_alphas() -> Vec<f64> {
    let r2 = std::f64::consts::SQRT_2;
    vec![0.0, 0.2, 0.1, 0.05, r2 / 10.0, r2 / 20.0]
}
