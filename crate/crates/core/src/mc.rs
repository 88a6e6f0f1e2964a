//! Monte Carlo for the reflected diffusion
//! `dX = b dt + sqrt(2A) dW - γ d|k|` in the half-strip `{0 < x_N - ψ(x') < H}`.
//!
//! Each step is an Euler proposal with frozen coefficients. The normal
//! coordinate then undergoes the one-dimensional Skorokhod map over the step,
//! using the exact minimum of the Brownian bridge between the two endpoints,
//! and the push is taken along `-γ`. For constant coefficients and a flat
//! boundary this is exact in law at the grid times. The lid reflects normally.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dsl::{Env, Expr};
use crate::error::{Error, Result};
use crate::model::{Graph, LinearOblique, LinearSpec, Vec2, PSI_FD_STEP};

/// Data of the reflected diffusion at a frozen slow point.
#[derive(Debug, Clone)]
pub struct McProblem {
    pub op: LinearSpec,
    pub bop: LinearOblique,
    pub graph: Graph,
    /// Lid height above the graph; `f64::INFINITY` for none.
    pub height: f64,
    pub x: Vec2,
}

#[derive(Debug, Clone, Copy)]
pub struct McParams {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Largest accepted bridge penetration below the boundary; one period cell by default.
    pub max_penetration: f64,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            dt: 1e-2,
            horizon: 10.0,
            paths: 10_000,
            seed: 1,
            max_penetration: 1.0,
        }
    }
}

/// Accumulators of one path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PathRecord {
    /// `∫ f(X_s) ds`.
    pub f_integral: f64,
    /// `∫ g(X_s) d|k|_s`.
    pub g_integral: f64,
    /// `|k|_T`.
    pub local_time: f64,
    pub lid_hits: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathBatch {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub records: Vec<PathRecord>,
}

impl PathBatch {
    pub fn mean_local_time(&self) -> f64 {
        mean(self.records.iter().map(|r| r.local_time))
    }

    /// Standard error of the mean local time.
    pub fn local_time_se(&self) -> f64 {
        let m = self.mean_local_time();
        let n = self.records.len() as f64;
        let var = self.records.iter().map(|r| (r.local_time - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Ordered sum, so results do not depend on the thread count.
fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// An expression with its constant value cached.
#[derive(Debug, Clone)]
enum Field {
    Const(f64),
    Var(Expr),
}

impl Field {
    fn new(e: &Expr) -> Self {
        match e.as_constant() {
            Some(c) => Field::Const(c),
            None => Field::Var(e.clone()),
        }
    }

    fn at(&self, env: &Env) -> Result<f64> {
        match self {
            Field::Const(c) => Ok(*c),
            Field::Var(e) => Ok(e.eval(env)?),
        }
    }
}

struct Compiled {
    dim: usize,
    x: Vec2,
    a: Vec<Field>,
    b: Vec<Field>,
    f: Field,
    gamma: Option<Vec<Field>>,
    g: Field,
    psi: Option<Graph>,
    height: f64,
}

impl Compiled {
    fn new(p: &McProblem) -> Result<Self> {
        p.op.validate()?;
        let gamma = match &p.bop.gamma {
            crate::model::GammaSpec::Normal => None,
            crate::model::GammaSpec::Field(v) => Some(v.iter().map(Field::new).collect()),
        };
        Ok(Compiled {
            dim: p.op.dim(),
            x: p.x,
            a: p.op.a.iter().map(Field::new).collect(),
            b: p.op.b.iter().map(Field::new).collect(),
            f: Field::new(&p.op.f),
            gamma,
            g: Field::new(&p.bop.g),
            psi: (!p.graph.is_flat()).then(|| p.graph.clone()),
            height: p.height,
        })
    }

    fn env(&self, y: &Vec2) -> Env {
        Env::new().with_x(&self.x[..self.dim]).with_y(&y[..self.dim])
    }

    /// Distance coordinate `z` and the unnormalized outward normal `(ψ', -1)` (`(-1)` in 1D).
    fn frame(&self, y: &Vec2) -> Result<(f64, Vec2)> {
        if self.dim == 1 {
            return Ok((y[0], [-1.0, 0.0]));
        }
        match &self.psi {
            None => Ok((y[1], [0.0, -1.0])),
            Some(g) => {
                let (v, d, _) = g.jet(y[0], PSI_FD_STEP)?;
                Ok((y[1] - v, [d, -1.0]))
            }
        }
    }

    /// `sqrt(2A)` as a lower Cholesky factor, the drift and the source.
    fn coefficients(&self, env: &Env) -> Result<([[f64; 2]; 2], Vec2, f64)> {
        let f = self.f.at(env)?;
        if self.dim == 1 {
            let a = self.a[0].at(env)?;
            return Ok(([[(2.0 * a).sqrt(), 0.0], [0.0, 0.0]], [self.b[0].at(env)?, 0.0], f));
        }
        let (a11, a12, a22) = (self.a[0].at(env)?, self.a[1].at(env)?, self.a[2].at(env)?);
        let l11 = (2.0 * a11).sqrt();
        let l21 = 2.0 * a12 / l11;
        let l22 = (2.0 * a22 - l21 * l21).max(0.0).sqrt();
        Ok(([[l11, 0.0], [l21, l22]], [self.b[0].at(env)?, self.b[1].at(env)?], f))
    }

    fn gamma(&self, env: &Env, w: &Vec2) -> Result<Vec2> {
        match &self.gamma {
            None => {
                let s = (w[0] * w[0] + w[1] * w[1]).sqrt();
                Ok([w[0] / s, w[1] / s])
            }
            Some(v) => {
                let mut g = [0.0; 2];
                for (k, e) in v.iter().enumerate() {
                    g[k] = e.at(env)?;
                }
                Ok(g)
            }
        }
    }
}

/// Simulates one path, recording `|k|` at the given checkpoint steps.
fn run_path(c: &Compiled, x0: Vec2, params: &McParams, index: u64, checkpoints: &[usize]) -> Result<(PathRecord, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index);
    let dt = params.dt;
    let steps = (params.horizon / dt).round() as usize;
    let sq = dt.sqrt();
    let mut y = x0;
    let mut rec = PathRecord::default();
    let mut marks = Vec::with_capacity(checkpoints.len());
    let mut next_mark = 0;
    for step in 0..steps {
        while next_mark < checkpoints.len() && checkpoints[next_mark] == step {
            marks.push(rec.local_time);
            next_mark += 1;
        }
        let env = c.env(&y);
        let (l, b, f) = c.coefficients(&env)?;
        rec.f_integral += f * dt;
        let dw: [f64; 2] = [rng.sample(StandardNormal), if c.dim == 2 { rng.sample(StandardNormal) } else { 0.0 }];
        let mut prop = y;
        for i in 0..c.dim {
            prop[i] += b[i] * dt + (l[i][0] * dw[0] + l[i][1] * dw[1]) * sq;
        }
        let (z0, w) = c.frame(&y)?;
        let (z1, _) = c.frame(&prop)?;
        // Variance of z over the step: 2 wᵀAw dt = |Lᵀw|² dt.
        let lw = [l[0][0] * w[0] + l[1][0] * w[1], l[0][1] * w[0] + l[1][1] * w[1]];
        let var = (lw[0] * lw[0] + lw[1] * lw[1]) * dt;
        let crossing = z1 < 0.0 || 2.0 * z0.max(0.0) * z1 / var < 40.0;
        if crossing {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let m = 0.5 * (z0 + z1 - ((z1 - z0).powi(2) - 2.0 * var * u.ln()).sqrt());
            if m < 0.0 {
                if -m > params.max_penetration {
                    return Err(Error::StepRejected { depth: -m });
                }
                let benv = c.env(&prop);
                let gamma = c.gamma(&benv, &w)?;
                let normal = gamma[0] * w[0] + gamma[1] * w[1];
                if normal <= 0.0 {
                    return Err(Error::ObliquenessTooWeak {
                        node: 0,
                        normal,
                        tangential: gamma[0].abs(),
                    });
                }
                let mut t = -m / normal;
                prop[0] -= t * gamma[0];
                prop[1] -= t * gamma[1];
                // Curved graphs: finish the projection if the push fell short.
                let (zr, _) = c.frame(&prop)?;
                if zr < 0.0 {
                    let extra = -zr / normal;
                    prop[0] -= extra * gamma[0];
                    prop[1] -= extra * gamma[1];
                    t += extra;
                }
                rec.local_time += t;
                rec.g_integral += c.g.at(&c.env(&prop))? * t;
            }
        }
        if c.height.is_finite() {
            let (z, _) = c.frame(&prop)?;
            if z > c.height {
                let nd = c.dim - 1;
                prop[nd] -= 2.0 * (z - c.height);
                rec.lid_hits += 1;
            }
        }
        y = prop;
    }
    while next_mark < checkpoints.len() {
        marks.push(rec.local_time);
        next_mark += 1;
    }
    Ok((rec, marks))
}

fn simulate(problem: &McProblem, x0: Vec2, params: &McParams, checkpoints: &[usize]) -> Result<(PathBatch, Vec<Vec<f64>>)> {
    if !(params.dt > 0.0 && params.horizon > 0.0 && params.paths > 1) {
        return Err(Error::Config("need dt > 0, horizon > 0 and at least two paths".into()));
    }
    let c = Compiled::new(problem)?;
    let (z, _) = c.frame(&x0)?;
    if z < 0.0 || z > c.height {
        return Err(Error::Config(format!("start point {x0:?} lies outside the strip")));
    }
    let out = (0..params.paths as u64)
        .into_par_iter()
        .map(|k| run_path(&c, x0, params, k, checkpoints))
        .collect::<Result<Vec<_>>>()?;
    let (records, marks) = out.into_iter().unzip();
    Ok((
        PathBatch {
            paths: params.paths,
            dt: params.dt,
            horizon: params.horizon,
            seed: params.seed,
            records,
        },
        marks,
    ))
}

/// Simulates `params.paths` reflected paths started at `x0`.
pub fn simulate_reflected(problem: &McProblem, x0: Vec2, params: &McParams) -> Result<PathBatch> {
    Ok(simulate(problem, x0, params, &[])?.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GrowthRow {
    pub horizon: f64,
    pub mean_local_time: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub diverges: bool,
    /// Growth rate of `E|k|_T` over the last horizon interval.
    pub last_slope: f64,
    pub table: Vec<GrowthRow>,
}

/// `E|k|_T` over increasing horizons; divergence means the last-interval slope exceeds `threshold`.
pub fn local_time_growth(problem: &McProblem, x0: Vec2, horizons: &[f64], params: &McParams, threshold: f64) -> Result<GrowthReport> {
    if horizons.len() < 2 || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("need at least two increasing horizons".into()));
    }
    let last = *horizons.last().unwrap();
    let p = McParams { horizon: last, ..*params };
    let marks: Vec<usize> = horizons.iter().map(|h| (h / p.dt).round() as usize).collect();
    let (_, per_path) = simulate(problem, x0, &p, &marks)?;
    let n = per_path.len() as f64;
    let table: Vec<GrowthRow> = horizons
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let m = mean(per_path.iter().map(|v| v[k]));
            let var = per_path.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
            GrowthRow {
                horizon: h,
                mean_local_time: m,
                std_error: (var / n).sqrt(),
            }
        })
        .collect();
    let (a, b) = (&table[table.len() - 2], &table[table.len() - 1]);
    let last_slope = (b.mean_local_time - a.mean_local_time) / (b.horizon - a.horizon);
    Ok(GrowthReport {
        diverges: last_slope > threshold,
        last_slope,
        table,
    })
}

/// Delete-a-group jackknife of a ratio of means.
pub fn jackknife_ratio(num: &[f64], den: &[f64], groups: usize) -> (f64, f64) {
    let n = num.len();
    let g = groups.clamp(2, n);
    let total_num: f64 = num.iter().sum();
    let total_den: f64 = den.iter().sum();
    let full = total_num / total_den;
    let mut estimates = Vec::with_capacity(g);
    for k in 0..g {
        let (lo, hi) = (k * n / g, (k + 1) * n / g);
        let sn: f64 = num[lo..hi].iter().sum();
        let sd: f64 = den[lo..hi].iter().sum();
        estimates.push((total_num - sn) / (total_den - sd));
    }
    let m = estimates.iter().sum::<f64>() / g as f64;
    let var = estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() * (g - 1) as f64 / g as f64;
    (full, var.sqrt())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MuEstimate {
    pub mu_hat: f64,
    pub std_error: f64,
    pub mean_local_time: f64,
}

/// `μ̂ = -(E∫(f + λ) ds + E∫g d|k|) / E|k|_T`, with a 20-group jackknife error.
pub fn mu_mc_estimate(problem: &McProblem, lambda: f64, x0: Vec2, params: &McParams, min_local_time: f64) -> Result<MuEstimate> {
    let batch = simulate_reflected(problem, x0, params)?;
    let den: Vec<f64> = batch.records.iter().map(|r| r.local_time).collect();
    let ek = batch.mean_local_time();
    if !(ek > min_local_time) {
        return Err(Error::DegenerateDenominator { value: ek });
    }
    let num: Vec<f64> = batch
        .records
        .iter()
        .map(|r| -(r.f_integral + lambda * batch.horizon + r.g_integral))
        .collect();
    let (mu_hat, std_error) = jackknife_ratio(&num, &den, 20);
    Ok(MuEstimate {
        mu_hat,
        std_error,
        mean_local_time: ek,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;
    use crate::model::GammaSpec;

    fn problem_1d(b: &str, g: &str, height: f64) -> McProblem {
        McProblem {
            op: LinearSpec::new(vec![parse("1").unwrap()], vec![parse(b).unwrap()], parse("0").unwrap()).unwrap(),
            bop: LinearOblique::new(GammaSpec::Normal, parse(g).unwrap()),
            graph: Graph::flat(),
            height,
            x: [0.0; 2],
        }
    }

    #[test]
    fn reflected_bm_local_time() {
        let p = problem_1d("0", "0", f64::INFINITY);
        let params = McParams {
            horizon: 2.0,
            paths: 20_000,
            ..Default::default()
        };
        let b = simulate_reflected(&p, [0.0; 2], &params).unwrap();
        let exact = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((b.mean_local_time() - exact).abs() < 3.0 * b.local_time_se(), "{} vs {exact}", b.mean_local_time());
    }

    #[test]
    fn same_seed_same_batch_and_prefix() {
        let p = problem_1d("-1", "cos(y1)", 5.0);
        let params = McParams {
            horizon: 1.0,
            paths: 64,
            ..Default::default()
        };
        let a = simulate_reflected(&p, [0.5, 0.0], &params).unwrap();
        let b = simulate_reflected(&p, [0.5, 0.0], &params).unwrap();
        assert_eq!(a.records, b.records);
        let c = simulate_reflected(&p, [0.5, 0.0], &McParams { paths: 32, ..params }).unwrap();
        assert_eq!(&a.records[..32], &c.records[..]);
    }

    #[test]
    fn constant_g_gives_exact_ratio() {
        let p = problem_1d("-1", "0.7", 10.0);
        let params = McParams {
            horizon: 5.0,
            paths: 500,
            ..Default::default()
        };
        let e = mu_mc_estimate(&p, 0.0, [0.0; 2], &params, 1e-3).unwrap();
        assert!((e.mu_hat + 0.7).abs() < 1e-12 && e.std_error < 1e-12);
    }

    #[test]
    fn degenerate_denominator() {
        let p = problem_1d("10", "1", f64::INFINITY);
        let params = McParams {
            horizon: 1.0,
            paths: 100,
            ..Default::default()
        };
        assert!(matches!(
            mu_mc_estimate(&p, 0.0, [5.0, 0.0], &params, 1e-3),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn jackknife_of_exact_ratio() {
        let den: Vec<f64> = (1..=100).map(|k| k as f64).collect();
        let num: Vec<f64> = den.iter().map(|d| 3.0 * d).collect();
        let (r, se) = jackknife_ratio(&num, &den, 20);
        assert!((r - 3.0).abs() < 1e-14 && se < 1e-12);
    }
}
