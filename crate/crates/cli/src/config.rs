//! Run configuration: a TOML file with `[problem]`, `[numerics]` and `[output]` sections.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use halfcell::boundary::MuSchedule;
use halfcell::correctors::CorrectorParams;
use halfcell::dsl::Expr;
use halfcell::homogenize::{CoefficientSet, EffectiveGrid, EpsGrid};
use halfcell::interior::ErgodicParams;
use halfcell::model::{BoundaryOperatorSpec, GammaSpec, Graph, LinearOblique, LinearSpec, Mat2, OperatorSpec, Vec2};
use halfcell::scheme::{DriftStencil, NonlinearMethod, SolverParams};
use halfcell::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    #[default]
    Linear,
    Hjb,
    Pucci,
    LinearPlusH,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub a: Vec<Expr>,
    pub b: Vec<Expr>,
    #[serde(default = "zero")]
    pub f: Expr,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GammaField {
    Keyword(String),
    Field(Vec<Expr>),
}

impl Default for GammaField {
    fn default() -> Self {
        GammaField::Keyword("normal".into())
    }
}

fn zero() -> Expr {
    Expr::constant(0.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    #[serde(default)]
    pub operator: OperatorKind,
    /// `[a11]` in 1D, `[a11, a12, a22]` in 2D.
    pub a: Option<Vec<Expr>>,
    pub b: Option<Vec<Expr>>,
    #[serde(default = "zero")]
    pub f: Expr,
    #[serde(default)]
    pub singular: bool,
    pub hamiltonian: Option<Expr>,
    pub controls: Option<Vec<ControlSection>>,
    pub kappa: Option<f64>,
    pub big_kappa: Option<f64>,
    #[serde(default)]
    pub gamma: GammaField,
    #[serde(default = "zero")]
    pub g: Expr,
    pub nonlinearity: Option<Expr>,
    #[serde(default = "zero")]
    pub psi: Expr,
    /// Frozen slow point.
    #[serde(default)]
    pub x: Vec<f64>,
    /// Slope of the cell problems.
    #[serde(default)]
    pub p: Vec<f64>,
    /// Hessian argument of `F̄` for `cell`.
    pub m: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    Hybrid,
    Upwind,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    #[default]
    Newton,
    PseudoTime,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsSection {
    /// Torus nodes per period.
    pub n: usize,
    /// Tangential strip nodes per period; defaults to `n`.
    pub nt: Option<usize>,
    /// Normal strip spacing; defaults to `1/n`.
    pub hz: Option<f64>,
    pub deltas: Vec<f64>,
    pub target_tol: f64,
    pub residual_tol: f64,
    pub drift: DriftKind,
    pub method: MethodKind,
    pub max_iter: usize,
    pub eps_ratios: Vec<f64>,
    pub alphas: Vec<f64>,
    pub heights: Vec<f64>,
    pub drift_tol: f64,
    pub cell_tol: f64,
    pub affinity_tol: f64,
    pub fd_step: f64,
    pub eps_list: Vec<f64>,
    pub nt_per_period: usize,
    pub nz_per_period: usize,
    pub lid: f64,
    pub window: f64,
    pub effective_nt: usize,
    pub effective_hz: f64,
    /// ε of the fine reference for operators without an effective solve.
    pub reference_eps: f64,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub x0: Vec<f64>,
    /// MC lid height; absent means no lid.
    pub mc_height: Option<f64>,
    pub horizons: Vec<f64>,
    pub growth_threshold: f64,
    /// Interior constant for the MC estimator; computed on the torus if absent.
    pub lambda: Option<f64>,
    pub min_local_time: f64,
    pub slopes: Vec<f64>,
    pub radii: Vec<f64>,
    pub probes: usize,
    pub seed: Option<u64>,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let e = ErgodicParams::default();
        let s = MuSchedule::default();
        let c = CorrectorParams::default();
        let g = EpsGrid::default();
        let eg = EffectiveGrid::default();
        NumericsSection {
            n: 64,
            nt: None,
            hz: None,
            deltas: e.deltas,
            target_tol: e.target_tol,
            residual_tol: e.residual_tol,
            drift: DriftKind::Hybrid,
            method: MethodKind::Newton,
            max_iter: SolverParams::default().max_iter,
            eps_ratios: s.eps_ratios,
            alphas: s.alphas,
            heights: s.heights,
            drift_tol: s.drift_tol,
            cell_tol: c.cell_tol,
            affinity_tol: c.affinity_tol,
            fd_step: c.fd_step,
            eps_list: vec![0.25, 0.125, 0.0625, 0.03125],
            nt_per_period: g.nt_per_period,
            nz_per_period: g.nz_per_period,
            lid: g.lid,
            window: 2.0,
            effective_nt: eg.nt,
            effective_hz: eg.hz,
            reference_eps: 1.0 / 64.0,
            dt: 1e-2,
            horizon: 10.0,
            paths: 10_000,
            x0: Vec::new(),
            mc_height: None,
            horizons: vec![5.0, 10.0, 20.0],
            growth_threshold: 0.01,
            lambda: None,
            min_local_time: 1e-3,
            slopes: halfcell::halfspace::default_alphas(),
            radii: halfcell::halfspace::default_radii(),
            probes: 64,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// Sets `section.key = value` in a parsed document; `value` is read as TOML, or as a string if that fails.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key '{}' needs a section", path.trim())))?;
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let entry = doc.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{section}' is not a section")))?;
    table.insert(key.to_string(), value);
    Ok(())
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

fn monotone(name: &str, v: &[f64], increasing: bool) -> Result<()> {
    if v.is_empty() || v.windows(2).any(|w| if increasing { w[1] <= w[0] } else { w[1] >= w[0] }) {
        let dir = if increasing { "increasing" } else { "decreasing" };
        return Err(Error::Config(format!("{name} must be a nonempty, strictly {dir} list")));
    }
    Ok(())
}

fn vec2(name: &str, v: &[f64], dim: usize) -> Result<Vec2> {
    match v.len() {
        0 => Ok([0.0; 2]),
        n if n == dim => {
            let mut out = [0.0; 2];
            out[..dim].copy_from_slice(v);
            Ok(out)
        }
        n => Err(Error::Config(format!("{name} has {n} entries in dimension {dim}"))),
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let n = &self.numerics;
        monotone("deltas", &n.deltas, false)?;
        monotone("eps_ratios", &n.eps_ratios, false)?;
        monotone("alphas", &n.alphas, false)?;
        monotone("heights", &n.heights, true)?;
        monotone("eps_list", &n.eps_list, false)?;
        monotone("horizons", &n.horizons, true)?;
        monotone("radii", &n.radii, true)?;
        if !(1..=2).contains(&self.problem.dim) {
            return Err(Error::Config(format!("dim must be 1 or 2, got {}", self.problem.dim)));
        }
        self.operator()?;
        self.boundary()?;
        self.x()?;
        self.p()?;
        self.m()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.problem.dim
    }

    fn linear_part(&self) -> Result<LinearSpec> {
        let p = &self.problem;
        let a = p.a.clone().ok_or_else(|| Error::Config("problem.a is required".into()))?;
        let b = p.b.clone().unwrap_or_else(|| vec![zero(); p.dim]);
        let l = LinearSpec::new(a, b, p.f.clone())?.singular(p.singular);
        if l.dim() != p.dim {
            return Err(Error::Config(format!("problem.a describes dimension {}, dim = {}", l.dim(), p.dim)));
        }
        Ok(l)
    }

    pub fn operator(&self) -> Result<OperatorSpec> {
        let p = &self.problem;
        let op = match p.operator {
            OperatorKind::Linear => OperatorSpec::Linear(self.linear_part()?),
            OperatorKind::LinearPlusH => OperatorSpec::LinearPlusH {
                linear: self.linear_part()?,
                hamiltonian: p.hamiltonian.clone().ok_or_else(|| Error::Config("problem.hamiltonian is required".into()))?,
            },
            OperatorKind::Hjb => OperatorSpec::Hjb {
                controls: p
                    .controls
                    .as_ref()
                    .ok_or_else(|| Error::Config("problem.controls is required".into()))?
                    .iter()
                    .map(|c| Ok(LinearSpec::new(c.a.clone(), c.b.clone(), c.f.clone())?.singular(p.singular)))
                    .collect::<Result<_>>()?,
            },
            OperatorKind::Pucci => OperatorSpec::PucciMinus {
                kappa: p.kappa.ok_or_else(|| Error::Config("problem.kappa is required".into()))?,
                big_kappa: p.big_kappa.ok_or_else(|| Error::Config("problem.big_kappa is required".into()))?,
                f: p.f.clone(),
            },
        };
        op.validate()?;
        Ok(op)
    }

    pub fn boundary(&self) -> Result<BoundaryOperatorSpec> {
        let p = &self.problem;
        let gamma = match &p.gamma {
            GammaField::Keyword(k) if k == "normal" => GammaSpec::Normal,
            GammaField::Keyword(k) => return Err(Error::Config(format!("gamma must be \"normal\" or a list of expressions, got \"{k}\""))),
            GammaField::Field(v) if v.len() == p.dim => GammaSpec::Field(v.clone()),
            GammaField::Field(v) => return Err(Error::Config(format!("gamma has {} entries in dimension {}", v.len(), p.dim))),
        };
        let base = LinearOblique::new(gamma, p.g.clone());
        Ok(match &p.nonlinearity {
            None => BoundaryOperatorSpec::LinearOblique(base),
            Some(h) => BoundaryOperatorSpec::NonlinearHomogeneous { base, nonlinearity: h.clone() },
        })
    }

    pub fn graph(&self) -> Graph {
        Graph { psi: self.problem.psi.clone() }
    }

    pub fn coefficient_set(&self) -> Result<CoefficientSet> {
        Ok(CoefficientSet {
            op: self.operator()?,
            bop: self.boundary()?,
            graph: self.graph(),
        })
    }

    pub fn x(&self) -> Result<Vec2> {
        vec2("problem.x", &self.problem.x, self.dim())
    }

    pub fn p(&self) -> Result<Vec2> {
        vec2("problem.p", &self.problem.p, self.dim())
    }

    pub fn m(&self) -> Result<Mat2> {
        let mut out = [[0.0; 2]; 2];
        if let Some(rows) = &self.problem.m {
            let d = self.dim();
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Config(format!("problem.m must be {d}x{d}")));
            }
            for i in 0..d {
                for j in 0..d {
                    out[i][j] = rows[i][j];
                }
            }
            if d == 2 && (out[0][1] - out[1][0]).abs() > 0.0 {
                return Err(Error::Config("problem.m must be symmetric".into()));
            }
        }
        Ok(out)
    }

    pub fn x0(&self) -> Result<Vec2> {
        vec2("numerics.x0", &self.numerics.x0, self.dim())
    }

    pub fn solver(&self) -> SolverParams {
        SolverParams {
            max_iter: self.numerics.max_iter,
            method: match self.numerics.method {
                MethodKind::Newton => NonlinearMethod::Newton,
                MethodKind::PseudoTime => NonlinearMethod::PseudoTime,
            },
            ..SolverParams::default()
        }
    }

    pub fn drift(&self) -> DriftStencil {
        match self.numerics.drift {
            DriftKind::Hybrid => DriftStencil::Hybrid,
            DriftKind::Upwind => DriftStencil::Upwind,
        }
    }

    pub fn ergodic(&self) -> ErgodicParams {
        let n = &self.numerics;
        ErgodicParams {
            deltas: n.deltas.clone(),
            target_tol: n.target_tol,
            residual_tol: n.residual_tol,
            solver: self.solver(),
            drift: self.drift(),
            anchor: 0,
        }
    }

    pub fn schedule(&self) -> MuSchedule {
        let n = &self.numerics;
        MuSchedule {
            eps_ratios: n.eps_ratios.clone(),
            alphas: n.alphas.clone(),
            heights: n.heights.clone(),
            drift_tol: n.drift_tol,
        }
    }

    pub fn correctors(&self) -> CorrectorParams {
        let n = &self.numerics;
        CorrectorParams {
            ergodic: self.ergodic(),
            schedule: self.schedule(),
            cell_tol: n.cell_tol,
            affinity_tol: n.affinity_tol,
            fd_step: n.fd_step,
            seed: n.seed.unwrap_or(CorrectorParams::default().seed),
        }
    }

    pub fn strip_nt(&self) -> usize {
        self.numerics.nt.unwrap_or(self.numerics.n)
    }

    pub fn strip_hz(&self) -> f64 {
        self.numerics.hz.unwrap_or(1.0 / self.numerics.n as f64)
    }

    pub fn eps_grid(&self) -> EpsGrid {
        EpsGrid {
            nt_per_period: self.numerics.nt_per_period,
            nz_per_period: self.numerics.nz_per_period,
            lid: self.numerics.lid,
            drift: self.drift(),
        }
    }

    pub fn effective_grid(&self) -> EffectiveGrid {
        EffectiveGrid {
            nt: self.numerics.effective_nt,
            hz: self.numerics.effective_hz,
            lid: self.numerics.lid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
dim = 1
a = ["1"]
f = "2"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(BASE, &[]).unwrap();
        assert_eq!(c.numerics.n, 64);
        assert!(matches!(c.operator().unwrap(), OperatorSpec::Linear(_)));
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn overrides_replace_values() {
        let c = parse_config(BASE, &["numerics.n = 16".into(), "problem.f = 3*y1".into(), "output.dir=tmp".into()]).unwrap();
        assert_eq!(c.numerics.n, 16);
        assert_eq!(c.problem.f.source(), "3*y1");
        assert_eq!(c.output.dir, PathBuf::from("tmp"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_config(BASE, &["numerics.deltas = [1e-3, 1e-2]".into()]).is_err());
        assert!(parse_config(BASE, &["problem.f = \"1 +\"".into()]).is_err());
        assert!(parse_config(BASE, &["problem.unknown = 1".into()]).is_err());
        assert!(parse_config(BASE, &["problem.dim = 2".into()]).is_err());
        assert!(parse_config(BASE, &["nodot = 1".into()]).is_err());
    }
}
