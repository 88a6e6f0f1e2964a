//! Batch front-end of the halfcell solvers.
//!
//! One subcommand per invocation. Each writes a JSON record and CSV tables to
//! the output directory and returns an exit code: 0 on success, 1 when a
//! computation fails (a `diagnostics.json` is written), 2 for invalid input.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use halfcell::boundary::{mu_limit, BoundaryCell, InteriorPair, UniquenessFlag};
use halfcell::correctors::{
    effective_boundary, effective_interior, fbar_hamiltonian, fbar_table, first_corrector, CellData, CellResolution, EffectiveData,
    second_corrector_and_fbar,
};
use halfcell::grid::{write_binary, write_csv, Mesh, TorusGrid};
use halfcell::halfspace::slope_scan;
use halfcell::homogenize::{convergence_study, effective_problem, solve_effective, solve_epsilon_problem, Reference};
use halfcell::interior::{ergodic_constant, lambda_torus};
use halfcell::mc::{local_time_growth, mu_mc_estimate, McParams, McProblem};
use halfcell::model::{audit_assumptions, BoundaryOperatorSpec, DomainSpec, OperatorSpec};
use halfcell::problem::{sample_interior, PointMap};
use halfcell::{Error, Result};

pub use config::{load_config, parse_config, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Lambda,
    Mu,
    Cell,
    Effective,
    Homogenize,
    Mc,
    Bavg,
    Audit,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Lambda => "lambda",
            Subcommand::Mu => "mu",
            Subcommand::Cell => "cell",
            Subcommand::Effective => "effective",
            Subcommand::Homogenize => "homogenize",
            Subcommand::Mc => "mc",
            Subcommand::Bavg => "bavg",
            Subcommand::Audit => "audit",
        }
    }
}

/// Command-line settings that sit on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub quiet: bool,
}

/// Result of a subcommand that ran to completion.
pub struct Outcome {
    pub summary: String,
    /// Set when the computation finished but its result is not trustworthy.
    pub failure: Option<serde_json::Value>,
}

fn ok(summary: String) -> Result<Outcome> {
    Ok(Outcome { summary, failure: None })
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        fs::write(self.dir.join(name), s)?;
        Ok(())
    }

    fn text(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body)?;
        Ok(())
    }

    fn grid(&self, stem: &str, mesh: &Mesh, values: &[f64], header: &str) -> Result<()> {
        let mut csv = Vec::new();
        write_csv(&mut csv, mesh, values, header)?;
        fs::write(self.dir.join(format!("{stem}.csv")), csv)?;
        let mut bin = Vec::new();
        write_binary(&mut bin, &mesh.shape(), values)?;
        fs::write(self.dir.join(format!("{stem}.bin")), bin)?;
        Ok(())
    }
}

/// Exit code of an error: 2 for invalid input, 1 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Dimension(_) | Error::Unsupported(_) => 2,
        _ => 1,
    }
}

fn diagnostics(e: &Error) -> serde_json::Value {
    let mut d = json!({ "error": e.to_string() });
    match e {
        Error::NonConvergence { iterations, residual, history } => {
            d["iterations"] = json!(iterations);
            d["residual"] = json!(residual);
            d["history"] = json!(history);
        }
        Error::ExtrapolationUnstable { first, second } => d["estimates"] = json!([first, second]),
        Error::NonzeroCellConstant { lambda } => d["lambda"] = json!(lambda),
        Error::AffinityViolation { deviation } => d["deviation"] = json!(deviation),
        Error::CriterionViolated { lambda_hat } => d["lambda_hat"] = json!(lambda_hat),
        Error::DegenerateDenominator { value } => d["mean_local_time"] = json!(value),
        _ => {}
    }
    d
}

fn configure_threads() {
    if let Some(n) = std::env::var("HALFCELL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs one subcommand and returns the process exit code.
pub fn run(cmd: Subcommand, config_path: &Path, flags: &Flags) -> i32 {
    configure_threads();
    let mut cfg = match load_config(config_path, &flags.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("halfcell {}: {e}", cmd.name());
            return 2;
        }
    };
    if let Some(s) = flags.seed {
        cfg.numerics.seed = Some(s);
    }
    let dir = flags.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    if let Err(e) = fs::create_dir_all(&dir) {
        eprintln!("halfcell {}: cannot create {}: {e}", cmd.name(), dir.display());
        return 2;
    }
    let out = Out { dir };
    let result = dispatch(cmd, &cfg, &out);
    let (code, summary, failure) = match result {
        Ok(Outcome { summary, failure: None }) => (0, summary, None),
        Ok(Outcome { summary, failure: Some(d) }) => (1, summary, Some(d)),
        Err(e) => {
            let code = exit_code(&e);
            if code == 2 {
                eprintln!("halfcell {}: {e}", cmd.name());
                return 2;
            }
            (1, format!("{}: failed: {e}", cmd.name()), Some(diagnostics(&e)))
        }
    };
    if let Some(d) = failure {
        if let Err(e) = out.json("diagnostics.json", &d) {
            eprintln!("halfcell {}: {e}", cmd.name());
        }
    }
    if !flags.quiet {
        println!("{summary}");
    }
    code
}

fn dispatch(cmd: Subcommand, cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    match cmd {
        Subcommand::Lambda => run_lambda(cfg, out),
        Subcommand::Mu => run_mu(cfg, out),
        Subcommand::Cell => run_cell(cfg, out),
        Subcommand::Effective => run_effective(cfg, out),
        Subcommand::Homogenize => run_homogenize(cfg, out),
        Subcommand::Mc => run_mc(cfg, out),
        Subcommand::Bavg => run_bavg(cfg, out),
        Subcommand::Audit => run_audit(cfg, out),
    }
}

fn torus(cfg: &RunConfig) -> Result<TorusGrid> {
    TorusGrid::new(cfg.dim(), cfg.numerics.n)
}

fn run_lambda(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let grid = torus(cfg)?;
    let sol = lambda_torus(&cfg.operator()?, &grid, cfg.x()?, &cfg.ergodic())?;
    out.json("lambda.json", &sol)?;
    out.grid("corrector", &Mesh::Torus(grid), &sol.corrector, "interior corrector")?;
    ok(format!("lambda: constant = {:.8e}, residual = {:.2e}", sol.constant, sol.residual))
}

/// The boundary cell problem of a configuration, with the interior ergodic pair at slope `p`.
pub fn boundary_cell(cfg: &RunConfig) -> Result<BoundaryCell> {
    let op = cfg.operator()?;
    let (x, p) = (cfg.x()?, cfg.p()?);
    let grid = torus(cfg)?;
    let interior = sample_interior(&op, &Mesh::Torus(grid.clone()), &PointMap::Cell { x })?;
    let pair = ergodic_constant(&interior, &grid, p, &cfg.ergodic())?;
    let mut cell = BoundaryCell::new(op, cfg.boundary()?, cfg.dim(), cfg.strip_nt(), cfg.strip_hz());
    cell.graph = cfg.graph();
    cell.x = x;
    cell.shift = p;
    cell.interior = InteriorPair::from_solution(&pair);
    cell.drift = cfg.drift();
    cell.solver = cfg.solver();
    Ok(cell)
}

fn run_mu(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let cell = boundary_cell(cfg)?;
    let r = mu_limit(&cell, &cfg.schedule())?;
    out.json("mu.json", &r)?;
    let mut eps = String::from("height,alpha,eps,value\n");
    for s in &r.diagnostics.epsilon_history {
        eps.push_str(&format!("{:.10e},{:.10e},{:.10e},{:.10e}\n", s.height, s.alpha, s.eps, s.value));
    }
    out.text("mu_eps_history.csv", &eps)?;
    let mut alpha = String::from("height,alpha,value\n");
    for s in &r.diagnostics.alpha_history {
        alpha.push_str(&format!("{:.10e},{:.10e},{:.10e}\n", s.height, s.alpha, s.value));
    }
    out.text("mu_alpha_history.csv", &alpha)?;
    if let Some(strip) = &r.strip {
        out.grid("mu_corrector", &Mesh::Strip(strip.clone()), &r.corrector, "boundary corrector at the largest height")?;
    }
    let summary = format!("mu: mu = {:.8e}, R-drift = {:.2e}, {}", r.mu, r.r_drift, flag_name(r.uniqueness_flag));
    let failure = (r.uniqueness_flag == UniquenessFlag::SuspectNonunique).then(|| {
        json!({
            "error": "the limit drifts with the strip height",
            "uniqueness_flag": flag_name(r.uniqueness_flag),
            "r_drift": r.r_drift,
            "r_history": r.diagnostics.r_history,
        })
    });
    Ok(Outcome { summary, failure })
}

fn flag_name(f: UniquenessFlag) -> &'static str {
    match f {
        UniquenessFlag::UniqueConsistent => "unique-consistent",
        UniquenessFlag::SuspectNonunique => "suspect-nonunique",
    }
}

fn run_cell(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let grid = torus(cfg)?;
    let (x, p) = (cfg.x()?, cfg.p()?);
    let params = cfg.correctors();
    match cfg.operator()? {
        OperatorSpec::Linear(l) => {
            let first = first_corrector(&l, p, &grid, x, &params)?;
            let mut record = json!({ "p": p, "cell_constant": first.constant, "residual": first.residual });
            out.grid("cell_corrector", &Mesh::Torus(grid.clone()), &first.corrector, "first corrector")?;
            let mut summary = format!("cell: cell constant = {:.3e}", first.constant);
            if cfg.problem.m.is_some() {
                let data = CellData::new(&l, &grid, x, &params)?;
                let s = second_corrector_and_fbar(&data, cfg.m()?, p, &params)?;
                out.grid("second_corrector", &Mesh::Torus(grid), &s.w, "second corrector")?;
                record["m"] = json!(s.m);
                record["f_bar"] = json!(s.value);
                summary.push_str(&format!(", F_bar(M, p) = {:.8e}", s.value));
            }
            out.json("cell.json", &record)?;
            ok(summary)
        }
        OperatorSpec::LinearPlusH { linear, hamiltonian } => {
            let v = fbar_hamiltonian(&linear, &hamiltonian, cfg.m()?, p, &grid, x, &params)?;
            out.json("cell.json", &json!({ "p": p, "m": cfg.m()?, "f_bar": v }))?;
            ok(format!("cell: F_bar(M, p) = {v:.8e}"))
        }
        _ => Err(Error::Unsupported("cell problems need a linear or linear-plus-Hamiltonian operator".into())),
    }
}

fn boundary_resolution(cfg: &RunConfig) -> CellResolution {
    CellResolution {
        n: cfg.strip_nt(),
        hz: cfg.strip_hz(),
    }
}

fn run_effective(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let grid = torus(cfg)?;
    let x = cfg.x()?;
    let params = cfg.correctors();
    let op = cfg.operator()?;
    let bop = cfg.boundary()?;
    let boundary = effective_boundary(&op, &bop, &cfg.graph(), boundary_resolution(cfg), x, &params)?;
    match &op {
        OperatorSpec::Linear(l) => {
            let interior = effective_interior(l, &grid, x, &params)?;
            let summary = format!(
                "effective: a_bar = {:?}, b_bar = {:?}, f_bar = {:.6e}, gamma_bar = {:?}, g_bar = {:.6e}",
                interior.a_bar, interior.b_bar, interior.f_bar, boundary.gamma_bar, boundary.g_bar
            );
            out.json(
                "effective.json",
                &EffectiveData {
                    x,
                    interior,
                    boundary: Some(boundary),
                },
            )?;
            ok(summary)
        }
        OperatorSpec::LinearPlusH { linear, hamiltonian } => {
            let table = fbar_table(linear, hamiltonian, &grid, x, &params)?;
            let summary = format!("effective: {} F_bar samples, gamma_bar = {:?}, g_bar = {:.6e}", table.len(), boundary.gamma_bar, boundary.g_bar);
            out.json("effective.json", &json!({ "x": x, "f_bar_samples": table, "boundary": boundary }))?;
            ok(summary)
        }
        _ => Err(Error::Unsupported("effective data need a linear or linear-plus-Hamiltonian operator".into())),
    }
}

fn run_homogenize(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let data = cfg.coefficient_set()?;
    let grid = cfg.eps_grid();
    let solver = cfg.solver();
    let reference = match &data.op {
        OperatorSpec::Linear(_) => {
            let eff = effective_problem(&data, &grid, &cfg.correctors())?;
            Reference::Effective(solve_effective(&eff, &cfg.effective_grid(), &solver)?)
        }
        _ => Reference::Fine(solve_epsilon_problem(&data, cfg.numerics.reference_eps, &grid, &solver)?),
    };
    let study = convergence_study(&data, &cfg.numerics.eps_list, &grid, &reference, cfg.numerics.window, &solver)?;
    out.text("homogenize.csv", &study.to_csv())?;
    out.text("homogenize.dat", &study.plot_data())?;
    out.json("homogenize.json", &study)?;
    let e = study.errors();
    ok(format!(
        "homogenize: e(eps) = {}, nonincreasing = {}",
        e.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" "),
        study.nonincreasing()
    ))
}

/// The reflected diffusion of a configuration and the interior constant used by the estimator.
pub fn mc_problem(cfg: &RunConfig) -> Result<(McProblem, f64)> {
    let op = cfg.operator()?;
    let OperatorSpec::Linear(l) = &op else {
        return Err(Error::Unsupported("the Monte Carlo oracle needs a linear operator".into()));
    };
    let BoundaryOperatorSpec::LinearOblique(b) = cfg.boundary()? else {
        return Err(Error::Unsupported("the Monte Carlo oracle needs a linear boundary operator".into()));
    };
    let x = cfg.x()?;
    let lambda = match cfg.numerics.lambda {
        Some(v) => v,
        None => lambda_torus(&op, &torus(cfg)?, x, &cfg.ergodic())?.constant,
    };
    let problem = McProblem {
        op: l.clone(),
        bop: b,
        graph: cfg.graph(),
        height: cfg.numerics.mc_height.unwrap_or(f64::INFINITY),
        x,
    };
    Ok((problem, lambda))
}

fn run_mc(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let seed = cfg.numerics.seed.ok_or_else(|| Error::Config("mc needs a seed: set numerics.seed or pass --seed".into()))?;
    let (problem, lambda) = mc_problem(cfg)?;
    let n = &cfg.numerics;
    let params = McParams {
        dt: n.dt,
        horizon: n.horizon,
        paths: n.paths,
        seed,
        ..McParams::default()
    };
    let x0 = cfg.x0()?;
    let growth = local_time_growth(&problem, x0, &n.horizons, &params, n.growth_threshold)?;
    let mut csv = String::from("horizon,mean_local_time,std_error\n");
    for r in &growth.table {
        csv.push_str(&format!("{:.10e},{:.10e},{:.10e}\n", r.horizon, r.mean_local_time, r.std_error));
    }
    out.text("mc_growth.csv", &csv)?;
    let estimate = mu_mc_estimate(&problem, lambda, x0, &params, n.min_local_time);
    let record = json!({
        "seed": seed,
        "lambda": lambda,
        "estimate": estimate.as_ref().ok(),
        "growth": growth,
    });
    out.json("mc.json", &record)?;
    let e = estimate?;
    ok(format!(
        "mc: mu_hat = {:.6e} +- {:.2e}, E|k|_T = {:.4e}, local time diverges = {}",
        e.mu_hat, e.std_error, e.mean_local_time, growth.diverges
    ))
}

fn run_bavg(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    if cfg.dim() != 2 {
        return Err(Error::Config("bavg works on planar data, set problem.dim = 2".into()));
    }
    let scan = slope_scan(&cfg.problem.g, &cfg.numerics.slopes, &cfg.numerics.radii)?;
    out.text("bavg.csv", &scan.to_csv())?;
    out.json("bavg.json", &scan)?;
    ok(format!(
        "bavg: normal average = {:.6e}, tilted limit = {:.6e}, gap = {:.6e}",
        scan.normal_average, scan.tilted_average, scan.gap
    ))
}

fn run_audit(cfg: &RunConfig, out: &Out) -> Result<Outcome> {
    let dom = DomainSpec::HalfStrip {
        dim: cfg.dim(),
        graph: cfg.graph(),
        height: cfg.numerics.heights.last().copied().unwrap_or(4.0),
    };
    let bop = cfg.boundary()?;
    let report = audit_assumptions(&cfg.operator()?, Some(&bop), &dom, cfg.numerics.probes)?;
    out.json("audit.json", &report)?;
    let failed: Vec<&str> = report.entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    ok(if failed.is_empty() {
        format!("audit: all {} checks passed", report.entries.len())
    } else {
        format!("audit: {} of {} checks failed: {}", failed.len(), report.entries.len(), failed.join(", "))
    })
}
