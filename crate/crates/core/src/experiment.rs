//! Synthetic experiments: configuration, benchmark targets, data generation,
//! noise, reconstruction runs, sweeps and result files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{solve_dirichlet, solve_neumann, Field};
use crate::mesh::{BoundaryData, BoundaryKind, Potential, SpaceMesh};
use crate::objective::{KohnVogelius, LeastSquares};
use crate::optimizer::{run_cgm, ArmijoParams, CgOptions, CgOutcome, CgStatus, StepKind};
use crate::timegrid::TimeGrid;

/// Names accepted by [`make_target`] besides free-form expressions.
pub const TARGET_NAMES: [&str; 7] = ["linear", "exp-cos", "pi2-sin", "hat", "piecewise", "disk2d", "diamond2d"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Regularized Kohn–Vogelius functional.
    #[default]
    Kv,
    /// Boundary least squares.
    Ls,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kv" => Ok(Method::Kv),
            "ls" => Ok(Method::Ls),
            _ => Err(Error::InvalidParameter(format!("unknown method `{s}` (expected kv or ls)"))),
        }
    }
}

/// Initial guess: a constant or an expression in `x`, `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialGuess {
    Constant(f64),
    Expression(String),
}

fn default_dim() -> usize {
    1
}
fn default_domain() -> [f64; 2] {
    [0.0, 2.0]
}
fn default_t_final() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    42
}
fn default_neumann() -> String {
    "t^2".into()
}
fn default_q0() -> InitialGuess {
    InitialGuess::Constant(1.0)
}
fn default_tol() -> f64 {
    1e-7
}
fn default_max_it() -> usize {
    500
}
fn default_grad_tol() -> f64 {
    1e-10
}
fn default_lower() -> f64 {
    Potential::DEFAULT_LOWER
}
fn default_upper() -> f64 {
    Potential::DEFAULT_UPPER
}
fn default_refinement() -> usize {
    1
}

/// JSON-configurable experiment description. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// 1 (interval) or 2 (unit square).
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Interval end points in 1D; must be `[0, 1]` in 2D.
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    /// Cells per axis.
    pub n_cells: usize,
    pub n_steps: usize,
    pub alpha: f64,
    #[serde(default = "default_t_final", alias = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub method: Method,
    /// Kohn–Vogelius regularization weight.
    #[serde(default)]
    pub rho: f64,
    /// Least-squares regularization weight; falls back to `rho`.
    #[serde(default)]
    pub mu: Option<f64>,
    /// Absolute noise amplitude.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Target name (see [`TARGET_NAMES`]) or an expression in `x`, `y`.
    pub q_true: String,
    /// Neumann excitation, an expression in `x`, `y`, `t` (and `alpha`).
    #[serde(default = "default_neumann")]
    pub neumann_expr: String,
    #[serde(default = "default_q0")]
    pub q0: InitialGuess,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_it")]
    pub max_it: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Lower bound `c` of the admissible box.
    #[serde(default = "default_lower")]
    pub lower: f64,
    /// Upper bound `c′` of the admissible box.
    #[serde(default = "default_upper")]
    pub upper: f64,
    /// Observation data are simulated on a grid refined by this factor in
    /// space and time, then sampled at the working nodes.
    #[serde(default = "default_refinement")]
    pub data_grid_refinement: usize,
}

impl ExperimentConfig {
    /// Desk-scale 1D configuration on `(0, 2)` with `q0 ≡ 1`.
    pub fn one_dimensional(q_true: &str) -> Self {
        Self {
            dim: 1,
            domain: default_domain(),
            n_cells: 90,
            n_steps: 71,
            alpha: 0.45,
            t_final: 1.0,
            method: Method::Kv,
            rho: 1e-5,
            mu: None,
            epsilon: 0.0,
            seed: default_seed(),
            q_true: q_true.into(),
            neumann_expr: default_neumann(),
            q0: default_q0(),
            tol: default_tol(),
            max_it: default_max_it(),
            grad_tol: default_grad_tol(),
            lower: default_lower(),
            upper: default_upper(),
            data_grid_refinement: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(self.rho)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self.dim {
            1 => {
                if !(self.domain[0] < self.domain[1]) {
                    return bad(format!("empty domain {:?}", self.domain));
                }
            }
            2 => {
                if self.domain != [0.0, 1.0] {
                    return bad("2D runs use the unit square; domain must be [0, 1]".into());
                }
            }
            d => return bad(format!("dim must be 1 or 2, got {d}")),
        }
        if self.n_cells < 2 || self.n_steps < 1 {
            return bad(format!("need n_cells ≥ 2 and n_steps ≥ 1, got {} and {}", self.n_cells, self.n_steps));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return bad(format!("final time must be positive, got {}", self.t_final));
        }
        if !(self.rho >= 0.0) || !(self.mu() >= 0.0) {
            return bad("regularization weights must be non-negative".into());
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("noise level must be non-negative, got {}", self.epsilon));
        }
        if !(self.tol > 0.0) || !(self.grad_tol >= 0.0) {
            return bad("tolerances must be positive".into());
        }
        if !(self.lower > 0.0) || !(self.upper >= self.lower) || !self.upper.is_finite() {
            return bad(format!("invalid bounds [{}, {}]", self.lower, self.upper));
        }
        if self.data_grid_refinement < 1 {
            return bad("data_grid_refinement must be at least 1".into());
        }
        Ok(())
    }

    pub fn build_mesh(&self, refinement: usize) -> Result<SpaceMesh> {
        let n = self.n_cells * refinement;
        match self.dim {
            1 => SpaceMesh::interval(self.domain[0], self.domain[1], n),
            _ => SpaceMesh::unit_square(n, n),
        }
    }

    pub fn build_grid(&self, refinement: usize) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.n_steps * refinement, self.alpha)
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions {
            tol: self.tol,
            max_it: self.max_it,
            grad_tol: self.grad_tol,
            armijo: ArmijoParams::default(),
            ..CgOptions::default()
        }
    }
}

type ScalarFn = Box<dyn Fn(f64, f64, f64) -> f64>;

/// Compiles an expression in `x`, `y`, `t`, with `alpha` bound to a constant.
pub fn compile_expression(expr: &str, alpha: f64) -> Result<ScalarFn> {
    let err = |reason: String| Error::Expression { expr: expr.into(), reason };
    let parsed = meval::Expr::from_str(expr).map_err(|e| err(e.to_string()))?;
    let mut ctx = meval::Context::new();
    ctx.var("alpha", alpha);
    let f = parsed.bind3_with_context(ctx, "x", "y", "t").map_err(|e| err(e.to_string()))?;
    Ok(Box::new(f))
}

type TargetFn = Box<dyn Fn(f64, f64) -> f64>;

/// Benchmark potential by name, or a compiled expression in `x`, `y`.
pub fn target_function(name: &str) -> Result<TargetFn> {
    use std::f64::consts::PI;
    Ok(match name {
        "linear" => Box::new(|x, _| x),
        "exp-cos" => Box::new(|x, _| (-2.0 * x).exp() * (2.0 * PI * x).cos()),
        "pi2-sin" => Box::new(|x, _| PI * PI * (PI * x).sin()),
        "hat" => Box::new(|x, _| if x < 1.0 { x } else { 2.0 - x }),
        "piecewise" => Box::new(|x, _| if (0.45..1.5).contains(&x) { 1.0 } else { 2.0 }),
        "disk2d" => Box::new(|x, y| if (x - 0.5).powi(2) + (y - 0.5).powi(2) <= 0.03 { 2.0 } else { 1.0 }),
        "diamond2d" => Box::new(|x, y| if (x - 0.5).abs() + (y - 0.5).abs() < 0.3 { 2.0 } else { 1.0 }),
        expr => {
            let f = compile_expression(expr, 0.0).map_err(|_| Error::UnknownTarget(expr.into()))?;
            Box::new(move |x, y| f(x, y, 0.0))
        }
    })
}

/// Nodal target projected onto `[lower, upper]`, the admissible set the
/// reconstruction searches.
pub fn make_target(name: &str, mesh: &SpaceMesh, lower: f64, upper: f64) -> Result<Potential> {
    let f = target_function(name)?;
    let mut q = Potential::new(mesh.evaluate(f), lower, upper)?;
    q.project();
    Ok(q)
}

fn initial_guess(config: &ExperimentConfig, mesh: &SpaceMesh) -> Result<Potential> {
    let values = match &config.q0 {
        InitialGuess::Constant(c) => vec![*c; mesh.n_nodes()],
        InitialGuess::Expression(e) => {
            let f = compile_expression(e, config.alpha)?;
            mesh.evaluate(|x, y| f(x, y, 0.0))
        }
    };
    let mut q = Potential::new(values, config.lower, config.upper)?;
    q.project();
    Ok(q)
}

/// Neumann excitation sampled on `mesh × grid`.
pub fn excitation(config: &ExperimentConfig, mesh: &SpaceMesh, grid: &TimeGrid) -> Result<BoundaryData> {
    let f = compile_expression(&config.neumann_expr, config.alpha)?;
    let flux = BoundaryData::from_fn(BoundaryKind::Neumann, mesh, grid, f);
    if flux.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("excitation `{}` is not finite on the grid", config.neumann_expr)));
    }
    Ok(flux)
}

/// Fine-mesh node coinciding with coarse node `node` under refinement `r`.
fn refined_node(coarse: &SpaceMesh, fine: &SpaceMesh, node: usize, r: usize) -> usize {
    let nx = coarse.shape()[0];
    let (i, j) = (node % nx, node / nx);
    j * r * fine.shape()[0] + i * r
}

/// Noise-free Dirichlet trace of the Neumann problem with the target
/// potential, simulated on a grid refined by `data_grid_refinement` and
/// sampled at the working boundary nodes and time levels.
pub fn generate_observation(config: &ExperimentConfig) -> Result<BoundaryData> {
    config.validate()?;
    let mesh = config.build_mesh(1)?;
    let grid = config.build_grid(1)?;
    let r = config.data_grid_refinement;
    let fine_mesh = config.build_mesh(r)?;
    let fine_grid = config.build_grid(r)?;
    let q = make_target(&config.q_true, &fine_mesh, config.lower, config.upper)?;
    let flux = excitation(config, &fine_mesh, &fine_grid)?;
    let trace = solve_neumann(&q, &flux, None, &fine_mesh, &fine_grid)?.trace(&fine_mesh, BoundaryKind::Dirichlet);
    let slots: Vec<usize> = mesh
        .boundary_nodes()
        .iter()
        .map(|&b| {
            let f = refined_node(&mesh, &fine_mesh, b, r);
            fine_mesh.boundary_slot(f).expect("boundary nodes refine to boundary nodes")
        })
        .collect();
    let values = Array2::from_shape_fn((grid.n_nodes(), mesh.n_boundary()), |(n, b)| trace.values[[r * n, slots[b]]]);
    Ok(BoundaryData { kind: BoundaryKind::Dirichlet, values })
}

/// `φ + ε(2u − 1)` entrywise with `u ~ U[0, 1)` from a seeded generator,
/// drawn in time-major order.
pub fn add_noise(phi: &BoundaryData, epsilon: f64, seed: u64) -> BoundaryData {
    if epsilon == 0.0 {
        return phi.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = phi.clone();
    for v in out.values.iter_mut() {
        *v += epsilon * (2.0 * rng.random::<f64>() - 1.0);
    }
    out
}

/// `‖q − q*‖ / ‖q*‖` in `L²(Ω)`.
pub fn relative_error(q: &Potential, q_true: &Potential, mesh: &SpaceMesh) -> Result<f64> {
    let base = mesh.norm(&q_true.values);
    if !(base > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let diff: Vec<f64> = q.values.iter().zip(&q_true.values).map(|(a, b)| a - b).collect();
    Ok(mesh.norm(&diff) / base)
}

/// Everything a reconstruction needs, built from a configuration.
pub struct Problem {
    pub config: ExperimentConfig,
    pub mesh: SpaceMesh,
    pub grid: TimeGrid,
    pub flux: BoundaryData,
    pub clean: BoundaryData,
    pub observed: BoundaryData,
    pub q_true: Potential,
    pub q0: Potential,
}

impl Problem {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mesh = config.build_mesh(1)?;
        let grid = config.build_grid(1)?;
        let flux = excitation(config, &mesh, &grid)?;
        let clean = generate_observation(config)?;
        let observed = add_noise(&clean, config.epsilon, config.seed);
        let q_true = make_target(&config.q_true, &mesh, config.lower, config.upper)?;
        let q0 = initial_guess(config, &mesh)?;
        Ok(Self { config: config.clone(), mesh, grid, flux, clean, observed, q_true, q0 })
    }

    pub fn error_of(&self, q: &Potential) -> Option<f64> {
        relative_error(q, &self.q_true, &self.mesh).ok()
    }

    pub fn kohn_vogelius(&self) -> KohnVogelius<'_> {
        KohnVogelius {
            mesh: &self.mesh,
            grid: &self.grid,
            flux: &self.flux,
            observed: &self.observed,
            rho: self.config.rho,
        }
    }

    pub fn least_squares(&self) -> LeastSquares<'_> {
        LeastSquares {
            mesh: &self.mesh,
            grid: &self.grid,
            flux: &self.flux,
            observed: &self.observed,
            mu: self.config.mu(),
        }
    }

    pub fn reconstruct(&self, method: Method, options: &CgOptions) -> CgOutcome {
        let error_of = |q: &Potential| self.error_of(q);
        match method {
            Method::Kv => run_cgm(&self.kohn_vogelius(), self.q0.clone(), options, error_of),
            Method::Ls => run_cgm(&self.least_squares(), self.q0.clone(), options, error_of),
        }
    }
}

/// Observed boundary data, one row per time level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySeries {
    pub times: Vec<f64>,
    /// Mesh node index of each boundary column.
    pub nodes: Vec<usize>,
    pub clean: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub config: ExperimentConfig,
    pub method: Method,
    pub status: CgStatus,
    pub iterations: usize,
    pub k_rho: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Step taken from each iterate; `None` for the last one.
    pub beta: Vec<Option<f64>>,
    pub gamma: Vec<Option<f64>>,
    pub rel_error: Vec<f64>,
    pub step_kind: Vec<Option<StepKind>>,
    pub initial_error: f64,
    pub final_error: f64,
    /// Node coordinates `[x, y]` (`y = 0` in 1D).
    pub nodes: Vec<[f64; 2]>,
    pub q_true: Vec<f64>,
    pub q_final: Vec<f64>,
    pub boundary: BoundarySeries,
    pub wall_time_s: f64,
}

impl ReconstructionReport {
    pub fn from_outcome(problem: &Problem, method: Method, outcome: CgOutcome, wall_time_s: f64) -> Self {
        let rows = |d: &BoundaryData| d.values.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        let records = &outcome.records;
        Self {
            config: problem.config.clone(),
            method,
            status: outcome.status.clone(),
            iterations: outcome.iterations(),
            k_rho: records.iter().map(|r| r.k_rho).collect(),
            grad_norm: records.iter().map(|r| r.grad_norm).collect(),
            beta: records.iter().map(|r| r.beta).collect(),
            gamma: records.iter().map(|r| r.gamma).collect(),
            rel_error: records.iter().map(|r| r.rel_error.unwrap_or(f64::NAN)).collect(),
            step_kind: records.iter().map(|r| r.step_kind).collect(),
            initial_error: problem.error_of(&problem.q0).unwrap_or(f64::NAN),
            final_error: problem.error_of(&outcome.q_final).unwrap_or(f64::NAN),
            nodes: problem.mesh.coords().to_vec(),
            q_true: problem.q_true.values.clone(),
            q_final: outcome.q_final.values,
            boundary: BoundarySeries {
                times: problem.grid.times().collect(),
                nodes: problem.mesh.boundary_nodes().to_vec(),
                clean: rows(&problem.clean),
                observed: rows(&problem.observed),
            },
            wall_time_s,
        }
    }
}

/// Data generation, noise, reconstruction with `config.method`, metrics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReconstructionReport> {
    let start = Instant::now();
    let problem = Problem::new(config)?;
    let outcome = problem.reconstruct(config.method, &config.cg_options());
    Ok(ReconstructionReport::from_outcome(&problem, config.method, outcome, start.elapsed().as_secs_f64()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Rho,
    Alpha,
    Epsilon,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::Alpha => "alpha",
            SweepParam::Epsilon => "epsilon",
        }
    }

    pub fn apply(self, config: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            SweepParam::Rho => c.rho = value,
            SweepParam::Alpha => c.alpha = value,
            SweepParam::Epsilon => c.epsilon = value,
        }
        c
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rho" => Ok(SweepParam::Rho),
            "alpha" => Ok(SweepParam::Alpha),
            "epsilon" => Ok(SweepParam::Epsilon),
            _ => Err(Error::InvalidParameter(format!("unknown sweep parameter `{s}` (expected rho, alpha or epsilon)"))),
        }
    }
}

/// Runs one experiment per value in parallel, sharing the seed; results are
/// returned in the order of `values` and a failing member does not affect
/// the others.
pub fn sweep(config: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Vec<Result<ReconstructionReport>> {
    values.par_iter().map(|&v| run_experiment(&param.apply(config, v))).collect()
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn coord_header(dim: usize) -> &'static str {
    if dim == 1 {
        "x"
    } else {
        "x,y"
    }
}

fn coord_cells(c: [f64; 2], dim: usize) -> String {
    if dim == 1 {
        fmt_f64(c[0])
    } else {
        format!("{},{}", fmt_f64(c[0]), fmt_f64(c[1]))
    }
}

pub fn history_csv(report: &ReconstructionReport) -> String {
    let mut s = String::from("iter,k_rho,grad_norm,beta,gamma,rel_error\n");
    for i in 0..report.k_rho.len() {
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            fmt_f64(report.k_rho[i]),
            fmt_f64(report.grad_norm[i]),
            fmt_opt(report.beta[i]),
            fmt_opt(report.gamma[i]),
            fmt_f64(report.rel_error[i])
        );
    }
    s
}

pub fn potential_csv(report: &ReconstructionReport) -> String {
    let dim = report.config.dim;
    let mut s = format!("{},q_true,q_final\n", coord_header(dim));
    for ((c, t), f) in report.nodes.iter().zip(&report.q_true).zip(&report.q_final) {
        let _ = writeln!(s, "{},{},{}", coord_cells(*c, dim), fmt_f64(*t), fmt_f64(*f));
    }
    s
}

/// Long format: `t,node,x[,y],phi,phi_observed`.
pub fn boundary_csv(report: &ReconstructionReport) -> String {
    let dim = report.config.dim;
    let b = &report.boundary;
    let mut s = format!("t,node,{},phi,phi_observed\n", coord_header(dim));
    for (n, t) in b.times.iter().enumerate() {
        for (k, &node) in b.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{node},{},{},{}",
                fmt_f64(*t),
                coord_cells(report.nodes[node], dim),
                fmt_f64(b.clean[n][k]),
                fmt_f64(b.observed[n][k])
            );
        }
    }
    s
}

/// Long format: `node,x[,y],t,u`.
pub fn field_csv(field: &Field, mesh: &SpaceMesh, grid: &TimeGrid) -> String {
    let dim = mesh.dim();
    let mut s = format!("node,{},t,u\n", coord_header(dim));
    for n in 0..grid.n_nodes() {
        let t = fmt_f64(grid.time(n));
        for (i, (c, u)) in mesh.coords().iter().zip(field.at(n)).enumerate() {
            let _ = writeln!(s, "{i},{},{t},{}", coord_cells(*c, dim), fmt_f64(*u));
        }
    }
    s
}

/// Writes `report.json`, `history.csv`, `potential.csv` and `boundary.csv`.
pub fn write_report(report: &ReconstructionReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("history.csv"), history_csv(report))?;
    fs::write(dir.join("potential.csv"), potential_csv(report))?;
    fs::write(dir.join("boundary.csv"), boundary_csv(report))?;
    Ok(())
}

/// One row per sweep member: `value,status,iterations,initial_error,final_error,k_rho_final`.
pub fn sweep_summary_csv(param: SweepParam, values: &[f64], results: &[Result<ReconstructionReport>]) -> String {
    let mut s = format!("{},status,iterations,initial_error,final_error,k_rho_final\n", param.name());
    for (v, r) in values.iter().zip(results) {
        match r {
            Ok(rep) => {
                let status = serde_json::to_value(&rep.status).map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    fmt_f64(*v),
                    status.trim_matches('"').replace(',', ";"),
                    rep.iterations,
                    fmt_f64(rep.initial_error),
                    fmt_f64(rep.final_error),
                    fmt_f64(*rep.k_rho.last().unwrap_or(&f64::NAN))
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{},error: {},,,,", fmt_f64(*v), e.to_string().replace(',', ";"));
            }
        }
    }
    s
}

/// Forward solves at the target potential: the Neumann state, the Dirichlet
/// state driven by its trace, and the boundary data.
pub struct ForwardRun {
    pub mesh: SpaceMesh,
    pub grid: TimeGrid,
    pub u_neumann: Field,
    pub u_dirichlet: Field,
    pub flux: BoundaryData,
    pub trace: BoundaryData,
}

pub fn run_forward(config: &ExperimentConfig) -> Result<ForwardRun> {
    config.validate()?;
    let mesh = config.build_mesh(1)?;
    let grid = config.build_grid(1)?;
    let q = make_target(&config.q_true, &mesh, config.lower, config.upper)?;
    let flux = excitation(config, &mesh, &grid)?;
    let u_neumann = solve_neumann(&q, &flux, None, &mesh, &grid)?;
    let trace = u_neumann.trace(&mesh, BoundaryKind::Dirichlet);
    let u_dirichlet = solve_dirichlet(&q, &trace, None, &mesh, &grid)?;
    Ok(ForwardRun { mesh, grid, u_neumann, u_dirichlet, flux, trace })
}

/// Writes `forward_neumann.csv`, `forward_dirichlet.csv` and `boundary.csv`
/// (`t,node,x[,y],flux,trace`).
pub fn write_forward(run: &ForwardRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("forward_neumann.csv"), field_csv(&run.u_neumann, &run.mesh, &run.grid))?;
    fs::write(dir.join("forward_dirichlet.csv"), field_csv(&run.u_dirichlet, &run.mesh, &run.grid))?;
    let dim = run.mesh.dim();
    let mut s = format!("t,node,{},flux,trace\n", coord_header(dim));
    for n in 0..run.grid.n_nodes() {
        for (k, &node) in run.mesh.boundary_nodes().iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{node},{},{},{}",
                fmt_f64(run.grid.time(n)),
                coord_cells(run.mesh.coords()[node], dim),
                fmt_f64(run.flux.values[[n, k]]),
                fmt_f64(run.trace.values[[n, k]])
            );
        }
    }
    fs::write(dir.join("boundary.csv"), s)?;
    Ok(())
}
