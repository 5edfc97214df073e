//! Orchestration: build the instance from a configuration, solve, recover
//! the observable fields, compare against the closed-form benchmark, and
//! write the artifact directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use priceform_core::analytic::{
    analytic_potential, explicit_price, lq_drift, solve_ansatz_odes, transported_density_at,
    AnsatzCoefficients, LqParams,
};
use priceform_core::discretize::{assemble_constraints, assemble_objective};
use priceform_core::grid::Grid;
use priceform_core::recovery::{clearing_residual, recover_density, recover_price, recover_value};
use priceform_core::setup::{
    cumulative_density, integrate_supply, select_radius, InitialDensity, ProblemInstance,
    SupplyModel,
};
use priceform_core::solver::{solve, SolverConfig};

use crate::config::{M0Kind, QbarKind, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub enum PipelineError {
    Io(std::io::Error),
    Internal(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e)
    }
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineError::Io(e) => write!(f, "i/o: {e}"),
            PipelineError::Internal(m) => write!(f, "internal: {m}"),
        }
    }
}

/// Everything produced by one solve on one grid.
pub struct RunResult {
    pub grid: Grid,
    pub converged: bool,
    pub objective_discrete: f64,
    pub objective_analytic: f64,
    pub kkt_residual: f64,
    pub feasibility_residual: f64,
    pub iterations: usize,
    pub price_sup_error: f64,
    /// Sup of the closed-form price over the report window.
    pub price_sup_exact: f64,
    pub u_sup_error: f64,
    /// Sup of the closed-form value function over the mask.
    pub u_sup_exact: f64,
    pub m_l1_error: f64,
    pub max_clearing_residual: f64,
    pub min_dx: f64,
    pub warnings: Vec<String>,
    pub phases_seconds: BTreeMap<&'static str, f64>,
    pub files: BTreeMap<String, String>,
}

pub fn supply_model(cfg: &RunConfig) -> SupplyModel {
    let amp = cfg.qbar_amplitude;
    let freq = cfg.qbar_frequency;
    let qbar: Box<dyn Fn(f64) -> f64 + Send + Sync> = match cfg.qbar_kind {
        QbarKind::Sine => Box::new(move |t| amp * (freq * core::f64::consts::PI * t).sin()),
        QbarKind::Zero => Box::new(|_| 0.0),
    };
    SupplyModel {
        qbar,
        alpha: cfg.supply_alpha,
        q0: cfg.supply_q0,
        horizon: cfg.grid_t,
    }
}

pub fn build_instance(cfg: &RunConfig, grid: &Grid) -> (ProblemInstance, Vec<String>) {
    let mut warnings = Vec::new();
    // Supply quadrature runs on a much finer grid than the optimization so
    // the balance right-hand side is effectively exact: the active-set
    // identification at the free boundary is sensitive to quadrature noise
    // in the balance rows, and the scalar ODE integration is cheap.
    let n_steps = (1000 * grid.n_t).max(20000);
    let supply = integrate_supply(&supply_model(cfg), n_steps)
        .expect("validated configuration produced an invalid supply model");
    let m0 = match cfg.m0_kind {
        M0Kind::Bump => InitialDensity::bump(grid, cfg.m0_support_radius),
        M0Kind::Uniform => InitialDensity::uniform(grid, cfg.m0_support_radius),
    };
    let selection = select_radius(&m0, &supply, None, Some(cfg.grid_r));
    if let Some(w) = selection.warning {
        warnings.push(format!("grid.R: {w}"));
    }
    let params = LqParams {
        c: cfg.cost_c,
        eta: cfg.lq_eta,
        kappa: cfg.lq_kappa,
    };
    (
        ProblemInstance::linear_quadratic(params, supply, m0, cfg.grid_t, cfg.grid_r),
        warnings,
    )
}

pub fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        max_outer: cfg.solver_max_outer,
        max_inner: cfg.solver_max_inner,
        tol_kkt: cfg.solver_tol_kkt,
        tol_feas: cfg.solver_tol_feas,
        barrier_mu0: cfg.solver_barrier_mu0,
        barrier_shrink: cfg.solver_barrier_shrink,
        barrier_mu_final: cfg.solver_barrier_mu_final,
        ..SolverConfig::default()
    }
}


/// Objective at a field that is feasible in the continuum but may carry
/// stray flux through (near-)zero-width cells once sampled on the grid,
/// such as the closed-form potential: the perspective term is dropped on
/// cells thinner than `1e-6` (their continuum contribution vanishes with
/// the mass), the linear terms are kept everywhere.
pub fn masked_objective_value(
    objective: &priceform_core::discretize::DiscreteObjective,
    phi: &priceform_core::grid::PotentialField,
) -> f64 {
    let grid = &objective.grid;
    let cell = grid.h_t() * grid.h_x();
    let eps = 1e-6;
    let mut total = 0.0;
    for i in 0..grid.n_t {
        for j in 0..grid.n_x {
            let z = phi.forward_dt(i, j);
            let y = phi.forward_dx(i, j);
            let l = if y >= eps { objective.cost.f(z / y) * y } else { 0.0 };
            total += (l - objective.v_at_cells[j] * y - objective.ut_prime_at_cells[j] * z) * cell;
        }
    }
    total
}

/// Tabulated explicit price with linear interpolation; the closed-form
/// expression involves a quadrature per call, far too slow inside the
/// characteristic integrator.
pub struct PriceTable {
    table: Vec<f64>,
    horizon: f64,
}

impl PriceTable {
    pub fn build(params: &LqParams, mean0: f64, instance: &ProblemInstance) -> Self {
        let n = 4000usize;
        let horizon = instance.horizon;
        let table = (0..=n)
            .map(|k| explicit_price(params, mean0, &instance.supply, k as f64 * horizon / n as f64))
            .collect();
        Self { table, horizon }
    }

    pub fn at(&self, t: f64) -> f64 {
        let n = self.table.len() - 1;
        let s = (t / self.horizon * n as f64).clamp(0.0, n as f64);
        let k = (s as usize).min(n - 1);
        let w = s - k as f64;
        (1.0 - w) * self.table[k] + w * self.table[k + 1]
    }
}

/// Closed-form benchmark fields evaluated against one numeric run.
pub struct Benchmark {
    pub price: PriceTable,
    pub coeffs: AnsatzCoefficients,
}

impl Benchmark {
    pub fn build(instance: &ProblemInstance) -> Option<Self> {
        let params = instance.lq_params?;
        let price = PriceTable::build(&params, instance.m0.mbar0, instance);
        let coeffs = solve_ansatz_odes(&params, &|t| price.at(t), instance.horizon, 4000).ok()?;
        Some(Self { price, coeffs })
    }
}

fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(dir: &Path, name: &str, body: &str, files: &mut BTreeMap<String, String>) -> std::io::Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(&path)?;
    f.write_all(body.as_bytes())?;
    use sha2::Digest;
    let digest = sha2::Sha256::digest(body.as_bytes());
    files.insert(name.to_string(), format!("{digest:x}"));
    Ok(())
}

fn grid_csv(grid: &Grid, header_coord: impl Fn(usize) -> f64, n_cols: usize, row: impl Fn(usize, usize) -> f64, n_rows: usize) -> String {
    let mut s = String::from("t");
    for j in 0..n_cols {
        s.push(',');
        s.push_str(&sig17(header_coord(j)));
    }
    s.push('\n');
    for i in 0..n_rows {
        s.push_str(&sig17(grid.t(i)));
        for j in 0..n_cols {
            s.push(',');
            s.push_str(&sig17(row(i, j)));
        }
        s.push('\n');
    }
    s
}

fn two_col_csv(header: &str, rows: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for (a, b) in rows {
        s.push_str(&sig17(a));
        s.push(',');
        s.push_str(&sig17(b));
        s.push('\n');
    }
    s
}

/// Runs the full pipeline on one grid and writes the artifact set into
/// `out_dir`. Returns the collected result; a non-converged solve is not an
/// error (the caller maps it to the dedicated exit status).
pub fn run_one(cfg: &RunConfig, grid: &Grid, out_dir: &Path) -> Result<RunResult, PipelineError> {
    let mut phases = BTreeMap::new();
    let mut files = BTreeMap::new();

    let t0 = Instant::now();
    let (instance, warnings) = build_instance(cfg, grid);
    let mut warnings = warnings;
    phases.insert("supply", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let objective = assemble_objective(&instance, grid);
    let constraints = assemble_constraints(&instance, grid)
        .map_err(|e| PipelineError::Internal(format!("constraint assembly failed: {e:?}")))?;
    phases.insert("assemble", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let report = solve(&objective, &constraints, &solver_config(cfg), None)
        .map_err(|e| PipelineError::Internal(format!("solver failed: {e:?}")))?;
    phases.insert("solve", t0.elapsed().as_secs_f64());
    let phi = &report.phi_star;

    // Recovered fields.
    let t0 = Instant::now();
    let v_cells: Vec<f64> = (0..grid.n_x).map(|j| (instance.v)(grid.x(j))).collect();
    let utp_cells: Vec<f64> = (0..grid.n_x)
        .map(|j| (instance.u_terminal_prime)(grid.x(j)))
        .collect();
    let v_nodes: Vec<f64> = (0..=grid.n_x).map(|j| (instance.v)(grid.x(j))).collect();
    let ut_nodes: Vec<f64> = (0..=grid.n_x)
        .map(|j| (instance.u_terminal)(grid.x(j)))
        .collect();
    let density = recover_density(phi);
    let price = recover_price(instance.cost.as_ref(), phi, &v_cells, &utp_cells);
    let u = recover_value(instance.cost.as_ref(), phi, &v_nodes, &ut_nodes);
    let q_levels: Vec<f64> = (0..grid.n_t).map(|i| instance.supply.value(grid.t(i))).collect();
    let clearing = clearing_residual(phi, &q_levels);
    phases.insert("recover", t0.elapsed().as_secs_f64());

    // Closed-form comparison.
    let t0 = Instant::now();
    let benchmark = Benchmark::build(&instance)
        .ok_or_else(|| PipelineError::Internal("benchmark construction failed".to_string()))?;
    let price_analytic: Vec<f64> = price.t.iter().map(|&t| benchmark.price.at(t)).collect();
    let price_sup_error = price
        .value
        .iter()
        .zip(&price_analytic)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let price_sup_exact = price_analytic.iter().fold(0.0f64, |a, &v| a.max(v.abs()));

    // Value comparison is restricted to nodes that stay interior to the
    // density mask at every later time level: the recovered representation
    // integrates the Hamiltonian backward from the horizon and only holds
    // while agents at that position carry mass.
    let eps = priceform_core::recovery::mask_threshold(grid.h_x());
    let on_mask = |i: usize, j: usize| -> bool {
        j > 0 && phi.forward_dx(i, j - 1) > eps && j < grid.n_x && phi.forward_dx(i, j) > eps
    };
    let mut trusted = vec![true; grid.n_x + 1];
    let mut u_sup_error = 0.0f64;
    let mut u_sup_exact = 0.0f64;
    for i in (0..=grid.n_t).rev() {
        if i < grid.n_t {
            for j in 0..=grid.n_x {
                trusted[j] = trusted[j] && on_mask(i, j);
            }
        }
        for j in 0..=grid.n_x {
            if i == grid.n_t || trusted[j] {
                let exact = benchmark.coeffs.u(grid.t(i), grid.x(j));
                u_sup_exact = u_sup_exact.max(exact.abs());
                u_sup_error = u_sup_error.max((u[i * (grid.n_x + 1) + j] - exact).abs());
            }
        }
    }

    // Density comparison: transported closed-form density at cell midpoints,
    // L1 over cells, maximum across levels.
    let params = instance.lq_params.expect("configurations are linear-quadratic");
    let pt = &benchmark.price;
    let price_fn = move |t: f64| pt.at(t);
    let drift = lq_drift(&params, &benchmark.coeffs, &price_fn);
    let m0_fn = priceform_core::analytic::density_interp(&instance.m0, grid);
    let mut m_l1_error = 0.0f64;
    for (i, row) in density.iter().enumerate() {
        let t = grid.t(i.min(grid.n_t));
        let mut l1 = 0.0;
        for (j, &mj) in row.iter().enumerate() {
            let x = grid.x(j) + 0.5 * grid.h_x();
            let exact = transported_density_at(&drift, &m0_fn, t, x, 40);
            l1 += (mj - exact).abs() * grid.h_x();
        }
        m_l1_error = m_l1_error.max(l1);
    }

    // Discrete objective at the closed-form potential, for calibration
    // against the benchmark value.
    let m0_cdf = cumulative_density(&instance.m0, grid);
    let phi_analytic = analytic_potential(grid, &drift, &m0_fn, &m0_cdf, 10);
    let objective_analytic = masked_objective_value(&objective, &phi_analytic);
    phases.insert("compare", t0.elapsed().as_secs_f64());

    // Artifacts.
    let t0 = Instant::now();
    fs::create_dir_all(out_dir)?;
    let phi_csv = grid_csv(grid, |j| grid.x(j), grid.n_x + 1, |i, j| phi.get(i, j), grid.n_t + 1);
    write_file(out_dir, "phi.csv", &phi_csv, &mut files)?;
    let m_csv = grid_csv(
        grid,
        |j| grid.x(j) + 0.5 * grid.h_x(),
        grid.n_x,
        |i, j| density[i][j],
        grid.n_t + 1,
    );
    write_file(out_dir, "m.csv", &m_csv, &mut files)?;
    let u_csv = grid_csv(grid, |j| grid.x(j), grid.n_x + 1, |i, j| u[i * (grid.n_x + 1) + j], grid.n_t + 1);
    write_file(out_dir, "u.csv", &u_csv, &mut files)?;

    let mut price_csv = String::from("t,varpi_numeric,varpi_analytic,abs_error\n");
    for (k, &t) in price.t.iter().enumerate() {
        price_csv.push_str(&format!(
            "{},{},{},{}\n",
            sig17(t),
            sig17(price.value[k]),
            sig17(price_analytic[k]),
            sig17((price.value[k] - price_analytic[k]).abs())
        ));
    }
    write_file(out_dir, "price.csv", &price_csv, &mut files)?;

    let mut supply_csv = String::from("t,Q,Q_cumulative\n");
    for (k, &t) in instance.supply.t_nodes.iter().enumerate() {
        supply_csv.push_str(&format!(
            "{},{},{}\n",
            sig17(t),
            sig17(instance.supply.q[k]),
            sig17(instance.supply.q_cum[k])
        ));
    }
    write_file(out_dir, "supply.csv", &supply_csv, &mut files)?;

    write_file(
        out_dir,
        "plotdata/price_numeric.csv",
        &two_col_csv("t,varpi", price.t.iter().copied().zip(price.value.iter().copied())),
        &mut files,
    )?;
    write_file(
        out_dir,
        "plotdata/price_analytic.csv",
        &two_col_csv("t,varpi", price.t.iter().copied().zip(price_analytic.iter().copied())),
        &mut files,
    )?;
    write_file(
        out_dir,
        "plotdata/price_error.csv",
        &two_col_csv(
            "t,abs_error",
            price
                .t
                .iter()
                .zip(price.value.iter().zip(&price_analytic))
                .map(|(&t, (a, b))| (t, (a - b).abs())),
        ),
        &mut files,
    )?;
    write_file(
        out_dir,
        "plotdata/supply.csv",
        &two_col_csv(
            "t,Q",
            instance
                .supply
                .t_nodes
                .iter()
                .copied()
                .zip(instance.supply.q.iter().copied()),
        ),
        &mut files,
    )?;
    write_file(
        out_dir,
        "plotdata/density_initial.csv",
        &two_col_csv(
            "x,m",
            (0..grid.n_x).map(|j| (grid.x(j) + 0.5 * grid.h_x(), density[0][j])),
        ),
        &mut files,
    )?;
    write_file(
        out_dir,
        "plotdata/density_final.csv",
        &two_col_csv(
            "x,m",
            (0..grid.n_x).map(|j| (grid.x(j) + 0.5 * grid.h_x(), density[grid.n_t][j])),
        ),
        &mut files,
    )?;
    write_file(
        out_dir,
        "plotdata/clearing_residual.csv",
        &two_col_csv(
            "t,residual",
            (0..grid.n_t).map(|i| (grid.t(i), clearing[i])),
        ),
        &mut files,
    )?;
    phases.insert("write", t0.elapsed().as_secs_f64());

    let max_clearing = clearing.iter().fold(0.0f64, |a, &r| a.max(r.abs()));
    let min_dx = constraints.min_dx(phi);
    let result = RunResult {
        grid: grid.clone(),
        converged: report.converged,
        objective_discrete: report.objective_value,
        objective_analytic,
        kkt_residual: report.kkt_residual,
        feasibility_residual: report.feasibility_residual,
        iterations: report.iterations,
        price_sup_error,
        price_sup_exact,
        u_sup_error,
        u_sup_exact,
        m_l1_error,
        max_clearing_residual: max_clearing,
        min_dx,
        warnings: std::mem::take(&mut warnings),
        phases_seconds: phases,
        files,
    };
    write_report_json(cfg, &result, out_dir)?;
    Ok(result)
}

fn write_report_json(cfg: &RunConfig, r: &RunResult, out_dir: &Path) -> std::io::Result<()> {
    let report = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": {
            "echo": cfg.echo,
            "resolved": {
                "cost.c": cfg.cost_c,
                "lq.eta": cfg.lq_eta,
                "lq.kappa": cfg.lq_kappa,
                "supply.alpha": cfg.supply_alpha,
                "supply.q0": cfg.supply_q0,
                "supply.qbar_amplitude": cfg.qbar_amplitude,
                "supply.qbar_frequency": cfg.qbar_frequency,
                "grid.T": cfg.grid_t,
                "grid.R": cfg.grid_r,
                "grid.n_t": r.grid.n_t,
                "grid.n_x": r.grid.n_x,
                "m0.support_radius": cfg.m0_support_radius,
            },
        },
        "phases_seconds": r.phases_seconds,
        "solver": {
            "objective_discrete": r.objective_discrete,
            "objective_analytic": r.objective_analytic,
            "kkt_residual": r.kkt_residual,
            "feasibility_residual": r.feasibility_residual,
            "iterations": r.iterations,
            "converged": r.converged,
        },
        "errors": {
            "price_sup": r.price_sup_error,
            "u_sup_on_mask": r.u_sup_error,
            "m_l1_max_level": r.m_l1_error,
            "max_clearing_residual": r.max_clearing_residual,
            "min_dx": r.min_dx,
        },
        "warnings": r.warnings,
        "files": r.files,
    });
    let body = serde_json::to_string_pretty(&report).expect("report serialization");
    fs::write(out_dir.join("report.json"), body)
}

/// Runs a doubling refinement chain (`levels` grids starting at the
/// configured one) and writes the per-grid artifact sets plus a refinement
/// table.
pub fn run_refinement(
    cfg: &RunConfig,
    levels: usize,
    out_dir: &Path,
) -> Result<Vec<RunResult>, PipelineError> {
    let mut results = Vec::new();
    for k in 0..levels {
        let factor = 1usize << k;
        let grid = Grid::new(
            cfg.grid_t,
            cfg.grid_r,
            cfg.grid_n_t * factor,
            cfg.grid_n_x * factor,
        );
        let sub = out_dir.join(format!("level_{k}"));
        results.push(run_one(cfg, &grid, &sub)?);
    }
    let mut table = String::from("n_t,n_x,h_t,h_x,objective_discrete,objective_analytic,price_sup_error,u_sup_error,m_l1_error,converged\n");
    for r in &results {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.grid.n_t,
            r.grid.n_x,
            sig17(r.grid.h_t()),
            sig17(r.grid.h_x()),
            sig17(r.objective_discrete),
            sig17(r.objective_analytic),
            sig17(r.price_sup_error),
            sig17(r.u_sup_error),
            sig17(r.m_l1_error),
            r.converged,
        ));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("refinement.csv"), table)?;
    Ok(results)
}

/// Helper used by tests and the calibration sweep: discrete objective of the
/// closed-form potential for given parameters on the configured grid.
pub fn analytic_objective_for(cfg: &RunConfig, grid: &Grid) -> Option<(f64, ProblemInstance)> {
    let (instance, _) = build_instance(cfg, grid);
    let benchmark = Benchmark::build(&instance)?;
    let params = instance.lq_params?;
    let pt = &benchmark.price;
    let price_fn = move |t: f64| pt.at(t);
    let drift = lq_drift(&params, &benchmark.coeffs, &price_fn);
    let value = {
        let m0_fn = priceform_core::analytic::density_interp(&instance.m0, grid);
        let m0_cdf = cumulative_density(&instance.m0, grid);
        let phi_analytic = analytic_potential(grid, &drift, &m0_fn, &m0_cdf, 10);
        let objective = assemble_objective(&instance, grid);
        masked_objective_value(&objective, &phi_analytic)
    };
    Some((value, instance))
}
