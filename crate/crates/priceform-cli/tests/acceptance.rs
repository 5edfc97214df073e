//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N: PASS/FAIL` line (visible with `--nocapture`; a FAIL line is
//! always accompanied by a panicking assertion so the suite cannot pass
//! silently).

use std::path::{Path, PathBuf};
use std::time::Instant;

use priceform_cli::config::{self, RunConfig};
use priceform_cli::pipeline;
use priceform_core::analytic::{
    explicit_price, hj_residual, lq_drift, solve_ansatz_odes, transported_density_at, LqParams,
};
use priceform_core::discretize::{assemble_constraints, assemble_objective, ObjectiveValue, RowLabel};
use priceform_core::grid::Grid;
use priceform_core::recovery::{recover_density, recover_price};
use priceform_core::setup::{integrate_supply, InitialDensity, ProblemInstance, SupplyModel};
use priceform_core::solver::{feasible_start, solve, SolverConfig};

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> RunConfig {
    let (cfg, diags) = config::load(&repo_config(name)).expect("config readable");
    assert!(diags.iter().all(|d| d.warning), "shipped config invalid: {diags:?}");
    cfg
}

struct Gate {
    criterion: usize,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Gate {
    fn new(criterion: usize) -> Self {
        Self {
            criterion,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: &str) {
        if !ok {
            self.failures.push(what.to_string());
        }
    }

    fn note(&mut self, what: String) {
        self.notes.push(what);
    }

    fn finish(self) {
        for n in &self.notes {
            println!("criterion {}:   {n}", self.criterion);
        }
        if self.failures.is_empty() {
            println!("criterion {}: PASS", self.criterion);
        } else {
            println!("criterion {}: FAIL — {}", self.criterion, self.failures.join("; "));
        }
        assert!(self.failures.is_empty(), "criterion {} failed: {:?}", self.criterion, self.failures);
    }
}

static SERIAL: std::sync::Mutex<()> = std::sync::Mutex::new(());

/// Runtime limits are wall-clock; the criteria must not contend for cores.
fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn lcg(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    ((*state >> 11) as f64) / ((1u64 << 53) as f64)
}

#[test]
fn criterion_1_trivial_instance_exactness() {
    let _guard = serial();
    let started = Instant::now();
    let mut gate = Gate::new(1);
    let cfg = load("trivial.conf");
    let grid = Grid::new(cfg.grid_t, cfg.grid_r, cfg.grid_n_t, cfg.grid_n_x);
    let (instance, _) = pipeline::build_instance(&cfg, &grid);
    let objective = assemble_objective(&instance, &grid);
    let constraints = assemble_constraints(&instance, &grid).unwrap();
    let report = solve(&objective, &constraints, &pipeline::solver_config(&cfg), None).unwrap();
    gate.check(report.converged, "solver converged");
    gate.check(
        report.objective_value.abs() <= 1e-8,
        &format!("objective {} within 1e-8 of zero", report.objective_value),
    );

    // The optimum is the time-constant extension of the initial cumulative
    // distribution.
    let m0_cdf = priceform_core::setup::cumulative_density(&instance.m0, &grid);
    let mut phi_dev = 0.0f64;
    for i in 0..=grid.n_t {
        for j in 0..=grid.n_x {
            phi_dev = phi_dev.max((report.phi_star.get(i, j) - m0_cdf[j]).abs());
        }
    }
    gate.check(phi_dev <= 1e-6, &format!("phi constant-in-time dev {phi_dev} ≤ 1e-6"));

    let v_cells: Vec<f64> = (0..grid.n_x).map(|j| (instance.v)(grid.x(j))).collect();
    let utp: Vec<f64> = (0..grid.n_x).map(|j| (instance.u_terminal_prime)(grid.x(j))).collect();
    let price = recover_price(instance.cost.as_ref(), &report.phi_star, &v_cells, &utp);
    let price_sup = price.value.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    gate.check(price_sup <= 1e-6, &format!("price sup {price_sup} ≤ 1e-6"));

    let density = recover_density(&report.phi_star);
    let mut m_dev = 0.0f64;
    for row in &density {
        let l1: f64 = row
            .iter()
            .zip(&density[0])
            .map(|(a, b)| (a - b).abs() * grid.h_x())
            .sum();
        m_dev = m_dev.max(l1);
    }
    gate.check(m_dev <= 1e-8, &format!("density drift {m_dev} ≤ 1e-8 L1"));

    let secs = started.elapsed().as_secs_f64();
    gate.check(secs < 10.0, &format!("runtime {secs:.1}s < 10s"));
    gate.finish();
}

#[test]
fn criterion_2_lq_oracle_certification() {
    let _guard = serial();
    let mut gate = Gate::new(2);
    let cfg = load("benchmark.conf");
    for &c in &[1.0, 2.0] {
        for &eta in &[0.0, 1.0] {
            for &kappa in &[0.0, 0.3] {
                let started = Instant::now();
                let params = LqParams { c, eta, kappa };
                let mut cfg_k = cfg.clone();
                cfg_k.cost_c = c;
                cfg_k.lq_eta = eta;
                cfg_k.lq_kappa = kappa;
                let grid = Grid::new(cfg.grid_t, cfg.grid_r, 10, 2000);
                let (instance, _) = pipeline::build_instance(&cfg_k, &grid);
                let mean0 = instance.m0.mbar0;
                let price = |t: f64| explicit_price(&params, mean0, &instance.supply, t);

                let coeffs = solve_ansatz_odes(&params, &price, grid.horizon, 2000).unwrap();
                let xs: Vec<f64> = (0..=20).map(|k| -1.0 + 0.1 * k as f64).collect();
                let res = hj_residual(&params, &coeffs, &price, &xs);
                gate.check(
                    res <= 1e-6,
                    &format!("HJ residual {res:.2e} ≤ 1e-6 at (c,eta,kappa)=({c},{eta},{kappa})"),
                );

                // Mass conservation of the characteristics density, trapezoid
                // per level on a fine space grid.
                let pt = pipeline::PriceTable::build(&params, mean0, &instance);
                let price_tab = move |t: f64| pt.at(t);
                let drift = lq_drift(&params, &coeffs, &price_tab);
                let m0_fn = priceform_core::analytic::density_interp(&instance.m0, &grid);
                let mut mass_dev = 0.0f64;
                for i in 0..=grid.n_t {
                    let t = grid.t(i);
                    let row: Vec<f64> = (0..=grid.n_x)
                        .map(|j| transported_density_at(&drift, &m0_fn, t, grid.x(j), 40))
                        .collect();
                    let inner: f64 = row[1..grid.n_x].iter().sum();
                    let mass = grid.h_x() * (0.5 * (row[0] + row[grid.n_x]) + inner);
                    mass_dev = mass_dev.max((mass - 1.0).abs());
                }
                gate.check(
                    mass_dev <= 1e-6,
                    &format!("mass deviation {mass_dev:.2e} ≤ 1e-6 at (c,eta,kappa)=({c},{eta},{kappa})"),
                );
                let secs = started.elapsed().as_secs_f64();
                gate.check(
                    secs < 5.0,
                    &format!("runtime {secs:.1}s < 5s at (c,eta,kappa)=({c},{eta},{kappa})"),
                );
            }
        }
    }
    gate.finish();
}

#[test]
fn criterion_3_end_to_end_consistency() {
    let _guard = serial();
    let started = Instant::now();
    let mut gate = Gate::new(3);
    let cfg = load("benchmark.conf");
    let tmp = tempfile::tempdir().unwrap();

    let coarse_grid = Grid::new(cfg.grid_t, cfg.grid_r, 20, 40);
    let coarse = pipeline::run_one(&cfg, &coarse_grid, &tmp.path().join("coarse")).unwrap();
    let fine_grid = Grid::new(cfg.grid_t, cfg.grid_r, 80, 160);
    let fine = pipeline::run_one(&cfg, &fine_grid, &tmp.path().join("fine")).unwrap();

    gate.note(format!(
        "price sup error {:.4e} -> {:.4e} (exact sup {:.3})",
        coarse.price_sup_error, fine.price_sup_error, coarse.price_sup_exact
    ));
    gate.note(format!(
        "u sup error {:.4e} -> {:.4e} (exact sup {:.3})",
        coarse.u_sup_error, fine.u_sup_error, coarse.u_sup_exact
    ));
    gate.check(coarse.converged, "coarse solve converged");
    gate.check(fine.converged, "fine solve converged");
    let price_bound = 0.05 * (coarse.price_sup_exact + 1.0);
    gate.check(
        coarse.price_sup_error <= price_bound,
        &format!("price error {:.4e} ≤ {:.4e}", coarse.price_sup_error, price_bound),
    );
    gate.check(
        fine.price_sup_error <= 0.7 * coarse.price_sup_error,
        &format!(
            "price error drops ≥ 30%: {:.4e} -> {:.4e}",
            coarse.price_sup_error, fine.price_sup_error
        ),
    );
    let u_bound = 0.05 * (coarse.u_sup_exact + 1.0);
    gate.check(
        coarse.u_sup_error <= u_bound,
        &format!("u error {:.4e} ≤ {:.4e}", coarse.u_sup_error, u_bound),
    );
    gate.check(
        fine.u_sup_error <= 0.7 * coarse.u_sup_error,
        &format!(
            "u error drops ≥ 30%: {:.4e} -> {:.4e}",
            coarse.u_sup_error, fine.u_sup_error
        ),
    );
    let secs = started.elapsed().as_secs_f64();
    gate.check(secs < 300.0, &format!("runtime {secs:.1}s < 5min"));
    gate.finish();
}

#[test]
fn criterion_4_calibration_sweep() {
    let _guard = serial();
    let started = Instant::now();
    let mut gate = Gate::new(4);
    let cfg = load("benchmark.conf");
    let grid = Grid::new(cfg.grid_t, cfg.grid_r, cfg.grid_n_t, cfg.grid_n_x);
    let target_analytic = 0.106525;
    let target_discrete = 0.103765;

    let mut best: Option<(f64, f64, f64, f64)> = None;
    let mut hit: Option<(f64, f64, f64)> = None;
    for &c in &[0.5, 1.0, 2.0] {
        for &eta in &[0.5, 1.0, 2.0] {
            for &kappa in &[-0.25, 0.0, 0.25] {
                let mut cfg_k = cfg.clone();
                cfg_k.cost_c = c;
                cfg_k.lq_eta = eta;
                cfg_k.lq_kappa = kappa;
                let Some((value, _)) = pipeline::analytic_objective_for(&cfg_k, &grid) else {
                    continue;
                };
                let gap = (value - target_analytic).abs();
                if best.map_or(true, |(g, ..)| gap < g) {
                    best = Some((gap, c, eta, kappa));
                }
                if gap <= 0.002 && hit.is_none() {
                    hit = Some((c, eta, kappa));
                }
            }
        }
    }
    let (best_gap, bc, be, bk) = best.expect("sweep produced values");
    gate.note(format!(
        "closest lattice point (c,eta,kappa)=({bc},{be},{bk}) with |analytic objective - {target_analytic}| = {best_gap:.4}"
    ));

    match hit {
        Some((c, eta, kappa)) => {
            let mut cfg_k = cfg.clone();
            cfg_k.cost_c = c;
            cfg_k.lq_eta = eta;
            cfg_k.lq_kappa = kappa;
            let (instance, _) = pipeline::build_instance(&cfg_k, &grid);
            let objective = assemble_objective(&instance, &grid);
            let constraints = assemble_constraints(&instance, &grid).unwrap();
            let report =
                solve(&objective, &constraints, &pipeline::solver_config(&cfg_k), None).unwrap();
            let gap = (report.objective_value - target_discrete).abs();
            gate.note(format!(
                "matched at (c,eta,kappa)=({c},{eta},{kappa}); discrete objective {:.6}",
                report.objective_value
            ));
            gate.check(
                gap <= 0.004,
                &format!("discrete optimum within 0.004 of {target_discrete} (gap {gap:.4})"),
            );
        }
        None => {
            gate.note(format!(
                "no lattice point reaches the reference analytic objective {target_analytic} ± 0.002; \
                 soft target not met, acceptance transfers to criterion 3 per the sweep contract"
            ));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    gate.check(secs < 1800.0, &format!("runtime {secs:.1}s < 30min"));
    gate.finish();
}

#[test]
fn criterion_5_solver_soundness() {
    let _guard = serial();
    let started = Instant::now();
    let mut gate = Gate::new(5);
    let mut state = 0x5eed5eed5eed5eedu64;
    for case in 0..10 {
        let amp = 0.05 + 0.15 * lcg(&mut state);
        let freq = 1.0 + 2.0 * lcg(&mut state);
        let phase = lcg(&mut state) * core::f64::consts::PI;
        let alpha = 2.0 * lcg(&mut state);
        let q0 = 0.05 * (2.0 * lcg(&mut state) - 1.0);
        let c = 0.5 + 1.5 * lcg(&mut state);
        let eta = lcg(&mut state);
        let kappa = 0.3 * (2.0 * lcg(&mut state) - 1.0);

        let model = SupplyModel {
            qbar: Box::new(move |t| amp * (freq * core::f64::consts::PI * t + phase).sin()),
            alpha,
            q0,
            horizon: 1.0,
        };
        let supply = integrate_supply(&model, 5000).unwrap();
        assert!(supply.q_l1 <= 0.3, "case {case}: q_l1 {} too large", supply.q_l1);

        let grid = Grid::new(1.0, 1.0, 5, 8);
        let m0 = InitialDensity::bump(&grid, 0.5);
        let params = LqParams { c, eta, kappa };
        let instance = ProblemInstance::linear_quadratic(params, supply, m0, 1.0, 1.0);
        let objective = assemble_objective(&instance, &grid);
        let constraints = assemble_constraints(&instance, &grid).unwrap();
        let config = SolverConfig::default();

        let first = solve(&objective, &constraints, &config, None).unwrap();
        let alt_start = feasible_start(&constraints, &instance.supply, 0.6).unwrap();
        let second = solve(&objective, &constraints, &config, Some(&alt_start)).unwrap();
        let dist = first.phi_star.sup_distance(&second.phi_star);
        gate.check(
            dist <= 1e-5,
            &format!("case {case}: double-solve agreement {dist:.2e} ≤ 1e-5"),
        );

        // Gradient versus central differences at 20 random interior nodes
        // of a strictly feasible field with widths well above zero (the
        // probe offsets must not cross the degenerate band).
        let mut phi = priceform_core::grid::PotentialField::zeros(grid.clone());
        for i in 0..=grid.n_t {
            for j in 0..=grid.n_x {
                let sx = j as f64 / grid.n_x as f64;
                let st = i as f64 / grid.n_t as f64;
                let pi = core::f64::consts::PI;
                phi.set(i, j, sx + 0.05 * st * (pi * sx).sin().powi(2) * sx * (1.0 - sx));
            }
        }
        let grad = objective.gradient(&phi, 0.0);
        let value = |p: &priceform_core::grid::PotentialField| match objective.value(p) {
            ObjectiveValue::Finite(v) => v,
            ObjectiveValue::Infeasible { .. } => panic!("infeasible probe"),
        };
        for _ in 0..20 {
            let i = 1 + (lcg(&mut state) * (grid.n_t - 1) as f64) as usize;
            let j = 1 + (lcg(&mut state) * (grid.n_x - 1) as f64) as usize;
            let h = 1e-6;
            let base = phi.get(i, j);
            let mut p = phi.clone();
            p.set(i, j, base + h);
            let up = value(&p);
            p.set(i, j, base - h);
            let down = value(&p);
            let fd = (up - down) / (2.0 * h);
            let g = grad[i * (grid.n_x + 1) + j];
            gate.check(
                (fd - g).abs() <= 1e-4 * (1.0 + g.abs()),
                &format!("case {case}: gradient at ({i},{j}): fd {fd:.6e} vs {g:.6e}"),
            );
        }
    }
    let secs = started.elapsed().as_secs_f64();
    gate.check(secs < 120.0, &format!("runtime {secs:.1}s < 2min"));
    gate.finish();
}

#[test]
fn criterion_6_constraint_fidelity() {
    let _guard = serial();
    let mut gate = Gate::new(6);
    for name in ["trivial.conf", "benchmark.conf"] {
        let cfg = load(name);
        let grid = Grid::new(cfg.grid_t, cfg.grid_r, cfg.grid_n_t, cfg.grid_n_x);
        let (instance, _) = pipeline::build_instance(&cfg, &grid);
        let objective = assemble_objective(&instance, &grid);
        let constraints = assemble_constraints(&instance, &grid).unwrap();
        let report = solve(&objective, &constraints, &pipeline::solver_config(&cfg), None).unwrap();
        let phi = &report.phi_star;

        let balance = constraints.max_residual(phi);
        gate.check(balance <= 1e-9, &format!("{name}: balance residual {balance:.2e} ≤ 1e-9"));

        let mut boundary_dev = 0.0f64;
        for label in [RowLabel::Initial, RowLabel::LeftBoundary, RowLabel::RightBoundary] {
            for row in constraints.rows_with_label(label) {
                boundary_dev = boundary_dev.max(constraints.row_residual(row, phi).abs());
            }
        }
        gate.check(boundary_dev == 0.0, &format!("{name}: boundary rows exact (dev {boundary_dev:e})"));

        let min_dx = constraints.min_dx(phi);
        gate.check(min_dx >= -1e-9, &format!("{name}: min D_x phi {min_dx:.2e} ≥ -1e-9"));

        let mut mass_dev = 0.0f64;
        for i in 0..=grid.n_t {
            // Telescoping: the level mass is the difference of the pinned
            // boundary values, so it must be exactly one.
            let mass = phi.get(i, grid.n_x) - phi.get(i, 0);
            mass_dev = mass_dev.max((mass - 1.0).abs());
        }
        gate.check(mass_dev == 0.0, &format!("{name}: per-level mass exact (dev {mass_dev:e})"));
    }
    gate.finish();
}

#[test]
fn criterion_7_determinism() {
    let _guard = serial();
    let mut gate = Gate::new(7);
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_priceform");
    let cfg = repo_config("benchmark.conf");
    let mut bodies: Vec<std::collections::BTreeMap<String, Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let out = tmp.path().join(format!("run{run}"));
        let status = std::process::Command::new(bin)
            .arg("run")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .expect("binary runs");
        gate.check(status.code() == Some(0), &format!("run {run} exits 0 (got {:?})", status.code()));
        let mut map = std::collections::BTreeMap::new();
        collect_csv(&out, &out, &mut map);
        bodies.push(map);
    }
    gate.check(!bodies[0].is_empty(), "artifacts were written");
    gate.check(
        bodies[0].keys().eq(bodies[1].keys()),
        "both runs produce the same file set",
    );
    for (name, body) in &bodies[0] {
        if let Some(other) = bodies[1].get(name) {
            gate.check(body == other, &format!("{name} byte-identical between runs"));
        }
    }
    gate.finish();
}

fn collect_csv(root: &Path, dir: &Path, map: &mut std::collections::BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).expect("readable artifact dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect_csv(root, &path, map);
        } else if path.extension().is_some_and(|e| e == "csv") {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            map.insert(rel, std::fs::read(&path).expect("readable csv"));
        }
    }
}
