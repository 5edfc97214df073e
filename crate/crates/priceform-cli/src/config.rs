//! Flat dotted-key configuration format.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Keys are dotted paths (`grid.n_t`, `supply.alpha`). Unknown keys
//! are rejected so typos surface during validation instead of silently
//! falling back to defaults.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub key: String,
    pub message: String,
    pub warning: bool,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = if self.warning { "warning" } else { "error" };
        write!(f, "{kind}: {}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QbarKind {
    /// `amplitude * sin(frequency * pi * t)`.
    Sine,
    /// Identically zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub enum M0Kind {
    Bump,
    Uniform,
}

/// Fully resolved run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cost_c: f64,
    pub lq_eta: f64,
    pub lq_kappa: f64,
    pub supply_alpha: f64,
    pub supply_q0: f64,
    pub qbar_kind: QbarKind,
    pub qbar_amplitude: f64,
    pub qbar_frequency: f64,
    pub grid_t: f64,
    pub grid_r: f64,
    pub grid_n_t: usize,
    pub grid_n_x: usize,
    pub m0_kind: M0Kind,
    pub m0_support_radius: f64,
    pub solver_tol_kkt: f64,
    pub solver_tol_feas: f64,
    pub solver_max_outer: usize,
    pub solver_max_inner: usize,
    pub solver_barrier_mu0: f64,
    pub solver_barrier_shrink: f64,
    pub solver_barrier_mu_final: f64,
    pub output_directory: String,
    pub output_formats: String,
    /// Raw key/value pairs as parsed, echoed into the run manifest.
    pub echo: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cost_c: 1.0,
            lq_eta: 1.0,
            lq_kappa: 0.0,
            supply_alpha: 4.0,
            supply_q0: -0.5,
            qbar_kind: QbarKind::Sine,
            qbar_amplitude: 5.0,
            qbar_frequency: 3.0,
            grid_t: 1.0,
            grid_r: 1.0,
            grid_n_t: 20,
            grid_n_x: 40,
            m0_kind: M0Kind::Bump,
            m0_support_radius: 0.5,
            solver_tol_kkt: 1e-7,
            solver_tol_feas: 1e-9,
            solver_max_outer: 40,
            solver_max_inner: 80,
            solver_barrier_mu0: 1e-2,
            solver_barrier_shrink: 0.2,
            solver_barrier_mu_final: 1e-12,
            output_directory: "out".to_string(),
            output_formats: "csv,json".to_string(),
            echo: BTreeMap::new(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "cost.c",
    "lq.eta",
    "lq.kappa",
    "supply.alpha",
    "supply.q0",
    "supply.qbar_kind",
    "supply.qbar_amplitude",
    "supply.qbar_frequency",
    "grid.T",
    "grid.R",
    "grid.n_t",
    "grid.n_x",
    "m0.kind",
    "m0.support_radius",
    "solver.tol_kkt",
    "solver.tol_feas",
    "solver.max_outer",
    "solver.max_inner",
    "solver.barrier_mu0",
    "solver.barrier_shrink",
    "solver.barrier_mu_final",
    "output.directory",
    "output.formats",
];

/// Parses the text format into raw key/value pairs. Syntax problems are
/// reported as diagnostics keyed by line number.
pub fn parse_pairs(text: &str) -> (BTreeMap<String, String>, Vec<Diagnostic>) {
    let mut pairs = BTreeMap::new();
    let mut diags = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            diags.push(Diagnostic {
                key: format!("line {}", lineno + 1),
                message: format!("expected `key = value`, found {line:?}"),
                warning: false,
            });
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            diags.push(Diagnostic {
                key: key.clone(),
                message: "unknown configuration key".to_string(),
                warning: false,
            });
            continue;
        }
        if pairs.insert(key.clone(), value).is_some() {
            diags.push(Diagnostic {
                key,
                message: "duplicate key".to_string(),
                warning: false,
            });
        }
    }
    (pairs, diags)
}

fn take_f64(
    pairs: &BTreeMap<String, String>,
    key: &str,
    slot: &mut f64,
    diags: &mut Vec<Diagnostic>,
) {
    if let Some(v) = pairs.get(key) {
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => *slot = x,
            _ => diags.push(Diagnostic {
                key: key.to_string(),
                message: format!("expected a finite number, found {v:?}"),
                warning: false,
            }),
        }
    }
}

fn take_usize(
    pairs: &BTreeMap<String, String>,
    key: &str,
    slot: &mut usize,
    diags: &mut Vec<Diagnostic>,
) {
    if let Some(v) = pairs.get(key) {
        match v.parse::<usize>() {
            Ok(x) => *slot = x,
            _ => diags.push(Diagnostic {
                key: key.to_string(),
                message: format!("expected a nonnegative integer, found {v:?}"),
                warning: false,
            }),
        }
    }
}

/// Resolves raw pairs into a configuration and validates every precondition.
/// Returns the configuration alongside all diagnostics; the caller decides
/// whether warnings alone permit a run.
pub fn resolve(pairs: BTreeMap<String, String>) -> (RunConfig, Vec<Diagnostic>) {
    let mut cfg = RunConfig::default();
    let mut diags = Vec::new();

    take_f64(&pairs, "cost.c", &mut cfg.cost_c, &mut diags);
    take_f64(&pairs, "lq.eta", &mut cfg.lq_eta, &mut diags);
    take_f64(&pairs, "lq.kappa", &mut cfg.lq_kappa, &mut diags);
    take_f64(&pairs, "supply.alpha", &mut cfg.supply_alpha, &mut diags);
    take_f64(&pairs, "supply.q0", &mut cfg.supply_q0, &mut diags);
    take_f64(&pairs, "supply.qbar_amplitude", &mut cfg.qbar_amplitude, &mut diags);
    take_f64(&pairs, "supply.qbar_frequency", &mut cfg.qbar_frequency, &mut diags);
    take_f64(&pairs, "grid.T", &mut cfg.grid_t, &mut diags);
    take_f64(&pairs, "grid.R", &mut cfg.grid_r, &mut diags);
    take_usize(&pairs, "grid.n_t", &mut cfg.grid_n_t, &mut diags);
    take_usize(&pairs, "grid.n_x", &mut cfg.grid_n_x, &mut diags);
    take_f64(&pairs, "m0.support_radius", &mut cfg.m0_support_radius, &mut diags);
    take_f64(&pairs, "solver.tol_kkt", &mut cfg.solver_tol_kkt, &mut diags);
    take_f64(&pairs, "solver.tol_feas", &mut cfg.solver_tol_feas, &mut diags);
    take_usize(&pairs, "solver.max_outer", &mut cfg.solver_max_outer, &mut diags);
    take_usize(&pairs, "solver.max_inner", &mut cfg.solver_max_inner, &mut diags);
    take_f64(&pairs, "solver.barrier_mu0", &mut cfg.solver_barrier_mu0, &mut diags);
    take_f64(&pairs, "solver.barrier_shrink", &mut cfg.solver_barrier_shrink, &mut diags);
    take_f64(&pairs, "solver.barrier_mu_final", &mut cfg.solver_barrier_mu_final, &mut diags);

    if let Some(v) = pairs.get("supply.qbar_kind") {
        match v.as_str() {
            "sine" => cfg.qbar_kind = QbarKind::Sine,
            "zero" => cfg.qbar_kind = QbarKind::Zero,
            _ => diags.push(Diagnostic {
                key: "supply.qbar_kind".to_string(),
                message: format!("must be `sine` or `zero`, found {v:?}"),
                warning: false,
            }),
        }
    }
    if let Some(v) = pairs.get("m0.kind") {
        match v.as_str() {
            "bump" => cfg.m0_kind = M0Kind::Bump,
            "uniform" => cfg.m0_kind = M0Kind::Uniform,
            _ => diags.push(Diagnostic {
                key: "m0.kind".to_string(),
                message: format!("must be `bump` or `uniform`, found {v:?}"),
                warning: false,
            }),
        }
    }
    if let Some(v) = pairs.get("output.directory") {
        cfg.output_directory = v.clone();
    }
    if let Some(v) = pairs.get("output.formats") {
        cfg.output_formats = v.clone();
    }

    validate_semantics(&cfg, &mut diags);
    cfg.echo = pairs;
    (cfg, diags)
}

fn validate_semantics(cfg: &RunConfig, diags: &mut Vec<Diagnostic>) {
    let mut err = |key: &str, message: String| {
        diags.push(Diagnostic {
            key: key.to_string(),
            message,
            warning: false,
        })
    };
    if !(cfg.cost_c > 0.0) {
        err("cost.c", "must be > 0".to_string());
    }
    if cfg.lq_eta < 0.0 {
        err("lq.eta", "must be ≥ 0".to_string());
    }
    if cfg.supply_alpha < 0.0 {
        err("supply.alpha", "must be ≥ 0".to_string());
    }
    if !(cfg.grid_t > 0.0) {
        err("grid.T", "must be > 0".to_string());
    }
    if !(cfg.grid_r > 0.0) {
        err("grid.R", "must be > 0".to_string());
    }
    if cfg.grid_n_t < 2 {
        err("grid.n_t", "must be ≥ 2".to_string());
    }
    if cfg.grid_n_x < 2 {
        err("grid.n_x", "must be ≥ 2".to_string());
    }
    if !(cfg.m0_support_radius > 0.0) {
        err("m0.support_radius", "must be > 0".to_string());
    }
    if cfg.grid_r > 0.0 && cfg.m0_support_radius >= cfg.grid_r {
        err(
            "m0.support_radius",
            format!("must be < grid.R (= {})", cfg.grid_r),
        );
    }
    if !(cfg.solver_tol_kkt > 0.0) {
        err("solver.tol_kkt", "must be > 0".to_string());
    }
    if !(cfg.solver_tol_feas > 0.0) {
        err("solver.tol_feas", "must be > 0".to_string());
    }
    if cfg.solver_max_outer == 0 {
        err("solver.max_outer", "must be ≥ 1".to_string());
    }
    if cfg.solver_max_inner == 0 {
        err("solver.max_inner", "must be ≥ 1".to_string());
    }
    if !(cfg.solver_barrier_mu0 > 0.0) {
        err("solver.barrier_mu0", "must be > 0".to_string());
    }
    if !(cfg.solver_barrier_shrink > 0.0 && cfg.solver_barrier_shrink < 1.0) {
        err("solver.barrier_shrink", "must be in (0, 1)".to_string());
    }
    if !(cfg.solver_barrier_mu_final > 0.0) {
        err("solver.barrier_mu_final", "must be > 0".to_string());
    }
    for fmt in cfg.output_formats.split(',') {
        let fmt = fmt.trim();
        if !matches!(fmt, "csv" | "json") {
            err("output.formats", format!("unknown format {fmt:?}"));
        }
    }
}

/// Loads a configuration file from disk. Validation diagnostics are returned
/// even on success; the radius-policy warning (configured domain radius not
/// dominating the transported support bound) is appended by the pipeline once
/// the supply path is known.
pub fn load(path: &std::path::Path) -> Result<(RunConfig, Vec<Diagnostic>), std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    let (pairs, mut diags) = parse_pairs(&text);
    let (cfg, more) = resolve(pairs);
    diags.extend(more);
    Ok((cfg, diags))
}
