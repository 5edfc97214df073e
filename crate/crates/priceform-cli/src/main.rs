//! Command-line runner for the price-formation variational solver.

use priceform_cli::{config, pipeline};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use priceform_core::grid::Grid;

use pipeline::{EXIT_CONFIG, EXIT_INTERNAL, EXIT_NOT_CONVERGED, EXIT_OK};

#[derive(Parser)]
#[command(name = "priceform", version, about = "One-dimensional price-formation mean-field game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured instance and write the artifact directory.
    Run {
        /// Path to a key-value configuration file.
        config: PathBuf,
        /// Output directory (overrides output.directory from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a doubling refinement chain with this many extra grids.
        #[arg(long, default_value_t = 0)]
        refine: usize,
    },
    /// Check a configuration file without computing anything.
    Validate {
        /// Path to a key-value configuration file.
        config: PathBuf,
    },
    /// Print the software version.
    Version,
}

fn load_config(path: &PathBuf) -> Result<(config::RunConfig, Vec<config::Diagnostic>), i32> {
    match config::load(path) {
        Ok(pair) => Ok(pair),
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            Err(EXIT_CONFIG)
        }
    }
}

fn report_diagnostics(diags: &[config::Diagnostic]) -> bool {
    let mut fatal = false;
    for d in diags {
        eprintln!("{d}");
        fatal |= !d.warning;
    }
    fatal
}

fn cmd_run(config_path: PathBuf, out: Option<PathBuf>, refine: usize) -> i32 {
    let (cfg, diags) = match load_config(&config_path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    if report_diagnostics(&diags) {
        return EXIT_CONFIG;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_directory));

    let results = if refine == 0 {
        let grid = Grid::new(cfg.grid_t, cfg.grid_r, cfg.grid_n_t, cfg.grid_n_x);
        pipeline::run_one(&cfg, &grid, &out_dir).map(|r| vec![r])
    } else {
        pipeline::run_refinement(&cfg, refine + 1, &out_dir)
    };
    let results = match results {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INTERNAL;
        }
    };

    let mut all_converged = true;
    for r in &results {
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        println!(
            "grid {}x{}: objective {:.6e}, kkt {:.3e}, price sup error {:.3e}, converged {}",
            r.grid.n_t, r.grid.n_x, r.objective_discrete, r.kkt_residual, r.price_sup_error, r.converged
        );
        all_converged &= r.converged;
    }
    println!("artifacts written to {}", out_dir.display());
    if all_converged {
        EXIT_OK
    } else {
        eprintln!("warning: solver did not reach the requested tolerances; artifacts are flagged in report.json");
        EXIT_NOT_CONVERGED
    }
}

fn cmd_validate(config_path: PathBuf) -> i32 {
    let (cfg, mut diags) = match load_config(&config_path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    // The radius policy needs the supply path, so it is checked here rather
    // than in the pure key validation.
    if diags.iter().all(|d| d.warning) {
        let n_steps = (10 * cfg.grid_n_t).max(200);
        if let Ok(supply) = priceform_core::setup::integrate_supply(&pipeline::supply_model(&cfg), n_steps) {
            let grid = Grid::new(cfg.grid_t, cfg.grid_r, cfg.grid_n_t, cfg.grid_n_x);
            let m0 = match cfg.m0_kind {
                config::M0Kind::Bump => {
                    priceform_core::setup::InitialDensity::bump(&grid, cfg.m0_support_radius)
                }
                config::M0Kind::Uniform => {
                    priceform_core::setup::InitialDensity::uniform(&grid, cfg.m0_support_radius)
                }
            };
            let sel = priceform_core::setup::select_radius(&m0, &supply, None, Some(cfg.grid_r));
            if let Some(w) = sel.warning {
                diags.push(config::Diagnostic {
                    key: "grid.R".to_string(),
                    message: w,
                    warning: true,
                });
            }
        }
    }
    let fatal = report_diagnostics(&diags);
    if fatal {
        EXIT_CONFIG
    } else {
        println!("configuration ok ({} warnings)", diags.len());
        EXIT_OK
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, refine } => cmd_run(config, out, refine),
        Command::Validate { config } => cmd_validate(config),
        Command::Version => {
            println!("priceform {}", env!("CARGO_PKG_VERSION"));
            EXIT_OK
        }
    };
    ExitCode::from(code as u8)
}
