//! Batch front end. All logic lives in the library; this binary parses
//! arguments, dispatches, and maps errors to exit codes (0 success,
//! 2 configuration error, 3 numerical failure).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fiberforge::commands::{cmd_optimize, cmd_report, cmd_slice, cmd_verify, exit_code};
use fiberforge::config::RunConfig;

#[derive(Parser)]
#[command(name = "fiberforge", version, about = "Co-optimize topology, curved layers, and fiber orientations for multi-axis printing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run co-optimization (or the sequential baseline) from a config file.
    Optimize {
        /// Path to the run config JSON; omit to use built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override any config leaf by dotted path, e.g. optimizer.seed=3.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// Run the two-phase sequential baseline instead of co-optimization.
        #[arg(long)]
        sequential: bool,
        /// Design objective: strength, stiffness, or lightweight.
        #[arg(long)]
        objective: Option<String>,
        /// Motion mode: 5axis, 3axis, or 2.5axis.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Extract curved layers from a completed run.
    Slice {
        /// Run directory produced by optimize.
        #[arg(long)]
        run: PathBuf,
        /// Marching cubes cells per axis.
        #[arg(long)]
        resolution: Option<usize>,
        /// Isovalue spacing override.
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Re-run the FEA at a scaled load and export the failure-index map.
    Verify {
        #[arg(long)]
        run: PathBuf,
        /// Load multiplier; defaults to the run's recorded minimum safety factor.
        #[arg(long)]
        load_scale: Option<f64>,
        /// Per-axis grid refinement over the optimization grid.
        #[arg(long, default_value_t = 1.0)]
        refine: f64,
    },
    /// Emit comparison tables across completed runs.
    Report {
        /// Run directories to compare.
        runs: Vec<PathBuf>,
        /// Output directory for the comparison CSVs.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn load_config(
    config: Option<PathBuf>,
    mut set: Vec<String>,
    sequential: bool,
    objective: Option<String>,
    mode: Option<String>,
) -> fiberforge::Result<RunConfig> {
    if sequential {
        set.push("optimizer.sequential=true".into());
    }
    if let Some(obj) = objective {
        set.push(format!("objective=\"{obj}\""));
    }
    if let Some(mode) = mode {
        set.push(format!("problem.mode=\"{mode}\""));
    }
    let text = match config {
        Some(path) => std::fs::read_to_string(path)?,
        None => "{}".to_string(),
    };
    let cfg = RunConfig::from_json(&text, &set)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> fiberforge::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Optimize {
            config,
            set,
            sequential,
            objective,
            mode,
        } => {
            let cfg = load_config(config, set, sequential, objective, mode)?;
            let outcome = cmd_optimize(&cfg)?;
            let last = outcome.result.records.last();
            println!(
                "run complete: {} iterations, gamma_min {:.4}, capacity {:.4} kN -> {}",
                outcome.result.records.len(),
                outcome.result.gamma_min,
                last.map(|r| r.load_capacity).unwrap_or(f64::NAN),
                outcome.run_dir.display()
            );
        }
        Command::Slice {
            run,
            resolution,
            spacing,
        } => {
            let outcome = cmd_slice(&run, resolution, spacing)?;
            println!(
                "sliced {} layers ({} vertices), thickness violations {:.3}%, curvature violations {:.3}% -> {}",
                outcome.layers.len(),
                outcome.statistics.sample_count,
                100.0 * outcome.statistics.thickness_violation_fraction(),
                100.0 * outcome.statistics.k_max_violation_fraction(),
                outcome.layer_dir.display()
            );
        }
        Command::Verify {
            run,
            load_scale,
            refine,
        } => {
            let outcome = cmd_verify(&run, load_scale, refine)?;
            println!(
                "verified on {}x{}x{} at load scale {:.4}: max solid index {:.4}, yielded volume {:.4}%",
                outcome.grid_dims[0],
                outcome.grid_dims[1],
                outcome.grid_dims[2],
                outcome.load_scale,
                outcome.report.max_solid_index,
                100.0 * outcome.report.yielded_fraction
            );
        }
        Command::Report { runs, out } => {
            let outcome = cmd_report(&runs, &out)?;
            for row in &outcome.rows {
                println!(
                    "{}: {} iterations, gamma_min {:.4}, capacity {:.4} kN",
                    row.run, row.iterations, row.final_gamma_min, row.final_capacity_kn
                );
            }
            println!("report -> {}", outcome.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
