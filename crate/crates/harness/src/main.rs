//! `stride` command line: run scenarios, sweep disturbances, render plots.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use stride_core::sim::PlantKind;
use stride_harness::{
    disturbance_sweep, emit_plots, load_scenario, run_scenario, write_sweep_artifacts, SweepSpec,
};

#[derive(Parser)]
#[command(
    name = "stride",
    about = "Bipedal locomotion engine: orientation-aware convex MPC with online footstep placement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named scenario (or a config file path) and write its artifacts.
    Run {
        /// Built-in scenario name (flat_walk_0.4, disturb_fx-50_ty20,
        /// wave_field, fullbody_stand) or a TOML config path.
        scenario: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the plant model.
        #[arg(long, value_parser = parse_plant)]
        plant: Option<PlantKind>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a disturbance-resistance sweep described by a grid file.
    Sweep {
        /// TOML sweep description (base scenario + F_x and tau_y axes).
        grid_file: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Worker threads for independent cells.
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_plant)]
        plant: Option<PlantKind>,
    },
    /// Re-render SVG plots from an existing trajectory CSV.
    Plot {
        log: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn parse_plant(s: &str) -> Result<PlantKind, String> {
    match s {
        "srbm" => Ok(PlantKind::Srbm),
        "fullbody" => Ok(PlantKind::Fullbody),
        other => Err(format!("unknown plant '{other}' (expected srbm|fullbody)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { scenario, out_dir, plant, seed } => {
            let cfg = load_scenario(&scenario)?;
            let artifacts = run_scenario(&cfg, &out_dir, plant, seed)?;
            let s = &artifacts.summary;
            println!(
                "{}: survived={} mean_vx={:.3} m/s  min_height={:.3} m  max_|pitch|={:.3} rad  touchdowns={}",
                cfg.name, s.survived, s.mean_velocity_x, s.min_torso_height, s.max_abs_pitch, s.touchdowns
            );
            if let Some(reason) = &s.failure {
                println!("failure: {reason}");
            }
            println!(
                "solve time: mean {:.1} ms, max {:.1} ms over {} fallback ticks",
                s.mean_solve_time * 1e3,
                s.max_solve_time * 1e3,
                s.fallback_ticks
            );
            println!("artifacts in {}", artifacts.out_dir.display());
            Ok(())
        }
        Command::Sweep { grid_file, out_dir, parallelism, seed, plant } => {
            let text = std::fs::read_to_string(&grid_file)?;
            let spec: SweepSpec = toml::from_str(&text)?;
            let mut base = load_scenario(&spec.base)?;
            if let Some(s) = seed {
                base.seed = s;
            }
            if let Some(p) = plant {
                base.plant = p;
            }
            let grid = disturbance_sweep(&spec, &base, parallelism)?;
            write_sweep_artifacts(&grid, &out_dir)?;
            let survived = grid
                .outcomes
                .iter()
                .flatten()
                .filter(|o| matches!(o, stride_harness::CellOutcome::Survived))
                .count();
            println!(
                "sweep complete: {}/{} cells survived; artifacts in {}",
                survived,
                grid.fx_values.len() * grid.ty_values.len(),
                out_dir.display()
            );
            if !grid.frontier_violations.is_empty() {
                println!(
                    "warning: {} non-monotone frontier pairs (see frontier_violations.txt)",
                    grid.frontier_violations.len()
                );
            }
            Ok(())
        }
        Command::Plot { log, out_dir } => {
            let written = emit_plots(&log, &out_dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}
