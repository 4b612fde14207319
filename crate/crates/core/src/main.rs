//! Command-line front end: thin argument parsing over the pipeline layer.
//!
//! Exit codes: 0 = success, 1 = numerical failure (solver breakdown),
//! 2 = invalid input (bad files, bad flags). User-facing lengths are in
//! micrometers; temperatures are in kelvin.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatstack::grid::RefineConfig;
use heatstack::pipeline::{
    cmd_grid_study, cmd_simulate, cmd_tile, AdaptiveOpts, DivisionOpts, GridMode, GridStudyConfig,
    Mode, ProbeSpec, SimulateConfig, TileConfig, TransientOpts,
};
use heatstack::solver::TimeScheme;
use heatstack::tiler::TilingConfig;
use heatstack::Error;

#[derive(Parser)]
#[command(
    name = "heatstack",
    version,
    about = "Compact thermal simulation for stacked chip assemblies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a stack's temperature field and write tables plus heatmaps.
    Simulate(SimulateArgs),
    /// Partition one layout layer into purity-bounded tiles.
    Tile(TileArgs),
    /// Compare uniform and adaptive meshes across cell budgets.
    GridStudy(GridStudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Steady,
    Transient,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    /// Backward Euler (first order, L-stable).
    Be,
    /// Crank–Nicolson (second order).
    Cn,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct SimulateArgs {
    /// Stack description file.
    #[arg(long)]
    stack: PathBuf,
    /// Power table file (constant and pulsed source definitions).
    #[arg(long)]
    power: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "steady")]
    mode: ModeArg,
    /// Mesh: `uniform:NX,NY` or `adaptive`.
    #[arg(long, default_value = "uniform:32,30")]
    grid: String,
    /// Gradient-to-gridsize scale for adaptive meshes.
    #[arg(long, default_value_t = 1.0)]
    refine_alpha: f64,
    /// Solve-refine passes for adaptive meshes.
    #[arg(long, default_value_t = 1)]
    refine_passes: usize,
    /// Split layers until vertical-resistance variance settles.
    #[arg(long, value_enum, default_value = "off")]
    layer_division: OnOff,
    /// Relative variance target for layer division.
    #[arg(long, default_value_t = 0.05)]
    division_threshold: f64,
    #[arg(long, default_value_t = 8)]
    division_max_iter: u32,
    /// Transient step size in seconds.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Transient end time in seconds.
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, value_enum, default_value = "be")]
    scheme: SchemeArg,
    /// Clamp evaluated source power at 0 W.
    #[arg(long)]
    clamp_power_floor: bool,
    /// Probe `name:layer:x_um,y_um` (repeatable; transient runs default
    /// to the center of the topmost source layer).
    #[arg(long)]
    probe: Vec<String>,
    /// Worker threads (default: THERM_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TileArgs {
    /// Layout file: `.json` polygon document or stream-format subset.
    #[arg(long)]
    layout: PathBuf,
    /// Layer number to extract.
    #[arg(long, default_value_t = 1)]
    layer: i32,
    /// Maximum quadtree depth.
    #[arg(long, default_value_t = 8)]
    imax: u32,
    /// Coverage ratio at or below which a tile counts as pure fill.
    #[arg(long, default_value_t = 0.05)]
    rho_lo: f64,
    /// Coverage ratio at or above which a tile counts as pure feature.
    #[arg(long, default_value_t = 0.95)]
    rho_hi: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GridStudyArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    power: Option<PathBuf>,
    /// Comma-separated cell budgets, e.g. `960,2000,4000`.
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<usize>,
    /// Reference grid fineness multiplier over the largest budget.
    #[arg(long, default_value_t = 16)]
    reference_factor: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_grid(s: &str, alpha: f64, passes: usize) -> Result<GridMode, Error> {
    if s == "adaptive" {
        let refine = RefineConfig {
            alpha,
            ..RefineConfig::default()
        };
        refine.validate()?;
        let opts = AdaptiveOpts {
            refine,
            passes: passes.max(1),
            ..AdaptiveOpts::default()
        };
        return Ok(GridMode::Adaptive(opts));
    }
    let spec = s
        .strip_prefix("uniform:")
        .ok_or_else(|| Error::Invalid(format!("--grid must be 'uniform:NX,NY' or 'adaptive', got '{s}'")))?;
    let (nx, ny) = spec
        .split_once(',')
        .ok_or_else(|| Error::Invalid(format!("--grid uniform wants 'NX,NY', got '{spec}'")))?;
    let parse = |v: &str| -> Result<usize, Error> {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Invalid(format!("grid dimension '{v}' must be a positive integer")))
    };
    Ok(GridMode::Uniform(parse(nx)?, parse(ny)?))
}

fn parse_probe(s: &str) -> Result<ProbeSpec, Error> {
    let bad = || {
        Error::Invalid(format!(
            "--probe wants 'name:layer:x_um,y_um', got '{s}'"
        ))
    };
    let mut parts = s.splitn(3, ':');
    let name = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
    let layer = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
    let coords = parts.next().ok_or_else(bad)?;
    let (x, y) = coords.split_once(',').ok_or_else(bad)?;
    let um_to_nm = |v: &str| -> Result<i64, Error> {
        let um: f64 = v.trim().parse().map_err(|_| bad())?;
        if !um.is_finite() {
            return Err(bad());
        }
        Ok((um * 1000.0).round() as i64)
    };
    Ok(ProbeSpec {
        name: name.to_string(),
        layer: layer.to_string(),
        x_nm: um_to_nm(x)?,
        y_nm: um_to_nm(y)?,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Simulate(a) => {
            let grid = parse_grid(&a.grid, a.refine_alpha, a.refine_passes)?;
            let mode = match a.mode {
                ModeArg::Steady => Mode::Steady,
                ModeArg::Transient => Mode::Transient,
            };
            let division = match a.layer_division {
                OnOff::On => Some(DivisionOpts {
                    threshold: a.division_threshold,
                    max_iter: a.division_max_iter,
                }),
                OnOff::Off => None,
            };
            let transient = Some(TransientOpts {
                dt: a.dt,
                t_end: a.t_end,
                scheme: match a.scheme {
                    SchemeArg::Be => TimeScheme::BackwardEuler,
                    SchemeArg::Cn => TimeScheme::CrankNicolson,
                },
                clamp_power_floor: a.clamp_power_floor,
            });
            let probes = a
                .probe
                .iter()
                .map(|p| parse_probe(p))
                .collect::<Result<Vec<_>, _>>()?;
            let outcome = cmd_simulate(&SimulateConfig {
                stack_path: a.stack,
                power_path: a.power,
                mode,
                grid,
                division,
                transient,
                probes,
                workers: a.workers,
                out_dir: a.out,
            })?;
            println!(
                "cells: {}  peak: {:.3} K at ({}, {}) um on layer {}",
                outcome.n_cells,
                outcome.max_temperature_k,
                outcome.hotspot_x_um,
                outcome.hotspot_y_um,
                outcome.hotspot_layer
            );
            println!(
                "assembly: {:.3} s  solve: {:.3} s  files: {}",
                outcome.assembly_s,
                outcome.solve_s,
                outcome.files.len()
            );
            Ok(())
        }
        Cmd::Tile(a) => {
            let outcome = cmd_tile(&TileConfig {
                layout_path: a.layout,
                layer: a.layer,
                tiling: TilingConfig::new(a.imax, a.rho_lo, a.rho_hi)?,
                out_dir: a.out,
            })?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("tiles: {}", outcome.n_tiles);
            Ok(())
        }
        Cmd::GridStudy(a) => {
            let rows = cmd_grid_study(&GridStudyConfig {
                stack_path: a.stack,
                power_path: a.power,
                budgets: a.budgets,
                reference_factor: a.reference_factor,
                adaptive: AdaptiveOpts::default(),
                workers: a.workers,
                out_dir: a.out,
            })?;
            println!("budget  uniform_cells  uniform_rmse_k  adaptive_cells  adaptive_rmse_k");
            for r in rows {
                println!(
                    "{:>6}  {:>13}  {:>14.6}  {:>14}  {:>15.6}",
                    r.budget, r.uniform_cells, r.uniform_rmse_k, r.adaptive_cells, r.adaptive_rmse_k
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
