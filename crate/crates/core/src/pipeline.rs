//! End-to-end orchestration behind the command-line interface: load and
//! validate inputs, run the requested analysis, and write the output
//! artifacts (CSV tables, summary text files, heatmap images).
//!
//! Everything here is deterministic for fixed inputs and worker count:
//! files are emitted with fixed numeric formatting, collections iterate in
//! canonical order, and the linear solver always runs sequentially.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{bounding_window, build_spatial_index, merge_shapes, Rect};
use crate::grid::{
    build_uniform_grid, refine_loop, RefineConfig, ThermalGrid,
};
use crate::layout::{parse_gdsii_subset, parse_polygon_json, LayoutLayer, ParseWarnings};
use crate::network::assemble;
use crate::oracle::rmse_between_layers;
use crate::render::{write_layer_heatmap, write_rho_map, RasterOptions};
use crate::solver::{
    run_transient, solve_steady, Probe, PowerDrive, PowerSignal, TemperatureField, TimeScheme,
    TransientConfig, transient_to_csv,
};
use crate::stack::{adaptive_divide, validate_stack, ValidatedStack};
use crate::stackfile::parse_stack_text;
use crate::tiler::{generate_tiles, tiles_to_csv, Tile, TilingConfig};
use crate::units::format_um;

// ---------------------------------------------------------------------------
// Worker-count plumbing
// ---------------------------------------------------------------------------

/// Environment variable consulted when no explicit worker count is given.
pub const WORKERS_ENV: &str = "THERM_WORKERS";

/// Explicit flag value, else the environment default, else `None`
/// (= let the thread pool pick).
pub fn resolve_workers(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var(WORKERS_ENV).ok()?.parse().ok())
}

/// Run `f` inside a dedicated pool of `workers` threads (shared global
/// pool when `None`). Only assembly-side parallelism is affected; the
/// linear solver is sequential by design, so results do not depend on
/// this setting.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Invalid("worker count must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Invalid(format!("cannot build {n}-thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

// ---------------------------------------------------------------------------
// Power tables
// ---------------------------------------------------------------------------

/// Parse a power table. One line per source id:
///
/// ```text
/// # comments and blank lines are skipped
/// 0 constant 25.0
/// 1 signal p0=50 t0=0.5 tau2=0.1 omega=31.41592653589793
/// ```
///
/// Ids must be dense from 0; every id the stack references must be present.
pub fn parse_power_table(text: &str) -> Result<Vec<PowerDrive>> {
    let mut by_id: BTreeMap<usize, PowerDrive> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ctx = |msg: String| Error::Parse(format!("power table line {line_no}: {msg}"));
        let mut it = line.split_whitespace();
        let id: usize = it
            .next()
            .unwrap()
            .parse()
            .map_err(|_| ctx("expected a source id (non-negative integer)".into()))?;
        if by_id.contains_key(&id) {
            return Err(ctx(format!("duplicate definition of source {id}")));
        }
        let kind = it.next().ok_or_else(|| ctx("missing drive kind".into()))?;
        let drive = match kind {
            "constant" => {
                let w: f64 = it
                    .next()
                    .ok_or_else(|| ctx("constant drive needs a wattage".into()))?
                    .parse()
                    .map_err(|_| ctx("invalid wattage".into()))?;
                if !(w.is_finite() && w >= 0.0) {
                    return Err(ctx(format!("wattage must be non-negative, got {w}")));
                }
                PowerDrive::Constant(w)
            }
            "signal" => {
                let mut fields: BTreeMap<&str, f64> = BTreeMap::new();
                for tok in it.by_ref() {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| ctx(format!("expected key=value, got '{tok}'")))?;
                    let v: f64 = v.parse().map_err(|_| ctx(format!("invalid number '{v}'")))?;
                    if fields.insert(k, v).is_some() {
                        return Err(ctx(format!("duplicate field '{k}'")));
                    }
                }
                let take = |k: &str| -> Result<f64> {
                    fields
                        .get(k)
                        .copied()
                        .ok_or_else(|| ctx(format!("signal drive missing '{k}='")))
                };
                let sig = PowerSignal {
                    p0: take("p0")?,
                    t0: take("t0")?,
                    tau2: take("tau2")?,
                    omega: take("omega")?,
                };
                if !(sig.p0 >= 0.0 && sig.tau2 > 0.0) {
                    return Err(ctx(format!(
                        "signal needs p0 ≥ 0 and tau2 > 0, got p0={} tau2={}",
                        sig.p0, sig.tau2
                    )));
                }
                for k in fields.keys() {
                    if !["p0", "t0", "tau2", "omega"].contains(k) {
                        return Err(ctx(format!("unknown signal field '{k}'")));
                    }
                }
                PowerDrive::Signal(sig)
            }
            other => return Err(ctx(format!("unknown drive kind '{other}'"))),
        };
        if let Some(extra) = it.next() {
            return Err(ctx(format!("unexpected trailing token '{extra}'")));
        }
        by_id.insert(id, drive);
    }
    let n = by_id.len();
    let mut out = Vec::with_capacity(n);
    for id in 0..n {
        out.push(*by_id.get(&id).ok_or_else(|| {
            Error::Parse(format!(
                "power table defines {n} sources but id {id} is missing (ids must be dense from 0)"
            ))
        })?);
    }
    Ok(out)
}

fn drive_values_at(drives: &[PowerDrive], t: f64) -> Vec<f64> {
    drives.iter().map(|d| d.at(t, false)).collect()
}

// ---------------------------------------------------------------------------
// Shared input loading
// ---------------------------------------------------------------------------

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

/// Load a stack description file and validate it.
pub fn load_stack(path: &Path) -> Result<ValidatedStack> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let desc = parse_stack_text(&text, base)?;
    validate_stack(desc)
}

/// Load a layout file (stream subset or JSON, by extension) and pull one
/// layer out of it.
pub fn load_layout(path: &Path, layer: i32) -> Result<(LayoutLayer, ParseWarnings)> {
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let (parsed, warnings) = parse_polygon_json(&read_text(path)?)?;
        if parsed.layer_number != layer {
            return Err(Error::Invalid(format!(
                "{} describes layer {}, but layer {layer} was requested",
                path.display(),
                parsed.layer_number
            )));
        }
        Ok((parsed, warnings))
    } else {
        parse_gdsii_subset(&read_bytes(path)?, layer)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Steady,
    Transient,
}

/// How the in-plane mesh is produced.
#[derive(Clone, Debug)]
pub enum GridMode {
    Uniform(usize, usize),
    Adaptive(AdaptiveOpts),
}

#[derive(Clone, Debug)]
pub struct AdaptiveOpts {
    /// Coarse bootstrap grid solved to estimate gradients.
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub refine: RefineConfig,
    pub passes: usize,
}

impl Default for AdaptiveOpts {
    fn default() -> Self {
        AdaptiveOpts {
            // 32 × 30 = 960 cells: the canonical coarse bootstrap.
            coarse_nx: 32,
            coarse_ny: 30,
            refine: RefineConfig::default(),
            passes: 1,
        }
    }
}

/// Vertical layer division settings (division disabled when absent).
#[derive(Clone, Copy, Debug)]
pub struct DivisionOpts {
    /// Stop once Var/Var₀ of layer vertical resistances drops below this.
    pub threshold: f64,
    pub max_iter: u32,
}

impl Default for DivisionOpts {
    fn default() -> Self {
        DivisionOpts {
            threshold: 0.05,
            max_iter: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransientOpts {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: TimeScheme,
    pub clamp_power_floor: bool,
}

/// Probe request: a named (x, y) point on a named layer; the probe reads
/// the cell whose center is nearest the point.
#[derive(Clone, Debug)]
pub struct ProbeSpec {
    pub name: String,
    pub layer: String,
    pub x_nm: i64,
    pub y_nm: i64,
}

#[derive(Clone, Debug)]
pub struct SimulateConfig {
    pub stack_path: PathBuf,
    pub power_path: Option<PathBuf>,
    pub mode: Mode,
    pub grid: GridMode,
    pub division: Option<DivisionOpts>,
    pub transient: Option<TransientOpts>,
    pub probes: Vec<ProbeSpec>,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

/// Machine-readable summary of a simulate run, also written to disk.
#[derive(Clone, Debug)]
pub struct SimulateOutcome {
    pub n_cells: usize,
    pub max_temperature_k: f64,
    pub hotspot_layer: String,
    pub hotspot_x_um: String,
    pub hotspot_y_um: String,
    pub assembly_s: f64,
    pub solve_s: f64,
    pub files: Vec<PathBuf>,
}

fn resolve_probe(grid: &ThermalGrid, spec: &ProbeSpec) -> Result<Probe> {
    let layer = grid
        .layer_names
        .iter()
        .position(|n| n == &spec.layer)
        .ok_or_else(|| {
            Error::Invalid(format!(
                "probe '{}': no layer named '{}' (have: {})",
                spec.name,
                spec.layer,
                grid.layer_names.join(", ")
            ))
        })?;
    let cell = grid
        .layer_cells(layer)
        .iter()
        .copied()
        .min_by_key(|&id| {
            let r = grid.cells[id].rect;
            let cx = (r.x0 + r.x1) / 2;
            let cy = (r.y0 + r.y1) / 2;
            let dx = (cx - spec.x_nm) as i128;
            let dy = (cy - spec.y_nm) as i128;
            (dx * dx + dy * dy, id)
        })
        .ok_or_else(|| Error::Invalid(format!("probe '{}': layer has no cells", spec.name)))?;
    Ok(Probe {
        name: spec.name.clone(),
        cell,
    })
}

/// Default probe when none are requested: the footprint center of the
/// topmost source layer (falling back to the topmost layer).
fn default_probe_spec(stack: &ValidatedStack) -> ProbeSpec {
    let layer = stack
        .layers
        .iter()
        .rev()
        .find(|l| l.is_source)
        .unwrap_or_else(|| stack.layers.last().expect("validated stack has layers"));
    let fp = stack.footprint;
    ProbeSpec {
        name: layer.name.clone(),
        layer: layer.name.clone(),
        x_nm: (fp.x0 + fp.x1) / 2,
        y_nm: (fp.y0 + fp.y1) / 2,
    }
}

fn temperature_csv(grid: &ThermalGrid, field: &[f64], layer: usize) -> String {
    let mut out = String::from("cell,x0_um,y0_um,x1_um,y1_um,t_k\n");
    for &id in grid.layer_cells(layer) {
        let r = grid.cells[id].rect;
        out.push_str(&format!(
            "{id},{},{},{},{},{:.6}\n",
            format_um(r.x0),
            format_um(r.y0),
            format_um(r.x1),
            format_um(r.y1),
            field[id]
        ));
    }
    out
}

fn hotspot_summary(grid: &ThermalGrid, field: &TemperatureField) -> (String, String, String, f64) {
    let (cell, t) = field.hottest();
    let c = &grid.cells[cell];
    let layer = grid.layer_names[c.layer].clone();
    let x = format_um((c.rect.x0 + c.rect.x1) / 2);
    let y = format_um((c.rect.y0 + c.rect.y1) / 2);
    (layer, x, y, t)
}

/// Full simulate pipeline: parse/validate → optional layer division →
/// grid → assemble → solve → artifacts.
pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<SimulateOutcome> {
    let workers = resolve_workers(cfg.workers);
    with_workers(workers, || cmd_simulate_inner(cfg))?
}

fn cmd_simulate_inner(cfg: &SimulateConfig) -> Result<SimulateOutcome> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let mut files = Vec::new();
    let t_assembly = Instant::now();

    // Inputs.
    let mut stack = load_stack(&cfg.stack_path)?;
    let drives = match &cfg.power_path {
        Some(p) => parse_power_table(&read_text(p)?)?,
        None => Vec::new(),
    };

    // Optional vertical layer division.
    if let Some(div) = &cfg.division {
        let (divided, report) = adaptive_divide(&stack, div.threshold, div.max_iter);
        let mut text = String::from("iteration,variance,split_layer\n");
        for (i, iter) in report.iterations.iter().enumerate() {
            text.push_str(&format!(
                "{i},{:.9e},{}\n",
                iter.variance,
                iter.split_layer.as_deref().unwrap_or("-")
            ));
        }
        let path = cfg.out_dir.join("layer_division.csv");
        write_file(&path, &text)?;
        files.push(path);
        stack = divided;
    }

    // Mesh.
    let powers_now = drive_values_at(&drives, 0.0);
    let grid = match &cfg.grid {
        GridMode::Uniform(nx, ny) => build_uniform_grid(&stack, *nx, *ny)?,
        GridMode::Adaptive(opts) => {
            let (grid, report) = refine_loop(
                &stack,
                opts.coarse_nx,
                opts.coarse_ny,
                &powers_now,
                &opts.refine,
                opts.passes,
            )?;
            let mut text = String::from("layer,element,gradient_x_k_per_m,gradient_y_k_per_m,gridsize_x_m,gridsize_y_m\n");
            for ((l, e), g) in &report.gradients {
                let s = report.gridsizes[&(*l, *e)];
                text.push_str(&format!(
                    "{},{e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
                    grid.layer_names[*l], g.0, g.1, s.0, s.1
                ));
            }
            let path = cfg.out_dir.join("refinement.csv");
            write_file(&path, &text)?;
            files.push(path);
            grid
        }
    };

    let mut sys = assemble(&grid, &powers_now)?;
    let assembly_s = t_assembly.elapsed().as_secs_f64();

    // Solve.
    let t_solve = Instant::now();
    let field = match cfg.mode {
        Mode::Steady => solve_steady(&sys)?,
        Mode::Transient => {
            let opts = cfg
                .transient
                .as_ref()
                .ok_or_else(|| Error::Invalid("transient mode needs dt and t_end".into()))?;
            let mut tc = TransientConfig::new(opts.dt, opts.t_end)?;
            tc.scheme = opts.scheme;
            tc.clamp_power_floor = opts.clamp_power_floor;
            let specs = if cfg.probes.is_empty() {
                vec![default_probe_spec(&stack)]
            } else {
                cfg.probes.clone()
            };
            let probes = specs
                .iter()
                .map(|s| resolve_probe(&grid, s))
                .collect::<Result<Vec<_>>>()?;
            let result = run_transient(&grid, &mut sys, &drives, &tc, &probes)?;
            let path = cfg.out_dir.join("probes.csv");
            write_file(&path, &transient_to_csv(&result, &probes))?;
            files.push(path);
            result.final_field
        }
    };
    let solve_s = t_solve.elapsed().as_secs_f64();

    // Artifacts: per-layer temperature tables and heatmaps.
    for layer in 0..grid.n_layers() {
        let tag = format!("{layer:02}_{}", sanitize(&grid.layer_names[layer]));
        let csv_path = cfg.out_dir.join(format!("temperature_{tag}.csv"));
        write_file(&csv_path, &temperature_csv(&grid, &field, layer))?;
        files.push(csv_path);
        let ppm_path = cfg.out_dir.join(format!("heatmap_{tag}.ppm"));
        write_layer_heatmap(&ppm_path, &grid, &field, layer, &RasterOptions::default())?;
        files.push(ppm_path);
    }

    let (hot_layer, hot_x, hot_y, hot_t) = hotspot_summary(&grid, &field);
    let summary = format!(
        "max_temperature_k: {hot_t:.6}\nlayer: {hot_layer}\nx_um: {hot_x}\ny_um: {hot_y}\ncells: {}\n",
        grid.n_cells()
    );
    let path = cfg.out_dir.join("hotspot.txt");
    write_file(&path, &summary)?;
    files.push(path);

    let timing = format!("assembly_s: {assembly_s:.6}\nsolve_s: {solve_s:.6}\n");
    let path = cfg.out_dir.join("timing.txt");
    write_file(&path, &timing)?;
    files.push(path);

    Ok(SimulateOutcome {
        n_cells: grid.n_cells(),
        max_temperature_k: hot_t,
        hotspot_layer: hot_layer,
        hotspot_x_um: hot_x,
        hotspot_y_um: hot_y,
        assembly_s,
        solve_s,
        files,
    })
}

// ---------------------------------------------------------------------------
// tile
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TileConfig {
    pub layout_path: PathBuf,
    pub layer: i32,
    pub tiling: TilingConfig,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct TileOutcome {
    pub n_tiles: usize,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Tile one layout layer and emit the tile table plus a coverage map.
pub fn cmd_tile(cfg: &TileConfig) -> Result<TileOutcome> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let (layout, warnings) = load_layout(&cfg.layout_path, cfg.layer)?;
    let csv_path = cfg.out_dir.join("tiles.csv");
    let map_path = cfg.out_dir.join("rho_map.ppm");

    if layout.shapes.is_empty() {
        // An empty layer still gets a well-formed single-row answer.
        write_file(&csv_path, "x0,y0,x1,y1,rho\n0.000,0.000,0.000,0.000,0.000000\n")?;
        std::fs::write(&map_path, b"P6\n1 1\n255\n\x00\x00\x00".as_slice())
            .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", map_path.display())))?;
        return Ok(TileOutcome {
            n_tiles: 1,
            warnings: warnings.messages,
            files: vec![csv_path, map_path],
        });
    }

    let merged = merge_shapes(&layout.shapes)?;
    let window = bounding_window(&merged)?;
    let index = build_spatial_index(merged);
    let tiles: Vec<Tile> = generate_tiles(&index, window, &cfg.tiling);
    write_file(&csv_path, &tiles_to_csv(&tiles))?;
    let shaded: Vec<(Rect, f64)> = tiles.iter().map(|t| (t.region, t.rho)).collect();
    write_rho_map(&map_path, window, &shaded, &RasterOptions::default())?;
    Ok(TileOutcome {
        n_tiles: tiles.len(),
        warnings: warnings.messages,
        files: vec![csv_path, map_path],
    })
}

// ---------------------------------------------------------------------------
// grid-study
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GridStudyConfig {
    pub stack_path: PathBuf,
    pub power_path: Option<PathBuf>,
    pub budgets: Vec<usize>,
    /// The uniform reference grid is at least this many times finer (in
    /// cell count) than the largest budget.
    pub reference_factor: usize,
    pub adaptive: AdaptiveOpts,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct GridStudyRow {
    pub budget: usize,
    pub uniform_cells: usize,
    pub uniform_rmse_k: f64,
    pub adaptive_cells: usize,
    pub adaptive_rmse_k: f64,
}

/// Pick an nx × ny lattice so the whole stack lands near `target` total
/// cells (each of the `layers` layers contributes one lattice of cells),
/// matching the footprint's aspect ratio.
fn dims_for_budget(footprint: Rect, target: usize, layers: usize) -> (usize, usize) {
    let per_layer = (target as f64 / layers.max(1) as f64).max(1.0);
    let aspect = footprint.width() as f64 / footprint.height() as f64;
    let nx = ((per_layer * aspect).sqrt().round() as usize).max(1);
    let ny = ((per_layer / nx as f64).round() as usize).max(1);
    (nx, ny)
}

/// Layer whose field the study compares: the topmost source layer.
fn study_layer(stack: &ValidatedStack) -> usize {
    stack
        .layers
        .iter()
        .rposition(|l| l.is_source)
        .unwrap_or(stack.layers.len() - 1)
}

/// Largest uniform grid that stays at or under `budget` total cells
/// (floorplan-heavy layers can push the count past the plain lattice
/// product, so the lattice is calibrated against actual counts).
fn uniform_under_budget(stack: &ValidatedStack, budget: usize) -> Result<ThermalGrid> {
    let layers = stack.layers.len();
    let mut target = budget;
    let mut best: Option<(ThermalGrid, usize)> = None;
    let mut smallest_seen = usize::MAX;
    for _ in 0..6 {
        let (nx, ny) = dims_for_budget(stack.footprint, target, layers);
        let grid = build_uniform_grid(stack, nx, ny)?;
        let cells = grid.n_cells();
        smallest_seen = smallest_seen.min(cells);
        let fits = cells <= budget;
        if fits && best.as_ref().is_none_or(|(_, c)| cells > *c) {
            best = Some((grid, cells));
        }
        if fits && cells as f64 >= 0.8 * budget as f64 {
            break;
        }
        let next = ((target as f64) * (budget as f64 / cells as f64) * 0.93) as usize;
        if next == target {
            break;
        }
        target = next.max(layers);
    }
    best.map(|(g, _)| g).ok_or_else(|| {
        Error::Numerical(format!(
            "no uniform grid fits the {budget}-cell budget (smallest achievable \
             was {smallest_seen} cells; every floorplan element needs at least \
             one cell per layer)"
        ))
    })
}

/// Compare uniform and gradient-adapted meshes at several cell budgets
/// against a much finer uniform reference. Emits `grid_study.csv`.
pub fn cmd_grid_study(cfg: &GridStudyConfig) -> Result<Vec<GridStudyRow>> {
    let workers = resolve_workers(cfg.workers);
    with_workers(workers, || cmd_grid_study_inner(cfg))?
}

fn cmd_grid_study_inner(cfg: &GridStudyConfig) -> Result<Vec<GridStudyRow>> {
    if cfg.budgets.is_empty() {
        return Err(Error::Invalid("grid study needs at least one cell budget".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let stack = load_stack(&cfg.stack_path)?;
    let drives = match &cfg.power_path {
        Some(p) => parse_power_table(&read_text(p)?)?,
        None => Vec::new(),
    };
    let powers = drive_values_at(&drives, 0.0);
    let layer = study_layer(&stack);

    // Reference: uniform, ≥ reference_factor × the largest budget.
    let max_budget = *cfg.budgets.iter().max().unwrap();
    let (rnx, rny) = dims_for_budget(stack.footprint, max_budget * cfg.reference_factor.max(1), stack.layers.len());
    let ref_grid = build_uniform_grid(&stack, rnx, rny)?;
    let ref_field = solve_steady(&assemble(&ref_grid, &powers)?)?;

    let mut rows = Vec::new();
    for &budget in &cfg.budgets {
        // Uniform contender.
        let u_grid = uniform_under_budget(&stack, budget)?;
        let u_field = solve_steady(&assemble(&u_grid, &powers)?)?;
        let u_rmse = rmse_between_layers(&u_grid, &u_field, layer, &ref_grid, &ref_field, layer)?;

        // Adaptive contender: calibrate alpha until the cell count fits
        // the budget (cells scale roughly as alpha⁻²).
        let mut refine = cfg.adaptive.refine;
        let mut best: Option<(ThermalGrid, usize)> = None;
        let mut smallest_seen = usize::MAX;
        for _ in 0..8 {
            let (grid, _) = refine_loop(
                &stack,
                cfg.adaptive.coarse_nx,
                cfg.adaptive.coarse_ny,
                &powers,
                &refine,
                cfg.adaptive.passes,
            )?;
            let cells = grid.n_cells();
            smallest_seen = smallest_seen.min(cells);
            let fits = cells <= budget;
            if fits && best.as_ref().is_none_or(|(_, c)| cells > *c) {
                best = Some((grid, cells));
            }
            if fits && cells as f64 >= 0.8 * budget as f64 {
                break;
            }
            let correction = (cells as f64 / (0.9 * budget as f64)).sqrt();
            refine.alpha = (refine.alpha * correction).clamp(1e-6, 1e9);
        }
        let (a_grid, a_cells) = best.ok_or_else(|| {
            Error::Numerical(format!(
                "could not calibrate an adaptive grid under the {budget}-cell budget \
                 (smallest achieved was {smallest_seen} cells; every floorplan element \
                 needs at least one cell per layer)"
            ))
        })?;
        let a_field = solve_steady(&assemble(&a_grid, &powers)?)?;
        let a_rmse = rmse_between_layers(&a_grid, &a_field, layer, &ref_grid, &ref_field, layer)?;

        rows.push(GridStudyRow {
            budget,
            uniform_cells: u_grid.n_cells(),
            uniform_rmse_k: u_rmse,
            adaptive_cells: a_cells,
            adaptive_rmse_k: a_rmse,
        });
    }

    let mut csv = String::from("budget,uniform_cells,uniform_rmse_k,adaptive_cells,adaptive_rmse_k\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.9},{},{:.9}\n",
            r.budget, r.uniform_cells, r.uniform_rmse_k, r.adaptive_cells, r.adaptive_rmse_k
        ));
    }
    write_file(&cfg.out_dir.join("grid_study.csv"), &csv)?;
    Ok(rows)
}
