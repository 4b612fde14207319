//! Spatial discretization of a validated stack into a cell grid.
//!
//! Two builders: a uniform nx×ny lattice per layer (clipped to element
//! boundaries, so cells never span two elements), and a non-uniform grid
//! where each element is meshed independently at its own grid size and
//! neighboring elements couple through exact face overlaps (non-conforming
//! interfaces). Vertically there is one cell per simulation layer — layer
//! division supplies vertical resolution.
//!
//! The temperature-aware refinement rule sizes an element's cells inversely
//! to its local temperature gradient: gridsize = l·α·G_base/(G+ε), clamped
//! to [l_min, l].

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::material::Material;
use crate::stack::{Sink, SinkFace, ValidatedStack};
use crate::units::format_um;
use rayon::prelude::*;
use rstar::primitives::{GeomWithData, Rectangle};
use rstar::{RTree, AABB};
use std::collections::BTreeMap;

/// Coupling direction of a shared face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// One finite-volume cell: a rectangular footprint within a single element
/// of a single simulation layer.
#[derive(Clone, Debug)]
pub struct Cell {
    /// Simulation-layer index (bottom-to-top).
    pub layer: usize,
    /// Element index within the layer.
    pub element: usize,
    /// Footprint in nm.
    pub rect: Rect,
    /// Layer thickness, m.
    pub thickness: f64,
    /// z of the layer's bottom face, m.
    pub z0: f64,
    /// Index into [`ThermalGrid::materials`].
    pub material: usize,
}

impl Cell {
    /// (x, y, z) center in meters. Divisions by exact powers of ten keep
    /// integer-nm geometry correctly rounded.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.rect.x0 as f64 + self.rect.x1 as f64) / 2e9,
            (self.rect.y0 as f64 + self.rect.y1 as f64) / 2e9,
            self.z0 + self.thickness * 0.5,
        ]
    }

    /// Extent along an axis, m.
    pub fn extent(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.rect.width() as f64 / 1e9,
            Axis::Y => self.rect.height() as f64 / 1e9,
            Axis::Z => self.thickness,
        }
    }

    /// Footprint area, m².
    pub fn footprint_m2(&self) -> f64 {
        self.rect.area() as f64 / 1e18
    }

    /// Volume, m³.
    pub fn volume(&self) -> f64 {
        self.footprint_m2() * self.thickness
    }
}

/// A face shared by two cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    /// Cell ids with `a < b`.
    pub a: usize,
    pub b: usize,
    /// Shared face area, m².
    pub area: f64,
    pub axis: Axis,
}

/// An outer face participating in sink heat exchange.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFace {
    pub cell: usize,
    /// Face area, m².
    pub area: f64,
}

/// Immutable discretization of a stack. Cells are sorted by
/// (layer, element, row, column); adjacencies by (a, b); both orderings are
/// independent of worker count.
#[derive(Clone, Debug)]
pub struct ThermalGrid {
    pub cells: Vec<Cell>,
    pub adjacency: Vec<Adjacency>,
    pub boundary: Vec<BoundaryFace>,
    pub materials: Vec<Material>,
    pub sink: Sink,
    pub initial_temperature: f64,
    /// Layer names, for reporting.
    pub layer_names: Vec<String>,
    /// Which layers are power sources.
    pub source_layers: Vec<bool>,
    /// (layer, element) → power-source id for powered elements.
    pub element_power: BTreeMap<(usize, usize), usize>,
    /// Half-open cell-id range of each layer.
    layer_ranges: Vec<std::ops::Range<usize>>,
    /// Cell ids of each (layer, element).
    element_cells: BTreeMap<(usize, usize), Vec<usize>>,
    /// Identity id vector backing `layer_cells` slices.
    cell_ids: Vec<usize>,
}

impl ThermalGrid {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn material_of(&self, cell: usize) -> &Material {
        &self.materials[self.cells[cell].material]
    }

    /// Conductivity governing conduction along `axis` for a cell.
    pub fn conductivity(&self, cell: usize, axis: Axis) -> f64 {
        let m = self.material_of(cell);
        match axis {
            Axis::X | Axis::Y => m.k_inplane,
            Axis::Z => m.k_vertical,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_ranges.len()
    }

    pub fn layer_cells(&self, layer: usize) -> &[usize] {
        // Ranges are contiguous; expose as a slice of ids via the range.
        &self.cell_ids[self.layer_ranges[layer].clone()]
    }

    pub fn element_cells(&self, layer: usize, element: usize) -> &[usize] {
        self.element_cells
            .get(&(layer, element))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn element_ids(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.element_cells.keys().copied()
    }
}

impl ThermalGrid {
    fn finish(mut self) -> ThermalGrid {
        self.cell_ids = (0..self.cells.len()).collect();
        self
    }
}

/// Temperature-aware refinement parameters.
#[derive(Clone, Copy, Debug)]
pub struct RefineConfig {
    /// Dimensionless scale on the whole rule.
    pub alpha: f64,
    /// Reference gradient, K/m.
    pub g_base: f64,
    /// Division-by-zero guard, K/m.
    pub epsilon: f64,
    /// Smallest permitted grid size, m.
    pub l_min: f64,
    /// Use per-axis gradient components instead of one scalar magnitude.
    pub per_axis: bool,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        for (label, v) in [
            ("alpha", self.alpha),
            ("g_base", self.g_base),
            ("epsilon", self.epsilon),
            ("l_min", self.l_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "refine config: {label} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            alpha: 1.0,
            g_base: 1e3,
            epsilon: 1e-9,
            l_min: 1e-6,
            per_axis: false,
        }
    }
}

/// Interior split positions of `[lo, hi]` into `n` near-equal integer parts
/// (floor partition; parts differ by at most one unit).
fn partition(lo: i64, hi: i64, n: usize) -> Vec<i64> {
    let span = (hi - lo) as i128;
    (1..n)
        .map(|i| lo + (i as i128 * span / n as i128) as i64)
        .collect()
}

/// Uniform nx×ny discretization: a global lattice over the footprint,
/// clipped to element boundaries.
pub fn build_uniform_grid(stack: &ValidatedStack, nx: usize, ny: usize) -> Result<ThermalGrid> {
    if nx < 1 || ny < 1 {
        return Err(Error::Invalid(format!(
            "grid dimensions must be at least 1×1, got {nx}×{ny}"
        )));
    }
    let fp = stack.footprint;
    let xs = partition(fp.x0, fp.x1, nx);
    let ys = partition(fp.y0, fp.y1, ny);
    build_grid(stack, |_, _, rect| {
        let inner_x: Vec<i64> = xs.iter().copied().filter(|&x| x > rect.x0 && x < rect.x1).collect();
        let inner_y: Vec<i64> = ys.iter().copied().filter(|&y| y > rect.y0 && y < rect.y1).collect();
        (inner_x, inner_y)
    })
}

/// Non-uniform discretization: each element meshed independently with
/// ceil(l/gridsize) equal cells per axis. `gridsizes` maps
/// (layer, element) → (gridsize_x, gridsize_y) in meters; elements absent
/// from the map get one cell.
pub fn build_nonuniform_grid(
    stack: &ValidatedStack,
    gridsizes: &BTreeMap<(usize, usize), (f64, f64)>,
) -> Result<ThermalGrid> {
    for (&(l, e), &(gx, gy)) in gridsizes {
        if !(gx > 0.0 && gy > 0.0) {
            return Err(Error::Invalid(format!(
                "grid size for layer {l} element {e} must be positive, got ({gx}, {gy})"
            )));
        }
    }
    build_grid(stack, |layer, element, rect| {
        let (gx, gy) = gridsizes
            .get(&(layer, element))
            .copied()
            .unwrap_or((f64::INFINITY, f64::INFINITY));
        let lx = rect.width() as f64 / 1e9;
        let ly = rect.height() as f64 / 1e9;
        let n_of = |l: f64, g: f64| -> usize {
            if g.is_finite() {
                // Damp last-ulp noise so an exact multiple of the grid size
                // never gains a spurious extra cell.
                let ratio = (l / g) * (1.0 - 1e-12);
                (ratio.ceil() as usize).max(1)
            } else {
                1
            }
        };
        (
            partition(rect.x0, rect.x1, n_of(lx, gx)),
            partition(rect.y0, rect.y1, n_of(ly, gy)),
        )
    })
}

/// Shared grid builder: `splits` yields the interior split positions of an
/// element along x and y.
fn build_grid(
    stack: &ValidatedStack,
    splits: impl Fn(usize, usize, &Rect) -> (Vec<i64>, Vec<i64>),
) -> Result<ThermalGrid> {
    let mut cells: Vec<Cell> = Vec::new();
    let mut materials: Vec<Material> = Vec::new();
    let mut material_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut layer_ranges = Vec::with_capacity(stack.layers.len());
    let mut element_cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();

    let mut z0 = 0.0f64;
    for (j, layer) in stack.layers.iter().enumerate() {
        let layer_start = cells.len();
        for (ei, e) in layer.elements.iter().enumerate() {
            // Materials are deduplicated by full property identity.
            let key = format!(
                "{}|{}|{}|{}|{}",
                e.material.name,
                e.material.k_inplane,
                e.material.k_vertical,
                e.material.density,
                e.material.heat_capacity
            );
            let mat = *material_ids.entry(key).or_insert_with(|| {
                materials.push(e.material.clone());
                materials.len() - 1
            });

            let (inner_x, inner_y) = splits(j, ei, &e.rect);
            let mut xs = Vec::with_capacity(inner_x.len() + 2);
            xs.push(e.rect.x0);
            xs.extend(inner_x);
            xs.push(e.rect.x1);
            let mut ys = Vec::with_capacity(inner_y.len() + 2);
            ys.push(e.rect.y0);
            ys.extend(inner_y);
            ys.push(e.rect.y1);
            debug_assert!(xs.windows(2).all(|w| w[0] < w[1]));
            debug_assert!(ys.windows(2).all(|w| w[0] < w[1]));

            let ids = element_cells.entry((j, ei)).or_default();
            for wy in ys.windows(2) {
                for wx in xs.windows(2) {
                    ids.push(cells.len());
                    cells.push(Cell {
                        layer: j,
                        element: ei,
                        rect: Rect::new(wx[0], wy[0], wx[1], wy[1])
                            .expect("partition boundaries are strictly increasing"),
                        thickness: layer.thickness,
                        z0,
                        material: mat,
                    });
                }
            }
        }
        layer_ranges.push(layer_start..cells.len());

        // Tiling exactness: per layer, cells cover exactly the element areas.
        let cell_area: i128 = cells[layer_start..].iter().map(|c| c.rect.area()).sum();
        debug_assert_eq!(
            cell_area,
            layer.elements.iter().map(|e| e.rect.area()).sum::<i128>()
        );
        z0 += layer.thickness;
    }

    // Per-layer R-trees over cell footprints.
    let trees: Vec<RTree<GeomWithData<Rectangle<[i64; 2]>, usize>>> = layer_ranges
        .iter()
        .map(|range| {
            RTree::bulk_load(
                range
                    .clone()
                    .map(|id| {
                        let r = cells[id].rect;
                        GeomWithData::new(Rectangle::from_corners([r.x0, r.y0], [r.x1, r.y1]), id)
                    })
                    .collect(),
            )
        })
        .collect();

    // Lateral (same layer) and vertical (next layer up) couplings, gathered
    // in parallel per cell, then sorted for determinism.
    let mut adjacency: Vec<Adjacency> = cells
        .par_iter()
        .enumerate()
        .flat_map_iter(|(id, c)| {
            let mut local: Vec<Adjacency> = Vec::new();
            let env = AABB::from_corners([c.rect.x0, c.rect.y0], [c.rect.x1, c.rect.y1]);

            for hit in trees[c.layer].locate_in_envelope_intersecting(env) {
                let other = hit.data;
                if other <= id {
                    continue; // each unordered pair once
                }
                let o = &cells[other].rect;
                let (axis, overlap) = if c.rect.x1 == o.x0 || o.x1 == c.rect.x0 {
                    (Axis::X, c.rect.y1.min(o.y1) - c.rect.y0.max(o.y0))
                } else if c.rect.y1 == o.y0 || o.y1 == c.rect.y0 {
                    (Axis::Y, c.rect.x1.min(o.x1) - c.rect.x0.max(o.x0))
                } else {
                    continue; // interior-disjoint rects only touch at faces/corners
                };
                if overlap > 0 {
                    local.push(Adjacency {
                        a: id,
                        b: other,
                        area: overlap as f64 / 1e9 * c.thickness,
                        axis,
                    });
                }
            }

            if c.layer + 1 < trees.len() {
                for hit in trees[c.layer + 1].locate_in_envelope_intersecting(env) {
                    let other = hit.data;
                    if let Some(shared) = c.rect.intersect(&cells[other].rect) {
                        local.push(Adjacency {
                            a: id,
                            b: other,
                            area: shared.area() as f64 / 1e18,
                            axis: Axis::Z,
                        });
                    }
                }
            }
            local
        })
        .collect();
    adjacency.sort_by_key(|adj| (adj.a, adj.b));

    let sink_layer = match stack.sink.face {
        SinkFace::Bottom => 0,
        SinkFace::Top => stack.layers.len() - 1,
    };
    let boundary: Vec<BoundaryFace> = layer_ranges[sink_layer]
        .clone()
        .map(|id| BoundaryFace {
            cell: id,
            area: cells[id].footprint_m2(),
        })
        .collect();

    let grid = ThermalGrid {
        cell_ids: Vec::new(),
        cells,
        adjacency,
        boundary,
        materials,
        sink: stack.sink,
        initial_temperature: stack.initial_temperature,
        layer_names: stack.layers.iter().map(|l| l.name.clone()).collect(),
        source_layers: stack.layers.iter().map(|l| l.is_source).collect(),
        element_power: stack
            .layers
            .iter()
            .enumerate()
            .flat_map(|(li, layer)| {
                layer
                    .elements
                    .iter()
                    .enumerate()
                    .filter_map(move |(ei, e)| e.power_id.map(|pid| ((li, ei), pid)))
            })
            .collect(),
        layer_ranges,
        element_cells,
    };
    Ok(grid.finish())
}

/// Mean in-plane temperature-gradient magnitude over an element's cells.
/// Differences are centered where both side neighbors exist (including
/// neighbors across element borders), one-sided at grid borders; a cell
/// with no lateral neighbors along either axis contributes 0.
pub fn element_gradient(
    field: &[f64],
    grid: &ThermalGrid,
    layer: usize,
    element: usize,
) -> f64 {
    let (gx, gy) = element_gradient_axes(field, grid, layer, element);
    // Combined as the magnitude of the mean-component vector.
    (gx * gx + gy * gy).sqrt()
}

/// Per-axis mean absolute gradient components of an element.
pub fn element_gradient_axes(
    field: &[f64],
    grid: &ThermalGrid,
    layer: usize,
    element: usize,
) -> (f64, f64) {
    let ids = grid.element_cells(layer, element);
    if ids.is_empty() {
        return (0.0, 0.0);
    }

    // Neighbor lists per cell along x and y, as (other, face area).
    let mut sides: BTreeMap<usize, [Vec<(usize, f64)>; 4]> = BTreeMap::new();
    for &id in ids {
        sides.insert(id, [Vec::new(), Vec::new(), Vec::new(), Vec::new()]);
    }
    for adj in &grid.adjacency {
        let (lo, hi, slot) = match adj.axis {
            Axis::X => (adj.a, adj.b, 0),
            Axis::Y => (adj.a, adj.b, 2),
            Axis::Z => continue,
        };
        // Which of the pair sits on the minus side along the axis?
        let axis_idx = if slot == 0 { 0 } else { 1 };
        let (minus, plus) = if grid.cells[lo].center()[axis_idx] <= grid.cells[hi].center()[axis_idx]
        {
            (lo, hi)
        } else {
            (hi, lo)
        };
        if let Some(s) = sides.get_mut(&plus) {
            s[slot].push((minus, adj.area)); // minus-side neighbor
        }
        if let Some(s) = sides.get_mut(&minus) {
            s[slot + 1].push((plus, adj.area)); // plus-side neighbor
        }
    }

    let weighted = |list: &[(usize, f64)], axis_idx: usize| -> Option<(f64, f64)> {
        if list.is_empty() {
            return None;
        }
        let wsum: f64 = list.iter().map(|&(_, w)| w).sum();
        let t = list.iter().map(|&(i, w)| w * field[i]).sum::<f64>() / wsum;
        let x = list
            .iter()
            .map(|&(i, w)| w * grid.cells[i].center()[axis_idx])
            .sum::<f64>()
            / wsum;
        Some((t, x))
    };

    let mut sum_gx = 0.0;
    let mut sum_gy = 0.0;
    for &id in ids {
        let s = &sides[&id];
        let c = grid.cells[id].center();
        for (axis_idx, (minus_slot, plus_slot), acc) in
            [(0usize, (0usize, 1usize), &mut sum_gx), (1, (2, 3), &mut sum_gy)]
        {
            let minus = weighted(&s[minus_slot], axis_idx);
            let plus = weighted(&s[plus_slot], axis_idx);
            let slope = match (minus, plus) {
                (Some((tm, xm)), Some((tp, xp))) => (tp - tm) / (xp - xm),
                (Some((tm, xm)), None) => (field[id] - tm) / (c[axis_idx] - xm),
                (None, Some((tp, xp))) => (tp - field[id]) / (xp - c[axis_idx]),
                (None, None) => 0.0,
            };
            *acc += slope.abs();
        }
    }
    let n = ids.len() as f64;
    (sum_gx / n, sum_gy / n)
}

/// Grid size for one element from its gradient: l·α·G_base/(G+ε), clamped
/// to [l_min, l] per axis.
pub fn refine_gridsize(extent_x: f64, extent_y: f64, g: (f64, f64), cfg: &RefineConfig) -> (f64, f64) {
    let rule = |l: f64, g: f64| -> f64 {
        let raw = l * cfg.alpha * cfg.g_base / (g + cfg.epsilon);
        raw.max(cfg.l_min).min(l)
    };
    (rule(extent_x, g.0), rule(extent_y, g.1))
}

/// What a refinement pass decided, per element.
#[derive(Clone, Debug)]
pub struct RefineReport {
    /// Number of solve-and-refine passes performed.
    pub passes: usize,
    /// Cell count of the initial coarse grid.
    pub coarse_cells: usize,
    /// Gradient estimate per element from the last pass, K/m (per axis).
    pub gradients: BTreeMap<(usize, usize), (f64, f64)>,
    /// Grid size chosen per element in the last pass, m.
    pub gridsizes: BTreeMap<(usize, usize), (f64, f64)>,
}

/// Temperature-aware meshing: solve on a coarse uniform grid, estimate the
/// in-plane temperature gradient of every element, shrink the element's
/// grid size where the field is steep, and rebuild. One pass by default;
/// extra passes re-estimate gradients on the refined grid.
pub fn refine_loop(
    stack: &ValidatedStack,
    coarse_nx: usize,
    coarse_ny: usize,
    powers: &[f64],
    cfg: &RefineConfig,
    passes: usize,
) -> Result<(ThermalGrid, RefineReport)> {
    cfg.validate()?;
    let mut grid = build_uniform_grid(stack, coarse_nx, coarse_ny)?;
    let coarse_cells = grid.n_cells();
    let mut report = RefineReport {
        passes: passes.max(1),
        coarse_cells,
        gradients: BTreeMap::new(),
        gridsizes: BTreeMap::new(),
    };
    for _ in 0..passes.max(1) {
        let sys = crate::network::assemble(&grid, powers)?;
        let field = crate::solver::solve_steady(&sys)?;
        report.gradients.clear();
        report.gridsizes.clear();
        for (layer, element) in grid.element_ids().collect::<Vec<_>>() {
            let g = if cfg.per_axis {
                element_gradient_axes(&field, &grid, layer, element)
            } else {
                let m = element_gradient(&field, &grid, layer, element);
                (m, m)
            };
            let rect = stack.layers[layer].elements[element].rect;
            let sizes = refine_gridsize(
                rect.width() as f64 / 1e9,
                rect.height() as f64 / 1e9,
                g,
                cfg,
            );
            report.gradients.insert((layer, element), g);
            report.gridsizes.insert((layer, element), sizes);
        }
        grid = build_nonuniform_grid(stack, &report.gridsizes)?;
    }
    Ok((grid, report))
}

/// Debug dump: cells then adjacencies, as CSV blocks.
pub fn grid_to_csv(grid: &ThermalGrid) -> String {
    let mut out = String::from("cell,layer,x0,y0,x1,y1,material\n");
    for (id, c) in grid.cells.iter().enumerate() {
        out.push_str(&format!(
            "{id},{},{},{},{},{},{}\n",
            grid.layer_names[c.layer],
            format_um(c.rect.x0),
            format_um(c.rect.y0),
            format_um(c.rect.x1),
            format_um(c.rect.y1),
            grid.materials[c.material].name
        ));
    }
    out.push_str("a,b,axis,area_m2\n");
    for adj in &grid.adjacency {
        out.push_str(&format!(
            "{},{},{:?},{:.6e}\n",
            adj.a, adj.b, adj.axis, adj.area
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::Material;
    use crate::stack::{validate_stack, FloorplanElement, Layer, SinkModel, StackDescription};
    use approx::assert_relative_eq;

    fn sink_top() -> Sink {
        Sink {
            h_coeff: 1e4,
            ambient: 300.0,
            face: SinkFace::Top,
            model: SinkModel::Film,
        }
    }

    fn silicon() -> Material {
        Material::isotropic("si", 130.0, 2300.0, 700.0)
    }

    fn one_layer_stack(fp: Rect, elements: Vec<FloorplanElement>) -> ValidatedStack {
        validate_stack(StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-4,
                elements,
                is_source: false,
            }],
            footprint: fp,
            sink: sink_top(),
            initial_temperature: 300.0,
        })
        .unwrap()
    }

    fn full_element(fp: Rect) -> FloorplanElement {
        FloorplanElement {
            rect: fp,
            material: silicon(),
            power_id: None,
        }
    }

    #[test]
    fn one_by_one_grid_single_cell_per_layer() {
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = validate_stack(StackDescription {
            layers: vec![
                Layer {
                    name: "a".into(),
                    thickness: 1e-4,
                    elements: vec![full_element(fp)],
                    is_source: false,
                },
                Layer {
                    name: "b".into(),
                    thickness: 2e-4,
                    elements: vec![full_element(fp)],
                    is_source: false,
                },
            ],
            footprint: fp,
            sink: sink_top(),
            initial_temperature: 300.0,
        })
        .unwrap();

        let grid = build_uniform_grid(&stack, 1, 1).unwrap();
        assert_eq!(grid.n_cells(), 2);
        assert_eq!(grid.adjacency.len(), 1);
        assert_eq!(grid.adjacency[0].axis, Axis::Z);
        assert_relative_eq!(grid.adjacency[0].area, 1e-6, max_relative = 1e-12);
        // Sink on top → boundary on layer 1's only cell.
        assert_eq!(grid.boundary.len(), 1);
        assert_eq!(grid.boundary[0].cell, 1);
        assert_relative_eq!(grid.cells[1].z0, 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn uniform_grid_counts_and_adjacency() {
        let fp = Rect::new(0, 0, 640_000, 640_000).unwrap();
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let (nx, ny) = (64usize, 64usize);
        let grid = build_uniform_grid(&stack, nx, ny).unwrap();
        assert_eq!(grid.n_cells(), nx * ny);
        assert_eq!(grid.adjacency.len(), nx * (ny - 1) + ny * (nx - 1));
        let area_sum: i128 = grid.cells.iter().map(|c| c.rect.area()).sum();
        assert_eq!(area_sum, fp.area());
    }

    #[test]
    fn cells_clip_to_element_boundaries() {
        // Elements split at 30% of the footprint; nx=2 places a lattice line
        // at 50%, inside the second element only.
        let fp = Rect::new(0, 0, 1000, 1000).unwrap();
        let stack = one_layer_stack(
            fp,
            vec![
                FloorplanElement {
                    rect: Rect::new(0, 0, 300, 1000).unwrap(),
                    material: silicon(),
                    power_id: None,
                },
                FloorplanElement {
                    rect: Rect::new(300, 0, 1000, 1000).unwrap(),
                    material: silicon(),
                    power_id: None,
                },
            ],
        );
        let grid = build_uniform_grid(&stack, 2, 1).unwrap();
        let rects: Vec<Rect> = grid.cells.iter().map(|c| c.rect).collect();
        assert_eq!(
            rects,
            vec![
                Rect::new(0, 0, 300, 1000).unwrap(),
                Rect::new(300, 0, 500, 1000).unwrap(),
                Rect::new(500, 0, 1000, 1000).unwrap(),
            ]
        );
    }

    #[test]
    fn half_footprint_elements_align() {
        let fp = Rect::new(0, 0, 1000, 1000).unwrap();
        let stack = one_layer_stack(
            fp,
            vec![
                FloorplanElement {
                    rect: Rect::new(0, 0, 500, 1000).unwrap(),
                    material: silicon(),
                    power_id: None,
                },
                FloorplanElement {
                    rect: Rect::new(500, 0, 1000, 1000).unwrap(),
                    material: silicon(),
                    power_id: None,
                },
            ],
        );
        let grid = build_uniform_grid(&stack, 2, 1).unwrap();
        assert_eq!(grid.n_cells(), 2, "lattice line coincides with the element edge");
        assert_eq!(grid.adjacency.len(), 1);
        assert_eq!(grid.adjacency[0].axis, Axis::X);
    }

    #[test]
    fn nonconforming_interface_conserves_face_area() {
        // Left element 1 cell, right element 2 cells along the shared edge.
        let fp = Rect::new(0, 0, 2000, 1000).unwrap();
        let left = Rect::new(0, 0, 1000, 1000).unwrap();
        let right = Rect::new(1000, 0, 2000, 1000).unwrap();
        let stack = one_layer_stack(
            fp,
            vec![
                FloorplanElement {
                    rect: left,
                    material: silicon(),
                    power_id: None,
                },
                FloorplanElement {
                    rect: right,
                    material: silicon(),
                    power_id: None,
                },
            ],
        );
        let mut sizes = BTreeMap::new();
        sizes.insert((0usize, 0usize), (1e-6, 1e-6)); // 1 cell
        sizes.insert((0usize, 1usize), (1e-6, 0.5e-6)); // 2 cells along y
        let grid = build_nonuniform_grid(&stack, &sizes).unwrap();
        assert_eq!(grid.n_cells(), 3);

        let x_adj: Vec<&Adjacency> =
            grid.adjacency.iter().filter(|a| a.axis == Axis::X).collect();
        assert_eq!(x_adj.len(), 2, "coarse face splits into two couplings");
        let total: f64 = x_adj.iter().map(|a| a.area).sum();
        // Full shared edge: 1000 nm = 1e-6 m times 1e-4 m thickness.
        assert_relative_eq!(total, 1e-6 * 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn nonuniform_with_global_size_matches_uniform() {
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let uniform = build_uniform_grid(&stack, 4, 4).unwrap();
        let mut sizes = BTreeMap::new();
        sizes.insert((0usize, 0usize), (0.25e-3, 0.25e-3));
        let nonuniform = build_nonuniform_grid(&stack, &sizes).unwrap();

        assert_eq!(uniform.n_cells(), nonuniform.n_cells());
        let ra: Vec<Rect> = uniform.cells.iter().map(|c| c.rect).collect();
        let rb: Vec<Rect> = nonuniform.cells.iter().map(|c| c.rect).collect();
        assert_eq!(ra, rb);
        assert_eq!(uniform.adjacency, nonuniform.adjacency);
    }

    #[test]
    fn element_cell_counts_follow_ceil() {
        let fp = Rect::new(0, 0, 1_000_000, 500_000).unwrap(); // 1 mm × 0.5 mm
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let mut sizes = BTreeMap::new();
        sizes.insert((0usize, 0usize), (0.3e-3, 0.3e-3)); // ceil(1/0.3)=4, ceil(0.5/0.3)=2
        let grid = build_nonuniform_grid(&stack, &sizes).unwrap();
        assert_eq!(grid.n_cells(), 4 * 2);
    }

    #[test]
    fn gradient_zero_on_uniform_field() {
        let fp = Rect::new(0, 0, 1000, 1000).unwrap();
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let grid = build_uniform_grid(&stack, 4, 4).unwrap();
        let field = vec![321.0; grid.n_cells()];
        assert_eq!(element_gradient(&field, &grid, 0, 0), 0.0);
    }

    #[test]
    fn gradient_recovers_linear_slope_exactly() {
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let grid = build_uniform_grid(&stack, 5, 3).unwrap();
        let slope = 2.5e4; // K/m along x
        let field: Vec<f64> = grid
            .cells
            .iter()
            .map(|c| 300.0 + slope * c.center()[0])
            .collect();
        let (gx, gy) = element_gradient_axes(&field, &grid, 0, 0);
        assert_relative_eq!(gx, slope, max_relative = 1e-9);
        assert!(gy.abs() < 1e-9);
        assert_relative_eq!(element_gradient(&field, &grid, 0, 0), slope, max_relative = 1e-9);
    }

    #[test]
    fn gradient_of_single_cell_element_uses_cross_border_neighbors() {
        let fp = Rect::new(0, 0, 3000, 1000).unwrap();
        let rects = [
            Rect::new(0, 0, 1000, 1000).unwrap(),
            Rect::new(1000, 0, 2000, 1000).unwrap(),
            Rect::new(2000, 0, 3000, 1000).unwrap(),
        ];
        let stack = one_layer_stack(
            fp,
            rects
                .iter()
                .map(|&rect| FloorplanElement {
                    rect,
                    material: silicon(),
                    power_id: None,
                })
                .collect(),
        );
        let grid = build_uniform_grid(&stack, 3, 1).unwrap();
        assert_eq!(grid.n_cells(), 3);
        let slope = 1e4;
        let field: Vec<f64> = grid
            .cells
            .iter()
            .map(|c| 300.0 + slope * c.center()[0])
            .collect();
        // Middle element has one cell; both neighbors live across borders.
        let g = element_gradient(&field, &grid, 0, 1);
        assert_relative_eq!(g, slope, max_relative = 1e-9);
    }

    #[test]
    fn gradient_isolated_single_cell_is_zero() {
        let fp = Rect::new(0, 0, 1000, 1000).unwrap();
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let grid = build_uniform_grid(&stack, 1, 1).unwrap();
        assert_eq!(element_gradient(&[350.0], &grid, 0, 0), 0.0);
    }

    #[test]
    fn refine_gridsize_clamps() {
        let cfg = RefineConfig {
            alpha: 1.0,
            g_base: 1e3,
            epsilon: 1e-9,
            l_min: 1e-6,
            per_axis: false,
        };
        let l = 1e-3;
        // Huge gradient → lower clamp.
        assert_eq!(refine_gridsize(l, l, (1e12, 1e12), &cfg).0, cfg.l_min);
        // Zero gradient → upper clamp (one cell spans the element).
        assert_eq!(refine_gridsize(l, l, (0.0, 0.0), &cfg).0, l);
        // G = 2·G_base → half the extent.
        let (gx, _) = refine_gridsize(l, l, (2e3, 2e3), &cfg);
        assert_relative_eq!(gx, l / 2.0, max_relative = 1e-6);
    }

    #[test]
    fn monotone_refinement_in_gradient() {
        let cfg = RefineConfig::default();
        let l = 2e-3;
        let g_small = refine_gridsize(l, l, (100.0, 100.0), &cfg).0;
        let g_large = refine_gridsize(l, l, (5000.0, 5000.0), &cfg).0;
        assert!(g_large <= g_small);
    }

    #[test]
    fn grid_dump_contains_cells_and_adjacency() {
        let fp = Rect::new(0, 0, 2000, 1000).unwrap();
        let stack = one_layer_stack(fp, vec![full_element(fp)]);
        let grid = build_uniform_grid(&stack, 2, 1).unwrap();
        let csv = grid_to_csv(&grid);
        assert!(csv.contains("cell,layer,x0,y0,x1,y1,material"));
        assert!(csv.contains("0,die,0.000,0.000,1.000,1.000,si"));
        assert!(csv.contains("a,b,axis,area_m2"));
        assert!(csv.contains("0,1,X,"));
    }

    /// 1 mm² powered die with a small hot element in one corner.
    fn hotspot_stack() -> ValidatedStack {
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        validate_stack(StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-4,
                elements: vec![
                    FloorplanElement {
                        rect: Rect::new(0, 0, 500_000, 1_000_000).unwrap(),
                        material: silicon(),
                        power_id: None,
                    },
                    FloorplanElement {
                        rect: Rect::new(500_000, 0, 1_000_000, 500_000).unwrap(),
                        material: silicon(),
                        power_id: Some(0),
                    },
                    FloorplanElement {
                        rect: Rect::new(500_000, 500_000, 1_000_000, 1_000_000).unwrap(),
                        material: silicon(),
                        power_id: None,
                    },
                ],
                is_source: true,
            }],
            footprint: fp,
            sink: sink_top(),
            initial_temperature: 300.0,
        })
        .unwrap()
    }

    #[test]
    fn refine_keeps_a_uniformly_heated_die_coarse() {
        // A full-footprint element heated uniformly with a top sink has a
        // purely vertical field: no in-plane gradient, so the rule leaves
        // the element at one cell per axis.
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = validate_stack(StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-4,
                elements: vec![FloorplanElement {
                    rect: fp,
                    material: silicon(),
                    power_id: Some(0),
                }],
                is_source: true,
            }],
            footprint: fp,
            sink: sink_top(),
            initial_temperature: 300.0,
        })
        .unwrap();
        let (grid, report) =
            refine_loop(&stack, 6, 6, &[20.0], &RefineConfig::default(), 1).unwrap();
        assert_eq!(report.coarse_cells, 36);
        let g = report.gradients[&(0, 0)];
        assert!(g.0.abs() < 1e-6, "gradient {g:?} should vanish");
        let (sx, sy) = report.gridsizes[&(0, 0)];
        assert_relative_eq!(sx, 1e-3, max_relative = 1e-12); // clamped at l
        assert_relative_eq!(sy, 1e-3, max_relative = 1e-12);
        assert_eq!(grid.n_cells(), 1);
    }

    #[test]
    fn refine_gives_the_hotspot_element_the_smallest_gridsize() {
        let stack = hotspot_stack();
        let cfg = RefineConfig {
            g_base: 2e4,
            ..RefineConfig::default()
        };
        let (grid, report) = refine_loop(&stack, 8, 8, &[5.0], &cfg, 1).unwrap();

        let hot = report.gridsizes[&(0, 1)];
        let smallest = report
            .gridsizes
            .iter()
            .min_by(|a, b| (a.1 .0.min(a.1 .1)).partial_cmp(&(b.1 .0.min(b.1 .1))).unwrap())
            .map(|(k, _)| *k)
            .unwrap();
        assert_eq!(smallest, (0, 1), "hotspot did not get the finest mesh: {report:?}");

        // The hot element's gradient dominates, so its mesh is finer than
        // the unpowered far element's in both axes.
        let far = report.gridsizes[&(0, 0)];
        assert!(hot.0 < far.0 && hot.1 < far.1, "hot {hot:?} vs far {far:?}");
        let g_hot = report.gradients[&(0, 1)];
        let g_far = report.gradients[&(0, 0)];
        assert!(g_hot.0 > g_far.0);

        // Cell density (cells per footprint area) is highest in the
        // hotspot element.
        let density = |e: usize| {
            let ids = grid.element_cells(0, e);
            let area: f64 = ids.iter().map(|&id| grid.cells[id].footprint_m2()).sum();
            ids.len() as f64 / area
        };
        assert!(density(1) > density(0));
    }

    #[test]
    fn refine_propagates_power_table_errors() {
        let stack = hotspot_stack();
        let err = refine_loop(&stack, 4, 4, &[], &RefineConfig::default(), 1).unwrap_err();
        assert!(err.to_string().contains("power source id 0"), "{err}");
    }

    #[test]
    fn refine_supports_multiple_passes() {
        let stack = hotspot_stack();
        let cfg = RefineConfig {
            g_base: 2e4,
            ..RefineConfig::default()
        };
        let (_, one_pass) = refine_loop(&stack, 8, 8, &[5.0], &cfg, 1).unwrap();
        let (grid2, two_pass) = refine_loop(&stack, 8, 8, &[5.0], &cfg, 2).unwrap();
        assert_eq!(two_pass.passes, 2);
        assert_eq!(two_pass.gridsizes.len(), 3);
        assert_eq!(one_pass.gridsizes.len(), 3);
        assert!(grid2.n_cells() >= 3);
    }
}
