//! Assembly of the sparse thermal RC network from a discretized stack.
//!
//! Every cell becomes one node. Conducting faces between adjacent cells
//! become conductances assembled into a symmetric matrix `G`; cell heat
//! capacities form the diagonal vector `C`; injected power plus the
//! ambient coupling of sink-face cells form the source vector `P`. Faces
//! on the outer boundary that do not touch the sink are adiabatic and
//! contribute nothing.
//!
//! Assembly is deterministic for a fixed grid regardless of worker count:
//! each row of `G` is produced by exactly one task from a pre-sorted
//! neighbor list, so the floating-point accumulation order is fixed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Adjacency, Axis, ThermalGrid};
use crate::stack::SinkModel;

/// Sparse symmetric thermal system
///
///   G · T = P            (steady state)
///   C · dT/dt + G · T = P (transient)
///
/// stored in compressed sparse row form. `G` includes the sink coupling
/// `h·A` on the diagonal of sink-face cells, and `P` includes the matching
/// `h·A·T_ambient` term, so `T` solves directly to absolute temperatures.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    /// Number of cells (matrix dimension).
    pub n: usize,
    /// CSR row pointers, length `n + 1`.
    pub row_ptr: Vec<usize>,
    /// CSR column indices, sorted within each row; includes the diagonal.
    pub col_idx: Vec<usize>,
    /// CSR values of `G` in W/K.
    pub values: Vec<f64>,
    /// Heat capacity per cell in J/K.
    pub c: Vec<f64>,
    /// Source vector in W (injected power + folded ambient term).
    pub p: Vec<f64>,
    /// Ambient temperature in K.
    pub ambient: f64,
    /// `h·A` per cell (zero for cells not on the sink face).
    pub sink_conductance: Vec<f64>,
    /// Injected power per cell in W, before the ambient term is folded in.
    pub injected: Vec<f64>,
}

impl SparseSystem {
    /// Value of `G[row, col]`, or 0 if the entry is not stored.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// `G · t`.
    pub fn multiply(&self, t: &[f64]) -> Vec<f64> {
        assert_eq!(t.len(), self.n);
        (0..self.n)
            .map(|row| {
                let lo = self.row_ptr[row];
                let hi = self.row_ptr[row + 1];
                (lo..hi).map(|k| self.values[k] * t[self.col_idx[k]]).sum()
            })
            .collect()
    }

    /// Replace the injected power (per cell, W) and re-fold the ambient term.
    pub fn replace_power(&mut self, injected: Vec<f64>) {
        assert_eq!(injected.len(), self.n);
        self.p = injected
            .iter()
            .zip(&self.sink_conductance)
            .map(|(&q, &ha)| q + ha * self.ambient)
            .collect();
        self.injected = injected;
    }

    /// Check structural invariants; returns a description of the first
    /// violation found. A valid system is symmetric, has non-positive
    /// off-diagonal entries, strictly positive capacities, and row sums
    /// equal to the boundary (sink) conductance of the row's cell.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.row_ptr.len() != self.n + 1 {
            return Err("row pointer length mismatch".into());
        }
        for row in 0..self.n {
            let lo = self.row_ptr[row];
            let hi = self.row_ptr[row + 1];
            let mut sum = 0.0;
            let mut scale = 0.0f64;
            for k in lo..hi {
                let col = self.col_idx[k];
                let v = self.values[k];
                if k > lo && self.col_idx[k - 1] >= col {
                    return Err(format!("row {row}: columns not strictly increasing"));
                }
                if col != row && v > 0.0 {
                    return Err(format!("G[{row},{col}] = {v} is a positive off-diagonal"));
                }
                let transposed = self.entry(col, row);
                if transposed != v {
                    return Err(format!(
                        "asymmetry: G[{row},{col}] = {v} but G[{col},{row}] = {transposed}"
                    ));
                }
                sum += v;
                scale = scale.max(v.abs());
            }
            let expected = self.sink_conductance[row];
            if (sum - expected).abs() > 1e-12 * scale.max(expected) {
                return Err(format!(
                    "row {row} sums to {sum}, expected boundary conductance {expected}"
                ));
            }
            if self.c[row].is_nan() || self.c[row] <= 0.0 {
                return Err(format!("capacity C[{row}] = {} is not positive", self.c[row]));
            }
        }
        Ok(())
    }

    /// Dump `G` in coordinate text format, one `row col value` triple per
    /// line, rows ascending then columns ascending.
    pub fn to_coordinate_format(&self) -> String {
        let mut out = String::new();
        for row in 0..self.n {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                out.push_str(&format!("{row} {} {:.17e}\n", self.col_idx[k], self.values[k]));
            }
        }
        out
    }
}

/// Conductance of a face of `area` m² between two cells with conductivities
/// `k_a`, `k_b` (W/(m·K)) and full widths `d_a`, `d_b` (m) along the face
/// normal: two half-cell resistances in series.
pub fn face_conductance_raw(k_a: f64, k_b: f64, d_a: f64, d_b: f64, area: f64) -> f64 {
    area / (d_a / (2.0 * k_a) + d_b / (2.0 * k_b))
}

/// Conductance of one adjacency in a grid, using the in-plane conductivity
/// for lateral faces and the vertical conductivity for stacked faces.
pub fn face_conductance(grid: &ThermalGrid, adj: &Adjacency) -> f64 {
    let k_a = grid.conductivity(adj.a, adj.axis);
    let k_b = grid.conductivity(adj.b, adj.axis);
    let d_a = grid.cells[adj.a].extent(adj.axis);
    let d_b = grid.cells[adj.b].extent(adj.axis);
    face_conductance_raw(k_a, k_b, d_a, d_b, adj.area)
}

/// Heat capacity of one cell: density · specific heat · volume.
pub fn cell_capacitance(grid: &ThermalGrid, cell: usize) -> f64 {
    let c = &grid.cells[cell];
    let m = &grid.materials[c.material];
    m.density * m.heat_capacity * c.volume()
}

/// Distribute per-source powers onto cells. `powers[id]` is the wattage of
/// power source `id`; every element tagged with that id dissipates it,
/// split over the element's cells in proportion to footprint area. The
/// returned vector sums exactly (in floating point) to the total injected
/// power: the last cell of each element absorbs the split's rounding
/// residue.
pub fn map_power(powers: &[f64], grid: &ThermalGrid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.n_cells()];
    for ((layer, element), &pid) in &grid.element_power {
        let total = *powers.get(pid).ok_or_else(|| {
            Error::Invalid(format!(
                "power source id {pid} on layer '{}' has no entry in the power table \
                 ({} sources defined)",
                grid.layer_names[*layer],
                powers.len()
            ))
        })?;
        if !grid.source_layers[*layer] {
            return Err(Error::Invalid(format!(
                "layer '{}' carries power source {pid} but is not marked as a source layer",
                grid.layer_names[*layer]
            )));
        }
        if !(total.is_finite() && total >= 0.0) {
            return Err(Error::Invalid(format!(
                "power source {pid} has invalid wattage {total}"
            )));
        }
        let cells = grid.element_cells(*layer, *element);
        let elem_area: f64 = cells.iter().map(|&id| grid.cells[id].footprint_m2()).sum();
        let mut assigned = 0.0;
        for (i, &id) in cells.iter().enumerate() {
            let share = if i + 1 == cells.len() {
                total - assigned
            } else {
                let s = total * (grid.cells[id].footprint_m2() / elem_area);
                assigned += s;
                s
            };
            out[id] += share;
        }
    }
    Ok(out)
}

/// Assemble the full sparse system for a grid and a power table.
///
/// Workers split the conductance computations and the row construction;
/// each row is written by exactly one task from a canonically ordered
/// neighbor list, so the result is bit-identical across worker counts.
pub fn assemble(grid: &ThermalGrid, powers: &[f64]) -> Result<SparseSystem> {
    let n = grid.n_cells();
    if n == 0 {
        return Err(Error::NoGeometry);
    }
    let injected = map_power(powers, grid)?;

    // Face conductances, in adjacency order (parallel, order-preserving).
    let face_g: Vec<f64> = grid
        .adjacency
        .par_iter()
        .map(|adj| face_conductance(grid, adj))
        .collect();

    // Scatter into per-row neighbor lists. `grid.adjacency` is sorted by
    // (a, b), so each row's neighbor list comes out sorted by column.
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (adj, &g) in grid.adjacency.iter().zip(&face_g) {
        neighbors[adj.a].push((adj.b, g));
        neighbors[adj.b].push((adj.a, g));
    }
    for list in &mut neighbors {
        list.sort_by_key(|&(col, _)| col);
    }

    let mut sink_conductance = vec![0.0; n];
    for face in &grid.boundary {
        let g = match grid.sink.model {
            // Film coefficient from the cell center: G = h·A.
            SinkModel::Film => grid.sink.h_coeff * face.area,
            // Film in series with the half-cell conduction path:
            // G = A / (1/h + d/(2·k⊥)).
            SinkModel::FilmHalfCell => {
                let d = grid.cells[face.cell].thickness;
                let k = grid.conductivity(face.cell, Axis::Z);
                face.area / (1.0 / grid.sink.h_coeff + d / (2.0 * k))
            }
        };
        sink_conductance[face.cell] += g;
    }

    // Build each CSR row independently: off-diagonals are the negated face
    // conductances; the diagonal is their positive sum plus the sink term,
    // accumulated in column order.
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|row| {
            let list = &neighbors[row];
            let mut cols = Vec::with_capacity(list.len() + 1);
            let mut vals = Vec::with_capacity(list.len() + 1);
            let mut diag = sink_conductance[row];
            let mut inserted_diag = false;
            for &(col, g) in list {
                diag += g;
                if !inserted_diag && col > row {
                    cols.push(row);
                    vals.push(f64::NAN); // patched below once diag is complete
                    inserted_diag = true;
                }
                cols.push(col);
                vals.push(-g);
            }
            if !inserted_diag {
                cols.push(row);
                vals.push(f64::NAN);
            }
            let diag_pos = cols.iter().position(|&c| c == row).expect("diagonal present");
            vals[diag_pos] = diag;
            (cols, vals)
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for (cols, vals) in rows {
        col_idx.extend_from_slice(&cols);
        values.extend_from_slice(&vals);
        row_ptr.push(col_idx.len());
    }

    let c: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|id| cell_capacitance(grid, id))
        .collect();

    let ambient = grid.sink.ambient;
    let p: Vec<f64> = injected
        .iter()
        .zip(&sink_conductance)
        .map(|(&q, &ha)| q + ha * ambient)
        .collect();

    Ok(SparseSystem {
        n,
        row_ptr,
        col_idx,
        values,
        c,
        p,
        ambient,
        sink_conductance,
        injected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::grid::build_uniform_grid;
    use crate::material::Material;
    use crate::stack::{
        validate_stack, FloorplanElement, Layer, Sink, SinkFace, SinkModel, StackDescription, ValidatedStack,
    };
    use approx::assert_relative_eq;

    fn slab_stack(power: f64) -> ValidatedStack {
        let chip = Material::isotropic("chip", 130.0, 2300.0, 700.0);
        let footprint = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap(); // 1 mm × 1 mm
        let stack = StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-3,
                elements: vec![FloorplanElement {
                    rect: footprint,
                    material: chip,
                    power_id: Some(0),
                }],
                is_source: true,
            }],
            footprint,
            sink: Sink {
                h_coeff: 1.0e4,
                ambient: 300.0,
                face: SinkFace::Top,
                model: SinkModel::Film,
            },
            initial_temperature: 300.0,
        };
        let _ = power;
        validate_stack(stack).unwrap()
    }

    #[test]
    fn face_conductance_identical_cells_is_k_area_over_pitch() {
        // Two identical cells, conductivity k, width d each: series of two
        // half-resistances d/(2k·A) gives G = k·A/d.
        let g = face_conductance_raw(130.0, 130.0, 1e-4, 1e-4, 1e-8);
        assert_relative_eq!(g, 130.0 * 1e-8 / 1e-4, max_relative = 1e-15);
    }

    #[test]
    fn face_conductance_mixed_materials() {
        // k_a = 1, k_b = 3, both 2 µm wide, shared face 1 µm²:
        // R = 1e-6/1 + 1e-6/3 = (4/3)e-6 per m² → G = 1e-12 / (4/3 · 1e-6 / 1e-0)
        let g = face_conductance_raw(1.0, 3.0, 2e-6, 2e-6, 1e-12);
        assert_relative_eq!(g, 7.5e-7, max_relative = 1e-12);
    }

    #[test]
    fn face_conductance_scales_linearly_with_area() {
        let g1 = face_conductance_raw(10.0, 20.0, 1e-5, 3e-5, 1e-10);
        let g2 = face_conductance_raw(10.0, 20.0, 1e-5, 3e-5, 2e-10);
        assert_relative_eq!(g2, 2.0 * g1, max_relative = 1e-15);
    }

    #[test]
    fn capacitance_of_one_cubic_millimetre_of_heatsink_copper() {
        let copper = Material::isotropic("heatsink", 385.0, 8900.0, 387.0);
        let footprint = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = StackDescription {
            layers: vec![Layer {
                name: "hs".into(),
                thickness: 1e-3,
                elements: vec![FloorplanElement {
                    rect: footprint,
                    material: copper,
                    power_id: None,
                }],
                is_source: false,
            }],
            footprint,
            sink: Sink {
                h_coeff: 1.0,
                ambient: 300.0,
                face: SinkFace::Top,
                model: SinkModel::Film,
            },
            initial_temperature: 300.0,
        };
        let grid = build_uniform_grid(&validate_stack(stack).unwrap(), 1, 1).unwrap();
        // 8900 kg/m³ · 387 J/(kg·K) · 1e-9 m³ = 3.4443e-3 J/K.
        assert_relative_eq!(cell_capacitance(&grid, 0), 3.4443e-3, max_relative = 1e-12);
    }

    #[test]
    fn power_split_equally_over_equal_cells() {
        let grid = build_uniform_grid(&slab_stack(10.0), 2, 2).unwrap();
        let p = map_power(&[10.0], &grid).unwrap();
        assert_eq!(p.len(), 4);
        for v in &p {
            assert_relative_eq!(*v, 2.5, max_relative = 1e-15);
        }
        assert_eq!(p.iter().sum::<f64>(), 10.0); // exact
    }

    #[test]
    fn power_split_proportional_to_area() {
        // Footprint 8 µm wide; the powered element spans [3, 7] µm so the
        // uniform 2-column lattice line at 4 µm cuts it 1 : 3.
        let chip = Material::isotropic("chip", 130.0, 2300.0, 700.0);
        let footprint = Rect::new(0, 0, 8_000, 1_000).unwrap();
        let stack = StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-6,
                elements: vec![
                    FloorplanElement {
                        rect: Rect::new(0, 0, 3_000, 1_000).unwrap(),
                        material: chip.clone(),
                        power_id: None,
                    },
                    FloorplanElement {
                        rect: Rect::new(3_000, 0, 7_000, 1_000).unwrap(),
                        material: chip.clone(),
                        power_id: Some(0),
                    },
                    FloorplanElement {
                        rect: Rect::new(7_000, 0, 8_000, 1_000).unwrap(),
                        material: chip,
                        power_id: None,
                    },
                ],
                is_source: true,
            }],
            footprint,
            sink: Sink {
                h_coeff: 1.0e4,
                ambient: 300.0,
                face: SinkFace::Top,
                model: SinkModel::Film,
            },
            initial_temperature: 300.0,
        };
        let grid = build_uniform_grid(&validate_stack(stack).unwrap(), 2, 1).unwrap();
        let p = map_power(&[10.0], &grid).unwrap();
        let mut nonzero: Vec<f64> = p.iter().copied().filter(|&v| v != 0.0).collect();
        nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(nonzero.len(), 2);
        assert_relative_eq!(nonzero[0], 2.5, max_relative = 1e-12);
        assert_relative_eq!(nonzero[1], 7.5, max_relative = 1e-12);
        assert_eq!(p.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn power_sum_is_exact_even_on_awkward_splits() {
        let grid = build_uniform_grid(&slab_stack(0.0), 7, 3).unwrap();
        let total = 0.1 + 1e-13; // not representable cleanly across 21 shares
        let p = map_power(&[total], &grid).unwrap();
        assert_eq!(p.iter().sum::<f64>(), total);
    }

    #[test]
    fn unknown_power_id_is_an_error() {
        let grid = build_uniform_grid(&slab_stack(10.0), 1, 1).unwrap();
        let err = map_power(&[], &grid).unwrap_err();
        assert!(err.to_string().contains("power source id 0"), "{err}");
    }

    #[test]
    fn single_cell_system_matches_closed_form() {
        let grid = build_uniform_grid(&slab_stack(10.0), 1, 1).unwrap();
        let sys = assemble(&grid, &[10.0]).unwrap();
        assert_eq!(sys.n, 1);
        // G = [h·A] with h = 1e4 W/(m²K), A = 1e-6 m².
        assert_relative_eq!(sys.entry(0, 0), 1.0e4 * 1e-6, max_relative = 1e-12);
        // P = Q + h·A·T_amb = 10 + 0.01 · 300.
        assert_relative_eq!(sys.p[0], 10.0 + 3.0, max_relative = 1e-12);
        sys.check_invariants().unwrap();
    }

    #[test]
    fn halfcell_sink_model_puts_film_and_conduction_in_series() {
        let chip = Material::isotropic("chip", 130.0, 2300.0, 700.0);
        let footprint = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-3,
                elements: vec![FloorplanElement {
                    rect: footprint,
                    material: chip,
                    power_id: Some(0),
                }],
                is_source: true,
            }],
            footprint,
            sink: Sink {
                h_coeff: 1.0e4,
                ambient: 300.0,
                face: SinkFace::Top,
                model: SinkModel::FilmHalfCell,
            },
            initial_temperature: 300.0,
        };
        let grid = build_uniform_grid(&validate_stack(stack).unwrap(), 1, 1).unwrap();
        let sys = assemble(&grid, &[10.0]).unwrap();
        // G = A / (1/h + d/(2k)) = 1e-6 / (1e-4 + 1e-3/260).
        let g = 1e-6 / (1e-4 + 1e-3 / 260.0);
        assert_relative_eq!(sys.entry(0, 0), g, max_relative = 1e-12);
        assert_relative_eq!(sys.p[0], 10.0 + g * 300.0, max_relative = 1e-12);
        sys.check_invariants().unwrap();
    }

    #[test]
    fn two_cell_column_couples_through_one_face() {
        let grid = build_uniform_grid(&slab_stack(10.0), 1, 2).unwrap();
        let sys = assemble(&grid, &[10.0]).unwrap();
        assert_eq!(sys.n, 2);
        let g_ab = face_conductance(&grid, &grid.adjacency[0]);
        assert!(g_ab > 0.0);
        assert_relative_eq!(sys.entry(0, 1), -g_ab, max_relative = 1e-15);
        assert_relative_eq!(sys.entry(1, 0), -g_ab, max_relative = 1e-15);
        // Whole top face of the single-layer stack is the sink.
        let ha: f64 = sys.sink_conductance.iter().sum();
        assert_relative_eq!(ha, 1.0e4 * 1e-6, max_relative = 1e-12);
        sys.check_invariants().unwrap();
    }

    #[test]
    fn row_sums_equal_boundary_conductance_on_a_dense_grid() {
        let grid = build_uniform_grid(&slab_stack(25.0), 8, 8).unwrap();
        let sys = assemble(&grid, &[25.0]).unwrap();
        sys.check_invariants().unwrap();
        // Interior rows (not on the sink face) must sum to exactly their
        // stored boundary conductance, which is zero for a 1-layer stack
        // only on non-top cells… every cell of the single layer touches the
        // top here, so instead check the totals.
        let total_sink: f64 = sys.sink_conductance.iter().sum();
        assert_relative_eq!(total_sink, 1.0e4 * 1e-6, max_relative = 1e-12);
        let injected: f64 = sys.injected.iter().sum();
        assert_relative_eq!(injected, 25.0, max_relative = 1e-15);
    }

    #[test]
    fn assembly_is_bit_identical_across_worker_counts() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let grid = build_uniform_grid(&slab_stack(25.0), 13, 9).unwrap();
                assemble(&grid, &[25.0]).unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.row_ptr, b.row_ptr);
        assert_eq!(a.col_idx, b.col_idx);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.values), bits(&b.values));
        assert_eq!(bits(&a.c), bits(&b.c));
        assert_eq!(bits(&a.p), bits(&b.p));
    }

    #[test]
    fn coordinate_dump_round_trips_entries() {
        let grid = build_uniform_grid(&slab_stack(10.0), 2, 1).unwrap();
        let sys = assemble(&grid, &[10.0]).unwrap();
        let dump = sys.to_coordinate_format();
        let mut entries = 0;
        for line in dump.lines() {
            let mut it = line.split_whitespace();
            let r: usize = it.next().unwrap().parse().unwrap();
            let c: usize = it.next().unwrap().parse().unwrap();
            let v: f64 = it.next().unwrap().parse().unwrap();
            assert_eq!(v, sys.entry(r, c), "entry ({r},{c})");
            entries += 1;
        }
        assert_eq!(entries, sys.values.len());
    }
}
