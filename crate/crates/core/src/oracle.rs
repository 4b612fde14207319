//! Independent reference implementations used to verify the fast paths:
//! a dense direct solver, a closed-form 1D slab profile, and error
//! metrics. Everything here is deliberately simple, single-threaded, and
//! shares no code with the sparse solver it checks.

use crate::error::{Error, Result};
use crate::grid::ThermalGrid;
use crate::network::SparseSystem;
use crate::solver::TemperatureField;

/// Largest system the dense reference will accept; beyond this a dense
/// solve is almost certainly a mistake in a test.
pub const DENSE_LIMIT: usize = 2000;

/// Solve `G·T = P` by dense Gaussian elimination with partial pivoting.
/// Completely independent of the sparse Cholesky path.
pub fn dense_solve(sys: &SparseSystem) -> Result<TemperatureField> {
    let n = sys.n;
    if n > DENSE_LIMIT {
        return Err(Error::Invalid(format!(
            "dense reference solve refused: {n} cells exceeds the {DENSE_LIMIT}-cell guard"
        )));
    }
    let mut a = vec![0.0f64; n * n];
    for row in 0..n {
        for k in sys.row_ptr[row]..sys.row_ptr[row + 1] {
            a[row * n + sys.col_idx[k]] = sys.values[k];
        }
    }
    let mut b = sys.p.clone();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Numerical("dense solve: matrix is zero".into()));
    }

    // Forward elimination with row pivoting.
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| {
                a[r * n + col]
                    .abs()
                    .partial_cmp(&a[s * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        let pivot = a[pivot_row * n + col];
        if pivot.abs() <= 1e-14 * scale {
            return Err(Error::Numerical(format!(
                "dense solve: matrix is singular at column {col} (pivot {pivot:.3e})"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for j in col + 1..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }

    // Back substitution.
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }

    // Verify against the original (sparse) matrix with the scale-invariant
    // relative residual ‖G·x − p‖∞ / (‖G‖∞·‖x‖∞ + ‖p‖∞): conductances can
    // dwarf the power vector, so normalizing by ‖p‖ alone would reject
    // backward-stable solves on stiff but healthy systems.
    let gx = sys.multiply(&x);
    let num = gx
        .iter()
        .zip(&sys.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let g_norm = (0..n)
        .map(|row| {
            sys.values[sys.row_ptr[row]..sys.row_ptr[row + 1]]
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max);
    let x_norm = x.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let p_norm = sys.p.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let den = g_norm * x_norm + p_norm;
    let residual = if den > 0.0 { num / den } else { num };
    if residual > 1e-12 {
        return Err(Error::Numerical(format!(
            "dense solve residual {residual:.3e} exceeds 1e-12"
        )));
    }
    Ok(TemperatureField(x))
}

/// One-dimensional slab heated with `flux` W at one face, cooled by a
/// convective film at the other.
#[derive(Clone, Copy, Debug)]
pub struct SlabSpec {
    /// Slab length along the heat-flow direction, m.
    pub thickness: f64,
    /// Thermal conductivity, W/(m·K).
    pub conductivity: f64,
    /// Cross-section area, m².
    pub area: f64,
    /// Heat entering at the flux face, W.
    pub flux: f64,
    /// Film coefficient at the cooled face, W/(m²·K).
    pub h_coeff: f64,
    /// Coolant temperature, K.
    pub ambient: f64,
}

impl SlabSpec {
    pub fn validate(&self) -> Result<()> {
        for (label, v) in [
            ("thickness", self.thickness),
            ("conductivity", self.conductivity),
            ("area", self.area),
            ("h_coeff", self.h_coeff),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "slab {label} must be positive, got {v}"
                )));
            }
        }
        if !(self.flux >= 0.0 && self.flux.is_finite()) {
            return Err(Error::Invalid(format!(
                "slab flux must be non-negative, got {}",
                self.flux
            )));
        }
        Ok(())
    }

    /// Total temperature rise over ambient at the flux face:
    /// film rise + conduction drop.
    pub fn delta_t_total(&self) -> f64 {
        let film = self.flux / (self.h_coeff * self.area);
        let conduction = self.flux * self.thickness / (self.conductivity * self.area);
        film + conduction
    }
}

/// Closed-form steady temperature at distance `x` from the flux face
/// (so `x = thickness` is the cooled face):
///
///   T(x) = T_amb + Q/(h·A) + Q·(L − x)/(k·A)
pub fn analytic_slab_at(s: &SlabSpec, x: f64) -> f64 {
    let film = s.flux / (s.h_coeff * s.area);
    let conduction = s.flux * (s.thickness - x) / (s.conductivity * s.area);
    s.ambient + film + conduction
}

/// The profile sampled at the centers of `n_points` equal slices, ordered
/// from the flux face toward the cooled face — the natural pairing for a
/// cell-centered 1D discretization.
pub fn analytic_slab(s: &SlabSpec, n_points: usize) -> Vec<f64> {
    let d = s.thickness / n_points as f64;
    (0..n_points)
        .map(|i| analytic_slab_at(s, (i as f64 + 0.5) * d))
        .collect()
}

/// Plain RMSE of two equally weighted samples of the same cells.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!(
            "rmse needs two equally sized non-empty fields, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Area-weighted RMSE of explicitly paired samples.
pub fn rmse_weighted(pairs: &[(f64, f64, f64)]) -> Result<f64> {
    let total: f64 = pairs.iter().map(|&(_, _, w)| w).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Invalid("rmse weights must sum to a positive area".into()));
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(a, b, w)| w * (a - b) * (a - b))
        .sum();
    Ok((sum / total).sqrt())
}

/// Area-weighted RMSE between one layer of grid `a` and one layer of grid
/// `b`, which may be meshed differently. Every cell of the finer layer
/// (more cells) is compared against the coarse cell containing its center
/// and weighted by its footprint area. The two layers must cover the same
/// region; a fine cell whose center no coarse cell contains is an error.
pub fn rmse_between_layers(
    grid_a: &ThermalGrid,
    field_a: &[f64],
    layer_a: usize,
    grid_b: &ThermalGrid,
    field_b: &[f64],
    layer_b: usize,
) -> Result<f64> {
    let cells_a = grid_a.layer_cells(layer_a);
    let cells_b = grid_b.layer_cells(layer_b);
    if cells_a.is_empty() || cells_b.is_empty() {
        return Err(Error::Invalid("rmse: empty layer".into()));
    }
    // Fine grid drives the sampling.
    let (fine, fine_field, coarse, coarse_field, coarse_cells, fine_cells) =
        if cells_a.len() >= cells_b.len() {
            (grid_a, field_a, grid_b, field_b, cells_b, cells_a)
        } else {
            (grid_b, field_b, grid_a, field_a, cells_a, cells_b)
        };
    let mut pairs = Vec::with_capacity(fine_cells.len());
    for &fid in fine_cells {
        let r = fine.cells[fid].rect;
        let (cx, cy) = ((r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2);
        let host = coarse_cells.iter().copied().find(|&cid| {
            let h = coarse.cells[cid].rect;
            h.x0 <= cx && cx < h.x1 && h.y0 <= cy && cy < h.y1
        });
        let Some(host) = host else {
            return Err(Error::Invalid(format!(
                "rmse: grids do not overlap — no cell of the coarse layer contains \
                 the center of cell at ({cx}, {cy}) nm"
            )));
        };
        pairs.push((fine_field[fid], coarse_field[host], fine.cells[fid].footprint_m2()));
    }
    rmse_weighted(&pairs)
}
