//! Quadtree tiling of a layout window.
//!
//! The window is recursively subdivided into quadrants until each tile is
//! nearly pure (feature fraction ρ at or below `rho_lo`, or at or above
//! `rho_hi`) or the depth cap is reached. Overlap areas are computed exactly
//! on integer coordinates, so the tiles partition the window with
//! integer-exact area accounting. Each tile can then be converted into a
//! floorplan element carrying an anisotropic equivalent material.

use crate::error::{Error, Result};
use crate::geometry::{overlap_area_exact, Rect, SpatialIndex};
use crate::material::{
    effective_material_with, EffectiveMaterial, Material, MixingRule,
};
use crate::stack::FloorplanElement;
use crate::units::{format_um, parse_um_to_nm};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

/// Stopping parameters for quadtree subdivision.
#[derive(Clone, Copy, Debug)]
pub struct TilingConfig {
    /// Maximum recursion depth; a region at this depth is emitted as-is.
    pub i_max: u32,
    /// A tile with ρ ≤ `rho_lo` counts as pure fill and stops subdividing.
    pub rho_lo: f64,
    /// A tile with ρ ≥ `rho_hi` counts as pure feature and stops subdividing.
    pub rho_hi: f64,
}

impl TilingConfig {
    pub fn new(i_max: u32, rho_lo: f64, rho_hi: f64) -> Result<TilingConfig> {
        if !(0.0 <= rho_lo && rho_lo < rho_hi && rho_hi <= 1.0) {
            return Err(Error::Invalid(format!(
                "purity thresholds must satisfy 0 ≤ rho_lo < rho_hi ≤ 1, got {rho_lo} and {rho_hi}"
            )));
        }
        Ok(TilingConfig {
            i_max,
            rho_lo,
            rho_hi,
        })
    }
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            i_max: 10,
            rho_lo: 0.02,
            rho_hi: 0.98,
        }
    }
}

/// One leaf of the subdivision: a rectangle, its feature fraction, and the
/// depth at which it was emitted.
#[derive(Clone, Debug)]
pub struct Tile {
    pub region: Rect,
    /// Feature fraction in [0, 1] (nearest f64 of the exact ratio).
    pub rho: f64,
    pub depth: u32,
    covered: BigRational,
}

impl Tile {
    /// Exact feature-covered area inside this tile, in units².
    pub fn covered_area_exact(&self) -> &BigRational {
        &self.covered
    }
}

/// Subdivide `window` over the indexed layout. The returned tiles exactly
/// partition the window and are sorted by (y0, x0), so the result is
/// deterministic regardless of how the recursion is scheduled.
///
/// An empty index yields a single tile with ρ = 0.
pub fn generate_tiles(index: &SpatialIndex, window: Rect, cfg: &TilingConfig) -> Vec<Tile> {
    let mut tiles = subdivide(index, window, 0, cfg);
    tiles.sort_by_key(|t| (t.region.y0, t.region.x0));
    tiles
}

/// Recursive helper: emit `region` as a tile when the stop rule holds
/// (purity threshold met, depth cap reached, or the region is a single unit
/// wide/tall and cannot split), otherwise recurse into its four quadrants.
/// Sibling quadrants are processed in parallel.
pub fn subdivide(index: &SpatialIndex, region: Rect, depth: u32, cfg: &TilingConfig) -> Vec<Tile> {
    let candidates = index.query(region);
    let covered = overlap_area_exact(
        region,
        candidates.iter().map(|&id| index.polygon(id)),
    );
    let area = BigRational::from_integer(BigInt::from(region.area()));
    let pure_fill = covered <= rational_of(cfg.rho_lo) * &area;
    let pure_feature = covered >= rational_of(cfg.rho_hi) * &area;
    let splittable = region.width() >= 2 && region.height() >= 2;

    if pure_fill || pure_feature || depth >= cfg.i_max || !splittable {
        let rho = (&covered / &area).to_f64().unwrap_or(f64::NAN);
        return vec![Tile {
            region,
            rho,
            depth,
            covered,
        }];
    }

    let [q0, q1, q2, q3] = split_quad(region);
    let ((mut t0, t1), (t2, t3)) = rayon::join(
        || {
            rayon::join(
                || subdivide(index, q0, depth + 1, cfg),
                || subdivide(index, q1, depth + 1, cfg),
            )
        },
        || {
            rayon::join(
                || subdivide(index, q2, depth + 1, cfg),
                || subdivide(index, q3, depth + 1, cfg),
            )
        },
    );
    t0.extend(t1);
    t0.extend(t2);
    t0.extend(t3);
    t0
}

/// The exact rational value of an f64 threshold, so purity comparisons are
/// reproducible bit-for-bit.
fn rational_of(x: f64) -> BigRational {
    BigRational::from_float(x).expect("thresholds are finite")
}

/// Split a rectangle into its four quadrants at the floor midpoints.
/// Requires width ≥ 2 and height ≥ 2; single-unit-extent regions must be
/// emitted as leaves by the caller instead.
pub fn split_quad(region: Rect) -> [Rect; 4] {
    debug_assert!(region.width() >= 2 && region.height() >= 2);
    let mx = region.x0 + (region.x1 - region.x0) / 2;
    let my = region.y0 + (region.y1 - region.y0) / 2;
    let r = |x0, y0, x1, y1| Rect::new(x0, y0, x1, y1).expect("quadrants are valid");
    [
        r(region.x0, region.y0, mx, my),
        r(mx, region.y0, region.x1, my),
        r(region.x0, my, mx, region.y1),
        r(mx, my, region.x1, region.y1),
    ]
}

/// Convert tiles into floorplan elements, one per tile, each carrying the
/// equivalent material for its feature fraction.
pub fn tiles_to_floorplan(
    tiles: &[Tile],
    feature: &Material,
    fill: &Material,
) -> Result<Vec<FloorplanElement>> {
    tiles_to_floorplan_with(MixingRule::default(), tiles, feature, fill)
}

/// [`tiles_to_floorplan`] with an explicit mixing rule.
pub fn tiles_to_floorplan_with(
    rule: MixingRule,
    tiles: &[Tile],
    feature: &Material,
    fill: &Material,
) -> Result<Vec<FloorplanElement>> {
    let pairs: Vec<(Rect, f64)> = tiles.iter().map(|t| (t.region, t.rho)).collect();
    floorplan_from_rho_list(rule, &pairs, feature, fill)
}

/// Build floorplan elements from (region, ρ) pairs — the deserialized form
/// of the tile CSV.
pub fn floorplan_from_rho_list(
    rule: MixingRule,
    tiles: &[(Rect, f64)],
    feature: &Material,
    fill: &Material,
) -> Result<Vec<FloorplanElement>> {
    tiles
        .iter()
        .map(|&(rect, rho)| {
            let material = if rho == 1.0 {
                feature.clone()
            } else if rho == 0.0 {
                fill.clone()
            } else {
                let eff: EffectiveMaterial = effective_material_with(rule, rho, feature, fill)?;
                eff.into_material(&format!("{}+{}", feature.name, fill.name))
            };
            Ok(FloorplanElement {
                rect,
                material,
                power_id: None,
            })
        })
        .collect()
}

/// Serialize tiles as CSV: `x0,y0,x1,y1,rho`, coordinates in µm with three
/// decimals (exact, since coordinates are integer nanometers).
pub fn tiles_to_csv(tiles: &[Tile]) -> String {
    let mut out = String::from("x0,y0,x1,y1,rho\n");
    for t in tiles {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            format_um(t.region.x0),
            format_um(t.region.y0),
            format_um(t.region.x1),
            format_um(t.region.y1),
            t.rho
        ));
    }
    out
}

/// Parse the tile CSV back into (region, ρ) pairs. The header line is
/// optional.
pub fn parse_tiles_csv(text: &str) -> Result<Vec<(Rect, f64)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == "x0,y0,x1,y1,rho") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "tile CSV line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let coord = |i: usize| -> Result<i64> {
            parse_um_to_nm(fields[i])
                .map_err(|e| Error::Parse(format!("tile CSV line {}: {e}", lineno + 1)))
        };
        let rect = Rect::new(coord(0)?, coord(1)?, coord(2)?, coord(3)?)
            .map_err(|e| Error::Parse(format!("tile CSV line {}: {e}", lineno + 1)))?;
        let rho: f64 = fields[4].trim().parse().map_err(|_| {
            Error::Parse(format!(
                "tile CSV line {}: '{}' is not a number",
                lineno + 1,
                fields[4]
            ))
        })?;
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Parse(format!(
                "tile CSV line {}: rho {rho} outside [0, 1]",
                lineno + 1
            )));
        }
        out.push((rect, rho));
    }
    Ok(out)
}
