//! Image output: binary PPM (P6) temperature heatmaps with a text legend
//! sidecar, and grayscale coverage-ratio maps for tilings.
//!
//! PPM was picked over compressed formats on purpose: no image-library
//! dependency, byte-for-byte diffable output. Rendering is sequential and
//! purely a function of the field, so bytes never depend on worker count.

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::RTree;

use crate::error::Result;
use crate::geometry::Rect;
use crate::grid::ThermalGrid;

/// Output raster sizing: images are `width` pixels wide; height follows
/// the region's aspect ratio, clamped to `max_height`.
#[derive(Clone, Copy, Debug)]
pub struct RasterOptions {
    pub width: usize,
    pub max_height: usize,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions {
            width: 256,
            max_height: 1024,
        }
    }
}

/// Temperature range a heatmap was scaled to, for the legend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Legend {
    pub min_k: f64,
    pub max_k: f64,
}

/// Five-stop blue→cyan→green→yellow→red ramp, linear between stops.
/// u is clamped to [0, 1]; u = 1 maps to pure red, the "max color".
pub fn colormap(u: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 128.0],   // deep blue
        [0.0, 255.0, 255.0], // cyan
        [0.0, 192.0, 0.0],   // green
        [255.0, 255.0, 0.0], // yellow
        [255.0, 0.0, 0.0],   // red
    ];
    let u = u.clamp(0.0, 1.0);
    let scaled = u * (STOPS.len() - 1) as f64;
    let i = (scaled.floor() as usize).min(STOPS.len() - 2);
    let f = scaled - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    rgb
}

/// The color used for the hottest temperature.
pub fn max_color() -> [u8; 3] {
    colormap(1.0)
}

fn raster_dims(region: Rect, opts: &RasterOptions) -> (usize, usize) {
    let w = opts.width.max(1);
    let aspect = region.height() as f64 / region.width() as f64;
    let h = ((w as f64 * aspect).round() as usize).clamp(1, opts.max_height.max(1));
    (w, h)
}

/// Center of pixel column `j` (of `w`) in nm, exact integer arithmetic.
fn pixel_center(lo: i64, hi: i64, j: usize, n: usize) -> i64 {
    let span = (hi - lo) as i128;
    lo + ((2 * j as i128 + 1) * span / (2 * n as i128)) as i64
}

fn ppm_header(w: usize, h: usize) -> Vec<u8> {
    format!("P6\n{w} {h}\n255\n").into_bytes()
}

/// Rasterize a region partitioned into value-carrying rectangles: each
/// pixel takes the value of the rectangle containing its center point
/// (half-open on the high edges), painted through `paint`.
fn rasterize(
    region: Rect,
    rects: &[(Rect, f64)],
    opts: &RasterOptions,
    mut paint: impl FnMut(f64) -> [u8; 3],
) -> Vec<u8> {
    let (w, h) = raster_dims(region, opts);
    let tree: RTree<GeomWithData<Rectangle<[i64; 2]>, usize>> = RTree::bulk_load(
        rects
            .iter()
            .enumerate()
            .map(|(i, (r, _))| {
                GeomWithData::new(Rectangle::from_corners([r.x0, r.y0], [r.x1, r.y1]), i)
            })
            .collect(),
    );
    let mut out = ppm_header(w, h);
    out.reserve(3 * w * h);
    for row in 0..h {
        // PPM rows run top-down; geometry y runs bottom-up.
        let cy = pixel_center(region.y0, region.y1, h - 1 - row, h);
        for col in 0..w {
            let cx = pixel_center(region.x0, region.x1, col, w);
            let hit = tree
                .locate_in_envelope_intersecting(rstar::AABB::from_corners(
                    [cx, cy],
                    [cx, cy],
                ))
                .filter(|g| {
                    let (r, _) = rects[g.data];
                    r.x0 <= cx && cx < r.x1 && r.y0 <= cy && cy < r.y1
                })
                .map(|g| g.data)
                .min(); // deterministic if edges ever coincide
            let rgb = match hit {
                Some(i) => paint(rects[i].1),
                None => [0, 0, 0], // outside every rect (e.g. ragged layer)
            };
            out.extend_from_slice(&rgb);
        }
    }
    out
}

/// Render one layer of a temperature field as a PPM image, scaled linearly
/// from the layer's minimum (blue) to its maximum (red). A constant field
/// renders in a single color.
pub fn render_layer_heatmap(
    grid: &ThermalGrid,
    field: &[f64],
    layer: usize,
    opts: &RasterOptions,
) -> (Vec<u8>, Legend) {
    let ids = grid.layer_cells(layer);
    let rects: Vec<(Rect, f64)> = ids
        .iter()
        .map(|&id| (grid.cells[id].rect, field[id]))
        .collect();
    let min_k = rects.iter().map(|&(_, t)| t).fold(f64::INFINITY, f64::min);
    let max_k = rects.iter().map(|&(_, t)| t).fold(f64::NEG_INFINITY, f64::max);
    let span = max_k - min_k;
    let mut region = rects[0].0;
    for (r, _) in &rects[1..] {
        region = Rect::new(
            region.x0.min(r.x0),
            region.y0.min(r.y0),
            region.x1.max(r.x1),
            region.y1.max(r.y1),
        )
        .expect("non-degenerate union of cell rects");
    }
    let bytes = rasterize(region, &rects, opts, |t| {
        let u = if span > 0.0 { (t - min_k) / span } else { 0.0 };
        colormap(u)
    });
    (bytes, Legend { min_k, max_k })
}

/// Write a layer heatmap plus its legend sidecar (`<path>.legend.txt`).
pub fn write_layer_heatmap(
    path: &std::path::Path,
    grid: &ThermalGrid,
    field: &[f64],
    layer: usize,
    opts: &RasterOptions,
) -> Result<Legend> {
    let (bytes, legend) = render_layer_heatmap(grid, field, layer, opts);
    std::fs::write(path, &bytes)?;
    let mut sidecar = String::new();
    sidecar.push_str(&format!("layer: {}\n", grid.layer_names[layer]));
    sidecar.push_str(&format!("min_k: {:.6}\n", legend.min_k));
    sidecar.push_str(&format!("max_k: {:.6}\n", legend.max_k));
    sidecar.push_str("scale: linear, blue = min_k, red = max_k\n");
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let t = legend.min_k + u * (legend.max_k - legend.min_k);
        let [r, g, b] = colormap(u);
        sidecar.push_str(&format!("stop: u={u:.2} T={t:.6} rgb=({r},{g},{b})\n"));
    }
    let mut legend_path = path.as_os_str().to_owned();
    legend_path.push(".legend.txt");
    std::fs::write(std::path::PathBuf::from(legend_path), sidecar)?;
    Ok(legend)
}

/// Render a coverage-ratio map: each tile painted gray ∝ ρ (black = 0,
/// white = 1) over the window the tiles partition.
pub fn render_rho_map(window: Rect, tiles: &[(Rect, f64)], opts: &RasterOptions) -> Vec<u8> {
    rasterize(window, tiles, opts, |rho| {
        let level = (rho.clamp(0.0, 1.0) * 255.0).round() as u8;
        [level, level, level]
    })
}

pub fn write_rho_map(
    path: &std::path::Path,
    window: Rect,
    tiles: &[(Rect, f64)],
    opts: &RasterOptions,
) -> Result<()> {
    std::fs::write(path, render_rho_map(window, tiles, opts))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::Material;
    use crate::stack::{
        validate_stack, FloorplanElement, Layer, Sink, SinkFace, SinkModel, StackDescription, ValidatedStack,
    };

    fn flat_stack(fp: Rect) -> ValidatedStack {
        validate_stack(StackDescription {
            layers: vec![Layer {
                name: "die".into(),
                thickness: 1e-4,
                elements: vec![FloorplanElement {
                    rect: fp,
                    material: Material::isotropic("si", 130.0, 2300.0, 700.0),
                    power_id: None,
                }],
                is_source: false,
            }],
            footprint: fp,
            sink: Sink {
                h_coeff: 1e4,
                ambient: 300.0,
                face: SinkFace::Top,
                model: SinkModel::Film,
            },
            initial_temperature: 300.0,
        })
        .unwrap()
    }

    fn pixels(ppm: &[u8]) -> (usize, usize, &[u8]) {
        let text_end = ppm
            .windows(4)
            .position(|w| w == b"255\n")
            .expect("ppm header")
            + 4;
        let header = std::str::from_utf8(&ppm[..text_end]).unwrap();
        let mut lines = header.lines();
        assert_eq!(lines.next(), Some("P6"));
        let mut dims = lines.next().unwrap().split(' ');
        let w: usize = dims.next().unwrap().parse().unwrap();
        let h: usize = dims.next().unwrap().parse().unwrap();
        (w, h, &ppm[text_end..])
    }

    #[test]
    fn colormap_hits_the_extreme_stops() {
        assert_eq!(colormap(0.0), [0, 0, 128]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        assert_eq!(colormap(-3.0), colormap(0.0));
        assert_eq!(colormap(7.0), colormap(1.0));
        assert_eq!(max_color(), [255, 0, 0]);
    }

    #[test]
    fn constant_field_renders_as_a_single_color() {
        let fp = Rect::new(0, 0, 1_000_000, 500_000).unwrap();
        let stack = flat_stack(fp);
        let grid = crate::grid::build_uniform_grid(&stack, 4, 2).unwrap();
        let field = vec![320.0; grid.n_cells()];
        let opts = RasterOptions {
            width: 64,
            max_height: 64,
        };
        let (ppm, legend) = render_layer_heatmap(&grid, &field, 0, &opts);
        let (w, h, body) = pixels(&ppm);
        assert_eq!((w, h), (64, 32)); // aspect 2:1
        assert_eq!(body.len(), 3 * w * h);
        let first = &body[..3];
        assert!(body.chunks(3).all(|px| px == first));
        assert_eq!(legend.min_k, legend.max_k);
    }

    #[test]
    fn min_and_max_cells_get_the_extreme_colors() {
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = flat_stack(fp);
        let grid = crate::grid::build_uniform_grid(&stack, 2, 1).unwrap();
        let field = vec![300.0, 350.0];
        let opts = RasterOptions {
            width: 8,
            max_height: 8,
        };
        let (ppm, legend) = render_layer_heatmap(&grid, &field, 0, &opts);
        let (_, _, body) = pixels(&ppm);
        let has = |rgb: [u8; 3]| body.chunks(3).any(|px| px == rgb);
        assert!(has(colormap(0.0)), "coldest color missing");
        assert!(has(colormap(1.0)), "hottest color missing");
        assert_eq!(legend, Legend { min_k: 300.0, max_k: 350.0 });
    }

    #[test]
    fn hotspot_pixel_carries_the_max_color_at_the_argmax_cell() {
        let fp = Rect::new(0, 0, 1_000_000, 1_000_000).unwrap();
        let stack = flat_stack(fp);
        let grid = crate::grid::build_uniform_grid(&stack, 4, 4).unwrap();
        // Hottest cell: column 2, row 1 (cells ordered row-major by (y, x)).
        let hot = 4 + 2;
        let field: Vec<f64> = (0..16).map(|i| if i == hot { 400.0 } else { 310.0 }).collect();
        let opts = RasterOptions {
            width: 16,
            max_height: 16,
        };
        let (ppm, _) = render_layer_heatmap(&grid, &field, 0, &opts);
        let (w, h, body) = pixels(&ppm);
        // Center pixel of the hot cell: x ∈ [0.5, 0.75) Mnm → col 16·0.625,
        // y ∈ [0.25, 0.5) Mnm → row from top = h − 1 − 16·0.375.
        let col = (0.625 * w as f64) as usize;
        let row = h - 1 - (0.375 * h as f64) as usize;
        let px = &body[3 * (row * w + col)..3 * (row * w + col) + 3];
        assert_eq!(px, max_color());
        // And nowhere outside the hot cell's span.
        for r in 0..h {
            for c in 0..w {
                let px = &body[3 * (r * w + c)..3 * (r * w + c) + 3];
                if px == max_color() {
                    assert!((8..12).contains(&c), "hot pixel at col {c}");
                    assert!((4..8).contains(&(h - 1 - r)), "hot pixel at row-from-bottom {}", h - 1 - r);
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let fp = Rect::new(0, 0, 700_000, 300_000).unwrap();
        let stack = flat_stack(fp);
        let grid = crate::grid::build_uniform_grid(&stack, 7, 3).unwrap();
        let field: Vec<f64> = (0..grid.n_cells()).map(|i| 300.0 + i as f64).collect();
        let opts = RasterOptions::default();
        let (a, _) = render_layer_heatmap(&grid, &field, 0, &opts);
        let (b, _) = render_layer_heatmap(&grid, &field, 0, &opts);
        assert_eq!(a, b);
    }

    #[test]
    fn rho_map_paints_coverage_in_gray() {
        let window = Rect::new(0, 0, 1000, 1000).unwrap();
        let tiles = vec![
            (Rect::new(0, 0, 500, 1000).unwrap(), 0.0),
            (Rect::new(500, 0, 1000, 1000).unwrap(), 1.0),
        ];
        let opts = RasterOptions {
            width: 4,
            max_height: 4,
        };
        let ppm = render_rho_map(window, &tiles, &opts);
        let (w, h, body) = pixels(&ppm);
        assert_eq!((w, h), (4, 4));
        for r in 0..h {
            for c in 0..w {
                let px = &body[3 * (r * w + c)..3 * (r * w + c) + 3];
                let expect = if c < 2 { [0, 0, 0] } else { [255, 255, 255] };
                assert_eq!(px, expect, "pixel ({r},{c})");
            }
        }
    }
}
