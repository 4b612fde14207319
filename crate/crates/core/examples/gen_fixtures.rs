//! Regenerate the demo input files under `fixtures/`.
//!
//! Produces a matched pair of layout files (stream subset + JSON) for a
//! 16 × 16 microbump array with two interconnect traces, the tile table
//! derived from them, a five-layer stack description that references the
//! tile table as a floorplan, and a power table.
//!
//! Run from the workspace root:
//! `cargo run -p heatstack --example gen_fixtures`

use heatstack::geometry::Point;
use heatstack::layout::{write_gdsii_subset, LayerGeometry, PathElement};
use heatstack::pipeline::{cmd_tile, TileConfig};
use heatstack::tiler::TilingConfig;
use std::path::Path;

const LAYER: i32 = 1;

fn rect_ring(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<Point> {
    vec![
        Point { x: x0, y: y0 },
        Point { x: x1, y: y0 },
        Point { x: x1, y: y1 },
        Point { x: x0, y: y1 },
    ]
}

fn demo_geometry() -> LayerGeometry {
    let mut boundaries = Vec::new();
    // Corner markers pin the bounding window to the full 10 mm die.
    boundaries.push(rect_ring(0, 0, 1_000, 1_000));
    boundaries.push(rect_ring(9_999_000, 9_999_000, 10_000_000, 10_000_000));
    // 16 x 16 bump array: 312.5 um squares on a 625 um pitch, each bump
    // at the high corner of its pitch cell so the array ends flush at
    // the die edge.
    let pitch = 625_000;
    let size = 312_500;
    for i in 0..16 {
        for j in 0..16 {
            let x1 = (i + 1) * pitch;
            let y1 = (j + 1) * pitch;
            boundaries.push(rect_ring(x1 - size, y1 - size, x1, y1));
        }
    }
    // Two 50 um interconnect traces crossing mid-die.
    let paths = vec![
        PathElement {
            centerline: vec![
                Point { x: 5_000_000, y: 500_000 },
                Point { x: 5_000_000, y: 9_500_000 },
            ],
            width: 50_000,
        },
        PathElement {
            centerline: vec![
                Point { x: 500_000, y: 5_000_000 },
                Point { x: 9_500_000, y: 5_000_000 },
            ],
            width: 50_000,
        },
    ];
    LayerGeometry { boundaries, paths }
}

fn geometry_json(geom: &LayerGeometry) -> String {
    let polygons: Vec<Vec<[i64; 2]>> = geom
        .boundaries
        .iter()
        .map(|ring| ring.iter().map(|p| [p.x, p.y]).collect())
        .collect();
    let paths: Vec<serde_json::Value> = geom
        .paths
        .iter()
        .map(|path| {
            let pts: Vec<[i64; 2]> = path.centerline.iter().map(|p| [p.x, p.y]).collect();
            serde_json::json!({ "points": pts, "width": path.width })
        })
        .collect();
    let doc = serde_json::json!({
        "layer": LAYER,
        "unit_nm": 1,
        "polygons": polygons,
        "paths": paths,
    });
    serde_json::to_string_pretty(&doc).expect("fixture JSON serializes")
}

const STACK: &str = "\
# Five-layer demo assembly, bottom to top: board, microbumps, die,
# interface material, heat spreader. Lengths in micrometers.
material copper k=385 density=8900 heat_capacity=387
material tim k=5 density=2500 heat_capacity=1000
material silicon k=130 density=2300 heat_capacity=700
material bump k_inplane=5.5 k_vertical=113 density=7380 heat_capacity=250
material underfill k=1.5 density=1400 heat_capacity=1100

footprint 0 0 10000 10000

layer pcb thickness=1000 material=silicon
layer bumps thickness=70 floorplan=bump_tiles.csv feature=bump fill=underfill
layer chip thickness=100 source
element 0 0 5000 10000 material=silicon power=0
element 5000 0 10000 10000 material=silicon power=1
layer tim thickness=50 material=tim
layer heatsink thickness=5000 material=copper

sink face=top h=10000 ambient=300
initial 300
";

const POWER: &str = "\
# Source drives for the demo stack: id 0 is the steady half of the die,
# id 1 carries the modulated pulse.
0 constant 25.0
1 signal p0=50.0 t0=0.5 tau2=0.1 omega=31.41592653589793
";

fn main() {
    let fixtures = Path::new("fixtures");
    std::fs::create_dir_all(fixtures).expect("create fixtures dir");

    let geom = demo_geometry();
    let gds = write_gdsii_subset("FIXTURES", "TOP", &[(LAYER, geom.clone())]);
    std::fs::write(fixtures.join("demo_layout.gds"), &gds).expect("write gds");
    std::fs::write(fixtures.join("demo_layout.json"), geometry_json(&geom)).expect("write json");

    // Derive the bump floorplan from the layout we just wrote.
    let tmp = tempfile::tempdir().expect("tempdir");
    cmd_tile(&TileConfig {
        layout_path: fixtures.join("demo_layout.gds"),
        layer: LAYER,
        tiling: TilingConfig::new(6, 0.05, 0.95).expect("valid tiling config"),
        out_dir: tmp.path().to_path_buf(),
    })
    .expect("tile demo layout");
    std::fs::copy(tmp.path().join("tiles.csv"), fixtures.join("bump_tiles.csv"))
        .expect("copy tile table");

    std::fs::write(fixtures.join("five_layer.stack"), STACK).expect("write stack");
    std::fs::write(fixtures.join("demo.power"), POWER).expect("write power table");
    println!("fixtures written to {}", fixtures.display());
}
