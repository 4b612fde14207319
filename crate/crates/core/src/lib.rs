//! Compact thermal modeling for 2.5D/3D chip stacks:
//!
//! - layout ingestion (binary stream subset + JSON) and polygon geometry
//! - quadtree tiling with per-tile coverage ratios and effective materials
//! - stack modeling with adaptive vertical layer division
//! - uniform and gradient-driven non-uniform grids
//! - sparse RC-network assembly and steady/transient solvers
//! - independent verification oracles (dense solve, analytic slab, RMSE)

pub mod error;
pub mod geometry;
pub mod grid;
pub mod layout;
pub mod material;
pub mod network;
pub mod oracle;
pub mod pipeline;
pub mod render;
pub mod solver;
pub mod stack;
pub mod stackfile;
pub mod tiler;
pub mod units;

pub use error::{Error, Result};
