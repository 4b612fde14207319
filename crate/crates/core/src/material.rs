//! Material properties and the mixing rules that build anisotropic
//! equivalent materials for partially covered regions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Bulk material properties. Anisotropy is expressed as separate in-plane
/// and vertical conductivities; isotropic materials carry the same value in
/// both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// Thermal conductivity along x/y, W/(m·K).
    pub k_inplane: f64,
    /// Thermal conductivity along z, W/(m·K).
    pub k_vertical: f64,
    /// kg/m³
    pub density: f64,
    /// J/(kg·K)
    pub heat_capacity: f64,
}

impl Material {
    pub fn isotropic(name: &str, k: f64, density: f64, heat_capacity: f64) -> Material {
        Material {
            name: name.to_string(),
            k_inplane: k,
            k_vertical: k,
            density,
            heat_capacity,
        }
    }

    pub fn anisotropic(
        name: &str,
        k_inplane: f64,
        k_vertical: f64,
        density: f64,
        heat_capacity: f64,
    ) -> Material {
        Material {
            name: name.to_string(),
            k_inplane,
            k_vertical,
            density,
            heat_capacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, v) in [
            ("k_inplane", self.k_inplane),
            ("k_vertical", self.k_vertical),
            ("density", self.density),
            ("heat_capacity", self.heat_capacity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "material '{}': {label} must be positive and finite, got {v}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Anisotropic equivalent of a region a fraction `rho` of which is feature
/// material embedded in fill.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveMaterial {
    pub k_inplane: f64,
    pub k_vertical: f64,
    pub density: f64,
    pub heat_capacity: f64,
}

impl EffectiveMaterial {
    /// Package as a [`Material`] for use in floorplan elements.
    pub fn into_material(self, name: &str) -> Material {
        Material {
            name: name.to_string(),
            k_inplane: self.k_inplane,
            k_vertical: self.k_vertical,
            density: self.density,
            heat_capacity: self.heat_capacity,
        }
    }
}

/// How the two conductivities of an equivalent material are combined from
/// its constituents. Density and heat capacity always mix arithmetically
/// (they are extensive per volume).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingRule {
    /// Vertical: arithmetic (parallel conduction paths through the fill,
    /// the geometry of vias and bump arrays); in-plane: harmonic (series
    /// crossings of feature and fill). The default.
    #[default]
    ParallelVerticalSeriesInplane,
    /// Both axes arithmetic (upper Wiener bound on both).
    Arithmetic,
    /// Both axes harmonic (lower Wiener bound on both).
    Harmonic,
}

fn arithmetic(rho: f64, a: f64, b: f64) -> f64 {
    rho * a + (1.0 - rho) * b
}

fn harmonic(rho: f64, a: f64, b: f64) -> f64 {
    1.0 / (rho / a + (1.0 - rho) / b)
}

/// Equivalent material of a region with feature fraction `rho`, using an
/// explicit mixing rule.
pub fn effective_material_with(
    rule: MixingRule,
    rho: f64,
    feature: &Material,
    fill: &Material,
) -> Result<EffectiveMaterial> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Invalid(format!(
            "feature fraction must be in [0, 1], got {rho}"
        )));
    }
    feature.validate()?;
    fill.validate()?;
    let (k_inplane, k_vertical) = match rule {
        MixingRule::ParallelVerticalSeriesInplane => (
            harmonic(rho, feature.k_inplane, fill.k_inplane),
            arithmetic(rho, feature.k_vertical, fill.k_vertical),
        ),
        MixingRule::Arithmetic => (
            arithmetic(rho, feature.k_inplane, fill.k_inplane),
            arithmetic(rho, feature.k_vertical, fill.k_vertical),
        ),
        MixingRule::Harmonic => (
            harmonic(rho, feature.k_inplane, fill.k_inplane),
            harmonic(rho, feature.k_vertical, fill.k_vertical),
        ),
    };
    Ok(EffectiveMaterial {
        k_inplane,
        k_vertical,
        density: arithmetic(rho, feature.density, fill.density),
        heat_capacity: arithmetic(rho, feature.heat_capacity, fill.heat_capacity),
    })
}

/// Equivalent material under the default mixing rule
/// ([`MixingRule::ParallelVerticalSeriesInplane`]).
pub fn effective_material(
    rho: f64,
    feature: &Material,
    fill: &Material,
) -> Result<EffectiveMaterial> {
    effective_material_with(MixingRule::default(), rho, feature, fill)
}
