//! The chip stack: layers of floorplan elements with materials, a heat sink
//! boundary, and power sources — plus validation and adaptive layer
//! division.
//!
//! Layer division iteratively splits the simulation layer with the largest
//! vertical resistance into two equal-thickness sublayers until the variance
//! of per-layer vertical resistances drops below a relative threshold, the
//! iteration cap is reached, or a further split would increase the variance.

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::material::{Material, MixingRule};
use rstar::primitives::{GeomWithData, Rectangle};
use rstar::RTree;
use std::collections::BTreeMap;
use std::ops::Deref;

/// A rectangle of one layer's floorplan with its material and optional
/// power-source reference (an index into the run's power table; only
/// meaningful on source layers).
#[derive(Clone, Debug, PartialEq)]
pub struct FloorplanElement {
    pub rect: Rect,
    pub material: Material,
    pub power_id: Option<usize>,
}

/// One physical layer: a thickness, a floorplan tiling its footprint, and a
/// flag marking it as a power-dissipating (source) layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    /// Thickness in meters.
    pub thickness: f64,
    pub elements: Vec<FloorplanElement>,
    pub is_source: bool,
}

/// Which outer face of the stack carries the heat sink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinkFace {
    Top,
    Bottom,
}

/// Convective boundary: film coefficient h against an ambient temperature,
/// attached to exactly one face. All other outer faces are adiabatic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sink {
    /// W/(m²·K)
    pub h_coeff: f64,
    /// K
    pub ambient: f64,
    pub face: SinkFace,
    pub model: SinkModel,
}

/// How a sink-face cell couples to ambient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SinkModel {
    /// Film coefficient alone: G = h·A from the cell center. Matches the
    /// closed forms used throughout (single cell: T = T_amb + Q/(h·A)).
    #[default]
    Film,
    /// Film in series with the half-cell conduction path:
    /// G = A / (1/h + d/(2·k⊥)). Reproduces the analytic slab profile at
    /// cell centers to machine precision at any cell count.
    FilmHalfCell,
}

/// Full description of a stack, layers ordered bottom-to-top, all sharing
/// one footprint rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct StackDescription {
    pub layers: Vec<Layer>,
    pub footprint: Rect,
    pub sink: Sink,
    /// Initial temperature for transient runs, K.
    pub initial_temperature: f64,
}

/// A [`StackDescription`] whose invariants have been checked: every layer's
/// elements tile the footprint exactly (no gaps, no overlaps), materials are
/// positive, and power references appear only on source layers.
#[derive(Clone, Debug)]
pub struct ValidatedStack {
    desc: StackDescription,
}

impl Deref for ValidatedStack {
    type Target = StackDescription;
    fn deref(&self) -> &StackDescription {
        &self.desc
    }
}

impl ValidatedStack {
    pub fn description(&self) -> &StackDescription {
        &self.desc
    }

    pub fn resistance_variance(&self) -> f64 {
        resistance_variance(&self.desc.layers)
    }
}

/// Check all stack invariants, returning located diagnostics on failure.
pub fn validate_stack(desc: StackDescription) -> Result<ValidatedStack> {
    if desc.layers.is_empty() {
        return Err(Error::Invalid("stack has no layers".to_string()));
    }
    if !(desc.sink.h_coeff > 0.0 && desc.sink.h_coeff.is_finite()) {
        return Err(Error::Invalid(format!(
            "sink film coefficient must be positive, got {}",
            desc.sink.h_coeff
        )));
    }
    for (label, v) in [
        ("sink ambient", desc.sink.ambient),
        ("initial temperature", desc.initial_temperature),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Invalid(format!(
                "{label} must be a finite temperature in K, got {v}"
            )));
        }
    }

    for layer in &desc.layers {
        if !(layer.thickness > 0.0 && layer.thickness.is_finite()) {
            return Err(Error::Invalid(format!(
                "layer '{}': thickness must be positive, got {}",
                layer.name, layer.thickness
            )));
        }
        if layer.elements.is_empty() {
            return Err(Error::Invalid(format!(
                "layer '{}' has no elements",
                layer.name
            )));
        }
        let mut area_sum: i128 = 0;
        for (i, e) in layer.elements.iter().enumerate() {
            e.material
                .validate()
                .map_err(|err| Error::Invalid(format!("layer '{}' element {i}: {err}", layer.name)))?;
            if !desc.footprint.contains_rect(&e.rect) {
                return Err(Error::Invalid(format!(
                    "layer '{}': element {i} ({:?}) extends outside the stack footprint {:?}",
                    layer.name, e.rect, desc.footprint
                )));
            }
            if e.power_id.is_some() && !layer.is_source {
                return Err(Error::Invalid(format!(
                    "layer '{}': element {i} references a power source but the layer is not marked source",
                    layer.name
                )));
            }
            area_sum += e.rect.area();
        }

        // Pairwise-overlap check via an R-tree over element rectangles.
        let entries: Vec<GeomWithData<Rectangle<[i64; 2]>, usize>> = layer
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| {
                GeomWithData::new(
                    Rectangle::from_corners([e.rect.x0, e.rect.y0], [e.rect.x1, e.rect.y1]),
                    i,
                )
            })
            .collect();
        let tree = RTree::bulk_load(entries);
        for (i, e) in layer.elements.iter().enumerate() {
            let env = rstar::AABB::from_corners([e.rect.x0, e.rect.y0], [e.rect.x1, e.rect.y1]);
            for hit in tree.locate_in_envelope_intersecting(env) {
                let j = hit.data;
                if j <= i {
                    continue;
                }
                if e.rect.intersect(&layer.elements[j].rect).is_some() {
                    return Err(Error::Invalid(format!(
                        "layer '{}': elements {i} ({:?}) and {j} ({:?}) overlap",
                        layer.name, e.rect, layer.elements[j].rect
                    )));
                }
            }
        }

        // Disjoint + inside footprint + areas summing to the footprint area
        // together imply a gap-free exact cover.
        if area_sum != desc.footprint.area() {
            return Err(Error::Invalid(format!(
                "layer '{}': elements cover {area_sum} nm² of the {} nm² footprint (gaps)",
                layer.name,
                desc.footprint.area()
            )));
        }
    }

    Ok(ValidatedStack { desc })
}

/// nm² → m² (division by the exactly representable 1e18 stays correctly
/// rounded).
fn area_m2(r: &Rect) -> f64 {
    r.area() as f64 / 1e18
}

/// Vertical (through-plane) resistance of one element: R = h / (k⊥ · A).
pub fn element_vertical_resistance(e: &FloorplanElement, thickness: f64) -> f64 {
    thickness / (e.material.k_vertical * area_m2(&e.rect))
}

/// Vertical resistance of a whole layer: the parallel combination of its
/// elements' vertical resistances.
pub fn layer_vertical_resistance(l: &Layer) -> f64 {
    let inv: f64 = l
        .elements
        .iter()
        .map(|e| 1.0 / element_vertical_resistance(e, l.thickness))
        .sum();
    1.0 / inv
}

/// Population variance of per-layer vertical resistances across the given
/// simulation layers: Var = (1/n)·Σ (R⊥_j − mean)².
pub fn resistance_variance(layers: &[Layer]) -> f64 {
    let n = layers.len();
    if n == 0 {
        return 0.0;
    }
    let rs: Vec<f64> = layers.iter().map(layer_vertical_resistance).collect();
    let mean = rs.iter().sum::<f64>() / n as f64;
    rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64
}

/// State of the division process after one iteration.
#[derive(Clone, Debug)]
pub struct DivisionIteration {
    /// Var(R⊥) over the simulation layers after this iteration.
    pub variance: f64,
    /// Simulation-layer name that was split this iteration (None for the
    /// initial entry).
    pub split_layer: Option<String>,
    /// Sublayer count per original layer, in stack order.
    pub sublayer_counts: Vec<(String, usize)>,
}

/// Trajectory of the adaptive division. `iterations[0]` records the initial
/// state; the variance sequence is non-increasing.
#[derive(Clone, Debug, Default)]
pub struct DivisionReport {
    pub iterations: Vec<DivisionIteration>,
}

impl DivisionReport {
    pub fn final_variance(&self) -> f64 {
        self.iterations.last().map(|i| i.variance).unwrap_or(0.0)
    }

    pub fn is_monotone(&self) -> bool {
        self.iterations
            .windows(2)
            .all(|w| w[1].variance <= w[0].variance * (1.0 + 1e-12) + f64::MIN_POSITIVE)
    }
}

/// Split the highest-R⊥ simulation layer into two equal sublayers per
/// iteration until Var(R⊥)/Var₀ ≤ `var_threshold_rel`, `max_iter` splits
/// have happened, or the best available split would increase the variance
/// (splitting changes the layer count, so monotonicity is not automatic —
/// the guard enforces it). Ties pick the lowest layer index.
///
/// When a source layer splits, its power sources stay on the topmost
/// sublayer (active devices sit at the die surface).
pub fn adaptive_divide(
    stack: &ValidatedStack,
    var_threshold_rel: f64,
    max_iter: u32,
) -> (ValidatedStack, DivisionReport) {
    // (origin index, layer); origin tracks which described layer each
    // simulation layer descends from.
    let mut sim: Vec<(usize, Layer)> = stack
        .layers
        .iter()
        .cloned()
        .enumerate()
        .collect();

    let counts = |sim: &[(usize, Layer)]| -> Vec<(String, usize)> {
        let mut per_origin: BTreeMap<usize, usize> = BTreeMap::new();
        for (origin, _) in sim {
            *per_origin.entry(*origin).or_insert(0) += 1;
        }
        stack
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.clone(), per_origin.get(&i).copied().unwrap_or(0)))
            .collect()
    };
    let layers_of = |sim: &[(usize, Layer)]| -> Vec<Layer> {
        sim.iter().map(|(_, l)| l.clone()).collect()
    };

    let var0 = resistance_variance(&layers_of(&sim));
    let mut report = DivisionReport::default();
    report.iterations.push(DivisionIteration {
        variance: var0,
        split_layer: None,
        sublayer_counts: counts(&sim),
    });

    let mut var = var0;
    for _ in 0..max_iter {
        if var0 <= 0.0 || var / var0 <= var_threshold_rel {
            break;
        }
        // Largest-R⊥ simulation layer, lowest index on ties.
        let (idx, _) = sim
            .iter()
            .enumerate()
            .map(|(i, (_, l))| (i, layer_vertical_resistance(l)))
            .fold((0usize, f64::NEG_INFINITY), |best, (i, r)| {
                if r > best.1 {
                    (i, r)
                } else {
                    best
                }
            });

        let mut candidate = sim.clone();
        let (origin, parent) = candidate[idx].clone();
        let half = |is_top: bool| -> Layer {
            let mut l = parent.clone();
            l.thickness = parent.thickness / 2.0;
            if parent.is_source && !is_top {
                // Power stays on the top half; see doc comment.
                l.is_source = false;
                for e in &mut l.elements {
                    e.power_id = None;
                }
            }
            l
        };
        candidate.splice(idx..=idx, [(origin, half(false)), (origin, half(true))]);

        let candidate_var = resistance_variance(&layers_of(&candidate));
        if candidate_var > var {
            break; // the guard: a split must not raise the variance
        }
        sim = candidate;
        var = candidate_var;
        let split_name = parent.name.clone();
        report.iterations.push(DivisionIteration {
            variance: var,
            split_layer: Some(split_name),
            sublayer_counts: counts(&sim),
        });
    }

    // Rename sublayers of split origins as `<name>.<k>`, k from the bottom.
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let total = counts(&sim);
    let layers: Vec<Layer> = sim
        .into_iter()
        .map(|(origin, mut l)| {
            let k = seen.entry(origin).or_insert(0);
            *k += 1;
            if total[origin].1 > 1 {
                l.name = format!("{}.{}", stack.layers[origin].name, k);
            }
            l
        })
        .collect();

    let divided = ValidatedStack {
        desc: StackDescription {
            layers,
            ..stack.desc.clone()
        },
    };
    (divided, report)
}

/// Replace a layer's floorplan with a single element whose properties are
/// the area-fraction mixture of the originals (the same rules as
/// [`effective material mixing`](crate::material::MixingRule), generalized
/// to n components). Power references survive only if all powered elements
/// shared one id.
pub fn homogenize_layer(l: &Layer) -> Result<Layer> {
    homogenize_layer_with(MixingRule::default(), l)
}

/// [`homogenize_layer`] with an explicit mixing rule.
pub fn homogenize_layer_with(rule: MixingRule, l: &Layer) -> Result<Layer> {
    if l.elements.is_empty() {
        return Err(Error::Invalid(format!("layer '{}' has no elements", l.name)));
    }
    let bbox = l
        .elements
        .iter()
        .map(|e| e.rect)
        .reduce(|a, b| {
            Rect::new(a.x0.min(b.x0), a.y0.min(b.y0), a.x1.max(b.x1), a.y1.max(b.y1))
                .expect("union of valid rects is valid")
        })
        .expect("nonempty");

    let first = &l.elements[0].material;
    let uniform = l.elements.iter().all(|e| {
        let m = &e.material;
        m.k_inplane == first.k_inplane
            && m.k_vertical == first.k_vertical
            && m.density == first.density
            && m.heat_capacity == first.heat_capacity
    });

    let material = if uniform {
        first.clone()
    } else {
        let total: f64 = l.elements.iter().map(|e| area_m2(&e.rect)).sum();
        let weights: Vec<f64> = l
            .elements
            .iter()
            .map(|e| area_m2(&e.rect) / total)
            .collect();
        let arith = |f: &dyn Fn(&Material) -> f64| -> f64 {
            l.elements
                .iter()
                .zip(&weights)
                .map(|(e, w)| w * f(&e.material))
                .sum()
        };
        let harm = |f: &dyn Fn(&Material) -> f64| -> f64 {
            1.0 / l
                .elements
                .iter()
                .zip(&weights)
                .map(|(e, w)| w / f(&e.material))
                .sum::<f64>()
        };
        let (k_inplane, k_vertical) = match rule {
            MixingRule::ParallelVerticalSeriesInplane => {
                (harm(&|m| m.k_inplane), arith(&|m| m.k_vertical))
            }
            MixingRule::Arithmetic => (arith(&|m| m.k_inplane), arith(&|m| m.k_vertical)),
            MixingRule::Harmonic => (harm(&|m| m.k_inplane), harm(&|m| m.k_vertical)),
        };
        Material {
            name: format!("homogenized({})", l.name),
            k_inplane,
            k_vertical,
            density: arith(&|m| m.density),
            heat_capacity: arith(&|m| m.heat_capacity),
        }
    };

    let mut power_ids: Vec<usize> = l.elements.iter().filter_map(|e| e.power_id).collect();
    power_ids.dedup();
    let power_id = match power_ids.as_slice() {
        [single] => Some(*single),
        _ => None,
    };

    Ok(Layer {
        name: l.name.clone(),
        thickness: l.thickness,
        elements: vec![FloorplanElement {
            rect: bbox,
            material,
            power_id,
        }],
        is_source: l.is_source,
    })
}
