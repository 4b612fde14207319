//! Line-oriented text format for stack descriptions.
//!
//! ```text
//! # comment
//! material <name> k=<W/mK> density=<kg/m3> heat_capacity=<J/kgK>
//! material <name> k_inplane=<v> k_vertical=<v> density=<v> heat_capacity=<v>
//! footprint <x0> <y0> <x1> <y1>                      # µm
//! layer <name> thickness=<µm> material=<name> [source] [power=<id>]
//! layer <name> thickness=<µm> floorplan=<tiles.csv> feature=<mat> fill=<mat> [source]
//! layer <name> thickness=<µm> [source]               # explicit elements follow
//! element <x0> <y0> <x1> <y1> material=<name> [power=<id>]
//! sink face=<top|bottom> h=<W/m2K> ambient=<K>
//! initial <K>                                        # optional, default ambient
//! ```
//!
//! Layers are listed bottom-to-top. `element` lines attach to the preceding
//! `layer` line; a layer with an inline `material=` gets a single element
//! covering the footprint. `floorplan=` loads a tile CSV (path relative to
//! the stack file) and builds one element per tile with the equivalent
//! material for its feature fraction. Errors carry the line number.

use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::material::{Material, MixingRule};
use crate::stack::{FloorplanElement, Layer, Sink, SinkFace, SinkModel, StackDescription};
use crate::tiler::{floorplan_from_rho_list, parse_tiles_csv};
use crate::units::parse_um_to_nm;
use std::collections::BTreeMap;
use std::path::Path;

struct LineCtx {
    lineno: usize,
}

impl LineCtx {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Parse(format!("stack file line {}: {msg}", self.lineno))
    }
}

/// Split a line into positional tokens and `key=value` pairs plus bare
/// flags. Key order is free; duplicate keys are rejected.
struct Fields<'a> {
    ctx: &'a LineCtx,
    positional: Vec<&'a str>,
    keyed: BTreeMap<&'a str, &'a str>,
    flags: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn parse(ctx: &'a LineCtx, tokens: &[&'a str]) -> Result<Fields<'a>> {
        let mut f = Fields {
            ctx,
            positional: Vec::new(),
            keyed: BTreeMap::new(),
            flags: Vec::new(),
        };
        for t in tokens {
            if let Some((k, v)) = t.split_once('=') {
                if f.keyed.insert(k, v).is_some() {
                    return Err(ctx.err(format!("duplicate key '{k}'")));
                }
            } else if *t == "source" {
                f.flags.push(t);
            } else {
                f.positional.push(t);
            }
        }
        Ok(f)
    }

    fn require(&self, key: &str) -> Result<&'a str> {
        self.keyed
            .get(key)
            .copied()
            .ok_or_else(|| self.ctx.err(format!("missing {key}=")))
    }

    fn number(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.ctx.err(format!("{key}= value '{raw}' is not a number")))
    }

    fn has_flag(&self, name: &str) -> bool {
        self.flags.contains(&name)
    }

    fn reject_unknown(&self, known_keys: &[&str]) -> Result<()> {
        for k in self.keyed.keys() {
            if !known_keys.contains(k) {
                return Err(self.ctx.err(format!("unknown key '{k}='")));
            }
        }
        Ok(())
    }
}

fn parse_rect_um(ctx: &LineCtx, tokens: &[&str]) -> Result<Rect> {
    if tokens.len() != 4 {
        return Err(ctx.err(format!(
            "expected 4 coordinates (x0 y0 x1 y1 in µm), got {}",
            tokens.len()
        )));
    }
    let mut nm = [0i64; 4];
    for (i, t) in tokens.iter().enumerate() {
        nm[i] = parse_um_to_nm(t).map_err(|e| ctx.err(e))?;
    }
    Rect::new(nm[0], nm[1], nm[2], nm[3]).map_err(|e| ctx.err(e))
}

/// Parse a stack description. `base_dir` resolves relative floorplan paths.
/// The result still needs [`crate::stack::validate_stack`].
pub fn parse_stack_text(text: &str, base_dir: &Path) -> Result<StackDescription> {
    let mut materials: BTreeMap<String, Material> = BTreeMap::new();
    let mut footprint: Option<Rect> = None;
    let mut layers: Vec<Layer> = Vec::new();
    // Layers awaiting explicit element lines (index into `layers`).
    let mut open_layer: Option<usize> = None;
    let mut sink: Option<Sink> = None;
    let mut initial: Option<f64> = None;

    for (i, raw) in text.lines().enumerate() {
        let ctx = LineCtx { lineno: i + 1 };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (head, rest) = tokens.split_first().expect("nonempty line");

        match *head {
            "material" => {
                let (name, rest) = rest
                    .split_first()
                    .ok_or_else(|| ctx.err("material needs a name"))?;
                if name.contains('=') {
                    return Err(ctx.err("material needs a name before its properties"));
                }
                let f = Fields::parse(&ctx, rest)?;
                f.reject_unknown(&["k", "k_inplane", "k_vertical", "density", "heat_capacity"])?;
                let (k_inplane, k_vertical) = if f.keyed.contains_key("k") {
                    let k = f.number("k")?;
                    (k, k)
                } else {
                    (f.number("k_inplane")?, f.number("k_vertical")?)
                };
                let m = Material {
                    name: name.to_string(),
                    k_inplane,
                    k_vertical,
                    density: f.number("density")?,
                    heat_capacity: f.number("heat_capacity")?,
                };
                m.validate().map_err(|e| ctx.err(e))?;
                if materials.insert(name.to_string(), m).is_some() {
                    return Err(ctx.err(format!("material '{name}' defined twice")));
                }
            }
            "footprint" => {
                footprint = Some(parse_rect_um(&ctx, rest)?);
            }
            "layer" => {
                open_layer = None;
                let fp = footprint
                    .ok_or_else(|| ctx.err("footprint must be declared before layers"))?;
                let (name, rest) = rest
                    .split_first()
                    .ok_or_else(|| ctx.err("layer needs a name"))?;
                let f = Fields::parse(&ctx, rest)?;
                f.reject_unknown(&["thickness", "material", "floorplan", "feature", "fill", "power"])?;
                let thickness_um = f.number("thickness")?;
                if thickness_um <= 0.0 {
                    return Err(ctx.err("thickness must be positive"));
                }
                let is_source = f.has_flag("source");
                if f.keyed.contains_key("power") && !is_source {
                    return Err(ctx.err("power= requires the source flag"));
                }

                let mut layer = Layer {
                    name: name.to_string(),
                    thickness: thickness_um * 1e-6,
                    elements: Vec::new(),
                    is_source,
                };

                if let Some(mat_name) = f.keyed.get("material") {
                    if f.keyed.contains_key("floorplan") {
                        return Err(ctx.err("a layer takes material= or floorplan=, not both"));
                    }
                    let material = materials
                        .get(*mat_name)
                        .cloned()
                        .ok_or_else(|| ctx.err(format!("unknown material '{mat_name}'")))?;
                    let power_id = match f.keyed.get("power") {
                        Some(p) => Some(p.parse::<usize>().map_err(|_| {
                            ctx.err(format!("power= value '{p}' is not a source id"))
                        })?),
                        None => None,
                    };
                    layer.elements.push(FloorplanElement {
                        rect: fp,
                        material,
                        power_id,
                    });
                } else if let Some(csv_path) = f.keyed.get("floorplan") {
                    let feature_name = f.require("feature")?;
                    let fill_name = f.require("fill")?;
                    let feature = materials
                        .get(feature_name)
                        .ok_or_else(|| ctx.err(format!("unknown material '{feature_name}'")))?;
                    let fill = materials
                        .get(fill_name)
                        .ok_or_else(|| ctx.err(format!("unknown material '{fill_name}'")))?;
                    let full_path = base_dir.join(csv_path);
                    let csv = std::fs::read_to_string(&full_path).map_err(|e| {
                        ctx.err(format!("cannot read floorplan '{}': {e}", full_path.display()))
                    })?;
                    let tiles = parse_tiles_csv(&csv).map_err(|e| ctx.err(e))?;
                    layer.elements =
                        floorplan_from_rho_list(MixingRule::default(), &tiles, feature, fill)
                            .map_err(|e| ctx.err(e))?;
                } else {
                    // Explicit element lines follow.
                    open_layer = Some(layers.len());
                }
                layers.push(layer);
            }
            "element" => {
                let idx = open_layer.ok_or_else(|| {
                    ctx.err("element line must follow a layer line without material=/floorplan=")
                })?;
                let (coords, keyed_part) = rest.split_at(rest.len().min(4));
                let rect = parse_rect_um(&ctx, coords)?;
                let f = Fields::parse(&ctx, keyed_part)?;
                f.reject_unknown(&["material", "power"])?;
                let mat_name = f.require("material")?;
                let material = materials
                    .get(mat_name)
                    .cloned()
                    .ok_or_else(|| ctx.err(format!("unknown material '{mat_name}'")))?;
                let power_id = match f.keyed.get("power") {
                    Some(p) => {
                        if !layers[idx].is_source {
                            return Err(ctx.err("power= requires the layer's source flag"));
                        }
                        Some(p.parse::<usize>().map_err(|_| {
                            ctx.err(format!("power= value '{p}' is not a source id"))
                        })?)
                    }
                    None => None,
                };
                layers[idx].elements.push(FloorplanElement {
                    rect,
                    material,
                    power_id,
                });
            }
            "sink" => {
                let f = Fields::parse(&ctx, rest)?;
                f.reject_unknown(&["face", "h", "ambient", "model"])?;
                let face = match f.require("face")? {
                    "top" => SinkFace::Top,
                    "bottom" => SinkFace::Bottom,
                    other => {
                        return Err(ctx.err(format!("face= must be top or bottom, got '{other}'")))
                    }
                };
                let model = match f.keyed.get("model").copied() {
                    None | Some("film") => SinkModel::Film,
                    Some("film_halfcell") => SinkModel::FilmHalfCell,
                    Some(other) => {
                        return Err(ctx.err(format!(
                            "model= must be film or film_halfcell, got '{other}'"
                        )))
                    }
                };
                if sink.is_some() {
                    return Err(ctx.err("sink declared twice"));
                }
                sink = Some(Sink {
                    h_coeff: f.number("h")?,
                    ambient: f.number("ambient")?,
                    face,
                    model,
                });
            }
            "initial" => {
                let v = rest
                    .first()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| ctx.err("initial needs a temperature in K"))?;
                initial = Some(v);
            }
            other => {
                return Err(ctx.err(format!("unknown directive '{other}'")));
            }
        }
    }

    let footprint = footprint.ok_or_else(|| Error::Parse("stack file: missing footprint".into()))?;
    let sink = sink.ok_or_else(|| Error::Parse("stack file: missing sink".into()))?;
    Ok(StackDescription {
        layers,
        footprint,
        sink,
        initial_temperature: initial.unwrap_or(sink.ambient),
    })
}
