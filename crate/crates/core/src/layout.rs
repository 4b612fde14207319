//! Layout ingestion from two sources:
//!
//! - a binary stream-format subset (big-endian records, one flat structure,
//!   BOUNDARY and PATH elements only, no hierarchy)
//! - a JSON polygon format carrying the same information portably
//!
//! Paths are polygonized into flush-ended, miter-joined outlines and unioned
//! together with the boundary polygons into per-layer shape lists. The same
//! geometry expressed in either format parses to an identical [`LayoutLayer`].

use crate::error::{Error, Result};
use crate::geometry::{merge_shapes, Point, Polygon};

/// Shapes of a single layout layer, normalized and sorted canonically.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutLayer {
    pub layer_number: i32,
    pub shapes: Vec<Polygon>,
}

impl LayoutLayer {
    pub fn empty(layer_number: i32) -> Self {
        LayoutLayer {
            layer_number,
            shapes: Vec::new(),
        }
    }

    fn normalize(&mut self) {
        self.shapes.sort_by(|a, b| {
            let ka = a.bbox();
            let kb = b.bbox();
            (ka.y0, ka.x0, ka.y1, ka.x1, a.outer()).cmp(&(kb.y0, kb.x0, kb.y1, kb.x1, b.outer()))
        });
    }
}

/// A path element: a centerline with a width, flush ends, miter joins.
#[derive(Clone, Debug, PartialEq)]
pub struct PathElement {
    pub centerline: Vec<Point>,
    pub width: i64,
}

/// Warnings produced while parsing (skipped records, dropped segments).
#[derive(Clone, Debug, Default)]
pub struct ParseWarnings {
    pub messages: Vec<String>,
    pub skipped_records: usize,
}

// ---------------------------------------------------------------------------
// Path polygonization
// ---------------------------------------------------------------------------

/// Ratio of miter length to half-width beyond which a join falls back to a
/// bevel; keeps near-reversal joins from emitting spikes.
const MITER_LIMIT: f64 = 10.0;

/// Polygonize a path: one flush-ended rectangle per segment plus an outer
/// miter wedge per interior vertex, unioned into disjoint polygons.
/// Zero-length segments are skipped with a warning. Corner coordinates snap
/// to the unit grid (exact for axis-parallel segments).
pub fn polygonize_path(p: &PathElement, warnings: &mut Vec<String>) -> Result<Vec<Polygon>> {
    if p.width <= 0 {
        return Err(Error::Invalid(format!(
            "path width must be positive, got {}",
            p.width
        )));
    }
    if p.centerline.len() < 2 {
        return Err(Error::Invalid(
            "path needs at least 2 centerline points".to_string(),
        ));
    }
    // Split the width across the two sides; for odd widths the split is
    // asymmetric by one unit but the total stays exact.
    let lo = p.width / 2;
    let hi = p.width - lo;

    let mut pts: Vec<Point> = Vec::with_capacity(p.centerline.len());
    for &q in &p.centerline {
        if pts.last() == Some(&q) {
            warnings.push(format!(
                "zero-length path segment at ({}, {}) skipped",
                q.x, q.y
            ));
            continue;
        }
        pts.push(q);
    }
    if pts.len() < 2 {
        return Err(Error::Invalid(
            "path has no nonzero-length segment".to_string(),
        ));
    }

    let mut pieces: Vec<Polygon> = Vec::new();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        pieces.push(segment_rectangle(a, b, lo, hi)?);
    }
    for w in pts.windows(3) {
        if let Some(wedge) = miter_wedge(w[0], w[1], w[2], lo, hi) {
            pieces.push(wedge);
        }
    }
    Ok(merge_shapes(&pieces)?.polygons().to_vec())
}

/// Unit-ish direction and the two side normals of a segment, in f64.
fn segment_frame(a: Point, b: Point) -> (f64, f64) {
    let dx = (b.x - a.x) as f64;
    let dy = (b.y - a.y) as f64;
    let len = (dx * dx + dy * dy).sqrt();
    (dx / len, dy / len)
}

/// Flush-ended rectangle around segment a→b: `lo` units to the right of the
/// direction, `hi` units to the left (right of (dx,dy) is (dy,−dx)).
fn segment_rectangle(a: Point, b: Point, lo: i64, hi: i64) -> Result<Polygon> {
    let (ux, uy) = segment_frame(a, b);
    let (rx, ry) = (uy, -ux);
    let corner = |px: i64, py: i64, s: f64| -> Point {
        Point::new(
            (px as f64 + rx * s).round() as i64,
            (py as f64 + ry * s).round() as i64,
        )
    };
    Polygon::new(vec![
        corner(a.x, a.y, lo as f64),
        corner(b.x, b.y, lo as f64),
        corner(b.x, b.y, -(hi as f64)),
        corner(a.x, a.y, -(hi as f64)),
    ])
}

/// Outer miter wedge at vertex `v` between segments a→v and v→b, or `None`
/// for straight/reversal joins and joins beyond the miter limit.
fn miter_wedge(a: Point, v: Point, b: Point, lo: i64, hi: i64) -> Option<Polygon> {
    let cross = (v.x - a.x) as i128 * (b.y - v.y) as i128
        - (v.y - a.y) as i128 * (b.x - v.x) as i128;
    if cross == 0 {
        return None; // collinear: straight continuation or reversal
    }
    let (u1x, u1y) = segment_frame(a, v);
    let (u2x, u2y) = segment_frame(v, b);
    // Left turn (cross > 0): the gap opens on the right side (offset `lo`);
    // right turn: on the left side (offset `hi`).
    let (nx1, ny1, nx2, ny2, s) = if cross > 0 {
        (u1y, -u1x, u2y, -u2x, lo as f64)
    } else {
        (-u1y, u1x, -u2y, u2x, hi as f64)
    };
    let p1 = (v.x as f64 + nx1 * s, v.y as f64 + ny1 * s);
    let p2 = (v.x as f64 + nx2 * s, v.y as f64 + ny2 * s);
    // Intersect p1 + t·u1 with p2 + r·u2.
    let det = u1x * u2y - u1y * u2x;
    if det.abs() < 1e-12 {
        return None;
    }
    let t = ((p2.0 - p1.0) * u2y - (p2.1 - p1.1) * u2x) / det;
    let mx = p1.0 + t * u1x;
    let my = p1.1 + t * u1y;
    let miter_len = ((mx - v.x as f64).powi(2) + (my - v.y as f64).powi(2)).sqrt();
    if miter_len > MITER_LIMIT * s.max(1.0) {
        return None; // bevel fallback
    }
    let quad = vec![
        Point::new(v.x, v.y),
        Point::new(p1.0.round() as i64, p1.1.round() as i64),
        Point::new(mx.round() as i64, my.round() as i64),
        Point::new(p2.0.round() as i64, p2.1.round() as i64),
    ];
    Polygon::new(quad).ok() // degenerate rounding → no wedge needed
}

// ---------------------------------------------------------------------------
// Binary stream format (subset)
// ---------------------------------------------------------------------------

mod records {
    pub const HEADER: u16 = 0x0002;
    pub const BGNLIB: u16 = 0x0102;
    pub const LIBNAME: u16 = 0x0206;
    pub const UNITS: u16 = 0x0305;
    pub const ENDLIB: u16 = 0x0400;
    pub const BGNSTR: u16 = 0x0502;
    pub const STRNAME: u16 = 0x0606;
    pub const ENDSTR: u16 = 0x0700;
    pub const BOUNDARY: u16 = 0x0800;
    pub const PATH: u16 = 0x0900;
    pub const SREF: u16 = 0x0A00;
    pub const AREF: u16 = 0x0B00;
    pub const LAYER: u16 = 0x0D02;
    pub const DATATYPE: u16 = 0x0E02;
    pub const WIDTH: u16 = 0x0F03;
    pub const XY: u16 = 0x1003;
    pub const ENDEL: u16 = 0x1100;
}

/// Convert an excess-64 8-byte real to f64.
fn real8_to_f64(bits: u64) -> f64 {
    let sign = if bits >> 63 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 56) & 0x7f) as i32 - 64;
    let mantissa = (bits & 0x00ff_ffff_ffff_ffff) as f64 / 2f64.powi(56);
    sign * mantissa * 16f64.powi(exp)
}

/// Convert f64 to the nearest excess-64 8-byte real.
fn f64_to_real8(value: f64) -> u64 {
    if value == 0.0 {
        return 0;
    }
    let sign: u64 = if value < 0.0 { 1 << 63 } else { 0 };
    let mut v = value.abs();
    let mut exp: i32 = 64;
    while v >= 1.0 {
        v /= 16.0;
        exp += 1;
    }
    while v < 1.0 / 16.0 {
        v *= 16.0;
        exp -= 1;
    }
    let mut mant = (v * 2f64.powi(56)).round() as u64;
    if mant >= 1 << 56 {
        mant >>= 4;
        exp += 1;
    }
    sign | ((exp.clamp(0, 127) as u64) << 56) | (mant & 0x00ff_ffff_ffff_ffff)
}

struct RecordReader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

struct Record<'a> {
    kind: u16,
    payload: &'a [u8],
    offset: usize,
}

impl<'a> RecordReader<'a> {
    fn next(&mut self) -> Result<Option<Record<'a>>> {
        if self.offset >= self.bytes.len() {
            return Ok(None);
        }
        if self.bytes.len() - self.offset < 4 {
            return Err(truncated(self.offset));
        }
        let at = self.offset;
        let len = u16::from_be_bytes([self.bytes[at], self.bytes[at + 1]]) as usize;
        let kind = u16::from_be_bytes([self.bytes[at + 2], self.bytes[at + 3]]);
        if len < 4 || at + len > self.bytes.len() {
            return Err(truncated(at));
        }
        self.offset = at + len;
        Ok(Some(Record {
            kind,
            payload: &self.bytes[at + 4..at + len],
            offset: at,
        }))
    }
}

fn truncated(offset: usize) -> Error {
    Error::Parse(format!("unexpected end of stream at offset {offset}"))
}

fn payload_i16(r: &Record) -> Result<i16> {
    if r.payload.len() < 2 {
        return Err(truncated(r.offset));
    }
    Ok(i16::from_be_bytes([r.payload[0], r.payload[1]]))
}

fn payload_i32(r: &Record) -> Result<i32> {
    if r.payload.len() < 4 {
        return Err(truncated(r.offset));
    }
    Ok(i32::from_be_bytes([
        r.payload[0], r.payload[1], r.payload[2], r.payload[3],
    ]))
}

fn payload_points(r: &Record, scale: i64) -> Result<Vec<Point>> {
    if !r.payload.len().is_multiple_of(8) {
        return Err(Error::Parse(format!(
            "XY record at offset {} has a partial coordinate pair",
            r.offset
        )));
    }
    let mut pts = Vec::with_capacity(r.payload.len() / 8);
    for chunk in r.payload.chunks_exact(8) {
        let x = i32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as i64;
        let y = i32::from_be_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]) as i64;
        pts.push(Point::new(x * scale, y * scale));
    }
    Ok(pts)
}

#[derive(Default)]
struct PendingElement {
    is_path: bool,
    layer: Option<i32>,
    width: Option<i64>,
    xy: Option<Vec<Point>>,
}

/// Parse the stream-format subset and return all shapes on `layer`.
///
/// The stream must begin with a HEADER record and contain one flat structure.
/// SREF/AREF hierarchy is rejected. Unsupported records inside an element are
/// skipped and counted in the returned warnings. All coordinates are scaled
/// to nanometers using the UNITS record.
pub fn parse_gdsii_subset(bytes: &[u8], layer: i32) -> Result<(LayoutLayer, ParseWarnings)> {
    let mut reader = RecordReader { bytes, offset: 0 };
    let mut warnings = ParseWarnings::default();

    let first = reader.next()?.ok_or_else(|| truncated(0))?;
    if first.kind != records::HEADER {
        return Err(Error::Parse(format!(
            "stream does not begin with a HEADER record (found 0x{:04x})",
            first.kind
        )));
    }

    let mut scale: i64 = 1; // database units → nm
    let mut saw_units = false;
    let mut structures = 0usize;
    let mut element: Option<PendingElement> = None;
    let mut polygons: Vec<Polygon> = Vec::new();
    let mut paths: Vec<PathElement> = Vec::new();
    let mut saw_endlib = false;

    while let Some(rec) = reader.next()? {
        match rec.kind {
            records::SREF | records::AREF => {
                return Err(Error::Parse(format!(
                    "offset {}: hierarchical GDSII not supported; flatten first",
                    rec.offset
                )));
            }
            records::UNITS => {
                if rec.payload.len() < 16 {
                    return Err(truncated(rec.offset));
                }
                let mut meters = [0u8; 8];
                meters.copy_from_slice(&rec.payload[8..16]);
                let m_per_unit = real8_to_f64(u64::from_be_bytes(meters));
                let nm_per_unit = m_per_unit * 1e9;
                let rounded = nm_per_unit.round();
                if rounded < 1.0 || (nm_per_unit - rounded).abs() > 1e-6 * rounded {
                    return Err(Error::Parse(format!(
                        "offset {}: database unit {m_per_unit:e} m is not a whole number of nanometers",
                        rec.offset
                    )));
                }
                scale = rounded as i64;
                saw_units = true;
            }
            records::BGNSTR => {
                structures += 1;
                if structures > 1 {
                    return Err(Error::Parse(format!(
                        "offset {}: multiple structures not supported; flatten first",
                        rec.offset
                    )));
                }
            }
            records::BOUNDARY => element = Some(PendingElement::default()),
            records::PATH => {
                element = Some(PendingElement {
                    is_path: true,
                    ..PendingElement::default()
                })
            }
            records::LAYER => {
                if let Some(el) = element.as_mut() {
                    el.layer = Some(payload_i16(&rec)? as i32);
                }
            }
            records::DATATYPE => {} // accepted, value unused
            records::WIDTH => {
                if let Some(el) = element.as_mut() {
                    el.width = Some(payload_i32(&rec)? as i64 * scale);
                }
            }
            records::XY => {
                if !saw_units {
                    return Err(Error::Parse(format!(
                        "offset {}: XY before UNITS record",
                        rec.offset
                    )));
                }
                if let Some(el) = element.as_mut() {
                    el.xy = Some(payload_points(&rec, scale)?);
                }
            }
            records::ENDEL => {
                if let Some(el) = element.take() {
                    finish_element(el, layer, rec.offset, &mut polygons, &mut paths, &mut warnings)?;
                }
            }
            records::HEADER | records::BGNLIB | records::LIBNAME | records::STRNAME
            | records::ENDSTR => {}
            records::ENDLIB => {
                // Anything after ENDLIB (conventionally zero padding) is ignored.
                saw_endlib = true;
                break;
            }
            other => {
                if element.is_some() {
                    warnings.messages.push(format!(
                        "offset {}: unsupported record 0x{other:04x} inside element skipped",
                        rec.offset
                    ));
                    warnings.skipped_records += 1;
                } else {
                    // An unsupported element type: skip everything to ENDEL.
                    warnings.messages.push(format!(
                        "offset {}: unsupported element record 0x{other:04x} skipped",
                        rec.offset
                    ));
                    warnings.skipped_records += 1;
                    element = Some(PendingElement {
                        layer: Some(i32::MIN), // never matches a real layer
                        ..PendingElement::default()
                    });
                }
            }
        }
    }

    if !saw_endlib {
        return Err(truncated(bytes.len()));
    }
    for p in &paths {
        polygons.extend(polygonize_path(p, &mut warnings.messages)?);
    }
    let mut out = LayoutLayer {
        layer_number: layer,
        shapes: polygons,
    };
    out.normalize();
    Ok((out, warnings))
}

fn finish_element(
    el: PendingElement,
    want_layer: i32,
    offset: usize,
    polygons: &mut Vec<Polygon>,
    paths: &mut Vec<PathElement>,
    warnings: &mut ParseWarnings,
) -> Result<()> {
    let layer = match el.layer {
        Some(l) => l,
        None => {
            warnings
                .messages
                .push(format!("offset {offset}: element without LAYER skipped"));
            warnings.skipped_records += 1;
            return Ok(());
        }
    };
    if layer != want_layer {
        return Ok(());
    }
    let xy = el.xy.ok_or_else(|| {
        Error::Parse(format!("offset {offset}: element without XY record"))
    })?;
    if el.is_path {
        let width = el.width.unwrap_or(0);
        if width <= 0 {
            return Err(Error::Parse(format!(
                "offset {offset}: path with non-positive width {width}"
            )));
        }
        paths.push(PathElement {
            centerline: xy,
            width,
        });
    } else {
        // The closing repeated vertex is dropped by polygon normalization.
        let poly = Polygon::new(xy).map_err(|e| {
            Error::Parse(format!("offset {offset}: boundary on layer {layer}: {e}"))
        })?;
        polygons.push(poly);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stream-format writer (round-trip fixture and export utility)
// ---------------------------------------------------------------------------

/// Geometry destined for one layer of a written stream file.
#[derive(Clone, Debug, Default)]
pub struct LayerGeometry {
    pub boundaries: Vec<Vec<Point>>,
    pub paths: Vec<PathElement>,
}

fn push_record(out: &mut Vec<u8>, kind: u16, payload: &[u8]) {
    let len = (payload.len() + 4) as u16;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&kind.to_be_bytes());
    out.extend_from_slice(payload);
}

fn push_str_record(out: &mut Vec<u8>, kind: u16, s: &str) {
    let mut payload = s.as_bytes().to_vec();
    if payload.len() % 2 == 1 {
        payload.push(0); // strings are padded to even length
    }
    push_record(out, kind, &payload);
}

/// Serialize one flat structure in the stream-format subset. Coordinates are
/// written in database units of 1 nm; boundary rings gain the conventional
/// closing vertex.
pub fn write_gdsii_subset(
    library: &str,
    structure: &str,
    layers: &[(i32, LayerGeometry)],
) -> Vec<u8> {
    let mut out = Vec::new();
    push_record(&mut out, records::HEADER, &600i16.to_be_bytes());
    push_record(&mut out, records::BGNLIB, &[0u8; 24]);
    push_str_record(&mut out, records::LIBNAME, library);
    let mut units = Vec::with_capacity(16);
    units.extend_from_slice(&f64_to_real8(1e-3).to_be_bytes()); // user units per dbu
    units.extend_from_slice(&f64_to_real8(1e-9).to_be_bytes()); // meters per dbu
    push_record(&mut out, records::UNITS, &units);
    push_record(&mut out, records::BGNSTR, &[0u8; 24]);
    push_str_record(&mut out, records::STRNAME, structure);

    let xy_payload = |pts: &[Point], close: bool| -> Vec<u8> {
        let mut payload = Vec::with_capacity((pts.len() + 1) * 8);
        let mut emit = |p: &Point| {
            payload.extend_from_slice(&(p.x as i32).to_be_bytes());
            payload.extend_from_slice(&(p.y as i32).to_be_bytes());
        };
        for p in pts {
            emit(p);
        }
        if close {
            if let Some(first) = pts.first() {
                emit(first);
            }
        }
        payload
    };

    for (layer, geom) in layers {
        for ring in &geom.boundaries {
            push_record(&mut out, records::BOUNDARY, &[]);
            push_record(&mut out, records::LAYER, &(*layer as i16).to_be_bytes());
            push_record(&mut out, records::DATATYPE, &0i16.to_be_bytes());
            push_record(&mut out, records::XY, &xy_payload(ring, true));
            push_record(&mut out, records::ENDEL, &[]);
        }
        for path in &geom.paths {
            push_record(&mut out, records::PATH, &[]);
            push_record(&mut out, records::LAYER, &(*layer as i16).to_be_bytes());
            push_record(&mut out, records::DATATYPE, &0i16.to_be_bytes());
            push_record(&mut out, records::WIDTH, &(path.width as i32).to_be_bytes());
            push_record(&mut out, records::XY, &xy_payload(&path.centerline, false));
            push_record(&mut out, records::ENDEL, &[]);
        }
    }

    push_record(&mut out, records::ENDSTR, &[]);
    push_record(&mut out, records::ENDLIB, &[]);
    out
}

// ---------------------------------------------------------------------------
// JSON layout format
// ---------------------------------------------------------------------------

/// Parse the JSON layout document:
///
/// ```json
/// { "layer": 1, "unit_nm": 1,
///   "polygons": [[[x, y], ...], ...],
///   "paths": [{"points": [[x, y], ...], "width": w}, ...] }
/// ```
///
/// Coordinates are integers in multiples of `unit_nm` nanometers. Schema
/// violations report the JSON path of the offending field.
pub fn parse_polygon_json(text: &str) -> Result<(LayoutLayer, ParseWarnings)> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("$: expected a JSON object".to_string()))?;

    let layer = get_int(obj, "layer")?;
    let unit_nm = get_int(obj, "unit_nm")?;
    if unit_nm < 1 {
        return Err(Error::Parse(format!(
            "$.unit_nm: must be a positive integer, got {unit_nm}"
        )));
    }

    let mut warnings = ParseWarnings::default();
    let mut shapes: Vec<Polygon> = Vec::new();

    if let Some(polys) = obj.get("polygons") {
        let arr = polys
            .as_array()
            .ok_or_else(|| Error::Parse("$.polygons: expected an array".to_string()))?;
        for (i, ring) in arr.iter().enumerate() {
            let pts = json_points(ring, &format!("$.polygons[{i}]"), unit_nm)?;
            let poly = Polygon::new(pts)
                .map_err(|e| Error::Parse(format!("$.polygons[{i}]: {e}")))?;
            shapes.push(poly);
        }
    }

    if let Some(paths) = obj.get("paths") {
        let arr = paths
            .as_array()
            .ok_or_else(|| Error::Parse("$.paths: expected an array".to_string()))?;
        for (i, pv) in arr.iter().enumerate() {
            let pobj = pv.as_object().ok_or_else(|| {
                Error::Parse(format!("$.paths[{i}]: expected an object"))
            })?;
            let width = get_int(pobj, "width")
                .map_err(|e| Error::Parse(format!("$.paths[{i}].{e}")))?;
            let points_v = pobj.get("points").ok_or_else(|| {
                Error::Parse(format!("$.paths[{i}].points: missing"))
            })?;
            let centerline = json_points(points_v, &format!("$.paths[{i}].points"), unit_nm)?;
            let path = PathElement {
                centerline,
                width: width
                    .checked_mul(unit_nm)
                    .ok_or_else(|| Error::Parse(format!("$.paths[{i}].width: overflow")))?,
            };
            shapes.extend(
                polygonize_path(&path, &mut warnings.messages)
                    .map_err(|e| Error::Parse(format!("$.paths[{i}]: {e}")))?,
            );
        }
    }

    let mut out = LayoutLayer {
        layer_number: layer as i32,
        shapes,
    };
    out.normalize();
    Ok((out, warnings))
}

fn get_int(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<i64> {
    let v = obj
        .get(key)
        .ok_or_else(|| Error::Parse(format!("$.{key}: missing")))?;
    v.as_i64()
        .ok_or_else(|| Error::Parse(format!("$.{key}: expected an integer, got {v}")))
}

fn json_points(v: &serde_json::Value, path: &str, unit_nm: i64) -> Result<Vec<Point>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse(format!("{path}: expected an array of [x, y] pairs")))?;
    let mut pts = Vec::with_capacity(arr.len());
    for (j, pair) in arr.iter().enumerate() {
        let xy = pair
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| Error::Parse(format!("{path}[{j}]: expected [x, y]")))?;
        let x = xy[0]
            .as_i64()
            .ok_or_else(|| Error::Parse(format!("{path}[{j}][0]: expected an integer")))?;
        let y = xy[1]
            .as_i64()
            .ok_or_else(|| Error::Parse(format!("{path}[{j}][1]: expected an integer")))?;
        let sx = x
            .checked_mul(unit_nm)
            .ok_or_else(|| Error::Parse(format!("{path}[{j}][0]: overflow")))?;
        let sy = y
            .checked_mul(unit_nm)
            .ok_or_else(|| Error::Parse(format!("{path}[{j}][1]: overflow")))?;
        pts.push(Point::new(sx, sy));
    }
    Ok(pts)
}

/// Serialize a [`LayoutLayer`]-equivalent description as the JSON format.
pub fn write_polygon_json(
    layer: i32,
    unit_nm: i64,
    polygons: &[Vec<Point>],
    paths: &[PathElement],
) -> String {
    let poly_json: Vec<Vec<[i64; 2]>> = polygons
        .iter()
        .map(|ring| ring.iter().map(|p| [p.x / unit_nm, p.y / unit_nm]).collect())
        .collect();
    let path_json: Vec<serde_json::Value> = paths
        .iter()
        .map(|p| {
            serde_json::json!({
                "points": p.centerline.iter().map(|q| [q.x / unit_nm, q.y / unit_nm]).collect::<Vec<_>>(),
                "width": p.width / unit_nm,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "layer": layer,
        "unit_nm": unit_nm,
        "polygons": poly_json,
        "paths": path_json,
    }))
    .expect("layout JSON serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    fn um(v: i64) -> i64 {
        v * 1000
    }

    #[test]
    fn real8_round_trips_typical_values() {
        for v in [1e-9, 1e-3, 0.001, 2.5, -3.75, 0.0, 1.0, 1e-6] {
            let back = real8_to_f64(f64_to_real8(v));
            assert!(
                (back - v).abs() <= v.abs() * 1e-14 + 1e-300,
                "round trip {v} -> {back}"
            );
        }
    }

    #[test]
    fn boundary_square_parses_with_area() {
        // One 2×2 µm square on layer 2, ring written with the closing vertex.
        let ring = vec![
            Point::new(0, 0),
            Point::new(um(2), 0),
            Point::new(um(2), um(2)),
            Point::new(0, um(2)),
        ];
        let geom = LayerGeometry {
            boundaries: vec![ring],
            paths: vec![],
        };
        let bytes = write_gdsii_subset("lib", "top", &[(2, geom)]);

        let (layer, warnings) = parse_gdsii_subset(&bytes, 2).unwrap();
        assert_eq!(layer.shapes.len(), 1);
        assert_eq!(layer.shapes[0].outer().len(), 4);
        // 2×2 µm = 4 µm² = 4e6 nm² (doubled: 8e6).
        assert_eq!(layer.shapes[0].area2(), 2 * 4_000_000);
        assert!(warnings.messages.is_empty());

        // Same file, different layer: empty result.
        let (other, _) = parse_gdsii_subset(&bytes, 7).unwrap();
        assert!(other.shapes.is_empty());
    }

    #[test]
    fn empty_library_parses_to_empty_layer() {
        let bytes = write_gdsii_subset("lib", "top", &[]);
        let (layer, warnings) = parse_gdsii_subset(&bytes, 1).unwrap();
        assert!(layer.shapes.is_empty());
        assert_eq!(warnings.skipped_records, 0);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let ring = vec![
            Point::new(0, 0),
            Point::new(10, 0),
            Point::new(10, 10),
            Point::new(0, 10),
        ];
        let geom = LayerGeometry {
            boundaries: vec![ring],
            paths: vec![],
        };
        let mut bytes = write_gdsii_subset("lib", "top", &[(1, geom)]);
        bytes.truncate(bytes.len() - 7);
        let err = parse_gdsii_subset(&bytes, 1).unwrap_err();
        assert!(
            err.to_string().contains("unexpected end of stream at offset"),
            "got: {err}"
        );
    }

    #[test]
    fn hierarchy_is_rejected() {
        let mut bytes = write_gdsii_subset("lib", "top", &[]);
        // Splice an SREF record before ENDLIB (last 4 bytes).
        let endlib = bytes.split_off(bytes.len() - 4);
        push_record(&mut bytes, records::SREF, &[]);
        bytes.extend_from_slice(&endlib);
        let err = parse_gdsii_subset(&bytes, 1).unwrap_err();
        assert!(err.to_string().contains("flatten first"), "got: {err}");
    }

    #[test]
    fn unknown_record_in_element_is_skipped_with_warning() {
        let ring = vec![
            Point::new(0, 0),
            Point::new(10, 0),
            Point::new(10, 10),
            Point::new(0, 10),
        ];
        let geom = LayerGeometry {
            boundaries: vec![ring],
            paths: vec![],
        };
        let bytes = write_gdsii_subset("lib", "top", &[(1, geom)]);
        // Insert a PATHTYPE record (0x2102) right before the final ENDEL.
        // Records from the back: ENDLIB(4) ENDSTR(4) ENDEL(4).
        let insert_at = bytes.len() - 12;
        let mut spliced = bytes[..insert_at].to_vec();
        push_record(&mut spliced, 0x2102, &0i16.to_be_bytes());
        spliced.extend_from_slice(&bytes[insert_at..]);

        let (layer, warnings) = parse_gdsii_subset(&spliced, 1).unwrap();
        assert_eq!(layer.shapes.len(), 1);
        assert_eq!(warnings.skipped_records, 1);
        assert!(warnings.messages[0].contains("0x2102"));
    }

    #[test]
    fn json_square_parses() {
        let text = r#"{"layer":1,"unit_nm":1,"polygons":[[[0,0],[10,0],[10,10],[0,10]]]}"#;
        let (layer, _) = parse_polygon_json(text).unwrap();
        assert_eq!(layer.layer_number, 1);
        assert_eq!(layer.shapes.len(), 1);
        assert_eq!(layer.shapes[0].area2(), 200);
    }

    #[test]
    fn json_empty_polygon_list() {
        let (layer, _) =
            parse_polygon_json(r#"{"layer":3,"unit_nm":1,"polygons":[]}"#).unwrap();
        assert!(layer.shapes.is_empty());
    }

    #[test]
    fn json_flush_path_becomes_centered_rectangle() {
        // Path (0,0)→(100,0), width 10 → one 100×10 rectangle on the segment.
        let text = r#"{"layer":1,"unit_nm":1,"polygons":[],
                       "paths":[{"points":[[0,0],[100,0]],"width":10}]}"#;
        let (layer, _) = parse_polygon_json(text).unwrap();
        assert_eq!(layer.shapes.len(), 1);
        let got = layer.shapes[0].clone();
        assert_eq!(
            got,
            Polygon::rect(Rect::new(0, -5, 100, 5).unwrap()),
            "flush ends center the rectangle on the segment"
        );
    }

    #[test]
    fn json_schema_errors_carry_paths() {
        let missing = parse_polygon_json(r#"{"unit_nm":1}"#).unwrap_err();
        assert!(missing.to_string().contains("$.layer"), "got {missing}");

        let bad_pair =
            parse_polygon_json(r#"{"layer":1,"unit_nm":1,"polygons":[[[0,0],[5],[5,5]]]}"#)
                .unwrap_err();
        assert!(
            bad_pair.to_string().contains("$.polygons[0][1]"),
            "got {bad_pair}"
        );

        let frac =
            parse_polygon_json(r#"{"layer":1,"unit_nm":1,"polygons":[[[0.5,0],[5,0],[5,5]]]}"#)
                .unwrap_err();
        assert!(frac.to_string().contains("expected an integer"), "got {frac}");
    }

    #[test]
    fn single_segment_path_area_is_exact() {
        let p = PathElement {
            centerline: vec![Point::new(0, 0), Point::new(200, 0)],
            width: 14,
        };
        let mut w = Vec::new();
        let polys = polygonize_path(&p, &mut w).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].area2(), 2 * 200 * 14);
        assert!(w.is_empty());
    }

    #[test]
    fn l_shaped_path_miter_area() {
        // Orthogonal L with even width: outline area is exactly (L1+L2)·w.
        let (l1, l2, w) = (120i64, 80i64, 10i64);
        let p = PathElement {
            centerline: vec![
                Point::new(0, 0),
                Point::new(l1, 0),
                Point::new(l1, l2),
            ],
            width: w,
        };
        let mut warn = Vec::new();
        let polys = polygonize_path(&p, &mut warn).unwrap();
        let total: i128 = polys.iter().map(|q| q.area2()).sum();
        assert_eq!(total, 2 * ((l1 + l2) * w) as i128);
    }

    #[test]
    fn collinear_segments_collapse_to_one_rectangle() {
        let two = PathElement {
            centerline: vec![Point::new(0, 0), Point::new(60, 0), Point::new(150, 0)],
            width: 8,
        };
        let one = PathElement {
            centerline: vec![Point::new(0, 0), Point::new(150, 0)],
            width: 8,
        };
        let mut w = Vec::new();
        assert_eq!(
            polygonize_path(&two, &mut w).unwrap(),
            polygonize_path(&one, &mut w).unwrap()
        );
    }

    #[test]
    fn zero_length_segment_warns_and_continues() {
        let p = PathElement {
            centerline: vec![Point::new(0, 0), Point::new(0, 0), Point::new(50, 0)],
            width: 6,
        };
        let mut w = Vec::new();
        let polys = polygonize_path(&p, &mut w).unwrap();
        assert_eq!(polys.len(), 1);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("zero-length"));
    }

    #[test]
    fn formats_agree_on_identical_geometry() {
        let ring = vec![
            Point::new(um(1), um(1)),
            Point::new(um(5), um(1)),
            Point::new(um(5), um(4)),
            Point::new(um(1), um(4)),
        ];
        let path = PathElement {
            centerline: vec![Point::new(0, 0), Point::new(um(8), 0), Point::new(um(8), um(3))],
            width: um(1),
        };

        let geom = LayerGeometry {
            boundaries: vec![ring.clone()],
            paths: vec![path.clone()],
        };
        let bytes = write_gdsii_subset("lib", "top", &[(4, geom)]);
        let (from_gds, _) = parse_gdsii_subset(&bytes, 4).unwrap();

        let json = write_polygon_json(4, 1, &[ring], &[path]);
        let (from_json, _) = parse_polygon_json(&json).unwrap();

        assert_eq!(from_gds, from_json);
        assert!(!from_gds.shapes.is_empty());
    }
}
