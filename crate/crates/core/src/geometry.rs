//! Planar integer geometry shared by layout ingestion and tiling:
//!
//! - points / rectangles / polygons in integer database units (1 unit = 1 nm)
//! - boolean union of polygon sets into disjoint shapes
//! - a bounding-box spatial index (R-tree) with range queries
//! - exact overlap areas between an axis-aligned region and polygons,
//!   computed in rational arithmetic so area bookkeeping never drifts
//!
//! All areas are exact: integer shoelace sums (in i128) for whole polygons,
//! rational clipping for partial overlaps. Coordinates are expected to stay
//! within ±2^31 units (±2.1 m at 1 nm per unit), which keeps every
//! intermediate product comfortably inside i128.

use crate::error::{Error, Result};
use i_overlay::i_float::int::point::IntPoint;
use i_overlay::core::fill_rule::FillRule;
use i_overlay::core::overlay::Overlay;
use i_overlay::core::overlay_rule::OverlayRule;
use i_overlay::i_shape::int::shape::IntContour;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rstar::{RTree, RTreeObject, AABB};

/// Largest coordinate magnitude accepted from inputs, in database units.
pub const MAX_COORD: i64 = 1 << 31;

/// Database units per micrometer (1 unit = 1 nm).
pub const UNITS_PER_UM: i64 = 1000;

/// A 2D point in integer database units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }
}

/// An axis-aligned rectangle with exclusive upper corner, in database units.
/// Invariant: `x0 < x1` and `y0 < y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Result<Rect> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Invalid(format!(
                "rectangle ({x0},{y0})-({x1},{y1}) has non-positive extent"
            )));
        }
        Ok(Rect { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    /// Area in units², exact.
    pub fn area(&self) -> i128 {
        self.width() as i128 * self.height() as i128
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.x0 <= other.x0 && other.x1 <= self.x1 && self.y0 <= other.y0 && other.y1 <= self.y1
    }

    pub fn contains_point(&self, p: Point) -> bool {
        self.x0 <= p.x && p.x < self.x1 && self.y0 <= p.y && p.y < self.y1
    }

    /// Intersection with positive area, if any. Touching edges yield `None`.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        if x0 < x1 && y0 < y1 {
            Some(Rect { x0, y0, x1, y1 })
        } else {
            None
        }
    }

    /// True when the closed rectangles share no interior point.
    pub fn disjoint(&self, other: &Rect) -> bool {
        self.x1 <= other.x0 || other.x1 <= self.x0 || self.y1 <= other.y0 || other.y1 <= self.y0
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x0, self.y0),
            Point::new(self.x1, self.y0),
            Point::new(self.x1, self.y1),
            Point::new(self.x0, self.y1),
        ]
    }
}

/// Signed doubled area of a closed ring (counter-clockwise positive), exact.
fn shoelace2(ring: &[Point]) -> i128 {
    let n = ring.len();
    if n < 3 {
        return 0;
    }
    let mut acc: i128 = 0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.x as i128 * b.y as i128 - b.x as i128 * a.y as i128;
    }
    acc
}

/// A simple polygon with optional holes, all rings stored counter-clockwise.
///
/// Construction normalizes rings: the closing vertex is dropped, consecutive
/// duplicates removed, orientation fixed to CCW, and the ring rotated so its
/// lexicographically smallest vertex comes first. Two polygons describing the
/// same point set therefore compare equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polygon {
    outer: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

impl Polygon {
    /// Build a polygon without holes. Rejects degenerate input (fewer than
    /// 3 distinct vertices, or all vertices collinear → zero area).
    pub fn new(vertices: Vec<Point>) -> Result<Polygon> {
        Polygon::from_rings(vertices, Vec::new())
    }

    /// Build a polygon with holes; every ring is normalized independently.
    pub fn from_rings(outer: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Polygon> {
        let outer = normalize_ring(outer)?;
        let mut norm_holes = Vec::with_capacity(holes.len());
        for h in holes {
            norm_holes.push(normalize_ring(h)?);
        }
        norm_holes.sort_by(|a, b| a[0].cmp(&b[0]));
        Ok(Polygon {
            outer,
            holes: norm_holes,
        })
    }

    /// Axis-aligned rectangle as a polygon.
    pub fn rect(r: Rect) -> Polygon {
        Polygon {
            outer: vec![
                Point::new(r.x0, r.y0),
                Point::new(r.x1, r.y0),
                Point::new(r.x1, r.y1),
                Point::new(r.x0, r.y1),
            ],
            holes: Vec::new(),
        }
    }

    pub fn outer(&self) -> &[Point] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    /// Twice the enclosed area (holes subtracted), exact.
    pub fn area2(&self) -> i128 {
        let mut a = shoelace2(&self.outer);
        for h in &self.holes {
            a -= shoelace2(h);
        }
        a
    }

    /// Enclosed area in units², as f64 (exact for areas below 2^52 units²).
    pub fn area(&self) -> f64 {
        self.area2() as f64 * 0.5
    }

    /// Minimal axis-aligned bounding rectangle.
    pub fn bbox(&self) -> Rect {
        let mut x0 = i64::MAX;
        let mut y0 = i64::MAX;
        let mut x1 = i64::MIN;
        let mut y1 = i64::MIN;
        for p in &self.outer {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Rect { x0, y0, x1, y1 }
    }

    /// `Some(rect)` when the polygon is exactly an axis-aligned rectangle
    /// without holes; enables the all-integer overlap fast path.
    pub fn as_axis_aligned_rect(&self) -> Option<Rect> {
        if !self.holes.is_empty() || self.outer.len() != 4 {
            return None;
        }
        let b = self.bbox();
        let mut corners: Vec<Point> = self.outer.clone();
        corners.sort();
        let mut expect: Vec<Point> = b.corners().to_vec();
        expect.sort();
        if corners == expect {
            Some(b)
        } else {
            None
        }
    }

    /// True when no two non-adjacent edges of the outer ring intersect and
    /// adjacent edges meet only at their shared endpoint. Holes are not
    /// cross-checked; union outputs satisfy this by construction.
    pub fn is_simple(&self) -> bool {
        ring_is_simple(&self.outer)
    }
}

fn normalize_ring(mut ring: Vec<Point>) -> Result<Vec<Point>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring.dedup();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    for p in &ring {
        if p.x.abs() > MAX_COORD || p.y.abs() > MAX_COORD {
            return Err(Error::Invalid(format!(
                "coordinate ({}, {}) exceeds the supported range ±{MAX_COORD}",
                p.x, p.y
            )));
        }
    }
    if ring.len() < 3 {
        return Err(Error::DegeneratePolygon(format!(
            "{} distinct vertices (need at least 3)",
            ring.len()
        )));
    }
    let a2 = shoelace2(&ring);
    if a2 == 0 {
        return Err(Error::DegeneratePolygon(
            "zero area (vertices are collinear)".to_string(),
        ));
    }
    if a2 < 0 {
        ring.reverse();
    }
    // Rotate the smallest vertex to the front for a canonical representation.
    let min_idx = ring
        .iter()
        .enumerate()
        .min_by_key(|(_, p)| **p)
        .map(|(i, _)| i)
        .unwrap();
    ring.rotate_left(min_idx);
    Ok(ring)
}

fn orient(a: Point, b: Point, c: Point) -> i128 {
    (b.x - a.x) as i128 * (c.y - a.y) as i128 - (b.y - a.y) as i128 * (c.x - a.x) as i128
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    orient(a, b, p) == 0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0) != (o2 > 0)) && o1 != 0 && o2 != 0 && ((o3 > 0) != (o4 > 0)) && o3 != 0 && o4 != 0 {
        return true;
    }
    (o1 == 0 && on_segment(a, b, c))
        || (o2 == 0 && on_segment(a, b, d))
        || (o3 == 0 && on_segment(c, d, a))
        || (o4 == 0 && on_segment(c, d, b))
}

fn ring_is_simple(ring: &[Point]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Shared endpoint is fine; collinear overlap is not.
                let shared = if j == i + 1 { b } else { a };
                let (far1, far2) = if j == i + 1 { (a, d) } else { (b, c) };
                if orient(far1, shared, far2) == 0
                    && (on_segment(shared, far1, far2) || on_segment(shared, far2, far1))
                {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Polygons with pairwise-disjoint interiors, typically produced by
/// [`merge_shapes`]. Total area equals the area of the union of the inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DisjointPolygonSet {
    polygons: Vec<Polygon>,
}

impl DisjointPolygonSet {
    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Twice the total enclosed area, exact.
    pub fn total_area2(&self) -> i128 {
        self.polygons.iter().map(|p| p.area2()).sum()
    }
}

/// Union a list of polygons into disjoint shapes (non-zero winding fill).
///
/// Intersection points introduced by the union snap to the integer grid,
/// which for rectilinear geometry is exact. Degenerate inputs are rejected
/// with a diagnostic naming the offending shape.
pub fn merge_shapes(shapes: &[Polygon]) -> Result<DisjointPolygonSet> {
    for (i, p) in shapes.iter().enumerate() {
        if p.outer.len() < 3 || p.area2() <= 0 {
            return Err(Error::DegeneratePolygon(format!(
                "shape {i}: {} vertices, doubled area {}",
                p.outer.len(),
                p.area2()
            )));
        }
    }
    if shapes.is_empty() {
        return Ok(DisjointPolygonSet::default());
    }

    let mut contours: Vec<IntContour<i64>> = Vec::new();
    for p in shapes {
        contours.push(p.outer.iter().map(|q| IntPoint::new(q.x, q.y)).collect());
        for h in &p.holes {
            // Holes are stored CCW; emit them CW so non-zero winding cancels.
            contours.push(h.iter().rev().map(|q| IntPoint::new(q.x, q.y)).collect());
        }
    }

    let result = Overlay::<i64>::with_contours(&contours, &[])
        .overlay(OverlayRule::Union, FillRule::NonZero);

    let mut polygons = Vec::new();
    for shape in result {
        let mut rings = shape.into_iter();
        let outer: Vec<Point> = match rings.next() {
            Some(c) => c.into_iter().map(|q| Point::new(q.x, q.y)).collect(),
            None => continue,
        };
        // Output holes arrive clockwise; flip them to the CCW convention.
        let holes: Vec<Vec<Point>> = rings
            .map(|c| c.into_iter().rev().map(|q| Point::new(q.x, q.y)).collect())
            .collect();
        polygons.push(Polygon::from_rings(outer, holes)?);
    }
    polygons.sort_by_key(|p| {
        let b = p.bbox();
        (b.y0, b.x0, b.y1, b.x1)
    });
    Ok(DisjointPolygonSet { polygons })
}

struct IndexEntry {
    id: usize,
    env: AABB<[i64; 2]>,
}

impl RTreeObject for IndexEntry {
    type Envelope = AABB<[i64; 2]>;

    fn envelope(&self) -> Self::Envelope {
        self.env
    }
}

/// Bounding-box R-tree over a disjoint polygon set. Range queries return a
/// superset of the polygons intersecting the query rectangle and never a
/// polygon whose bounding box is disjoint from it.
pub struct SpatialIndex {
    set: DisjointPolygonSet,
    tree: RTree<IndexEntry>,
}

impl SpatialIndex {
    /// Ids (into [`SpatialIndex::polygon`]) whose bounding boxes intersect
    /// the query region, sorted ascending for deterministic iteration.
    pub fn query(&self, region: Rect) -> Vec<usize> {
        let env = AABB::from_corners([region.x0, region.y0], [region.x1, region.y1]);
        let mut ids: Vec<usize> = self
            .tree
            .locate_in_envelope_intersecting(env)
            .map(|e| e.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn polygon(&self, id: usize) -> &Polygon {
        &self.set.polygons()[id]
    }

    pub fn set(&self) -> &DisjointPolygonSet {
        &self.set
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

/// Build the R-tree index over a disjoint polygon set.
pub fn build_spatial_index(set: DisjointPolygonSet) -> SpatialIndex {
    let entries: Vec<IndexEntry> = set
        .polygons()
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let b = p.bbox();
            IndexEntry {
                id,
                env: AABB::from_corners([b.x0, b.y0], [b.x1, b.y1]),
            }
        })
        .collect();
    SpatialIndex {
        set,
        tree: RTree::bulk_load(entries),
    }
}

/// Minimal axis-aligned rectangle containing every polygon of the set.
pub fn bounding_window(set: &DisjointPolygonSet) -> Result<Rect> {
    if set.is_empty() {
        return Err(Error::NoGeometry);
    }
    let mut x0 = i64::MAX;
    let mut y0 = i64::MAX;
    let mut x1 = i64::MIN;
    let mut y1 = i64::MIN;
    for p in set.polygons() {
        let b = p.bbox();
        x0 = x0.min(b.x0);
        y0 = y0.min(b.y0);
        x1 = x1.max(b.x1);
        y1 = y1.max(b.y1);
    }
    Rect::new(x0, y0, x1, y1)
}

type RPoint = (BigRational, BigRational);

fn rat(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn ring_to_rational(ring: &[Point]) -> Vec<RPoint> {
    ring.iter().map(|p| (rat(p.x), rat(p.y))).collect()
}

/// One Sutherland–Hodgman pass against the half-plane `coord(axis) ≥ bound`
/// (or `≤ bound` when `keep_ge` is false). `axis_x` selects the coordinate.
fn clip_halfplane(ring: &[RPoint], axis_x: bool, bound: i64, keep_ge: bool) -> Vec<RPoint> {
    let b = rat(bound);
    let inside = |p: &RPoint| {
        let c = if axis_x { &p.0 } else { &p.1 };
        if keep_ge {
            *c >= b
        } else {
            *c <= b
        }
    };
    let cross = |p: &RPoint, q: &RPoint| -> RPoint {
        // Intersection with the clip line; the denominator is nonzero
        // because p and q lie strictly on opposite sides.
        let (pa, pb) = (if axis_x { &p.0 } else { &p.1 }, if axis_x { &p.1 } else { &p.0 });
        let (qa, qb) = (if axis_x { &q.0 } else { &q.1 }, if axis_x { &q.1 } else { &q.0 });
        let t = (&b - pa) / (qa - pa);
        let other = pb + &t * (qb - pb);
        if axis_x {
            (b.clone(), other)
        } else {
            (other, b.clone())
        }
    };
    let n = ring.len();
    let mut out = Vec::with_capacity(n + 4);
    for i in 0..n {
        let cur = &ring[i];
        let next = &ring[(i + 1) % n];
        let ci = inside(cur);
        let ni = inside(next);
        if ci {
            out.push(cur.clone());
            if !ni {
                out.push(cross(cur, next));
            }
        } else if ni {
            out.push(cross(cur, next));
        }
    }
    out
}

fn rational_shoelace2(ring: &[RPoint]) -> BigRational {
    let n = ring.len();
    let mut acc = BigRational::zero();
    if n < 3 {
        return acc;
    }
    for i in 0..n {
        let (ax, ay) = &ring[i];
        let (bx, by) = &ring[(i + 1) % n];
        acc += ax * by - bx * ay;
    }
    acc
}

/// Doubled area of `ring ∩ region`, exact. The ring must be CCW.
fn clip_ring_area2(ring: &[Point], region: Rect) -> BigRational {
    let mut r = ring_to_rational(ring);
    for (axis_x, bound, keep_ge) in [
        (true, region.x0, true),
        (true, region.x1, false),
        (false, region.y0, true),
        (false, region.y1, false),
    ] {
        if r.len() < 3 {
            return BigRational::zero();
        }
        r = clip_halfplane(&r, axis_x, bound, keep_ge);
    }
    rational_shoelace2(&r)
}

/// Exact area of `polygon ∩ region` in units², holes subtracted.
pub fn polygon_overlap_exact(region: Rect, polygon: &Polygon) -> BigRational {
    let bbox = polygon.bbox();
    if region.disjoint(&bbox) {
        return BigRational::zero();
    }
    if region.contains_rect(&bbox) {
        return BigRational::new(BigInt::from(polygon.area2()), BigInt::from(2));
    }
    if let Some(r) = polygon.as_axis_aligned_rect() {
        let area = r.intersect(&region).map(|s| s.area()).unwrap_or(0);
        return BigRational::from_integer(BigInt::from(area));
    }
    let mut a2 = clip_ring_area2(&polygon.outer, region);
    for h in &polygon.holes {
        a2 -= clip_ring_area2(h, region);
    }
    a2 / BigRational::from_integer(BigInt::from(2))
}

/// Exact total area of `region ∩ candidates` in units². Candidates must have
/// pairwise-disjoint interiors (e.g. members of a [`DisjointPolygonSet`]).
pub fn overlap_area_exact<'a>(
    region: Rect,
    candidates: impl IntoIterator<Item = &'a Polygon>,
) -> BigRational {
    let mut total = BigRational::zero();
    for p in candidates {
        total += polygon_overlap_exact(region, p);
    }
    total
}

/// Overlap area as f64 (nearest representable value of the exact result).
pub fn overlap_area<'a>(region: Rect, candidates: impl IntoIterator<Item = &'a Polygon>) -> f64 {
    overlap_area_exact(region, candidates)
        .to_f64()
        .unwrap_or(f64::NAN)
}
