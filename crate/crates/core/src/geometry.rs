//! Planar geometry primitives: rings, convex clipping and exact union areas.
//!
//! Rings are stored open (first vertex not repeated) unless a function says
//! otherwise. Convex clip windows must be counter-clockwise.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        BBox {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn empty() -> Self {
        BBox::new(
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        )
    }

    pub fn of_points<'a>(pts: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut b = BBox::empty();
        for p in pts {
            b.expand(*p);
        }
        b
    }

    pub fn expand(&mut self, p: Point) {
        self.min_x = self.min_x.min(p.x);
        self.min_y = self.min_y.min(p.y);
        self.max_x = self.max_x.max(p.x);
        self.max_y = self.max_y.max(p.y);
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox::new(
            self.min_x.min(o.min_x),
            self.min_y.min(o.min_y),
            self.max_x.max(o.max_x),
            self.max_y.max(o.max_y),
        )
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
            || !self.width().is_finite()
            || !self.height().is_finite()
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.min_x <= o.max_x && o.min_x <= self.max_x && self.min_y <= o.max_y && o.min_y <= self.max_y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    /// Counter-clockwise ring of the four corners.
    pub fn ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.min_x, self.min_y),
            Point::new(self.max_x, self.min_y),
            Point::new(self.max_x, self.max_y),
            Point::new(self.min_x, self.max_y),
        ]
    }
}

/// Shoelace signed area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Drops a repeated closing vertex, if present.
pub fn open_ring(ring: &[Point]) -> &[Point] {
    match ring {
        [first, .., last] if first == last && ring.len() > 1 => &ring[..ring.len() - 1],
        _ => ring,
    }
}

/// Sutherland–Hodgman clip of an arbitrary simple ring against a convex,
/// counter-clockwise window. For non-convex subjects the output may contain
/// zero-width bridges along the window boundary; its signed area is still the
/// area of the intersection.
pub fn clip_to_convex(subject: &[Point], window: &[Point]) -> Vec<Point> {
    let mut output: Vec<Point> = subject.to_vec();
    let m = window.len();
    let mut input = Vec::with_capacity(subject.len() + m);
    for e in 0..m {
        if output.is_empty() {
            break;
        }
        let a = window[e];
        let b = window[(e + 1) % m];
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

/// Intersection of segment p→q with the infinite line through a, b.
fn line_intersection(p: Point, q: Point, a: Point, b: Point) -> Point {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Point-in-ring by the even-odd rule.
pub fn point_in_ring(p: Point, ring: &[Point]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Containment in a convex counter-clockwise ring, boundary inclusive.
pub fn convex_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    (0..n).all(|i| cross(ring[i], ring[(i + 1) % n], p) >= 0.0)
}

fn orientation(a: Point, b: Point, c: Point) -> i8 {
    let v = cross(a, b, c);
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let o1 = orientation(p1, p2, q1);
    let o2 = orientation(p1, p2, q2);
    let o3 = orientation(q1, q2, p1);
    let o4 = orientation(q1, q2, p2);
    if o1 != o2 && o3 != o4 {
        return true;
    }
    (o1 == 0 && on_segment(p1, p2, q1))
        || (o2 == 0 && on_segment(p1, p2, q2))
        || (o3 == 0 && on_segment(q1, q2, p1))
        || (o4 == 0 && on_segment(q1, q2, p2))
}

/// True when any two non-adjacent edges of the open ring touch, or the ring
/// has fewer than three distinct vertices.
pub fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 3 {
        return true;
    }
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        if a1 == a2 {
            return true;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.x * ab.x + ab.y * ab.y;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let ap = p.sub(a);
    let t = ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * ab.x, a.y + t * ab.y))
}

pub fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => p.dist(*only),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn polyline_length(line: &[Point]) -> f64 {
    line.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Point halfway along the polyline by arc length.
pub fn polyline_midpoint(line: &[Point]) -> Option<Point> {
    let first = *line.first()?;
    let half = 0.5 * polyline_length(line);
    let mut walked = 0.0;
    for w in line.windows(2) {
        let len = w[0].dist(w[1]);
        if len > 0.0 && walked + len >= half {
            let t = (half - walked) / len;
            return Some(Point::new(
                w[0].x + t * (w[1].x - w[0].x),
                w[0].y + t * (w[1].y - w[0].y),
            ));
        }
        walked += len;
    }
    Some(first)
}

/// Exact area of the union of convex polygons (counter-clockwise, open).
///
/// Vertical slab decomposition: every vertex abscissa and every pairwise edge
/// crossing is an event, so inside each slab all boundaries are linear and the
/// covered length at the slab midpoint integrates exactly.
pub fn union_area_convex(polys: &[Vec<Point>]) -> f64 {
    let polys: Vec<&Vec<Point>> = polys.iter().filter(|p| p.len() >= 3).collect();
    match polys.len() {
        0 => return 0.0,
        1 => return signed_area(polys[0]).abs(),
        _ => {}
    }
    let mut edges: Vec<(Point, Point, usize)> = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (k, poly) in polys.iter().enumerate() {
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            xs.push(a.x);
            if a.x != b.x {
                edges.push((a, b, k));
            }
        }
    }
    for i in 0..edges.len() {
        let (a1, a2, ka) = edges[i];
        let (ax0, ax1) = (a1.x.min(a2.x), a1.x.max(a2.x));
        for &(b1, b2, kb) in &edges[i + 1..] {
            if ka == kb || b1.x.max(b2.x) < ax0 || b1.x.min(b2.x) > ax1 {
                continue;
            }
            if let Some(x) = proper_crossing_x(a1, a2, b1, b2) {
                xs.push(x);
            }
        }
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let bounds: Vec<BBox> = polys.iter().map(|p| BBox::of_points(p.iter())).collect();
    let mut area = 0.0;
    let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(polys.len());
    for w in xs.windows(2) {
        let width = w[1] - w[0];
        if width <= 0.0 {
            continue;
        }
        let xm = 0.5 * (w[0] + w[1]);
        intervals.clear();
        for (poly, bb) in polys.iter().zip(&bounds) {
            if xm <= bb.min_x || xm >= bb.max_x {
                continue;
            }
            if let Some(iv) = vertical_extent(poly, xm) {
                intervals.push(iv);
            }
        }
        area += width * covered_length(&mut intervals);
    }
    area
}

fn proper_crossing_x(a1: Point, a2: Point, b1: Point, b2: Point) -> Option<f64> {
    let d = (a2.x - a1.x) * (b2.y - b1.y) - (a2.y - a1.y) * (b2.x - b1.x);
    if d == 0.0 {
        return None;
    }
    let t = ((b1.x - a1.x) * (b2.y - b1.y) - (b1.y - a1.y) * (b2.x - b1.x)) / d;
    let u = ((b1.x - a1.x) * (a2.y - a1.y) - (b1.y - a1.y) * (a2.x - a1.x)) / d;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(a1.x + t * (a2.x - a1.x))
    } else {
        None
    }
}

/// [lo, hi] of a convex polygon cut by the vertical line at `x`.
fn vertical_extent(poly: &[Point], x: f64) -> Option<(f64, f64)> {
    let n = poly.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.x <= x && b.x > x) || (b.x <= x && a.x > x) {
            let t = (x - a.x) / (b.x - a.x);
            let y = a.y + t * (b.y - a.y);
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    (hi > lo).then_some((lo, hi))
}

fn covered_length(intervals: &mut [(f64, f64)]) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for &(lo, hi) in intervals.iter() {
        match cur {
            Some((clo, chi)) if lo <= chi => cur = Some((clo, chi.max(hi))),
            Some((clo, chi)) => {
                total += chi - clo;
                cur = Some((lo, hi));
            }
            None => cur = Some((lo, hi)),
        }
    }
    if let Some((clo, chi)) = cur {
        total += chi - clo;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, s: f64) -> Vec<Point> {
        BBox::new(x0, y0, x0 + s, y0 + s).ring()
    }

    #[test]
    fn shoelace_orientation() {
        let sq = square(0.0, 0.0, 2.0);
        assert_eq!(signed_area(&sq), 4.0);
        let rev: Vec<_> = sq.iter().rev().copied().collect();
        assert_eq!(signed_area(&rev), -4.0);
    }

    #[test]
    fn clip_concave_subject_keeps_area() {
        // U shape: 3x3 square minus the middle top 1x2 notch
        let u = vec![
            Point::new(0.0, 0.0),
            Point::new(3.0, 0.0),
            Point::new(3.0, 3.0),
            Point::new(2.0, 3.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 3.0),
            Point::new(0.0, 3.0),
        ];
        let window = BBox::new(0.5, 0.5, 2.5, 2.5).ring();
        let a = signed_area(&clip_to_convex(&u, &window));
        // window area 4 minus the notch part [1,2]x[1,2.5]
        assert!((a - 2.5).abs() < 1e-12, "{a}");
    }

    #[test]
    fn union_of_overlapping_squares() {
        let a = square(0.0, 0.0, 2.0);
        let b = square(1.0, 1.0, 2.0);
        assert!((union_area_convex(&[a.clone(), b]) - 7.0).abs() < 1e-12);
        let c = square(5.0, 5.0, 1.0);
        assert!((union_area_convex(&[a.clone(), c]) - 5.0).abs() < 1e-12);
        assert!((union_area_convex(&[a.clone(), a]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn union_of_rotated_squares() {
        // square and the same square rotated 45 degrees about its center
        let s = square(-1.0, -1.0, 2.0);
        let r = 2f64.sqrt();
        let d = vec![
            Point::new(0.0, -r),
            Point::new(r, 0.0),
            Point::new(0.0, r),
            Point::new(-r, 0.0),
        ];
        // octagram: square area 4 plus four corner triangles of the diamond
        let tri_leg = r - 1.0;
        let expected = 4.0 + 4.0 * tri_leg * tri_leg * 2.0 / 2.0;
        let got = union_area_convex(&[s, d]);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn self_intersection_detection() {
        let bowtie = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ];
        assert!(ring_self_intersects(&bowtie));
        assert!(!ring_self_intersects(&square(0.0, 0.0, 1.0)));
    }

    #[test]
    fn midpoint_of_l_shape() {
        let l = [Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(2.0, 2.0)];
        assert_eq!(polyline_midpoint(&l), Some(Point::new(2.0, 0.0)));
        assert_eq!(point_polyline_distance(Point::new(1.0, 1.0), &l), 1.0);
    }
}
