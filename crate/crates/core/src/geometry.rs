//! Planar polygon helpers: areas, rectangle clipping, containment.
//!
//! Rings are stored open (the closing vertex is not repeated).

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Polygon with one exterior ring and optional holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    #[serde(default)]
    pub holes: Vec<Vec<Point>>,
}

/// Axis-aligned rectangle, `min <= max` on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min_x: x0.min(x1),
            min_y: y0.min(y1),
            max_x: x0.max(x1),
            max_y: y0.max(y1),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min_x && p[0] <= self.max_x && p[1] >= self.min_y && p[1] <= self.max_y
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min_x < o.max_x && o.min_x < self.max_x && self.min_y < o.max_y && o.min_y < self.max_y
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.min_x >= self.min_x && o.max_x <= self.max_x && o.min_y >= self.min_y && o.max_y <= self.max_y
    }
}

/// Strips a repeated closing vertex.
pub fn open_ring(mut ring: Vec<Point>) -> Vec<Point> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

pub fn signed_ring_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    // Relative to the first vertex: projected coordinates are large and the
    // raw cross products would cancel catastrophically.
    let o = ring[0];
    let mut acc = 0.0;
    for i in 1..n - 1 {
        let a = [ring[i][0] - o[0], ring[i][1] - o[1]];
        let b = [ring[i + 1][0] - o[0], ring[i + 1][1] - o[1]];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc * 0.5
}

pub fn ring_area(ring: &[Point]) -> f64 {
    signed_ring_area(ring).abs()
}

impl Polygon {
    pub fn new(exterior: Vec<Point>) -> Self {
        Self { exterior, holes: Vec::new() }
    }

    pub fn rect(r: Rect) -> Self {
        Self::new(vec![
            [r.min_x, r.min_y],
            [r.max_x, r.min_y],
            [r.max_x, r.max_y],
            [r.min_x, r.max_y],
        ])
    }

    pub fn area(&self) -> f64 {
        ring_area(&self.exterior) - self.holes.iter().map(|h| ring_area(h)).sum::<f64>()
    }

    pub fn bbox(&self) -> Rect {
        bbox_of(&self.exterior)
    }

    /// Area of the intersection with `rect`.
    pub fn clipped_area(&self, rect: &Rect) -> f64 {
        let outer = ring_area(&clip_ring(&self.exterior, rect));
        let holes: f64 = self.holes.iter().map(|h| ring_area(&clip_ring(h, rect))).sum();
        (outer - holes).max(0.0)
    }

    /// Containment that counts boundary points as inside.
    pub fn contains(&self, p: Point) -> bool {
        if on_ring_boundary(&self.exterior, p) {
            return true;
        }
        if !ring_contains(&self.exterior, p) {
            return false;
        }
        for h in &self.holes {
            if on_ring_boundary(h, p) {
                return true;
            }
            if ring_contains(h, p) {
                return false;
            }
        }
        true
    }
}

pub fn bbox_of(points: &[Point]) -> Rect {
    let mut r = Rect {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for p in points {
        r.min_x = r.min_x.min(p[0]);
        r.min_y = r.min_y.min(p[1]);
        r.max_x = r.max_x.max(p[0]);
        r.max_y = r.max_y.max(p[1]);
    }
    r
}

/// Area-weighted centroid of a set of polygons.
pub fn centroid(polys: &[Polygon]) -> Option<Point> {
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut total = 0.0;
    let mut accumulate = |ring: &[Point], sign: f64| {
        let a = signed_ring_area(ring);
        if a == 0.0 {
            return;
        }
        let o = ring[0];
        let (mut sx, mut sy) = (0.0, 0.0);
        let n = ring.len();
        for i in 0..n {
            let p = [ring[i][0] - o[0], ring[i][1] - o[1]];
            let q = [ring[(i + 1) % n][0] - o[0], ring[(i + 1) % n][1] - o[1]];
            let cross = p[0] * q[1] - q[0] * p[1];
            sx += (p[0] + q[0]) * cross;
            sy += (p[1] + q[1]) * cross;
        }
        // o + s / (6a) is the ring centroid; weight by |a|.
        let w = sign * a.abs();
        cx += w * (o[0] + sx / (6.0 * a));
        cy += w * (o[1] + sy / (6.0 * a));
        total += w;
    };
    for poly in polys {
        accumulate(&poly.exterior, 1.0);
        for h in &poly.holes {
            accumulate(h, -1.0);
        }
    }
    if total <= 0.0 {
        return None;
    }
    Some([cx / total, cy / total])
}

/// Sutherland–Hodgman clip of a ring against an axis-aligned rectangle.
pub fn clip_ring(ring: &[Point], rect: &Rect) -> Vec<Point> {
    let mut out: Vec<Point> = ring.to_vec();
    // (axis, bound, keep_greater)
    let edges = [
        (0usize, rect.min_x, true),
        (0, rect.max_x, false),
        (1, rect.min_y, true),
        (1, rect.max_y, false),
    ];
    for (axis, bound, keep_greater) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let inside = |p: &Point| {
            if keep_greater {
                p[axis] >= bound
            } else {
                p[axis] <= bound
            }
        };
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci {
                if !pi {
                    out.push(intersect(prev, cur, axis, bound));
                }
                out.push(cur);
            } else if pi {
                out.push(intersect(prev, cur, axis, bound));
            }
        }
    }
    out
}

fn intersect(a: Point, b: Point, axis: usize, bound: f64) -> Point {
    let other = 1 - axis;
    let t = (bound - a[axis]) / (b[axis] - a[axis]);
    let mut p = [0.0; 2];
    p[axis] = bound;
    p[other] = a[other] + t * (b[other] - a[other]);
    p
}

fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if cross != 0.0 {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn on_ring_boundary(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    (0..n).any(|i| on_segment(ring[i], ring[(i + 1) % n], p))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// True when two non-adjacent edges of the ring touch or cross.
pub fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Area in square metres of a lon/lat ring set, using an equirectangular
/// projection centred on the centroid latitude.
pub fn geographic_area_m2(polys: &[Polygon]) -> f64 {
    let Some(c) = centroid(polys) else {
        return 0.0;
    };
    let kx = EARTH_RADIUS_M * c[1].to_radians().cos() * std::f64::consts::PI / 180.0;
    let ky = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let project = |ring: &[Point]| -> Vec<Point> {
        ring.iter().map(|p| [(p[0] - c[0]) * kx, (p[1] - c[1]) * ky]).collect()
    };
    polys
        .iter()
        .map(|p| {
            ring_area(&project(&p.exterior)) - p.holes.iter().map(|h| ring_area(&project(h))).sum::<f64>()
        })
        .sum()
}
