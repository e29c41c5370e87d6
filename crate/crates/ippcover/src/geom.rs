//! Planar geometry primitives: points, simple polygons, point-in-polygon
//! and segment intersection tests.
//!
//! All tolerances are in meters. Points within `SNAP_TOL` of a polygon
//! edge are treated as lying on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snap tolerance for on-edge and duplicate-point tests, in meters.
pub const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Distance from `p` to the closed segment `ab`.
pub fn dist_point_segment(p: Point, a: Point, b: Point) -> f64 {
    let len_sq = a.dist_sq(&b);
    if len_sq < SNAP_TOL * SNAP_TOL {
        return p.dist(&a);
    }
    let t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len_sq;
    let t = t.clamp(0.0, 1.0);
    let proj = Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
    p.dist(&proj)
}

/// True when the open segments `p1p2` and `q1q2` cross properly: each
/// segment's endpoints lie strictly on opposite sides of the other, with
/// perpendicular clearance beyond `tol`. Touching or grazing within `tol`
/// does not count.
pub fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point, tol: f64) -> bool {
    let q_len = q1.dist(&q2);
    let p_len = p1.dist(&p2);
    if q_len < tol || p_len < tol {
        return false;
    }
    // Signed perpendicular distances of each endpoint from the other segment's line.
    let d1 = cross(q1, q2, p1) / q_len;
    let d2 = cross(q1, q2, p2) / q_len;
    let d3 = cross(p1, p2, q1) / p_len;
    let d4 = cross(p1, p2, q2) / p_len;
    let straddle_p = (d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol);
    let straddle_q = (d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol);
    straddle_p && straddle_q
}

/// A simple polygon with counter-clockwise vertex order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = Error;
    fn try_from(raw: Vec<[f64; 2]>) -> Result<Self> {
        Polygon::new(raw.into_iter().map(|[x, y]| Point::new(x, y)).collect())
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

impl Polygon {
    /// Builds a polygon, normalizing orientation to counter-clockwise.
    /// Rejects polygons with fewer than 3 vertices, non-finite
    /// coordinates, near-zero area, or self-intersections.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidGeometry(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite vertex ({}, {})",
                p.x, p.y
            )));
        }
        let area = signed_area(&vertices);
        if area.abs() < SNAP_TOL {
            return Err(Error::InvalidGeometry("polygon has zero area".into()));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        let poly = Polygon { vertices };
        if !poly.is_simple() {
            return Err(Error::InvalidGeometry(
                "polygon is self-intersecting".into(),
            ));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    /// Edge iterator over consecutive vertex pairs, closing the ring.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn is_simple(&self) -> bool {
        let edges: Vec<(Point, Point)> = self.edges().collect();
        let n = edges.len();
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip adjacent edges (they share a vertex).
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                if segments_cross(edges[i].0, edges[i].1, edges[j].0, edges[j].1, SNAP_TOL) {
                    return false;
                }
            }
        }
        true
    }

    /// True when `p` lies within `tol` of any edge.
    pub fn on_boundary(&self, p: Point, tol: f64) -> bool {
        self.edges().any(|(a, b)| dist_point_segment(p, a, b) <= tol)
    }

    /// Even-odd ray-casting membership test. Points on an edge (within
    /// `SNAP_TOL`) count as inside.
    pub fn contains(&self, p: Point) -> bool {
        if self.on_boundary(p, SNAP_TOL) {
            return true;
        }
        self.winding_inside(p)
    }

    /// Strict interior test: inside by ray casting and farther than
    /// `SNAP_TOL` from every edge.
    pub fn contains_interior(&self, p: Point) -> bool {
        !self.on_boundary(p, SNAP_TOL) && self.winding_inside(p)
    }

    fn winding_inside(&self, p: Point) -> bool {
        // Even-odd rule with a horizontal ray toward +x.
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }
}

fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}
