//! Spatial domain: region geometry, discretization into evaluation and
//! candidate lattices, and feasibility repair of straight-line segments.

use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{segments_cross, Point, Polygon, SNAP_TOL};

/// The planning domain: boundary, obstacles, and the evaluation (`V`) and
/// candidate (`C`) point sets produced by lattice discretization.
#[derive(Debug, Clone)]
pub struct Environment {
    pub boundary: Polygon,
    pub obstacles: Vec<Polygon>,
    pub eval_points: Vec<Point>,
    pub candidates: Vec<Point>,
    pub eval_spacing: f64,
    pub candidate_spacing: f64,
}

/// On-disk representation of an environment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub boundary: Vec<[f64; 2]>,
    #[serde(default)]
    pub obstacles: Vec<Vec<[f64; 2]>>,
    pub eval_spacing: f64,
    pub candidate_spacing: f64,
}

impl Environment {
    /// True iff `p` is inside the boundary (edges inclusive) and not in
    /// the interior of any obstacle.
    pub fn contains(&self, p: Point) -> bool {
        self.boundary.contains(p) && !self.obstacles.iter().any(|o| o.contains_interior(p))
    }

    /// Axis-aligned lattice discretization of the feasible region. The
    /// eval and candidate lattices are generated independently at their
    /// own spacings, anchored at the boundary bounding-box corner.
    pub fn discretize(
        boundary: Polygon,
        obstacles: Vec<Polygon>,
        eval_spacing: f64,
        candidate_spacing: f64,
    ) -> Result<Self> {
        if eval_spacing <= 0.0 || candidate_spacing <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "spacings must be positive (eval {eval_spacing}, candidate {candidate_spacing})"
            )));
        }
        let probe = Environment {
            boundary,
            obstacles,
            eval_points: Vec::new(),
            candidates: Vec::new(),
            eval_spacing,
            candidate_spacing,
        };
        let eval_points = probe.lattice(eval_spacing);
        if eval_points.is_empty() {
            return Err(Error::EmptyDiscretization("evaluation"));
        }
        let candidates = probe.lattice(candidate_spacing);
        if candidates.is_empty() {
            return Err(Error::EmptyDiscretization("candidate"));
        }
        Ok(Environment {
            eval_points,
            candidates,
            ..probe
        })
    }

    fn lattice(&self, spacing: f64) -> Vec<Point> {
        let (min, max) = self.boundary.bbox();
        let nx = ((max.x - min.x) / spacing + SNAP_TOL).floor() as usize;
        let ny = ((max.y - min.y) / spacing + SNAP_TOL).floor() as usize;
        let mut out = Vec::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let p = Point::new(min.x + i as f64 * spacing, min.y + j as f64 * spacing);
                if self.contains(p) {
                    out.push(p);
                }
            }
        }
        out
    }

    /// Builds an environment from already-discretized point sets,
    /// validating every invariant.
    pub fn from_parts(
        boundary: Polygon,
        obstacles: Vec<Polygon>,
        eval_points: Vec<Point>,
        candidates: Vec<Point>,
        eval_spacing: f64,
        candidate_spacing: f64,
    ) -> Result<Self> {
        let env = Environment {
            boundary,
            obstacles,
            eval_points,
            candidates,
            eval_spacing,
            candidate_spacing,
        };
        if env.eval_points.is_empty() {
            return Err(Error::EmptyDiscretization("evaluation"));
        }
        if env.candidates.is_empty() {
            return Err(Error::EmptyDiscretization("candidate"));
        }
        for (name, pts) in [("eval", &env.eval_points), ("candidate", &env.candidates)] {
            let mut seen = HashSet::new();
            for p in pts.iter() {
                if !p.is_finite() {
                    return Err(Error::InvalidGeometry(format!(
                        "non-finite {name} point ({}, {})",
                        p.x, p.y
                    )));
                }
                if !env.contains(*p) {
                    return Err(Error::InvalidGeometry(format!(
                        "{name} point ({}, {}) is outside the feasible region",
                        p.x, p.y
                    )));
                }
                let key = ((p.x / SNAP_TOL).round() as i64, (p.y / SNAP_TOL).round() as i64);
                if !seen.insert(key) {
                    return Err(Error::InvalidGeometry(format!(
                        "duplicate {name} point ({}, {})",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(env)
    }

    /// Loads and validates an environment JSON file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: EnvironmentFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let parse = |field: &str, raw: Vec<[f64; 2]>| -> Result<Polygon> {
            Polygon::new(raw.into_iter().map(|[x, y]| Point::new(x, y)).collect()).map_err(|e| {
                Error::Parse {
                    file: path.display().to_string(),
                    line: 0,
                    msg: format!("field `{field}`: {e}"),
                }
            })
        };
        let boundary = parse("boundary", file.boundary)?;
        let obstacles = file
            .obstacles
            .into_iter()
            .enumerate()
            .map(|(i, o)| parse(&format!("obstacles[{i}]"), o))
            .collect::<Result<Vec<_>>>()?;
        Self::discretize(boundary, obstacles, file.eval_spacing, file.candidate_spacing).map_err(
            |e| Error::Parse {
                file: path.display().to_string(),
                line: 0,
                msg: e.to_string(),
            },
        )
    }

    /// True iff the open segment `ab` stays inside the boundary and
    /// crosses no obstacle. Combines dense point sampling with exact
    /// segment-edge crossing tests.
    pub fn segment_feasible(&self, a: Point, b: Point) -> bool {
        let len = a.dist(&b);
        if len <= SNAP_TOL {
            return self.contains(a);
        }
        for (ea, eb) in self.boundary.edges() {
            if segments_cross(a, b, ea, eb, SNAP_TOL) {
                return false;
            }
        }
        for obs in &self.obstacles {
            for (ea, eb) in obs.edges() {
                if segments_cross(a, b, ea, eb, SNAP_TOL) {
                    return false;
                }
            }
        }
        let step = 0.1 * self.eval_spacing.min(self.candidate_spacing);
        let n = (len / step).ceil() as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            if !self.contains(p) {
                return false;
            }
        }
        true
    }

    /// Replaces the segment `ab` with a feasible polyline: shortest path
    /// on an 8-connected lattice at `eval_spacing`, then greedy
    /// shortcutting. Returns `[a, b]` unchanged when the straight
    /// segment is already feasible.
    pub fn repair_segment(&self, a: Point, b: Point) -> Result<Vec<Point>> {
        if self.segment_feasible(a, b) {
            return Ok(vec![a, b]);
        }
        let path = self.grid_path(a, b)?;
        Ok(self.shortcut(path))
    }

    fn grid_path(&self, a: Point, b: Point) -> Result<Vec<Point>> {
        let (min, max) = self.boundary.bbox();
        let h = self.eval_spacing;
        let nx = ((max.x - min.x) / h + SNAP_TOL).floor() as i64;
        let ny = ((max.y - min.y) / h + SNAP_TOL).floor() as i64;

        let node = |i: i64, j: i64| Point::new(min.x + i as f64 * h, min.y + j as f64 * h);
        let mut feasible: HashMap<(i64, i64), Point> = HashMap::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let p = node(i, j);
                if self.contains(p) {
                    feasible.insert((i, j), p);
                }
            }
        }

        // Nodes: lattice points plus the two endpoints. Endpoints attach
        // to nearby lattice nodes reachable by a feasible segment.
        let mut points: Vec<Point> = Vec::with_capacity(feasible.len() + 2);
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        for (key, p) in &feasible {
            index.insert(*key, points.len());
            points.push(*p);
        }
        let start = points.len();
        points.push(a);
        let goal = points.len();
        points.push(b);

        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); points.len()];
        let offsets: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];
        for (&(i, j), &p) in &feasible {
            let u = index[&(i, j)];
            for (di, dj) in offsets {
                if let Some(&v) = index.get(&(i + di, j + dj)) {
                    let q = points[v];
                    if self.segment_feasible(p, q) {
                        let w = p.dist(&q);
                        adj[u].push((v, w));
                        adj[v].push((u, w));
                    }
                }
            }
        }
        // Attach endpoints to lattice nodes within a 2-cell radius.
        for (end, ep) in [(start, a), (goal, b)] {
            let gi = ((ep.x - min.x) / h).round() as i64;
            let gj = ((ep.y - min.y) / h).round() as i64;
            for di in -2..=2 {
                for dj in -2..=2 {
                    if let Some(&v) = index.get(&(gi + di, gj + dj)) {
                        let q = points[v];
                        if self.segment_feasible(ep, q) {
                            let w = ep.dist(&q);
                            adj[end].push((v, w));
                            adj[v].push((end, w));
                        }
                    }
                }
            }
        }
        if self.segment_feasible(a, b) {
            adj[start].push((goal, a.dist(&b)));
        }

        // Dijkstra from start to goal.
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> std::cmp::Ordering {
                other.0.partial_cmp(&self.0).unwrap()
            }
        }
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(other))
            }
        }
        let mut dist = vec![f64::INFINITY; points.len()];
        let mut prev = vec![usize::MAX; points.len()];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(Entry(0.0, start));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == goal {
                break;
            }
            for &(v, w) in &adj[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                    heap.push(Entry(nd, v));
                }
            }
        }
        if !dist[goal].is_finite() {
            return Err(Error::NoFeasiblePath(a.x, a.y, b.x, b.y));
        }
        let mut path = vec![goal];
        while *path.last().unwrap() != start {
            path.push(prev[*path.last().unwrap()]);
        }
        path.reverse();
        Ok(path.into_iter().map(|i| points[i]).collect())
    }

    /// Greedy shortcutting: repeatedly jump to the farthest vertex still
    /// reachable by a feasible straight segment.
    fn shortcut(&self, path: Vec<Point>) -> Vec<Point> {
        let mut out = vec![path[0]];
        let mut i = 0;
        while i + 1 < path.len() {
            let mut j = path.len() - 1;
            while j > i + 1 && !self.segment_feasible(path[i], path[j]) {
                j -= 1;
            }
            out.push(path[j]);
            i = j;
        }
        out
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    // max(0.0) normalizes the -0.0 identity of an empty float sum.
    points.windows(2).map(|w| w[0].dist(&w[1])).sum::<f64>().max(0.0)
}
