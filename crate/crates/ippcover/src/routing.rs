//! Open-path routing over sensing locations: nearest-neighbor + 2-opt
//! with an exact branch-and-bound fallback for small instances, the
//! nearest-insertion increment estimator, and obstacle-aware path
//! finalization.

use serde::{Deserialize, Serialize};

use crate::environment::{polyline_length, Environment};
use crate::error::Result;
use crate::geom::Point;

/// Instances at or below this size are solved exactly.
pub const EXACT_TSP_LIMIT: usize = 9;

/// An ordered open path over a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    /// Visit order as indices into the point set the route was built from.
    pub order: Vec<usize>,
    /// Total length of `geometry` in meters.
    pub length: f64,
    /// Waypoint polyline; equals the ordered points until `finalize`
    /// inserts detour vertices around obstacles.
    pub geometry: Vec<Point>,
}

impl Route {
    pub fn empty() -> Self {
        Route {
            order: Vec::new(),
            length: 0.0,
            geometry: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    Euclidean,
    Repaired,
}

/// Cached symmetric pairwise distances over a fixed point set.
#[derive(Debug, Clone)]
pub struct DistanceOracle {
    pub mode: DistanceMode,
    points: Vec<Point>,
    dist: Vec<f64>,
}

impl DistanceOracle {
    pub fn euclidean(points: &[Point]) -> Self {
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = points[i].dist(&points[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        DistanceOracle {
            mode: DistanceMode::Euclidean,
            points: points.to_vec(),
            dist,
        }
    }

    /// Pairwise obstacle-aware distances via segment repair. Falls back
    /// to the straight-line distance when endpoints are disconnected is
    /// not allowed: repair errors propagate.
    pub fn repaired(points: &[Point], env: &Environment) -> Result<Self> {
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let path = env.repair_segment(points[i], points[j])?;
                let d = polyline_length(&path);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(DistanceOracle {
            mode: DistanceMode::Repaired,
            points: points.to_vec(),
            dist,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.points.len() + j]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    fn path_length(&self, order: &[usize]) -> f64 {
        order.windows(2).map(|w| self.get(w[0], w[1])).sum()
    }
}

/// Computes an open Hamiltonian path over all points. Instances with at
/// most [`EXACT_TSP_LIMIT`] points are solved exactly by branch and
/// bound; larger instances use nearest-neighbor construction (from
/// `start` when given, else best over all starts) polished by
/// first-improvement 2-opt.
pub fn solve_tsp(oracle: &DistanceOracle, start: Option<usize>, _seed: u64) -> Route {
    let n = oracle.len();
    if n == 0 {
        return Route::empty();
    }
    if n == 1 {
        return Route {
            order: vec![0],
            length: 0.0,
            geometry: vec![oracle.points()[0]],
        };
    }
    let order = if n <= EXACT_TSP_LIMIT {
        exact_open_path(oracle, start)
    } else {
        heuristic_open_path(oracle, start)
    };
    let geometry: Vec<Point> = order.iter().map(|&i| oracle.points()[i]).collect();
    Route {
        length: oracle.path_length(&order),
        order,
        geometry,
    }
}

/// Heuristic visiting order: nearest-neighbor construction (from
/// `start` when given, else best over all starts) polished by
/// first-improvement 2-opt.
pub fn heuristic_open_path(oracle: &DistanceOracle, start: Option<usize>) -> Vec<usize> {
    let n = oracle.len();
    let starts: Vec<usize> = match start {
        Some(s) => vec![s],
        None => (0..n).collect(),
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for s in starts {
        let nn = nearest_neighbor(oracle, s);
        let nn_len = oracle.path_length(&nn);
        if best.as_ref().map_or(true, |(l, _)| nn_len < *l) {
            best = Some((nn_len, nn));
        }
    }
    let (_, mut order) = best.unwrap();
    two_opt(oracle, &mut order);
    order
}

fn nearest_neighbor(oracle: &DistanceOracle, start: usize) -> Vec<usize> {
    let n = oracle.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = start;
    visited[current] = true;
    order.push(current);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if !visited[j] && oracle.get(current, j) < best_d {
                best_d = oracle.get(current, j);
                best = j;
            }
        }
        visited[best] = true;
        order.push(best);
        current = best;
    }
    order
}

/// First-improvement 2-opt for an open path, deterministic scan order.
fn two_opt(oracle: &DistanceOracle, order: &mut Vec<usize>) {
    let n = order.len();
    loop {
        let mut improved = false;
        'scan: for i in 0..n - 1 {
            for j in (i + 1)..n {
                // Reversing order[i..=j] replaces edges (i-1,i) and
                // (j,j+1); endpoint edges are absent for an open path.
                let before = edge(oracle, order, i.wrapping_sub(1), i)
                    + edge(oracle, order, j, j + 1);
                let after = edge(oracle, order, i.wrapping_sub(1), j)
                    + edge(oracle, order, i, j + 1);
                if after + 1e-12 < before {
                    order[i..=j].reverse();
                    improved = true;
                    break 'scan;
                }
            }
        }
        if !improved {
            return;
        }
    }
}

fn edge(oracle: &DistanceOracle, order: &[usize], a: usize, b: usize) -> f64 {
    if a >= order.len() || b >= order.len() {
        return 0.0;
    }
    oracle.get(order[a], order[b])
}

/// Exact open-path solver by depth-first branch and bound. Optimal for
/// small n; ties resolved toward the lexicographically smallest order.
fn exact_open_path(oracle: &DistanceOracle, start: Option<usize>) -> Vec<usize> {
    let n = oracle.len();
    let mut best_len = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];

    fn recurse(
        oracle: &DistanceOracle,
        order: &mut Vec<usize>,
        used: &mut Vec<bool>,
        len: f64,
        best_len: &mut f64,
        best: &mut Vec<usize>,
    ) {
        let n = used.len();
        if order.len() == n {
            if len < *best_len - 1e-12 {
                *best_len = len;
                *best = order.clone();
            }
            return;
        }
        for j in 0..n {
            if used[j] {
                continue;
            }
            let step = order.last().map_or(0.0, |&l| oracle.get(l, j));
            if len + step >= *best_len - 1e-12 {
                continue;
            }
            used[j] = true;
            order.push(j);
            recurse(oracle, order, used, len + step, best_len, best);
            order.pop();
            used[j] = false;
        }
    }

    match start {
        Some(s) => {
            used[s] = true;
            order.push(s);
            recurse(oracle, &mut order, &mut used, 0.0, &mut best_len, &mut best);
        }
        None => recurse(oracle, &mut order, &mut used, 0.0, &mut best_len, &mut best),
    }
    best
}

/// Cheapest added route length from inserting `p` into an open route:
/// minimum over prepend, append, and every between-edge slot.
pub fn route_increment(route_points: &[Point], p: Point) -> f64 {
    assert!(!route_points.is_empty());
    let mut best = route_points[0].dist(&p).min(route_points.last().unwrap().dist(&p));
    for w in route_points.windows(2) {
        let added = w[0].dist(&p) + p.dist(&w[1]) - w[0].dist(&w[1]);
        best = best.min(added);
    }
    best.max(0.0)
}

/// Applies segment repair between consecutive waypoints and recomputes
/// the length on the repaired geometry.
pub fn finalize(order: &[usize], points: &[Point], env: &Environment) -> Result<Route> {
    if order.is_empty() {
        return Ok(Route::empty());
    }
    let mut geometry = vec![points[order[0]]];
    for w in order.windows(2) {
        let repaired = env.repair_segment(points[w[0]], points[w[1]])?;
        geometry.extend_from_slice(&repaired[1..]);
    }
    Ok(Route {
        order: order.to_vec(),
        length: polyline_length(&geometry),
        geometry,
    })
}
