//! Uncertainty-guaranteed planners: greedy coverage maximization with
//! TSP routing, the budgeted cost-benefit variant, and a hex-lattice
//! stationary baseline.

use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::coverage::{covariance_threshold, CoverageMatrix};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::gp::GpModel;
use crate::kernel::KernelSpec;
use crate::routing::{self, DistanceOracle, Route};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Greedy,
    Gcb,
    GcbBudgeted,
    Hex,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Greedy => "greedy",
            Method::Gcb => "gcb",
            Method::GcbBudgeted => "gcb-budgeted",
            Method::Hex => "hex",
        };
        f.write_str(s)
    }
}

/// Optional travel budget in meters, applied to the selection-time
/// (Euclidean-order) route length.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub distance_budget: Option<f64>,
}

impl BudgetSpec {
    pub fn unlimited() -> Self {
        BudgetSpec {
            distance_budget: None,
        }
    }

    pub fn meters(d: f64) -> Self {
        BudgetSpec {
            distance_budget: Some(d),
        }
    }

    fn limit(&self) -> f64 {
        self.distance_budget.unwrap_or(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.distance_budget {
            if !(d > 0.0) {
                return Err(Error::Config(format!("distance budget {d} must be > 0")));
            }
        }
        Ok(())
    }
}

/// One planner iteration, for provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub chosen: usize,
    pub marginal_gain: usize,
    pub length_increment: f64,
    /// Cost-benefit ratio; infinite for zero-length increments (stored
    /// as null in JSON, which f64 cannot otherwise round-trip).
    #[serde(with = "json_ratio")]
    pub ratio: f64,
}

mod json_ratio {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A complete planning result: selection, route, coverage accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Plan {
    pub method: Method,
    pub target_variance: f64,
    /// Candidate indices in selection order.
    pub selected: Vec<usize>,
    pub route: Route,
    /// Euclidean length of the route visiting order, before obstacle
    /// repair. Budgets are enforced against this value.
    pub order_length: f64,
    #[serde(skip)]
    pub covered: Bitset,
    pub covered_count: usize,
    pub uncovered_count: usize,
    pub trace: Vec<TraceStep>,
}

/// Greedy coverage maximization (bitset unions). With `exact_mode` the
/// covered set is recomputed each iteration from the GP posterior under
/// the current selection, capturing joint multi-location effects.
pub fn greedy_cover(
    matrix: &CoverageMatrix,
    env: &Environment,
    warm_start: &[usize],
    exact_mode: bool,
    model: Option<&GpModel>,
) -> (Vec<usize>, Bitset, Vec<TraceStep>) {
    let n = matrix.n_eval;
    let m = matrix.n_candidates();
    let mut selected: Vec<usize> = warm_start.to_vec();
    let mut covered = matrix.covered_union(warm_start);
    let mut trace = Vec::new();
    if exact_mode {
        covered = exact_covered(matrix, env, &selected, model);
    }
    loop {
        if covered.count() == n {
            break;
        }
        let mut best_j = usize::MAX;
        let mut best_gain = 0usize;
        for j in 0..m {
            if selected.contains(&j) {
                continue;
            }
            let gain = matrix.marginal_gain(j, &covered);
            if gain > best_gain {
                best_gain = gain;
                best_j = j;
            }
        }
        if best_gain == 0 {
            break;
        }
        selected.push(best_j);
        if exact_mode {
            covered = exact_covered(matrix, env, &selected, model);
        } else {
            covered.union_with(matrix.row(best_j));
        }
        trace.push(TraceStep {
            chosen: best_j,
            marginal_gain: best_gain,
            length_increment: 0.0,
            ratio: f64::INFINITY,
        });
    }
    (selected, covered, trace)
}

/// Covered set under joint conditioning: evaluation points whose GP
/// posterior variance given observations at the selected candidates is
/// at or below the target. Variance is independent of the observed
/// values, so zeros stand in for measurements.
fn exact_covered(
    matrix: &CoverageMatrix,
    env: &Environment,
    selected: &[usize],
    model: Option<&GpModel>,
) -> Bitset {
    let mut covered = Bitset::new(matrix.n_eval);
    let base = model.cloned();
    let base = match base {
        Some(m) => m,
        None => return matrix.covered_union(selected),
    };
    let xs: Vec<Point> = selected.iter().map(|&j| env.candidates[j]).collect();
    let ys = vec![0.0; xs.len()];
    let cond = match base.condition(&xs, &ys) {
        Ok(m) => m,
        Err(_) => return matrix.covered_union(selected),
    };
    for (i, v) in cond
        .posterior_variance_batch(&env.eval_points)
        .into_iter()
        .enumerate()
    {
        if v <= matrix.target_variance + 1e-12 {
            covered.set(i);
        }
    }
    covered
}

#[derive(Debug, Clone)]
pub struct RoutingConfig {
    pub seed: u64,
    pub start: Option<Point>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            seed: 0,
            start: None,
        }
    }
}

fn route_selection(
    selected: &[usize],
    env: &Environment,
    config: &RoutingConfig,
) -> (Vec<usize>, f64) {
    // Returns the selection reordered by the TSP route and the
    // Euclidean order length.
    if selected.is_empty() {
        return (Vec::new(), 0.0);
    }
    let points: Vec<Point> = selected.iter().map(|&j| env.candidates[j]).collect();
    let start = config.start.and_then(|s| {
        points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.dist(&s).partial_cmp(&b.1.dist(&s)).unwrap())
            .map(|(i, _)| i)
    });
    let oracle = DistanceOracle::euclidean(&points);
    let route = routing::solve_tsp(&oracle, start, config.seed);
    let order: Vec<usize> = route.order.iter().map(|&i| selected[i]).collect();
    (order, route.length)
}

fn assemble_plan(
    method: Method,
    matrix: &CoverageMatrix,
    env: &Environment,
    order: Vec<usize>,
    order_length: f64,
    covered: Bitset,
    trace: Vec<TraceStep>,
) -> Result<Plan> {
    let points: Vec<Point> = env.candidates.clone();
    let route = routing::finalize(&order, &points, env)?;
    let covered_count = covered.count();
    Ok(Plan {
        method,
        target_variance: matrix.target_variance,
        selected: order,
        route,
        order_length,
        uncovered_count: matrix.n_eval - covered_count,
        covered_count,
        covered,
        trace,
    })
}

/// GreedyCover: greedy selection, then TSP routing and segment repair.
pub fn plan_greedy(
    matrix: &CoverageMatrix,
    env: &Environment,
    config: &RoutingConfig,
    warm_start: &[usize],
    exact_mode: bool,
    model: Option<&GpModel>,
) -> Result<Plan> {
    let (selected, covered, trace) = greedy_cover(matrix, env, warm_start, exact_mode, model);
    // Warm-start locations are already visited; only the increment is routed.
    let new: Vec<usize> = selected
        .iter()
        .copied()
        .filter(|j| !warm_start.contains(j))
        .collect();
    let (order, order_length) = route_selection(&new, env, config);
    assemble_plan(Method::Greedy, matrix, env, order, order_length, covered, trace)
}

/// GCBCover: cost-benefit selection under a travel budget, compared
/// against a budget-truncated greedy solution; the better of the two is
/// returned (ties broken toward the shorter route).
pub fn plan_gcb(
    matrix: &CoverageMatrix,
    env: &Environment,
    budget: &BudgetSpec,
    config: &RoutingConfig,
    warm_start: &[usize],
) -> Result<Plan> {
    budget.validate()?;
    let limit = budget.limit();
    let method = if budget.distance_budget.is_some() {
        Method::GcbBudgeted
    } else {
        Method::Gcb
    };

    // Branch (a): greedy solution, routed, truncated to the budget.
    let (greedy_sel, _, _) = greedy_cover(matrix, env, warm_start, false, None);
    let greedy_new: Vec<usize> = greedy_sel
        .iter()
        .copied()
        .filter(|j| !warm_start.contains(j))
        .collect();
    let (greedy_order, _) = route_selection(&greedy_new, env, config);
    let mut truncated: Vec<usize> = Vec::new();
    let mut acc = 0.0;
    for (i, &j) in greedy_order.iter().enumerate() {
        if i > 0 {
            acc += env.candidates[greedy_order[i - 1]].dist(&env.candidates[j]);
        }
        if acc > limit {
            break;
        }
        truncated.push(j);
    }
    let (trunc_order, trunc_len) = {
        // Keep the visit order of the truncated prefix; its length is the
        // prefix length.
        let len: f64 = truncated
            .windows(2)
            .map(|w| env.candidates[w[0]].dist(&env.candidates[w[1]]))
            .sum();
        (truncated.clone(), len)
    };

    // Branch (b): ratio-greedy loop with nearest-insertion increments
    // for ranking and a full TSP re-solve as the feasibility check.
    let mut selected: Vec<usize> = Vec::new();
    let mut covered = matrix.covered_union(warm_start);
    let mut route_order: Vec<usize> = Vec::new();
    let mut route_len = 0.0;
    let mut available: Vec<bool> = vec![true; matrix.n_candidates()];
    for &j in warm_start {
        available[j] = false;
    }
    let mut trace = Vec::new();
    while covered.count() < matrix.n_eval {
        let route_points: Vec<Point> = route_order.iter().map(|&j| env.candidates[j]).collect();
        let mut best: Option<(f64, usize, usize, f64)> = None; // (ratio, gain, j, inc)
        for j in 0..matrix.n_candidates() {
            if !available[j] || selected.contains(&j) {
                continue;
            }
            let gain = matrix.marginal_gain(j, &covered);
            if gain == 0 {
                continue;
            }
            let inc = if route_points.is_empty() {
                0.0
            } else {
                routing::route_increment(&route_points, env.candidates[j])
            };
            let ratio = if inc <= 1e-12 {
                f64::INFINITY
            } else {
                gain as f64 / inc
            };
            let better = match &best {
                None => true,
                Some((br, bg, _, _)) => {
                    if ratio != *br {
                        ratio > *br
                    } else {
                        // Infinite-ratio ties break by gain, then index;
                        // finite ties by lowest index (iteration order).
                        ratio.is_infinite() && gain > *bg
                    }
                }
            };
            if better {
                best = Some((ratio, gain, j, inc));
            }
        }
        let Some((ratio, gain, j, inc)) = best else {
            break;
        };
        // Feasibility: exact re-solve of the route over S + j.
        let mut with = selected.clone();
        with.push(j);
        let (new_order, new_len) = route_selection(&with, env, config);
        if new_len <= limit {
            selected = with;
            route_order = new_order;
            route_len = new_len;
            covered.union_with(matrix.row(j));
            trace.push(TraceStep {
                chosen: j,
                marginal_gain: gain,
                length_increment: inc,
                ratio,
            });
        } else {
            available[j] = false;
        }
        if selected.len() + warm_start.len() >= matrix.n_candidates() {
            break;
        }
    }

    // Branch (c): keep whichever covers more; ties go to the shorter route.
    let trunc_cov = {
        let mut c = matrix.covered_union(warm_start);
        c.union_with(&matrix.covered_union(&trunc_order));
        c
    };
    let ratio_cov = covered;
    let pick_ratio = match ratio_cov.count().cmp(&trunc_cov.count()) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => route_len <= trunc_len,
    };
    let plan = if pick_ratio {
        assemble_plan(method, matrix, env, route_order, route_len, ratio_cov, trace)?
    } else {
        assemble_plan(
            method,
            matrix,
            env,
            trunc_order,
            trunc_len,
            trunc_cov,
            Vec::new(),
        )?
    };
    assert!(
        plan.order_length <= limit + 1e-9,
        "budget violated: {} > {}",
        plan.order_length,
        limit
    );
    Ok(plan)
}

/// Stationary hex-lattice baseline: sensing points on a covering
/// hexagonal lattice whose packing radius comes from inverting the RBF
/// covariance threshold at the smallest kernel lengthscale, snapped to
/// feasible candidates and routed with the TSP solver.
pub fn plan_hex(
    env: &Environment,
    spec: &KernelSpec,
    noise_variance: f64,
    target: f64,
    config: &RoutingConfig,
) -> Result<Plan> {
    let sv = spec.signal_variance();
    let threshold = covariance_threshold(sv, sv, noise_variance, target)?;
    if threshold > sv {
        return Err(Error::InvalidTarget {
            got: target,
            max: sv,
        });
    }
    let l_min = spec.min_lengthscale(env);
    let radius = l_min * (2.0 * (sv / threshold).ln()).sqrt();

    // Covering hex lattice: centers sqrt(3) r apart within a row, rows
    // 1.5 r apart, odd rows offset by half the center spacing. Generated
    // over the bounding box inflated by one radius so boundary points
    // stay covered, then snapped to the nearest candidate.
    let (min, max) = env.boundary.bbox();
    let dx = 3f64.sqrt() * radius;
    let dy = 1.5 * radius;
    let mut selected: Vec<usize> = Vec::new();
    let push_nearest = |p: Point, selected: &mut Vec<usize>| {
        let j = env
            .candidates
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.dist(&p).partial_cmp(&b.1.dist(&p)).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if !selected.contains(&j) {
            selected.push(j);
        }
    };
    // A lattice finer than the candidate grid snaps onto every
    // candidate anyway; skip the (possibly enormous) sweep.
    if dx < env.candidate_spacing {
        selected = (0..env.candidates.len()).collect();
    }
    let mut row = 0usize;
    let mut y = min.y - radius;
    while selected.len() < env.candidates.len() && y <= max.y + radius + 1e-9 {
        let offset = if row % 2 == 1 { dx / 2.0 } else { 0.0 };
        let mut x = min.x - radius + offset;
        while x <= max.x + radius + 1e-9 {
            let p = Point::new(x, y);
            // Keep lattice points that can cover some part of the region.
            if env
                .eval_points
                .iter()
                .any(|v| v.dist(&p) <= radius + 1e-9)
            {
                push_nearest(p, &mut selected);
            }
            x += dx;
        }
        y += dy;
        row += 1;
    }
    // Snapping can leave eval points just outside every disc; patch by
    // adding the candidate nearest to each uncovered point.
    loop {
        let uncovered = env.eval_points.iter().find(|v| {
            !selected
                .iter()
                .any(|&j| env.candidates[j].dist(v) <= radius + 1e-9)
        });
        match uncovered {
            None => break,
            Some(v) => {
                let before = selected.len();
                push_nearest(*v, &mut selected);
                if selected.len() == before {
                    break; // nearest candidate already selected; give up
                }
            }
        }
    }
    selected.sort_unstable();

    let (order, order_length) = route_selection(&selected, env, config);

    // Coverage accounting under the actual kernel's threshold rule.
    let mut covered = Bitset::new(env.eval_points.len());
    for &j in &order {
        let c = env.candidates[j];
        let k_cc = spec.eval(c, c);
        for (i, v) in env.eval_points.iter().enumerate() {
            let k_vv = spec.eval(*v, *v);
            let th = ((k_vv - target) * (k_cc + noise_variance)).sqrt();
            if spec.eval(c, *v).abs() >= th {
                covered.set(i);
            }
        }
    }
    let covered_count = covered.count();
    let route = routing::finalize(&order, &env.candidates, env)?;
    Ok(Plan {
        method: Method::Hex,
        target_variance: target,
        selected: order,
        route,
        order_length,
        uncovered_count: env.eval_points.len() - covered_count,
        covered_count,
        covered,
        trace: Vec::new(),
    })
}

/// Conditions the model on observations at the plan's waypoints
/// (variance does not depend on the measured values) and returns the
/// maximum posterior variance over the evaluation set.
pub fn verify_guarantee(plan: &Plan, model: &GpModel, env: &Environment) -> Result<f64> {
    let xs: Vec<Point> = plan.selected.iter().map(|&j| env.candidates[j]).collect();
    let ys = vec![0.0; xs.len()];
    let cond = model.condition(&xs, &ys)?;
    Ok(cond
        .posterior_variance_batch(&env.eval_points)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}
