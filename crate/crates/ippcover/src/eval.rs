//! Benchmark harness: pilot paths, measurement simulation, accuracy
//! metrics, and target-ratio sweeps with CSV/heatmap exports.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::geom::Point;
use crate::gp::{self, GpModel, KernelKind};
use crate::coverage::{CoverageMatrix, TargetSpec};
use crate::planners::{self, BudgetSpec, Method, Plan, RoutingConfig};
use crate::routing::{self, DistanceOracle, Route};

/// Measurement locations and values used to condition a model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingData {
    pub x: Vec<Point>,
    pub y: Vec<f64>,
}

/// Per-cell benchmark outcome. `runtime_s` holds the measured planner
/// wall time; the results CSV writes a fixed placeholder instead so
/// same-seed runs stay byte-identical (timings go to a sidecar file).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub ratio: f64,
    pub target_variance: f64,
    pub max_posterior_variance: f64,
    pub mse: f64,
    pub smse: f64,
    pub runtime_s: f64,
    pub waypoints: usize,
    pub path_length_m: f64,
    pub uncovered_count: usize,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_budget_margin")]
    pub budget_margin_m: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pilot_waypoints")]
    pub pilot_waypoints: usize,
    #[serde(default = "default_pilot_samples")]
    pub pilot_samples: usize,
    /// Noise added to pilot measurements before fitting; waypoint
    /// measurements use the fitted noise level.
    #[serde(default)]
    pub pilot_noise_sd: f64,
    #[serde(default = "default_kernel_kind")]
    pub kernel_kind: String,
}

fn default_ratios() -> Vec<f64> {
    vec![0.9, 0.8, 0.7, 0.6, 0.5]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Greedy, Method::Gcb, Method::GcbBudgeted, Method::Hex]
}
fn default_budget_margin() -> f64 {
    20.0
}
fn default_pilot_waypoints() -> usize {
    10
}
fn default_pilot_samples() -> usize {
    350
}
fn default_kernel_kind() -> String {
    "variable".into()
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ratios: default_ratios(),
            methods: default_methods(),
            budget_margin_m: default_budget_margin(),
            seed: 0,
            pilot_waypoints: default_pilot_waypoints(),
            pilot_samples: default_pilot_samples(),
            pilot_noise_sd: 0.0,
            kernel_kind: default_kernel_kind(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::Config(format!(
                "ratios {:?} must be non-empty and within (0, 1)",
                self.ratios
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        if !(self.budget_margin_m >= 0.0) {
            return Err(Error::Config("budget_margin_m must be >= 0".into()));
        }
        if self.pilot_waypoints == 0 || self.pilot_samples == 0 {
            return Err(Error::Config("pilot sizes must be >= 1".into()));
        }
        if self.pilot_noise_sd < 0.0 {
            return Err(Error::Config("pilot_noise_sd must be >= 0".into()));
        }
        self.kernel_kind.parse::<KernelKind>()?;
        Ok(())
    }
}

/// Seed for one sweep cell, independent of execution order.
pub fn cell_seed(seed: u64, method: Method, ratio: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(method.to_string().as_bytes());
    h.update(ratio.to_bits().to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Exploratory route: uniform feasible samples clustered down to
/// `n_waypoints` centroids (Lloyd's algorithm, k-means++ seeding),
/// snapped back into the region and ordered by the TSP solver.
pub fn pilot_path(env: &Environment, n_waypoints: usize, seed: u64) -> Result<Route> {
    assert!(n_waypoints >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7069_6c6f_74u64);
    let (min, max) = env.boundary.bbox();
    let want = 50 * n_waypoints;
    let mut samples: Vec<Point> = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while samples.len() < want {
        attempts += 1;
        if attempts > want * 1000 {
            return Err(Error::EmptyDiscretization(
                "could not sample feasible pilot points",
            ));
        }
        let p = Point::new(rng.gen_range(min.x..=max.x), rng.gen_range(min.y..=max.y));
        if env.contains(p) {
            samples.push(p);
        }
    }

    // k-means++ initialization.
    let mut centers: Vec<Point> = vec![samples[rng.gen_range(0..samples.len())]];
    while centers.len() < n_waypoints.min(samples.len()) {
        let d2: Vec<f64> = samples
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| p.dist_sq(c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let mut pick = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
        let mut idx = 0;
        for (i, &d) in d2.iter().enumerate() {
            pick -= d;
            if pick <= 0.0 {
                idx = i;
                break;
            }
        }
        centers.push(samples[idx]);
    }

    // Lloyd iterations.
    for _ in 0..100 {
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); centers.len()];
        for p in &samples {
            let k = centers
                .iter()
                .enumerate()
                .min_by(|a, b| p.dist_sq(a.1).partial_cmp(&p.dist_sq(b.1)).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            sums[k].0 += p.x;
            sums[k].1 += p.y;
            sums[k].2 += 1;
        }
        let mut shift = 0.0f64;
        for (k, (sx, sy, cnt)) in sums.into_iter().enumerate() {
            if cnt > 0 {
                let next = Point::new(sx / cnt as f64, sy / cnt as f64);
                shift = shift.max(centers[k].dist(&next));
                centers[k] = next;
            }
        }
        if shift < 1e-6 {
            break;
        }
    }

    // Centroids of non-convex clusters can land outside; snap to the
    // nearest sampled feasible point.
    for c in centers.iter_mut() {
        if !env.contains(*c) {
            *c = *samples
                .iter()
                .min_by(|a, b| a.dist(c).partial_cmp(&b.dist(c)).unwrap())
                .unwrap();
        }
    }

    let oracle = DistanceOracle::euclidean(&centers);
    let route = routing::solve_tsp(&oracle, None, seed);
    let order: Vec<usize> = route.order.clone();
    routing::finalize(&order, &centers, env)
}

/// Simulated measurements at arc-length-uniform points along the route.
pub fn sample_along(
    route: &Route,
    field: &Field,
    n_samples: usize,
    noise_sd: f64,
    seed: u64,
) -> TrainingData {
    assert!(n_samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73616d_706cu64);
    let geometry = if route.geometry.is_empty() {
        return TrainingData::default();
    } else {
        &route.geometry
    };
    let total = route.length;
    let mut data = TrainingData::default();
    for i in 0..n_samples {
        let t = if n_samples == 1 {
            0.0
        } else {
            total * i as f64 / (n_samples - 1) as f64
        };
        let p = point_at_arc_length(geometry, t);
        let noise = if noise_sd > 0.0 {
            noise_sd * standard_normal(&mut rng)
        } else {
            0.0
        };
        data.x.push(p);
        data.y.push(field.sample(p) + noise);
    }
    data
}

fn point_at_arc_length(polyline: &[Point], t: f64) -> Point {
    let mut remaining = t;
    for w in polyline.windows(2) {
        let d = w[0].dist(&w[1]);
        if remaining <= d || d == 0.0 {
            if d == 0.0 {
                continue;
            }
            let f = remaining / d;
            return Point::new(
                w[0].x + f * (w[1].x - w[0].x),
                w[0].y + f * (w[1].y - w[0].y),
            );
        }
        remaining -= d;
    }
    *polyline.last().unwrap()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Conditions `model` (whose training set must exclude the pilot and
/// waypoint data) on the pilot measurements plus simulated measurements
/// at the plan's waypoints, then scores accuracy over the evaluation
/// set. Waypoint noise is drawn at `noise_sd` from the cell seed.
#[allow(clippy::too_many_arguments)]
pub fn compute_metrics(
    model: &GpModel,
    plan: &Plan,
    field: &Field,
    env: &Environment,
    pilot: &TrainingData,
    noise_sd: f64,
    seed: u64,
    ratio: f64,
    runtime_s: f64,
) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_7472_6963u64);
    let mut xs = pilot.x.clone();
    let mut ys = pilot.y.clone();
    for &j in &plan.selected {
        let p = env.candidates[j];
        let noise = if noise_sd > 0.0 {
            noise_sd * standard_normal(&mut rng)
        } else {
            0.0
        };
        xs.push(p);
        ys.push(field.sample(p) + noise);
    }
    let cond = model.condition(&xs, &ys)?;

    let truth: Vec<f64> = env.eval_points.iter().map(|v| field.sample(*v)).collect();
    let t_mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let t_var = truth.iter().map(|t| (t - t_mean).powi(2)).sum::<f64>() / truth.len() as f64;

    let mut mse = 0.0;
    let mut max_var = f64::NEG_INFINITY;
    for (v, t) in env.eval_points.iter().zip(&truth) {
        let pred = cond.posterior(*v);
        mse += (pred.mean - t).powi(2);
        max_var = max_var.max(pred.variance);
    }
    mse /= truth.len() as f64;
    let smse = if t_var > 0.0 { mse / t_var } else { 0.0 };

    Ok(MetricsReport {
        method: plan.method,
        ratio,
        target_variance: plan.target_variance,
        max_posterior_variance: max_var,
        mse,
        smse,
        runtime_s,
        waypoints: plan.selected.len(),
        path_length_m: plan.route.length,
        uncovered_count: plan.uncovered_count,
        status: "ok".into(),
    })
}

/// Everything a sweep produced: per-cell reports (one per method ×
/// ratio, failures recorded in `status`), the retained plans, the
/// fitted model, and the pilot data that fed it.
pub struct SweepOutcome {
    pub reports: Vec<MetricsReport>,
    pub plans: Vec<(Method, f64, Plan)>,
    pub model: GpModel,
    pub pilot: TrainingData,
    pub pilot_route: Route,
}

/// Full benchmark protocol: pilot path, fit, then one planning cell per
/// method × ratio. The budgeted cost-benefit cell gets a budget of the
/// unbudgeted cost-benefit route length minus the margin, floored at
/// one meter. Cell failures are recorded and the sweep continues.
pub fn run_sweep(env: &Environment, field: &Field, config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let kind: KernelKind = config.kernel_kind.parse()?;

    let pilot_route = pilot_path(env, config.pilot_waypoints, config.seed)?;
    let pilot = sample_along(
        &pilot_route,
        field,
        config.pilot_samples,
        config.pilot_noise_sd,
        config.seed,
    );
    let model = gp::fit(&pilot.x, &pilot.y, kind, env, config.seed)?;
    let noise_sd = model.noise_variance.sqrt();
    // Prior-shaped twin of the fitted model; compute_metrics conditions
    // it on pilot + waypoint data in one shot.
    let metric_base = GpModel::with_offset(
        model.kernel.clone(),
        model.noise_variance,
        Vec::new(),
        Vec::new(),
        model.y_offset,
    )?;

    let mut reports = Vec::new();
    let mut plans = Vec::new();
    for &ratio in &config.ratios {
        let matrix = match CoverageMatrix::build(
            env,
            &model.kernel,
            model.noise_variance,
            &TargetSpec::Ratio(ratio),
            Some(&model),
        ) {
            Ok(m) => m,
            Err(e) => {
                for &method in &config.methods {
                    reports.push(failed_report(method, ratio, &e));
                }
                continue;
            }
        };

        // The budgeted cell needs the unbudgeted cost-benefit length.
        let mut unbudgeted_gcb: Option<Plan> = None;
        if config.methods.contains(&Method::GcbBudgeted) {
            let seed = cell_seed(config.seed, Method::Gcb, ratio);
            let rc = RoutingConfig { seed, start: None };
            unbudgeted_gcb =
                planners::plan_gcb(&matrix, env, &BudgetSpec::unlimited(), &rc, &[]).ok();
        }

        for &method in &config.methods {
            let seed = cell_seed(config.seed, method, ratio);
            let rc = RoutingConfig { seed, start: None };
            let started = Instant::now();
            let planned: Result<Plan> = match method {
                Method::Greedy => planners::plan_greedy(&matrix, env, &rc, &[], false, None),
                Method::Gcb => planners::plan_gcb(&matrix, env, &BudgetSpec::unlimited(), &rc, &[]),
                Method::GcbBudgeted => match &unbudgeted_gcb {
                    Some(base) => {
                        let budget = (base.order_length - config.budget_margin_m).max(1.0);
                        planners::plan_gcb(&matrix, env, &BudgetSpec::meters(budget), &rc, &[])
                    }
                    None => Err(Error::Config(
                        "unbudgeted cost-benefit baseline failed; no budget available".into(),
                    )),
                },
                Method::Hex => planners::plan_hex(
                    env,
                    &model.kernel,
                    model.noise_variance,
                    matrix.target_variance,
                    &rc,
                ),
            };
            let runtime_s = started.elapsed().as_secs_f64();
            match planned {
                Ok(plan) => {
                    match compute_metrics(
                        &metric_base,
                        &plan,
                        field,
                        env,
                        &pilot,
                        noise_sd,
                        seed,
                        ratio,
                        runtime_s,
                    ) {
                        Ok(report) => {
                            reports.push(report);
                            plans.push((method, ratio, plan));
                        }
                        Err(e) => reports.push(failed_report(method, ratio, &e)),
                    }
                }
                Err(e) => reports.push(failed_report(method, ratio, &e)),
            }
        }
    }

    Ok(SweepOutcome {
        reports,
        plans,
        model,
        pilot,
        pilot_route,
    })
}

fn failed_report(method: Method, ratio: f64, err: &Error) -> MetricsReport {
    MetricsReport {
        method,
        ratio,
        target_variance: f64::NAN,
        max_posterior_variance: f64::NAN,
        mse: f64::NAN,
        smse: f64::NAN,
        runtime_s: 0.0,
        waypoints: 0,
        path_length_m: 0.0,
        uncovered_count: 0,
        status: format!("failed: {err}"),
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Wide results table. `runtime_s` is a fixed placeholder so the file
/// is byte-identical across same-seed runs; see the timings sidecar for
/// measured values.
pub fn write_results_csv(reports: &[MetricsReport], path: &std::path::Path) -> Result<()> {
    let mut out = String::from(
        "method,ratio,target_variance,max_posterior_variance,mse,smse,runtime_s,waypoints,path_length_m,uncovered_count,status\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{:.2},{},{},{},{},0.000,{},{},{},{}\n",
            r.method,
            r.ratio,
            fmt_float(r.target_variance),
            fmt_float(r.max_posterior_variance),
            fmt_float(r.mse),
            fmt_float(r.smse),
            r.waypoints,
            fmt_float(r.path_length_m),
            r.uncovered_count,
            r.status,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Long-format table (method, ratio, metric, value), one row per metric.
pub fn write_long_csv(reports: &[MetricsReport], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("method,ratio,metric,value\n");
    for r in reports {
        let metrics: [(&str, String); 7] = [
            ("target_variance", fmt_float(r.target_variance)),
            ("max_posterior_variance", fmt_float(r.max_posterior_variance)),
            ("mse", fmt_float(r.mse)),
            ("smse", fmt_float(r.smse)),
            ("waypoints", r.waypoints.to_string()),
            ("path_length_m", fmt_float(r.path_length_m)),
            ("uncovered_count", r.uncovered_count.to_string()),
        ];
        for (name, value) in metrics {
            out.push_str(&format!("{},{:.2},{},{}\n", r.method, r.ratio, name, value));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Measured wall-clock planner times, one row per cell.
pub fn write_timings_csv(reports: &[MetricsReport], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("method,ratio,runtime_s\n");
    for r in reports {
        out.push_str(&format!("{},{:.2},{:.6}\n", r.method, r.ratio, r.runtime_s));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Posterior-variance heatmap over the environment bounding box at eval
/// spacing, written as plain PGM (P2, row 0 at the top) with a JSON
/// sidecar recording the grid and min-max scale. Cells outside the
/// region map to 0.
pub fn export_variance_pgm(
    model: &GpModel,
    env: &Environment,
    path: &std::path::Path,
) -> Result<()> {
    let (min, max) = env.boundary.bbox();
    let spacing = env.eval_spacing;
    let ncols = ((max.x - min.x) / spacing).floor() as usize + 1;
    let nrows = ((max.y - min.y) / spacing).floor() as usize + 1;
    let mut values = vec![f64::NAN; ncols * nrows];
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for row in 0..nrows {
        for col in 0..ncols {
            let p = Point::new(min.x + col as f64 * spacing, min.y + row as f64 * spacing);
            if env.contains(p) {
                let v = model.posterior(p).variance;
                values[row * ncols + col] = v;
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
        }
    }
    if !vmin.is_finite() {
        return Err(Error::EmptyDiscretization("no feasible heatmap cells"));
    }
    let span = (vmax - vmin).max(1e-300);
    let mut pgm = format!("P2\n{ncols} {nrows}\n255\n");
    // PGM rows run top-down; our grid rows run bottom-up.
    for row in (0..nrows).rev() {
        let line: Vec<String> = (0..ncols)
            .map(|col| {
                let v = values[row * ncols + col];
                if v.is_nan() {
                    "0".to_string()
                } else {
                    (((v - vmin) / span * 255.0).round() as u32).to_string()
                }
            })
            .collect();
        pgm.push_str(&line.join(" "));
        pgm.push('\n');
    }
    std::fs::write(path, pgm)?;

    let sidecar = serde_json::json!({
        "ncols": ncols,
        "nrows": nrows,
        "x0": min.x,
        "y0": min.y,
        "cellsize": spacing,
        "min_variance": vmin,
        "max_variance": vmax,
        "note": "pixel = round((v - min_variance) / (max_variance - min_variance) * 255); 0 also marks infeasible cells",
    });
    let sidecar_path = path.with_extension("pgm.json");
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field;
    use crate::geom::Polygon;
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;

    fn square_env(side: f64, eval_spacing: f64, cand_spacing: f64) -> Environment {
        let boundary = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side, side),
            Point::new(0.0, side),
        ])
        .unwrap();
        Environment::discretize(boundary, vec![], eval_spacing, cand_spacing).unwrap()
    }

    #[test]
    fn pilot_single_waypoint_near_centroid() {
        let env = square_env(10.0, 2.0, 2.0);
        let route = pilot_path(&env, 1, 7).unwrap();
        assert_eq!(route.geometry.len(), 1);
        assert_eq!(route.length, 0.0);
        let c = route.geometry[0];
        assert!((c.x - 5.0).abs() < 1.0 && (c.y - 5.0).abs() < 1.0, "{c:?}");
    }

    #[test]
    fn pilot_deterministic_and_feasible() {
        let env = square_env(10.0, 2.0, 2.0);
        let a = pilot_path(&env, 6, 42).unwrap();
        let b = pilot_path(&env, 6, 42).unwrap();
        assert_eq!(a.geometry, b.geometry);
        assert_eq!(a.length.to_bits(), b.length.to_bits());
        for p in &a.geometry {
            assert!(env.contains(*p));
        }
    }

    #[test]
    fn sample_along_arc_length_uniform() {
        let env = square_env(10.0, 2.0, 2.0);
        let route = Route {
            order: vec![0, 1, 2],
            length: 10.0,
            geometry: vec![
                Point::new(0.0, 0.0),
                Point::new(6.0, 0.0),
                Point::new(6.0, 4.0),
            ],
        };
        let f = field::two_zone([0.0, 0.0, 10.0, 10.0], 1);
        let data = sample_along(&route, &f, 5, 0.0, 0);
        let _ = env;
        // Abscissae 0, 2.5, 5, 7.5, 10 along the L-shaped polyline.
        assert_relative_eq!(data.x[0].x, 0.0);
        assert_relative_eq!(data.x[1].x, 2.5);
        assert_relative_eq!(data.x[2].x, 5.0);
        assert_relative_eq!(data.x[3].x, 6.0);
        assert_relative_eq!(data.x[3].y, 1.5);
        assert_relative_eq!(data.x[4].y, 4.0);
        // Noiseless samples equal the field exactly.
        for (p, y) in data.x.iter().zip(&data.y) {
            assert_eq!(*y, f.sample(*p));
        }
    }

    #[test]
    fn sample_along_zero_length_route() {
        let f = field::two_zone([0.0, 0.0, 10.0, 10.0], 1);
        let route = Route {
            order: vec![0],
            length: 0.0,
            geometry: vec![Point::new(3.0, 3.0)],
        };
        let data = sample_along(&route, &f, 4, 0.0, 0);
        assert_eq!(data.x.len(), 4);
        assert!(data.x.iter().all(|p| *p == Point::new(3.0, 3.0)));
    }

    #[test]
    fn smse_one_for_constant_mean_predictor() {
        let env = square_env(8.0, 1.0, 2.0);
        let f = field::two_zone([0.0, 0.0, 8.0, 8.0], 5);
        let truth: Vec<f64> = env.eval_points.iter().map(|v| f.sample(*v)).collect();
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let stub = GpModel::with_offset(spec, 0.1, Vec::new(), Vec::new(), mean).unwrap();
        let plan = Plan {
            method: Method::Greedy,
            target_variance: 0.5,
            selected: Vec::new(),
            route: Route::empty(),
            order_length: 0.0,
            covered: crate::bitset::Bitset::new(env.eval_points.len()),
            covered_count: 0,
            uncovered_count: env.eval_points.len(),
            trace: Vec::new(),
        };
        let report = compute_metrics(
            &stub,
            &plan,
            &f,
            &env,
            &TrainingData::default(),
            0.0,
            0,
            0.9,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(report.smse, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn gp_draw_interpolation_mse_near_zero() {
        let env = square_env(6.0, 1.0, 1.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let f = field::gp_draw(&spec, [0.0, 0.0, 6.0, 6.0], 1.0, 3).unwrap();
        // Noiseless observations at every eval point.
        let pilot = TrainingData {
            x: env.eval_points.clone(),
            y: env.eval_points.iter().map(|v| f.sample(*v)).collect(),
        };
        let model = GpModel::prior(spec, 1e-8).unwrap();
        let plan = Plan {
            method: Method::Greedy,
            target_variance: 0.5,
            selected: Vec::new(),
            route: Route::empty(),
            order_length: 0.0,
            covered: crate::bitset::Bitset::new(env.eval_points.len()),
            covered_count: 0,
            uncovered_count: 0,
            trace: Vec::new(),
        };
        let report =
            compute_metrics(&model, &plan, &f, &env, &pilot, 0.0, 0, 0.9, 0.0).unwrap();
        let truth: Vec<f64> = env.eval_points.iter().map(|v| f.sample(*v)).collect();
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let var = truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / truth.len() as f64;
        assert!(report.mse <= 1e-6 * var.max(1e-12), "mse {}", report.mse);
    }

    #[test]
    fn cell_seed_distinguishes_cells() {
        let a = cell_seed(1, Method::Greedy, 0.9);
        let b = cell_seed(1, Method::Gcb, 0.9);
        let c = cell_seed(1, Method::Greedy, 0.8);
        let d = cell_seed(2, Method::Greedy, 0.9);
        assert!(a != b && a != c && a != d);
        assert_eq!(a, cell_seed(1, Method::Greedy, 0.9));
    }

    #[test]
    fn sweep_single_cell_and_guarantee() {
        let env = square_env(8.0, 1.0, 1.0);
        let f = field::two_zone([0.0, 0.0, 8.0, 8.0], 9);
        let config = SweepConfig {
            ratios: vec![0.7],
            methods: vec![Method::Greedy],
            seed: 11,
            pilot_waypoints: 5,
            pilot_samples: 60,
            kernel_kind: "rbf".into(),
            ..SweepConfig::default()
        };
        let outcome = run_sweep(&env, &f, &config).unwrap();
        assert_eq!(outcome.reports.len(), 1);
        let r = &outcome.reports[0];
        assert_eq!(r.status, "ok");
        if r.uncovered_count == 0 {
            assert!(
                r.max_posterior_variance <= r.target_variance + 1e-9,
                "achieved {} target {}",
                r.max_posterior_variance,
                r.target_variance
            );
        }
    }

    #[test]
    fn sweep_greedy_waypoints_monotone_in_ratio() {
        let env = square_env(8.0, 1.0, 1.0);
        let f = field::two_zone([0.0, 0.0, 8.0, 8.0], 4);
        let config = SweepConfig {
            ratios: vec![0.9, 0.7, 0.5],
            methods: vec![Method::Greedy],
            seed: 3,
            pilot_waypoints: 5,
            pilot_samples: 60,
            kernel_kind: "rbf".into(),
            ..SweepConfig::default()
        };
        let outcome = run_sweep(&env, &f, &config).unwrap();
        let counts: Vec<usize> = outcome.reports.iter().map(|r| r.waypoints).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn results_csv_deterministic() {
        let env = square_env(8.0, 1.0, 1.0);
        let f = field::two_zone([0.0, 0.0, 8.0, 8.0], 2);
        let config = SweepConfig {
            ratios: vec![0.8],
            methods: vec![Method::Greedy, Method::Hex],
            seed: 5,
            pilot_waypoints: 4,
            pilot_samples: 40,
            kernel_kind: "rbf".into(),
            ..SweepConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut contents = Vec::new();
        for run in 0..2 {
            let outcome = run_sweep(&env, &f, &config).unwrap();
            let path = dir.path().join(format!("r{run}.csv"));
            write_results_csv(&outcome.reports, &path).unwrap();
            contents.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(contents[0], contents[1]);
        let header = String::from_utf8(contents[0].clone()).unwrap();
        assert!(header.starts_with(
            "method,ratio,target_variance,max_posterior_variance,mse,smse,runtime_s,waypoints,path_length_m,uncovered_count,status\n"
        ));
    }

    #[test]
    fn pgm_export_shape_and_scale() {
        let env = square_env(6.0, 1.0, 2.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let model = GpModel::new(
            spec,
            0.1,
            vec![Point::new(3.0, 3.0)],
            vec![0.5],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heatmap.pgm");
        export_variance_pgm(&model, &env, &path).unwrap();
        let pgm = std::fs::read_to_string(&path).unwrap();
        let mut lines = pgm.lines();
        assert_eq!(lines.next().unwrap(), "P2");
        assert_eq!(lines.next().unwrap(), "7 7");
        assert_eq!(lines.next().unwrap(), "255");
        let pixels: Vec<u32> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(pixels.len(), 49);
        assert!(pixels.iter().any(|&p| p == 255));
        assert!(pixels.iter().any(|&p| p == 0));
        let sidecar: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(path.with_extension("pgm.json")).unwrap(),
        )
        .unwrap();
        assert!(sidecar["min_variance"].as_f64().unwrap() > 0.0);
        assert!(
            sidecar["max_variance"].as_f64().unwrap()
                > sidecar["min_variance"].as_f64().unwrap()
        );
    }
}
