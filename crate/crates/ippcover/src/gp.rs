//! Exact Gaussian-process inference: Cholesky-factorized posterior mean
//! and variance, log marginal likelihood, and derivative-free
//! hyperparameter fitting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::kernel::{KernelSpec, LengthscaleGrid};

/// Posterior mean and variance at a single query location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

/// A GP with a cached Cholesky factor of `K + sigma_n^2 I (+ jitter I)`.
/// Immutable after construction; `condition` returns a new model.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub train_x: Vec<Point>,
    pub train_y: Vec<f64>,
    /// Mean offset subtracted from targets before factorization and
    /// restored at prediction. Zero unless set by `fit`.
    pub y_offset: f64,
    chol: Option<Factorization>,
}

#[derive(Debug, Clone)]
struct Factorization {
    lower: DMatrix<f64>,
    /// `(K + sigma_n^2 I + jitter I)^-1 (y - offset)`
    alpha: DVector<f64>,
    jitter: f64,
}

/// Jitter ladder relative to the signal variance: start at 1e-10*sv,
/// multiply by 10 per retry, give up past 1e-4*sv.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

impl GpModel {
    /// Builds a model on the given training data (no mean centering).
    pub fn new(
        kernel: KernelSpec,
        noise_variance: f64,
        train_x: Vec<Point>,
        train_y: Vec<f64>,
    ) -> Result<Self> {
        Self::with_offset(kernel, noise_variance, train_x, train_y, 0.0)
    }

    /// Builds a model whose predictions revert to `y_offset` away from
    /// data; training targets are interpreted as offsets from it.
    pub fn with_offset(
        kernel: KernelSpec,
        noise_variance: f64,
        train_x: Vec<Point>,
        train_y: Vec<f64>,
        y_offset: f64,
    ) -> Result<Self> {
        kernel.validate()?;
        if noise_variance < 0.0 {
            return Err(Error::Config("noise_variance must be non-negative".into()));
        }
        assert_eq!(train_x.len(), train_y.len());
        let mut model = GpModel {
            kernel,
            noise_variance,
            train_x,
            train_y,
            y_offset,
            chol: None,
        };
        model.refactorize()?;
        Ok(model)
    }

    /// A model with no observations: predictions are the prior.
    pub fn prior(kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        Self::new(kernel, noise_variance, Vec::new(), Vec::new())
    }

    pub fn n(&self) -> usize {
        self.train_x.len()
    }

    fn refactorize(&mut self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            self.chol = None;
            return Ok(());
        }
        let sv = self.kernel.signal_variance();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.kernel.eval(self.train_x[i], self.train_x[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        for i in 0..n {
            gram[(i, i)] += self.noise_variance;
        }
        let mut jitter = 0.0;
        loop {
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                let lower = chol.l();
                let centered =
                    DVector::from_iterator(n, self.train_y.iter().map(|y| y - self.y_offset));
                let alpha = chol.solve(&centered);
                self.chol = Some(Factorization {
                    lower,
                    alpha,
                    jitter,
                });
                return Ok(());
            }
            jitter = if jitter == 0.0 {
                JITTER_START * sv
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * sv {
                return Err(Error::FactorizationFailure(jitter));
            }
        }
    }

    /// Posterior mean and variance at `query` (Gaussian conditioning via
    /// triangular solves). With no observations this is the prior.
    pub fn posterior(&self, query: Point) -> Prediction {
        let k_qq = self.kernel.eval(query, query);
        let fac = match &self.chol {
            None => {
                return Prediction {
                    mean: self.y_offset,
                    variance: k_qq,
                }
            }
            Some(f) => f,
        };
        let n = self.n();
        let k_star = DVector::from_iterator(
            n,
            self.train_x.iter().map(|x| self.kernel.eval(query, *x)),
        );
        let mean = self.y_offset + k_star.dot(&fac.alpha);
        let v = fac
            .lower
            .solve_lower_triangular(&k_star)
            .expect("triangular solve");
        // Round-off on ill-conditioned systems can push the quadratic
        // form outside [0, k_qq]; clamp to the mathematically valid range.
        let variance = (k_qq - v.norm_squared()).clamp(0.0, k_qq);
        Prediction { mean, variance }
    }

    /// Posterior variances for a batch of queries. Parallelized over
    /// queries; results are independent of the parallelism.
    pub fn posterior_variance_batch(&self, queries: &[Point]) -> Vec<f64> {
        queries
            .par_iter()
            .map(|q| self.posterior(*q).variance)
            .collect()
    }

    /// Returns a new model conditioned on additional observations.
    pub fn condition(&self, new_x: &[Point], new_y: &[f64]) -> Result<GpModel> {
        assert_eq!(new_x.len(), new_y.len());
        let mut train_x = self.train_x.clone();
        let mut train_y = self.train_y.clone();
        train_x.extend_from_slice(new_x);
        train_y.extend_from_slice(new_y);
        Self::with_offset(
            self.kernel.clone(),
            self.noise_variance,
            train_x,
            train_y,
            self.y_offset,
        )
    }

    /// Log marginal likelihood of the (centered) targets, in nats.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let n = self.n();
        if n == 0 {
            return Err(Error::InsufficientData { need: 1, got: 0 });
        }
        let fac = self.chol.as_ref().expect("factorized");
        let centered = DVector::from_iterator(n, self.train_y.iter().map(|y| y - self.y_offset));
        let quad = centered.dot(&fac.alpha);
        let log_det: f64 = (0..n).map(|i| fac.lower[(i, i)].ln()).sum::<f64>() * 2.0;
        Ok(-0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    pub fn jitter(&self) -> f64 {
        self.chol.as_ref().map_or(0.0, |f| f.jitter)
    }
}

/// Hyperparameter fit by multi-start log-space coordinate descent on the
/// log marginal likelihood. Targets are mean-centered internally and the
/// mean restored at prediction. Deterministic for a fixed seed.
pub fn fit(
    train_x: &[Point],
    train_y: &[f64],
    kind: KernelKind,
    env: &Environment,
    seed: u64,
) -> Result<GpModel> {
    if train_x.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: train_x.len(),
        });
    }
    assert_eq!(train_x.len(), train_y.len());
    let n = train_y.len() as f64;
    let y_mean = train_y.iter().sum::<f64>() / n;
    let y_var = (train_y.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).max(1e-12);

    let (bmin, bmax) = env.boundary.bbox();
    let diag = bmin.dist(&bmax);
    let l_min = (0.02 * diag).max(1e-6);
    let l_max = diag;

    // 8 deterministic starts on a stratified pattern over
    // (signal variance, noise variance, lengthscale), all in log space.
    // The seed offsets the pattern phase so repeated fits with different
    // seeds explore slightly different starts.
    let phase = (seed % 8) as f64 / 8.0;
    let frac = |i: usize, k: usize| ((i * k + 3) % 8) as f64 / 8.0 + phase / 8.0;
    let mut starts = Vec::with_capacity(8);
    for i in 0..8 {
        let sv = (0.2 * y_var).ln() + frac(i, 1) * ((5.0 * y_var).ln() - (0.2 * y_var).ln());
        let nv = (1e-4 * y_var).ln() + frac(i, 3) * ((0.5 * y_var).ln() - (1e-4 * y_var).ln());
        let l = l_min.ln() + frac(i, 5) * (l_max.ln() - l_min.ln());
        starts.push((sv, nv, l));
    }

    let grid_template = LengthscaleGrid::uniform(
        5,
        5,
        [bmin.x, bmin.y, bmax.x, bmax.y],
        1.0,
    );

    let objective = |theta: &[f64]| -> Option<f64> {
        let model = build_model(theta, kind, &grid_template, train_x, train_y, y_mean).ok()?;
        model.log_marginal_likelihood().ok()
    };

    let results: Vec<Option<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|&(sv, nv, l)| {
            let mut theta = match kind {
                KernelKind::Rbf => vec![sv, nv, l],
                KernelKind::VariableLengthscale => {
                    let mut t = vec![sv, nv];
                    t.extend(std::iter::repeat(l).take(25));
                    t
                }
            };
            let best = coordinate_descent(&mut theta, &objective)?;
            Some((best, theta))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in results.into_iter().flatten() {
        match &best {
            Some((b, _)) if *b >= r.0 => {}
            _ => best = Some(r),
        }
    }
    let (_, theta) = best.ok_or(Error::FitDiverged)?;
    build_model(&theta, kind, &grid_template, train_x, train_y, y_mean)
}

/// Which kernel family `fit` should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
    VariableLengthscale,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelKind::Rbf),
            "variable" | "variable_lengthscale" => Ok(KernelKind::VariableLengthscale),
            other => Err(Error::Config(format!("unknown kernel kind `{other}`"))),
        }
    }
}

fn build_model(
    theta: &[f64],
    kind: KernelKind,
    grid_template: &LengthscaleGrid,
    train_x: &[Point],
    train_y: &[f64],
    y_mean: f64,
) -> Result<GpModel> {
    let sv = theta[0].exp();
    // Noise floor relative to the signal keeps the Gram matrix well
    // enough conditioned for stable posterior solves on dense data.
    let nv = theta[1].exp().max(1e-6 * sv);
    // Lengthscales outside [2% of the domain diagonal, 2x the diagonal]
    // are overfitting artifacts (typically at nodes with no nearby data)
    // and wreck the Gram matrix's numerical rank; clamp them out.
    let bbox = grid_template.bbox;
    let diag = ((bbox[2] - bbox[0]).powi(2) + (bbox[3] - bbox[1]).powi(2)).sqrt();
    let (l_lo, l_hi) = ((0.02 * diag).max(1e-6), 2.0 * diag);
    let kernel = match kind {
        KernelKind::Rbf => KernelSpec::Rbf {
            signal_variance: sv,
            lengthscale: theta[2].exp().clamp(l_lo, l_hi),
        },
        KernelKind::VariableLengthscale => {
            let mut grid = grid_template.clone();
            grid.values = theta[2..].iter().map(|t| t.exp().clamp(l_lo, l_hi)).collect();
            KernelSpec::VariableLengthscale {
                signal_variance: sv,
                lengthscale_grid: grid,
            }
        }
    };
    GpModel::with_offset(kernel, nv, train_x.to_vec(), train_y.to_vec(), y_mean)
}

/// First-improvement coordinate descent in log space with a shrinking
/// step. Returns the best objective value, or None when the start point
/// itself never factorizes.
fn coordinate_descent(theta: &mut [f64], objective: &dyn Fn(&[f64]) -> Option<f64>) -> Option<f64> {
    let mut best = objective(theta)?;
    let mut step = 0.5f64;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut improved = false;
        for i in 0..theta.len() {
            let orig = theta[i];
            for dir in [1.0, -1.0] {
                theta[i] = orig + dir * step;
                if let Some(v) = objective(theta) {
                    if v > best + 1e-9 {
                        best = v;
                        improved = true;
                        break;
                    }
                }
                theta[i] = orig;
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-3 {
                break;
            }
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Environment;
    use crate::geom::Polygon;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rbf(sv: f64, l: f64) -> KernelSpec {
        KernelSpec::Rbf {
            signal_variance: sv,
            lengthscale: l,
        }
    }

    fn square_env(side: f64, spacing: f64) -> Environment {
        let boundary = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side, side),
            Point::new(0.0, side),
        ])
        .unwrap();
        Environment::discretize(boundary, vec![], spacing, spacing).unwrap()
    }

    #[test]
    fn prior_prediction() {
        let m = GpModel::prior(rbf(1.0, 1.0), 0.1).unwrap();
        let p = m.posterior(Point::new(3.0, 4.0));
        assert_relative_eq!(p.mean, 0.0);
        assert_relative_eq!(p.variance, 1.0);
    }

    #[test]
    fn noiseless_interpolation_zero_variance() {
        let q = Point::new(1.0, 2.0);
        let m = GpModel::new(rbf(1.0, 1.0), 0.0, vec![q], vec![0.7]).unwrap();
        let p = m.posterior(q);
        assert!(p.variance < 1e-8, "variance {}", p.variance);
        assert_relative_eq!(p.mean, 0.7, max_relative = 1e-8);
    }

    #[test]
    fn single_observation_hand_value() {
        // var = 1 - exp(-1)/1.1 at distance 1 with sv=1, l=1, nv=0.1.
        let m = GpModel::new(rbf(1.0, 1.0), 0.1, vec![Point::new(0.0, 0.0)], vec![0.3]).unwrap();
        let p = m.posterior(Point::new(1.0, 0.0));
        assert_relative_eq!(p.variance, 1.0 - (-1.0f64).exp() / 1.1, max_relative = 1e-12);
    }

    #[test]
    fn single_observation_closed_form() {
        // sigma^2_post = k_vv - k_cv^2 / (k_cc + nv) for arbitrary points.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let c = Point::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
            let v = Point::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
            let sv = rng.gen_range(0.5..3.0);
            let l = rng.gen_range(0.5..3.0);
            let nv = rng.gen_range(0.01..0.5);
            let k = rbf(sv, l);
            let expected = k.eval(v, v) - k.eval(c, v).powi(2) / (k.eval(c, c) + nv);
            let m = GpModel::new(k, nv, vec![c], vec![0.0]).unwrap();
            assert_relative_eq!(m.posterior(v).variance, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn batch_matches_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Point> = (0..6)
            .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = GpModel::new(rbf(1.0, 1.0), 0.05, xs, ys).unwrap();
        let queries: Vec<Point> = (0..3)
            .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let batch = m.posterior_variance_batch(&queries);
        assert!(batch.is_empty() == queries.is_empty());
        for (q, v) in queries.iter().zip(&batch) {
            assert_relative_eq!(m.posterior(*q).variance, *v, max_relative = 1e-12);
        }
        assert!(m.posterior_variance_batch(&[]).is_empty());
    }

    #[test]
    fn condition_matches_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x1: Vec<Point> = (0..4)
            .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let y1: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<Point> = (0..3)
            .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let y2: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = GpModel::new(rbf(1.0, 1.2), 0.05, x1.clone(), y1.clone()).unwrap();
        let conditioned = base.condition(&x2, &y2).unwrap();
        let mut all_x = x1;
        all_x.extend(&x2);
        let mut all_y = y1;
        all_y.extend(&y2);
        let fresh = GpModel::new(rbf(1.0, 1.2), 0.05, all_x, all_y).unwrap();
        for _ in 0..10 {
            let q = Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0));
            let a = conditioned.posterior(q);
            let b = fresh.posterior(q);
            assert_relative_eq!(a.mean, b.mean, max_relative = 1e-10, epsilon = 1e-10);
            assert_relative_eq!(a.variance, b.variance, max_relative = 1e-10, epsilon = 1e-10);
        }
        // Conditioning on nothing changes nothing.
        let same = base.condition(&[], &[]).unwrap();
        let q = Point::new(1.5, 2.5);
        assert_relative_eq!(same.posterior(q).variance, base.posterior(q).variance);
    }

    #[test]
    fn conditioning_never_increases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let sv = rng.gen_range(0.5..2.0);
            let l = rng.gen_range(0.5..2.0);
            let nv = rng.gen_range(0.01..0.3);
            let xs: Vec<Point> = (0..5)
                .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
                .collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let base = GpModel::new(rbf(sv, l), nv, xs, ys).unwrap();
            let extra: Vec<Point> = (0..3)
                .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
                .collect();
            let cond = base.condition(&extra, &vec![0.0; extra.len()]).unwrap();
            for _ in 0..10 {
                let q = Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0));
                assert!(cond.posterior(q).variance <= base.posterior(q).variance + 1e-9);
            }
        }
    }

    #[test]
    fn lml_scalar_case() {
        // n=1, y=0, k(x,x)+nv=1 -> -0.5 ln(2 pi).
        let m = GpModel::new(rbf(0.6, 1.0), 0.4, vec![Point::new(0.0, 0.0)], vec![0.0]).unwrap();
        assert_relative_eq!(
            m.log_marginal_likelihood().unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn lml_quadratic_scaling() {
        let xs = vec![Point::new(0.0, 0.0), Point::new(2.0, 1.0)];
        let ys = vec![0.4, -0.3];
        let ys10: Vec<f64> = ys.iter().map(|y| y * 10.0).collect();
        let m1 = GpModel::new(rbf(1.0, 1.0), 0.1, xs.clone(), ys).unwrap();
        let m2 = GpModel::new(rbf(1.0, 1.0), 0.1, xs, ys10).unwrap();
        let l1 = m1.log_marginal_likelihood().unwrap();
        let l2 = m2.log_marginal_likelihood().unwrap();
        // Only the quadratic term changes, scaled by 100: the log-det and
        // constant terms cancel in the difference.
        let n = 2.0;
        let log_det = {
            let k = |a: Point, b: Point| m1.kernel.eval(a, b);
            let a11 = k(m1.train_x[0], m1.train_x[0]) + 0.1;
            let a22 = k(m1.train_x[1], m1.train_x[1]) + 0.1;
            let a12 = k(m1.train_x[0], m1.train_x[1]);
            (a11 * a22 - a12 * a12).ln()
        };
        let quad_1 = -2.0 * (l1 + 0.5 * log_det + 0.5 * n * (2.0 * std::f64::consts::PI).ln());
        assert_relative_eq!(l2 - l1, -0.5 * 99.0 * quad_1, max_relative = 1e-8);
    }

    #[test]
    fn lml_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Point> = (0..5)
            .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nv = 0.2;
        let kernel = rbf(1.3, 0.9);
        let m = GpModel::new(kernel.clone(), nv, xs.clone(), ys.clone()).unwrap();
        let n = xs.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = kernel.eval(xs[i], xs[j]);
            }
            gram[(i, i)] += nv;
        }
        let y = DVector::from_vec(ys);
        let inv = gram.clone().try_inverse().unwrap();
        let quad = y.dot(&(&inv * &y));
        let log_det = gram.determinant().ln();
        let expected =
            -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(m.log_marginal_likelihood().unwrap(), expected, max_relative = 1e-8);
    }

    #[test]
    fn gram_matrices_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let grid = LengthscaleGrid {
            nx: 2,
            ny: 2,
            bbox: [0.0, 0.0, 10.0, 10.0],
            values: vec![0.5, 2.0, 1.0, 3.0],
        };
        let kernels = vec![
            rbf(1.5, 1.0),
            KernelSpec::VariableLengthscale {
                signal_variance: 1.5,
                lengthscale_grid: grid,
            },
        ];
        for kernel in kernels {
            let n = 40;
            let xs: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
                .collect();
            let mut gram = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] = kernel.eval(xs[i], xs[j]);
                }
            }
            let eig = gram.symmetric_eigenvalues();
            let min_eig = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(
                min_eig >= -1e-8 * kernel.signal_variance(),
                "min eigenvalue {min_eig}"
            );
        }
    }

    #[test]
    fn fit_recovers_rbf_lengthscale() {
        let env = square_env(10.0, 1.0);
        let true_kernel = rbf(1.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 200;
        let xs: Vec<Point> = (0..n)
            .map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
            .collect();
        // Draw from the GP at these points.
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = true_kernel.eval(xs[i], xs[j]);
            }
            gram[(i, i)] += 1e-8;
        }
        let chol = gram.cholesky().unwrap();
        let z = DVector::from_iterator(n, (0..n).map(|_| {
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }));
        let f = chol.l() * z;
        let ys: Vec<f64> = (0..n)
            .map(|i| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                f[i] + 0.1 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let model = fit(&xs, &ys, KernelKind::Rbf, &env, 0).unwrap();
        let l = match model.kernel {
            KernelSpec::Rbf { lengthscale, .. } => lengthscale,
            _ => unreachable!(),
        };
        assert!((1.5..=2.7).contains(&l), "recovered lengthscale {l}");
    }

    #[test]
    fn fit_constant_target() {
        let env = square_env(4.0, 1.0);
        let xs: Vec<Point> = (0..20)
            .map(|i| Point::new((i % 5) as f64, (i / 5) as f64))
            .collect();
        let ys = vec![3.0; 20];
        let model = fit(&xs, &ys, KernelKind::Rbf, &env, 1).unwrap();
        assert!(model.noise_variance < 1e-3);
        assert!(model.log_marginal_likelihood().unwrap().is_finite());
        let p = model.posterior(Point::new(2.0, 2.0));
        assert_relative_eq!(p.mean, 3.0, epsilon = 0.05);
    }

    #[test]
    fn fit_deterministic() {
        let env = square_env(4.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Point> = (0..30)
            .map(|_| Point::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)))
            .collect();
        let ys: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = fit(&xs, &ys, KernelKind::Rbf, &env, 5).unwrap();
        let b = fit(&xs, &ys, KernelKind::Rbf, &env, 5).unwrap();
        assert_eq!(a.kernel, b.kernel);
        assert_eq!(a.noise_variance.to_bits(), b.noise_variance.to_bits());
    }

    #[test]
    fn fit_insufficient_data() {
        let env = square_env(4.0, 1.0);
        let err = fit(&[Point::new(0.0, 0.0)], &[1.0], KernelKind::Rbf, &env, 0);
        assert!(matches!(err, Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn min_lengthscale_queries() {
        let env = square_env(10.0, 5.0);
        assert_relative_eq!(rbf(1.0, 3.0).min_lengthscale(&env), 3.0);
        let grid = LengthscaleGrid {
            nx: 2,
            ny: 2,
            bbox: [0.0, 0.0, 10.0, 10.0],
            values: vec![1.0, 2.0, 4.0, 2.0],
        };
        let k = KernelSpec::VariableLengthscale {
            signal_variance: 1.0,
            lengthscale_grid: grid,
        };
        // Node (0,0) coincides with the eval point (0,0).
        assert_relative_eq!(k.min_lengthscale(&env), 1.0);
        let uniform = KernelSpec::VariableLengthscale {
            signal_variance: 1.0,
            lengthscale_grid: LengthscaleGrid::uniform(3, 3, [0.0, 0.0, 10.0, 10.0], 2.0),
        };
        assert_relative_eq!(uniform.min_lengthscale(&env), 2.0);
    }
}
