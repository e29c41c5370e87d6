//! Binary coverage maps: the prior-covariance threshold test that marks
//! which evaluation points a single observation at a candidate location
//! would push below the target posterior variance, and the monotone
//! submodular coverage objective over selected candidates.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitset::Bitset;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernel::KernelSpec;

/// Minimum prior covariance between candidate `c` and evaluation point
/// `v` for a single noisy observation at `c` to drive the posterior
/// variance at `v` to `target` or below:
/// `sqrt((k_vv - target) * (k_cc + noise_variance))`.
pub fn covariance_threshold(
    k_vv: f64,
    k_cc: f64,
    noise_variance: f64,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0 && target < k_vv) {
        return Err(Error::InvalidTarget {
            got: target,
            max: k_vv,
        });
    }
    Ok(((k_vv - target) * (k_cc + noise_variance)).sqrt())
}

/// Single-observation coverage test: `|k(c,v)|` meets the covariance
/// threshold (closed comparison; ties count as covered).
pub fn covers(
    spec: &KernelSpec,
    noise_variance: f64,
    c: crate::geom::Point,
    v: crate::geom::Point,
    target: f64,
) -> Result<bool> {
    let k_vv = spec.eval(v, v);
    let threshold = covariance_threshold(k_vv, spec.eval(c, c), noise_variance, target)?;
    Ok(spec.eval(c, v).abs() >= threshold)
}

/// How the target variance is specified: directly, or as a fraction of
/// the maximum prior (or pilot-posterior) variance over the evaluation
/// set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum TargetSpec {
    Absolute(f64),
    Ratio(f64),
}

impl TargetSpec {
    /// Resolves to an absolute variance. Ratio mode multiplies the
    /// maximum posterior variance of `prior_model` over the evaluation
    /// set when one is supplied, else the maximum prior variance.
    pub fn resolve(
        &self,
        env: &Environment,
        spec: &KernelSpec,
        prior_model: Option<&GpModel>,
    ) -> Result<f64> {
        match *self {
            TargetSpec::Absolute(v) => Ok(v),
            TargetSpec::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Config(format!("target ratio {r} outside (0, 1]")));
                }
                let max_var = match prior_model {
                    Some(m) => m
                        .posterior_variance_batch(&env.eval_points)
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max),
                    None => env
                        .eval_points
                        .iter()
                        .map(|p| spec.eval(*p, *p))
                        .fold(f64::NEG_INFINITY, f64::max),
                };
                Ok(r * max_var)
            }
        }
    }
}

/// M x N binary coverage relation stored as per-candidate bitsets.
/// `digest` binds the matrix to the environment, kernel, noise, and
/// resolved target it was built from.
#[derive(Debug, Clone)]
pub struct CoverageMatrix {
    rows: Vec<Bitset>,
    pub n_eval: usize,
    pub target_variance: f64,
    pub digest: [u8; 32],
}

pub fn env_digest(
    env: &Environment,
    spec: &KernelSpec,
    noise_variance: f64,
    target: f64,
) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in env.eval_points.iter().chain(env.candidates.iter()) {
        h.update(p.x.to_le_bytes());
        h.update(p.y.to_le_bytes());
    }
    h.update(serde_json::to_vec(spec).expect("kernel serializes"));
    h.update(noise_variance.to_le_bytes());
    h.update(target.to_le_bytes());
    h.finalize().into()
}

impl CoverageMatrix {
    /// Builds the coverage matrix from the prior kernel. Rows are built
    /// in parallel over candidates; output is deterministic.
    pub fn build(
        env: &Environment,
        spec: &KernelSpec,
        noise_variance: f64,
        target: &TargetSpec,
        prior_model: Option<&GpModel>,
    ) -> Result<Self> {
        let resolved = target.resolve(env, spec, prior_model)?;
        let min_prior = env
            .eval_points
            .iter()
            .map(|p| spec.eval(*p, *p))
            .fold(f64::INFINITY, f64::min);
        if !(resolved > 0.0 && resolved < min_prior) {
            return Err(Error::InvalidTarget {
                got: resolved,
                max: min_prior,
            });
        }
        let n = env.eval_points.len();
        let rows: Vec<Bitset> = env
            .candidates
            .par_iter()
            .map(|c| {
                let k_cc = spec.eval(*c, *c);
                let mut row = Bitset::new(n);
                for (i, v) in env.eval_points.iter().enumerate() {
                    let k_vv = spec.eval(*v, *v);
                    let threshold = ((k_vv - resolved) * (k_cc + noise_variance)).sqrt();
                    if spec.eval(*c, *v).abs() >= threshold {
                        row.set(i);
                    }
                }
                row
            })
            .collect();
        Ok(CoverageMatrix {
            rows,
            n_eval: n,
            target_variance: resolved,
            digest: env_digest(env, spec, noise_variance, resolved),
        })
    }

    #[cfg(test)]
    pub(crate) fn set_rows_for_test(&mut self, rows: Vec<Bitset>) {
        self.rows = rows;
    }

    /// Builds a matrix from explicit rows, bypassing the kernel. Useful
    /// for custom coverage relations; carries a zero digest, so it
    /// cannot be validated against an environment.
    pub fn from_rows(rows: Vec<Bitset>, n_eval: usize, target_variance: f64) -> Self {
        CoverageMatrix {
            rows,
            n_eval,
            target_variance,
            digest: [0u8; 32],
        }
    }

    pub fn n_candidates(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> &Bitset {
        &self.rows[j]
    }

    /// Verifies the matrix was built against the given inputs.
    pub fn check_digest(
        &self,
        env: &Environment,
        spec: &KernelSpec,
        noise_variance: f64,
    ) -> Result<()> {
        let expected = env_digest(env, spec, noise_variance, self.target_variance);
        if expected != self.digest {
            return Err(Error::DigestMismatch {
                expected: hex(&expected),
                got: hex(&self.digest),
            });
        }
        Ok(())
    }

    /// Coverage objective F(S): number of evaluation points covered by
    /// the union of the selected rows.
    pub fn coverage_count(&self, selected: &[usize]) -> usize {
        let mut union = Bitset::new(self.n_eval);
        for &j in selected {
            union.union_with(&self.rows[j]);
        }
        union.count()
    }

    /// Union of the selected rows.
    pub fn covered_union(&self, selected: &[usize]) -> Bitset {
        let mut union = Bitset::new(self.n_eval);
        for &j in selected {
            union.union_with(&self.rows[j]);
        }
        union
    }

    /// Marginal gain of candidate `j` against an already-covered set.
    pub fn marginal_gain(&self, j: usize, covered: &Bitset) -> usize {
        self.rows[j].count_and_not(covered)
    }

    const MAGIC: &'static [u8; 8] = b"IPPCOVB1";

    /// Writes the binary cache: header (magic, M, N, target, digest)
    /// followed by row-major packed bits, little-endian.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(Self::MAGIC)?;
        f.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        f.write_all(&(self.n_eval as u64).to_le_bytes())?;
        f.write_all(&self.target_variance.to_le_bytes())?;
        f.write_all(&self.digest)?;
        for row in &self.rows {
            for w in row.words() {
                f.write_all(&w.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a binary cache and verifies its digest against the inputs.
    pub fn load(
        path: &std::path::Path,
        env: &Environment,
        spec: &KernelSpec,
        noise_variance: f64,
    ) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 0,
                msg: "bad magic in coverage cache".into(),
            });
        }
        let mut buf8 = [0u8; 8];
        f.read_exact(&mut buf8)?;
        let m = u64::from_le_bytes(buf8) as usize;
        f.read_exact(&mut buf8)?;
        let n = u64::from_le_bytes(buf8) as usize;
        f.read_exact(&mut buf8)?;
        let target = f64::from_le_bytes(buf8);
        let mut digest = [0u8; 32];
        f.read_exact(&mut digest)?;
        let words_per_row = n.div_ceil(64);
        let mut rows = Vec::with_capacity(m);
        for _ in 0..m {
            let mut words = vec![0u64; words_per_row];
            for w in words.iter_mut() {
                f.read_exact(&mut buf8)?;
                *w = u64::from_le_bytes(buf8);
            }
            rows.push(Bitset::from_words(n, words));
        }
        let matrix = CoverageMatrix {
            rows,
            n_eval: n,
            target_variance: target,
            digest,
        };
        matrix.check_digest(env, spec, noise_variance)?;
        Ok(matrix)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Point, Polygon};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

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
    fn threshold_values() {
        assert_relative_eq!(
            covariance_threshold(1.0, 1.0, 0.1, 0.5).unwrap(),
            0.55f64.sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            covariance_threshold(1.0, 1.0, 0.0, 0.5).unwrap(),
            0.5f64.sqrt(),
            max_relative = 1e-12
        );
        // target -> k_vv from below drives the threshold to zero.
        assert!(covariance_threshold(1.0, 1.0, 0.1, 1.0 - 1e-12).unwrap() < 1e-5);
        assert!(covariance_threshold(1.0, 1.0, 0.1, 1.0).is_err());
        assert!(covariance_threshold(1.0, 1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn covers_at_observation_point() {
        // c = v: covered iff target >= nv / (sv + nv) (here 0.1/1.1).
        let k = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 1.0,
        };
        let p = Point::new(0.0, 0.0);
        let boundary_target = 0.1 / 1.1;
        assert!(covers(&k, 0.1, p, p, boundary_target + 1e-9).unwrap());
        assert!(!covers(&k, 0.1, p, p, boundary_target - 1e-9).unwrap());
    }

    #[test]
    fn covers_radius_inversion() {
        // RBF l=1, target=0.5, nv=0.1: covered iff dist <= sqrt(-2 ln sqrt(0.55)).
        let k = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 1.0,
        };
        let radius = (-2.0 * 0.55f64.sqrt().ln()).sqrt();
        assert_relative_eq!(radius, 0.7732, epsilon = 1e-4);
        let c = Point::new(0.0, 0.0);
        assert!(covers(&k, 0.1, c, Point::new(radius - 1e-6, 0.0), 0.5).unwrap());
        assert!(!covers(&k, 0.1, c, Point::new(radius + 1e-6, 0.0), 0.5).unwrap());
    }

    #[test]
    fn matrix_agrees_with_posterior_thresholding() {
        // Threshold equivalence: B_ji = 1 iff single-observation posterior
        // variance at v_i is <= target.
        let env = square_env(10.0, 2.5, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let sv = rng.gen_range(0.5..2.0);
            let l = rng.gen_range(1.0..4.0);
            let nv = rng.gen_range(0.01..0.3);
            let spec = KernelSpec::Rbf {
                signal_variance: sv,
                lengthscale: l,
            };
            let target = rng.gen_range(0.2..0.9) * sv;
            let matrix = CoverageMatrix::build(
                &env,
                &spec,
                nv,
                &TargetSpec::Absolute(target),
                None,
            )
            .unwrap();
            for (j, c) in env.candidates.iter().enumerate() {
                let model = GpModel::new(spec.clone(), nv, vec![*c], vec![0.0]).unwrap();
                for (i, v) in env.eval_points.iter().enumerate() {
                    let post = model.posterior(*v).variance;
                    if (post - target).abs() > 1e-12 {
                        assert_eq!(matrix.row(j).get(i), post <= target, "c={c:?} v={v:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn ratio_one_rejected_without_prior() {
        let env = square_env(10.0, 2.5, 5.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let err = CoverageMatrix::build(&env, &spec, 0.1, &TargetSpec::Ratio(1.0), None);
        assert!(matches!(err, Err(Error::InvalidTarget { .. })));
    }

    #[test]
    fn tiny_lengthscale_row_is_local() {
        let env = square_env(10.0, 1.0, 5.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 0.5,
        };
        let target = 0.5;
        let matrix =
            CoverageMatrix::build(&env, &spec, 0.1, &TargetSpec::Absolute(target), None).unwrap();
        let radius = 0.5 * (-2.0 * ((1.0 - target) * 1.1f64).sqrt().ln()).sqrt();
        // Candidate at the region center.
        let j = env
            .candidates
            .iter()
            .position(|c| c.dist(&Point::new(5.0, 5.0)) < 1e-9)
            .unwrap();
        for (i, v) in env.eval_points.iter().enumerate() {
            let within = v.dist(&env.candidates[j]) <= radius + 1e-12;
            assert_eq!(matrix.row(j).get(i), within);
        }
    }

    #[test]
    fn coverage_count_and_gain_oracles() {
        let env = square_env(10.0, 2.0, 4.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let matrix =
            CoverageMatrix::build(&env, &spec, 0.1, &TargetSpec::Absolute(0.5), None).unwrap();
        let m = matrix.n_candidates();
        assert_eq!(matrix.coverage_count(&[]), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let sel: Vec<usize> = (0..m).filter(|_| rng.gen_bool(0.3)).collect();
            // Brute-force union over index sets.
            let mut expected: std::collections::HashSet<usize> = Default::default();
            for &j in &sel {
                expected.extend(matrix.row(j).ones());
            }
            assert_eq!(matrix.coverage_count(&sel), expected.len());
            // Marginal gain equals F(S + j) - F(S).
            let covered = matrix.covered_union(&sel);
            for j in 0..m {
                if sel.contains(&j) {
                    continue;
                }
                let mut with = sel.clone();
                with.push(j);
                assert_eq!(
                    matrix.marginal_gain(j, &covered),
                    matrix.coverage_count(&with) - matrix.coverage_count(&sel)
                );
            }
        }
    }

    #[test]
    fn monotone_and_submodular() {
        let env = square_env(8.0, 2.0, 4.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 1.5,
        };
        let matrix =
            CoverageMatrix::build(&env, &spec, 0.1, &TargetSpec::Absolute(0.5), None).unwrap();
        let m = matrix.n_candidates().min(8);
        // Exhaustive over subsets of the first m candidates.
        for s_mask in 0u32..(1 << m) {
            for t_mask in 0u32..(1 << m) {
                if s_mask & !t_mask != 0 {
                    continue; // S not a subset of T
                }
                let s: Vec<usize> = (0..m).filter(|i| s_mask >> i & 1 == 1).collect();
                let t: Vec<usize> = (0..m).filter(|i| t_mask >> i & 1 == 1).collect();
                assert!(matrix.coverage_count(&s) <= matrix.coverage_count(&t));
                let cs = matrix.covered_union(&s);
                let ct = matrix.covered_union(&t);
                for j in 0..m {
                    if t_mask >> j & 1 == 1 {
                        continue;
                    }
                    assert!(matrix.marginal_gain(j, &cs) >= matrix.marginal_gain(j, &ct));
                }
            }
        }
    }

    #[test]
    fn full_coverage_implies_guarantee() {
        // Conditioning on a covering set drives every eval point to the
        // target or below, regardless of measurement values.
        let env = square_env(6.0, 1.0, 1.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let nv = 0.1;
        let target = 0.4;
        let matrix =
            CoverageMatrix::build(&env, &spec, nv, &TargetSpec::Absolute(target), None).unwrap();
        let all: Vec<usize> = (0..matrix.n_candidates()).collect();
        assert_eq!(matrix.coverage_count(&all), env.eval_points.len());
        let prior = GpModel::prior(spec, nv).unwrap();
        let ys = vec![0.25; all.len()];
        let xs: Vec<Point> = all.iter().map(|&j| env.candidates[j]).collect();
        let cond = prior.condition(&xs, &ys).unwrap();
        for v in cond.posterior_variance_batch(&env.eval_points) {
            assert!(v <= target + 1e-9, "variance {v} above target {target}");
        }
    }

    #[test]
    fn cache_round_trip_and_digest() {
        let env = square_env(8.0, 2.0, 4.0);
        let spec = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.0,
        };
        let matrix =
            CoverageMatrix::build(&env, &spec, 0.1, &TargetSpec::Absolute(0.5), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.bin");
        matrix.save(&path).unwrap();
        let loaded = CoverageMatrix::load(&path, &env, &spec, 0.1).unwrap();
        assert_eq!(loaded.n_candidates(), matrix.n_candidates());
        for j in 0..matrix.n_candidates() {
            assert_eq!(loaded.row(j), matrix.row(j));
        }
        // A different kernel must be rejected.
        let other = KernelSpec::Rbf {
            signal_variance: 1.0,
            lengthscale: 2.5,
        };
        assert!(matches!(
            CoverageMatrix::load(&path, &env, &other, 0.1),
            Err(Error::DigestMismatch { .. })
        ));
    }
}
