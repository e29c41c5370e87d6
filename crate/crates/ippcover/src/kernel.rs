//! Covariance kernels: stationary RBF and a spatially-varying-lengthscale
//! (Gibbs-form) kernel whose lengthscale field is a coarse lattice with
//! bilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::geom::Point;

/// Coarse lattice of lengthscale values over a bounding box. Queries are
/// bilinearly interpolated; points outside the box clamp to the edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleGrid {
    pub nx: usize,
    pub ny: usize,
    /// [min_x, min_y, max_x, max_y]
    pub bbox: [f64; 4],
    /// Row-major, `ny` rows of `nx` values, row 0 at min_y.
    pub values: Vec<f64>,
}

impl LengthscaleGrid {
    pub fn uniform(nx: usize, ny: usize, bbox: [f64; 4], value: f64) -> Self {
        LengthscaleGrid {
            nx,
            ny,
            bbox,
            values: vec![value; nx * ny],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config("lengthscale grid must be at least 2x2".into()));
        }
        if self.values.len() != self.nx * self.ny {
            return Err(Error::Config(format!(
                "lengthscale grid has {} values, expected {}",
                self.values.len(),
                self.nx * self.ny
            )));
        }
        if self.bbox[2] <= self.bbox[0] || self.bbox[3] <= self.bbox[1] {
            return Err(Error::Config("lengthscale grid bbox is degenerate".into()));
        }
        if self.values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("lengthscales must be positive".into()));
        }
        Ok(())
    }

    /// Bilinear interpolation, clamped to the grid extent.
    pub fn at(&self, p: Point) -> f64 {
        let fx = ((p.x - self.bbox[0]) / (self.bbox[2] - self.bbox[0]) * (self.nx - 1) as f64)
            .clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p.y - self.bbox[1]) / (self.bbox[3] - self.bbox[1]) * (self.ny - 1) as f64)
            .clamp(0.0, (self.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(self.nx - 2);
        let j0 = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let v = |i: usize, j: usize| self.values[j * self.nx + i];
        let a = v(i0, j0) * (1.0 - tx) + v(i0 + 1, j0) * tx;
        let b = v(i0, j0 + 1) * (1.0 - tx) + v(i0 + 1, j0 + 1) * tx;
        a * (1.0 - ty) + b * ty
    }
}

/// Kernel specification: kind plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf {
        signal_variance: f64,
        lengthscale: f64,
    },
    VariableLengthscale {
        signal_variance: f64,
        lengthscale_grid: LengthscaleGrid,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Rbf {
                signal_variance,
                lengthscale,
            } => {
                if !(*signal_variance > 0.0) || !(*lengthscale > 0.0) {
                    return Err(Error::Config(
                        "signal_variance and lengthscale must be positive".into(),
                    ));
                }
            }
            KernelSpec::VariableLengthscale {
                signal_variance,
                lengthscale_grid,
            } => {
                if !(*signal_variance > 0.0) {
                    return Err(Error::Config("signal_variance must be positive".into()));
                }
                lengthscale_grid.validate()?;
            }
        }
        Ok(())
    }

    pub fn signal_variance(&self) -> f64 {
        match self {
            KernelSpec::Rbf {
                signal_variance, ..
            }
            | KernelSpec::VariableLengthscale {
                signal_variance, ..
            } => *signal_variance,
        }
    }

    /// Prior covariance between two locations.
    ///
    /// RBF: `sv * exp(-r^2 / (2 l^2))`.
    /// Variable lengthscale (Gibbs form, 2-D):
    /// `sv * (2 l(a) l(b) / (l(a)^2 + l(b)^2)) * exp(-r^2 / (l(a)^2 + l(b)^2))`.
    /// The prefactor exponent is d/2; with planar inputs it must be 1,
    /// or the kernel loses positive semidefiniteness.
    pub fn eval(&self, a: Point, b: Point) -> f64 {
        let r2 = a.dist_sq(&b);
        match self {
            KernelSpec::Rbf {
                signal_variance,
                lengthscale,
            } => signal_variance * (-r2 / (2.0 * lengthscale * lengthscale)).exp(),
            KernelSpec::VariableLengthscale {
                signal_variance,
                lengthscale_grid,
            } => {
                let la = lengthscale_grid.at(a);
                let lb = lengthscale_grid.at(b);
                let denom = la * la + lb * lb;
                signal_variance * (2.0 * la * lb / denom) * (-r2 / denom).exp()
            }
        }
    }

    /// Smallest effective lengthscale over the evaluation set. Used to
    /// configure the conservative stationary baseline.
    pub fn min_lengthscale(&self, env: &Environment) -> f64 {
        match self {
            KernelSpec::Rbf { lengthscale, .. } => *lengthscale,
            KernelSpec::VariableLengthscale {
                lengthscale_grid, ..
            } => env
                .eval_points
                .iter()
                .map(|p| lengthscale_grid.at(*p))
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: KernelSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}
