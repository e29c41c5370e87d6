//! Ground-truth fields for benchmarking: synthetic generators and
//! grid-file ingestion with bilinear interpolation.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::kernel::KernelSpec;

/// A scalar field sampled anywhere inside its extent.
#[derive(Debug, Clone)]
pub enum Field {
    Grid(GridField),
    TwoZone(TwoZoneField),
}

impl Field {
    pub fn sample(&self, p: Point) -> f64 {
        match self {
            Field::Grid(g) => g.sample(p),
            Field::TwoZone(t) => t.sample(p),
        }
    }

    /// Bounding box as (min, max).
    pub fn extent(&self) -> (Point, Point) {
        match self {
            Field::Grid(g) => (
                Point::new(g.x0, g.y0),
                Point::new(
                    g.x0 + (g.ncols - 1) as f64 * g.cellsize,
                    g.y0 + (g.nrows - 1) as f64 * g.cellsize,
                ),
            ),
            Field::TwoZone(t) => (
                Point::new(t.extent[0], t.extent[1]),
                Point::new(t.extent[2], t.extent[3]),
            ),
        }
    }
}

/// Regular grid of values, bilinearly interpolated. Row 0 sits at the
/// grid origin (`y0`), rows increase with y.
#[derive(Debug, Clone)]
pub struct GridField {
    pub ncols: usize,
    pub nrows: usize,
    pub x0: f64,
    pub y0: f64,
    pub cellsize: f64,
    /// Row-major, row 0 at y0.
    pub values: Vec<f64>,
}

impl GridField {
    fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn sample(&self, p: Point) -> f64 {
        let fx = ((p.x - self.x0) / self.cellsize)
            .clamp(0.0, (self.ncols - 1) as f64);
        let fy = ((p.y - self.y0) / self.cellsize)
            .clamp(0.0, (self.nrows - 1) as f64);
        let c0 = (fx.floor() as usize).min(self.ncols - 1);
        let r0 = (fy.floor() as usize).min(self.nrows - 1);
        let c1 = (c0 + 1).min(self.ncols - 1);
        let r1 = (r0 + 1).min(self.nrows - 1);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let bottom = self.at(c0, r0) * (1.0 - tx) + self.at(c1, r0) * tx;
        let top = self.at(c0, r1) * (1.0 - tx) + self.at(c1, r1) * tx;
        bottom * (1.0 - ty) + top * ty
    }
}

/// Two lengthscale regimes side by side: a smooth low-frequency base
/// everywhere, plus a high-frequency component ramped in over the right
/// half so the field stays continuous at the interface.
#[derive(Debug, Clone)]
pub struct TwoZoneField {
    pub extent: [f64; 4],
    split_x: f64,
    ramp_width: f64,
    smooth_terms: Vec<SinTerm>,
    rough_terms: Vec<SinTerm>,
}

#[derive(Debug, Clone, Copy)]
struct SinTerm {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

impl TwoZoneField {
    pub fn sample(&self, p: Point) -> f64 {
        let eval = |terms: &[SinTerm]| -> f64 {
            terms
                .iter()
                .map(|t| t.amp * (t.kx * p.x + t.ky * p.y + t.phase).sin())
                .sum()
        };
        let w = ((p.x - self.split_x) / self.ramp_width).clamp(0.0, 1.0);
        eval(&self.smooth_terms) + w * eval(&self.rough_terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    TwoZoneLengthscale,
    GpDraw,
}

/// Two-zone sinusoid field over the given extent `[min_x, min_y, max_x,
/// max_y]`, split at the extent's horizontal midpoint.
pub fn two_zone(extent: [f64; 4], seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x745a_6f6e_65u64);
    let width = extent[2] - extent[0];
    let mut terms = |n: usize, freq_lo: f64, freq_hi: f64, amp: f64| -> Vec<SinTerm> {
        (0..n)
            .map(|_| {
                let k = rng.gen_range(freq_lo..freq_hi);
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                SinTerm {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amp: amp * rng.gen_range(0.6..1.0),
                }
            })
            .collect()
    };
    let smooth_terms = terms(3, 0.25, 0.6, 1.0);
    let rough_terms = terms(5, 2.0, 4.0, 0.8);
    Field::TwoZone(TwoZoneField {
        extent,
        split_x: extent[0] + width / 2.0,
        ramp_width: (0.08 * width).max(1e-6),
        smooth_terms,
        rough_terms,
    })
}

/// Exact draw from the kernel's Gaussian process on a regular lattice
/// over the extent, bilinearly interpolated between lattice nodes.
pub fn gp_draw(spec: &KernelSpec, extent: [f64; 4], spacing: f64, seed: u64) -> Result<Field> {
    if !(spacing > 0.0) {
        return Err(Error::Config(format!("gp-draw spacing {spacing} must be > 0")));
    }
    let ncols = (((extent[2] - extent[0]) / spacing).floor() as usize + 2).max(2);
    let nrows = (((extent[3] - extent[1]) / spacing).floor() as usize + 2).max(2);
    let n = ncols * nrows;
    if n > 5000 {
        return Err(Error::Config(format!(
            "gp-draw lattice has {n} nodes; raise the spacing"
        )));
    }
    let points: Vec<Point> = (0..n)
        .map(|i| {
            Point::new(
                extent[0] + (i % ncols) as f64 * spacing,
                extent[1] + (i / ncols) as f64 * spacing,
            )
        })
        .collect();
    let jitter = 1e-10 * spec.signal_variance();
    let k = DMatrix::from_fn(n, n, |i, j| {
        spec.eval(points[i], points[j]) + if i == j { jitter } else { 0.0 }
    });
    let chol = k
        .cholesky()
        .ok_or(Error::FactorizationFailure(jitter))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6764_7261_77u64);
    let z = DMatrix::from_fn(n, 1, |_, _| standard_normal(&mut rng));
    let values = (chol.l() * z).column(0).iter().copied().collect();
    Ok(Field::Grid(GridField {
        ncols,
        nrows,
        x0: extent[0],
        y0: extent[1],
        cellsize: spacing,
        values,
    }))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// ESRI-ASCII-style grid: header lines (ncols, nrows, xllcorner,
/// yllcorner, cellsize, optional nodata_value) followed by
/// whitespace-separated values, top row first. Cells equal to the
/// nodata value are rejected.
pub fn load_ascii_grid(path: &std::path::Path) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    let file = path.display().to_string();
    let mut header: std::collections::HashMap<String, f64> = std::collections::HashMap::new();
    let mut values: Vec<f64> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let first = toks.next().unwrap();
        if first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            let key = first.to_ascii_lowercase();
            let val = toks
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    file: file.clone(),
                    line: lineno + 1,
                    msg: format!("header '{key}' missing numeric value"),
                })?;
            header.insert(key, val);
        } else {
            for tok in std::iter::once(first).chain(toks) {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line: lineno + 1,
                    msg: format!("bad grid value '{tok}'"),
                })?;
                values.push(v);
            }
        }
    }
    let get = |k: &str| -> Result<f64> {
        header.get(k).copied().ok_or_else(|| Error::Parse {
            file: file.clone(),
            line: 0,
            msg: format!("missing header field '{k}'"),
        })
    };
    let ncols = get("ncols")? as usize;
    let nrows = get("nrows")? as usize;
    let x0 = get("xllcorner")?;
    let y0 = get("yllcorner")?;
    let cellsize = get("cellsize")?;
    if ncols < 2 || nrows < 2 || !(cellsize > 0.0) {
        return Err(Error::Parse {
            file,
            line: 0,
            msg: format!("bad grid shape {ncols}x{nrows} cellsize {cellsize}"),
        });
    }
    if values.len() != ncols * nrows {
        return Err(Error::Parse {
            file,
            line: 0,
            msg: format!("expected {} values, found {}", ncols * nrows, values.len()),
        });
    }
    if let Some(&nodata) = header.get("nodata_value") {
        if values.iter().any(|&v| v == nodata) {
            return Err(Error::Parse {
                file,
                line: 0,
                msg: format!("grid contains nodata cells ({nodata}); fill them first"),
            });
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse {
            file,
            line: 0,
            msg: "grid contains non-finite values".into(),
        });
    }
    // ASCII grids store the top row first; flip so row 0 sits at y0.
    let mut flipped = Vec::with_capacity(values.len());
    for row in (0..nrows).rev() {
        flipped.extend_from_slice(&values[row * ncols..(row + 1) * ncols]);
    }
    Ok(Field::Grid(GridField {
        ncols,
        nrows,
        x0,
        y0,
        cellsize,
        values: flipped,
    }))
}

/// CSV scatter (`x,y,value` with header) gridded at the given cell size
/// by inverse-distance weighting of the nearest samples.
pub fn load_scatter_csv(path: &std::path::Path, cellsize: f64) -> Result<Field> {
    let file = path.display().to_string();
    if !(cellsize > 0.0) {
        return Err(Error::Config(format!("cellsize {cellsize} must be > 0")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: file.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut samples: Vec<(Point, f64)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            file: file.clone(),
            line: i + 2,
            msg: e.to_string(),
        })?;
        let parse = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    file: file.clone(),
                    line: i + 2,
                    msg: format!("bad numeric field {}", j + 1),
                })
        };
        samples.push((Point::new(parse(0)?, parse(1)?), parse(2)?));
    }
    if samples.len() < 3 {
        return Err(Error::InsufficientData {
            need: 3,
            got: samples.len(),
        });
    }
    let min_x = samples.iter().map(|(p, _)| p.x).fold(f64::INFINITY, f64::min);
    let min_y = samples.iter().map(|(p, _)| p.y).fold(f64::INFINITY, f64::min);
    let max_x = samples.iter().map(|(p, _)| p.x).fold(f64::NEG_INFINITY, f64::max);
    let max_y = samples.iter().map(|(p, _)| p.y).fold(f64::NEG_INFINITY, f64::max);
    let ncols = (((max_x - min_x) / cellsize).ceil() as usize + 1).max(2);
    let nrows = (((max_y - min_y) / cellsize).ceil() as usize + 1).max(2);
    let mut values = Vec::with_capacity(ncols * nrows);
    for row in 0..nrows {
        for col in 0..ncols {
            let g = Point::new(min_x + col as f64 * cellsize, min_y + row as f64 * cellsize);
            // Inverse-square-distance weights; an exact hit wins outright.
            let mut num = 0.0;
            let mut den = 0.0;
            let mut exact = None;
            for (p, v) in &samples {
                let d2 = p.dist_sq(&g);
                if d2 < 1e-18 {
                    exact = Some(*v);
                    break;
                }
                num += v / d2;
                den += 1.0 / d2;
            }
            values.push(exact.unwrap_or(num / den));
        }
    }
    Ok(Field::Grid(GridField {
        ncols,
        nrows,
        x0: min_x,
        y0: min_y,
        cellsize,
        values,
    }))
}

/// Declarative field source for config files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    TwoZoneLengthscale {
        #[serde(default)]
        extent: Option<[f64; 4]>,
    },
    GpDraw {
        kernel: KernelSpec,
        spacing: f64,
        #[serde(default)]
        extent: Option<[f64; 4]>,
    },
    GridFile {
        path: String,
    },
    ScatterCsv {
        path: String,
        cellsize: f64,
    },
}

impl FieldSpec {
    /// Builds the field; `default_extent` (typically the environment
    /// bounding box) backs synthetic kinds with no explicit extent.
    /// Relative file paths resolve against `base_dir`.
    pub fn build(
        &self,
        default_extent: [f64; 4],
        base_dir: &std::path::Path,
        seed: u64,
    ) -> Result<Field> {
        let resolve = |p: &str| -> std::path::PathBuf {
            let pb = std::path::PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base_dir.join(pb)
            }
        };
        match self {
            FieldSpec::TwoZoneLengthscale { extent } => {
                Ok(two_zone(extent.unwrap_or(default_extent), seed))
            }
            FieldSpec::GpDraw {
                kernel,
                spacing,
                extent,
            } => gp_draw(kernel, extent.unwrap_or(default_extent), *spacing, seed),
            FieldSpec::GridFile { path } => load_ascii_grid(&resolve(path)),
            FieldSpec::ScatterCsv { path, cellsize } => {
                load_scatter_csv(&resolve(path), *cellsize)
            }
        }
    }
}
