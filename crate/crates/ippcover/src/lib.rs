//! Sensing-route planning with guaranteed Gaussian-process uncertainty.
//!
//! Given a region with obstacles and a fitted GP model of the monitored
//! field, the planners in this crate compute near-shortest routes whose
//! measurements provably drive the posterior variance below a target at
//! every evaluation point, optionally under a travel budget.

pub mod bitset;
pub mod coverage;
pub mod environment;
pub mod error;
pub mod eval;
pub mod field;
pub mod geom;
pub mod gp;
pub mod kernel;
pub mod planners;
pub mod routing;

pub use environment::Environment;
pub use error::{Error, Result};
pub use geom::{Point, Polygon};
pub use gp::{GpModel, Prediction};
pub use kernel::KernelSpec;
