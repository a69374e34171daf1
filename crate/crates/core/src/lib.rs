//! Growth mixture modeling for parallel bilinear-spline trajectories.
//!
//! Fits finite mixtures whose within-class submodel is a pair of correlated
//! piecewise-linear growth curves with estimated class-specific knots, with
//! multinomial-logistic class membership driven by baseline covariates.
//! Includes class enumeration by information criteria, a Monte Carlo
//! simulation laboratory with the standard performance metrics, and a CLI
//! plus CSV/JSON interchange formats.

pub mod cli;
pub mod error;
pub mod estimate;
pub mod io;
pub mod math;
pub mod mixture;
pub mod select;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};
