//! Numerical solver for convex radial graphs whose k-th Weingarten
//! curvature is a prescribed function of the Gauss map, with prescribed
//! boundary on a geodesic cap.

pub mod cli_io;
pub mod diagnostics;
pub mod error;
pub mod graphgeom;
pub mod linalg;
pub mod psidsl;
pub mod selftest;
pub mod solver;
pub mod sphere;
pub mod subsolution;
pub mod symfunc;

pub use error::{Error, Result};
