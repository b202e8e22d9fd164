//! Numerical laboratory for second-order elliptic equations in divergence
//! form with random coefficients: seeded coefficient fields, exact Q1
//! discretizations of the cell-problem energies nu, mu and the modulated
//! energy J, triadic multiscale diagnostics, polynomial regularity curves,
//! and Monte Carlo campaign tooling.

pub mod energy;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod multiscale;
pub mod regularity;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use field::{make_checkerboard, make_laminate, CoefficientField, EllipticityBand, FieldSpec, Law};
pub use grid::{CubeGrid, GridField, Layout};
pub use linalg::SymMat;
