//! Finite element discretization and two-phase (ADMM then active-set Newton)
//! solvers for elliptic optimal control with box constraints on the control.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod checks;
pub mod driver;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod pdas;
pub mod problem;

pub use error::{Error, Result};
pub use fem::FemSystem;
pub use mesh::{refine, unit_disk_mesh, unit_square_mesh, Domain, Mesh};
pub use problem::{IterateState, KktReport, ProblemSpec};
pub use admm::{AdmmConfig, AdmmTrace, AdmmVariant};
pub use driver::{two_phase_solve, Algorithm, CampaignConfig, RunRecord};
pub use pdas::{PdasConfig, PdasTrace};
