//! Synthesis of granular mortality tables.
//!
//! The crate fits joint demographic distributions to marginal constraints
//! by iterative proportional fitting, splits base mortality rates into risk
//! subgroups with hazard ratios, quantifies uncertainty with Poisson Monte
//! Carlo replicates and transfers general-population mortality to insured
//! populations with a penalized Poisson regression on spline bases.

pub mod cli;
pub mod error;
pub mod gam;
pub mod hazard;
pub mod io;
pub mod ipf;
pub mod mc;
pub mod pipelines;
pub mod table;

pub use error::{Error, Result};
pub use table::{uniform_table, ContingencyTable, DimensionSpec, MarginalConstraint, TableKind};
