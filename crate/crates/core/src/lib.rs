//! BiCGStab-family Krylov solvers for sparse systems with multiple
//! right-hand sides.
//!
//! The crate is organised around memory traffic rather than floating point
//! work:
//!
//! * [`sparse`] holds the CSR matrix, the row-interleaved [`MultiVector`],
//!   stencil generators and the sparse matrix products with byte-exact
//!   traffic reporting.
//! * [`kernels`] describes fused groups of vector statements, executes them
//!   in a single pass and derives their read/write counts.
//! * [`solvers`] implements six BiCGStab variants in basic and merged
//!   formulations on top of those groups.
//! * [`perfmodel`] is the analytical execution-time model driven by the
//!   same per-iteration schedules.

pub mod kernels;
pub mod perfmodel;
pub mod solvers;
pub mod sparse;

pub use kernels::TrafficCounter;
pub use sparse::{ColumnScalars, CsrMatrix, MultiVector};
