//! Thermal shallow water on doubly periodic rectangles: lowest order mixed finite
//! elements for the dynamics, collocated high order DG for the buoyancy, a geometric
//! multigrid with GMRES smoothing and a quasi-Newton implicit midpoint step.

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod krylov;
pub mod mesh;
pub mod multigrid;
pub mod operators;
pub mod scalar;
pub mod spaces;
pub mod sparse;
pub mod transport;

pub use error::{Result, TswError};
pub use scalar::Real;

/// Double precision aliases.
pub type Hierarchy = mesh::MeshHierarchy<f64>;
pub type Level = mesh::MeshLevel<f64>;
pub type Matrix = sparse::CsrMatrix<f64>;
