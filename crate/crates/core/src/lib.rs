//! Triangular-lattice Boltzmann schemes for the heat equation.
//!
//! Two schemes are provided: D2T7 on the hexagonal Bravais lattice and D2T4
//! on the centroids of a triangle mesh. The crate covers lattice construction,
//! the moment machinery, time stepping, equivalent-equation coefficients,
//! plane-wave dispersion, matrix-free eigenanalysis and the experiment layer.

pub mod analysis;
pub mod basis;
pub mod error;
pub mod harness;
pub mod io;
pub mod mesh;
pub mod mp;
pub mod scheme;
pub mod spectral;

mod dense;

pub use analysis::{DispersionPoint, OrderReport, ParamSet};
pub use basis::{MomentMatrices, PolynomialFamily};
pub use error::{Error, Result};
pub use mesh::{BoundaryLink, Lattice, Link, NodeId, SchemeKind};
pub use scheme::{BoundarySpec, FieldState, SchemeParams, Stepper};
pub use spectral::{LinearOperator, SpectrumReport};

pub use num_complex::Complex64;
