//! Finite-volume schemes for nonlinear convection-diffusion equations with
//! Scharfetter-Gummel type fluxes.

pub mod drift_diffusion;
pub mod error;
pub mod experiments;
pub mod field;
pub mod flux;
pub mod linalg;
pub mod mesh;
pub mod nonlinearity;
pub mod porous_media;
pub mod scalar_solver;

pub use error::{Error, Result};
pub use flux::{EdgeCoefficients, EdgeResidual, FluxKind, FluxModel};
pub use linalg::{DirectSolver, SparseMatrix};
pub use mesh::{BoundaryTag, Cell, Edge, EdgeKind, Mesh, Periodicity, Point, Rect, Side};
pub use nonlinearity::{bernoulli, DiffusionAverage, PressureLaw};
pub use field::{CellField, DiagnosticSeries};
pub use scalar_solver::{BoundarySpec, DirichletValues, ProblemSpec, ScalarSolver, StepReport, TransportOperator};
