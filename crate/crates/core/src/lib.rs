pub mod auxiliary;
pub mod basis;
pub mod discretization;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod forcing;
pub mod linalg;
pub mod mesh;
pub mod solver;
pub use error::{Error, Result};
pub use auxiliary::{AuxSpace, ModeCount, PressureAuxSpace, PressureConstraint};
pub use basis::{CemBasisFunction, MsBasis};
pub use discretization::Discretization;
pub use experiment::{Command, ExperimentConfig, LevelMetrics};
pub use forcing::Forcing;
pub use mesh::{CoarseGrid, PerforatedMesh, PerforationSpec, Shape};
pub use solver::{ErrorReport, MsSolution, ReferenceSolution};
