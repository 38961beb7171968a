//! Finite-element simulator for the Cahn-Hilliard-Biot model: phase
//! separation in a poroelastic solid, discretized with P1 elements on the
//! unit square and a convex semi-implicit time stepping.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod export;
pub mod linalg;
pub mod mesh;
pub mod physics;
pub mod solvers;

pub use config::{parse_config, RunConfig};
pub use discretization::{Discretization, Field, State, SystemKind, TimeDisc};
pub use error::{Error, Result};
pub use export::{export_fields, FieldFormat};
pub use mesh::Mesh;
pub use physics::{MaterialParams, ScalarSource, SourceData};
pub use solvers::{run_simulation, RunRecord, Scheme, Simulation, SolverConfig};
