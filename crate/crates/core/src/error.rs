use std::path::PathBuf;

use crate::config::ConfigDiagnostic;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("curve {curve}: edge ({a}, {b}) is not an edge of the mesh")]
    NonConformingCurve { curve: usize, a: usize, b: usize },
    #[error("shapes {first} and {second} intersect or touch")]
    IntersectingShapes { first: usize, second: usize },
    #[error("invalid curve {curve}: {reason}")]
    InvalidCurve { curve: usize, reason: String },
    #[error("diffusion coefficient {value} is not positive in cell {cell}")]
    NonpositiveCoefficient { cell: usize, value: f64 },
    #[error("Lame parameter mu = {value} is not positive at node {node}")]
    NonpositiveMu { node: usize, value: f64 },
    #[error("random coefficient {value} is not positive at ({x}, {y})")]
    NonpositiveKappa { x: f64, y: f64, value: f64 },
    #[error("solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("Armijo backtracking exhausted after {0} reductions")]
    BacktrackExhausted(usize),
    #[error("mesh invalid after step-size halving at iteration {iteration}")]
    InvalidMeshAfterRetry { iteration: usize },
    #[error("invalid KL specification: {0}")]
    InvalidKlSpec(String),
    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),
    #[error("{}", format_diagnostics(.0))]
    Config(Vec<ConfigDiagnostic>),
    #[error("VTK parse error at line {line}: {message}")]
    Vtk { line: usize, message: String },
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_diagnostics(diags: &[ConfigDiagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 runtime/solver, 3 mesh failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonConformingCurve { .. }
            | Error::IntersectingShapes { .. }
            | Error::InvalidCurve { .. }
            | Error::MeshGeneration(_)
            | Error::InvalidMeshAfterRetry { .. }
            | Error::Vtk { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
