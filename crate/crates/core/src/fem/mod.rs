//! P1 finite-element kernel: nodal fields, CSR storage, assembly of the
//! diffusion, mass and elasticity operators, and preconditioned CG solvers.

mod assembly;
mod field;
mod solver;
mod sparse;

pub use assembly::{
    assemble_diffusion, assemble_elasticity, assemble_elasticity_on, assemble_mass, assemble_neumann_load,
    lumped_mass, BoundaryLoad,
};
pub use field::{NodalField, ScalarField, VectorField};
pub use solver::{
    pcg, solve_mean_constrained, solve_spd, MeanConstrainedSolution, SolveStats, DEFAULT_RTOL,
};
pub use sparse::{CsrMatrix, SparseSystem};
