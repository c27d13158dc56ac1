//! Finite-element shape optimization over vectors of shapes in the unit
//! square.
//!
//! The pipeline: a [`mesh::TriMesh`] carries subdomain labels and
//! mesh-conforming interfaces; [`physics`] solves the state and adjoint
//! transmission problems; [`shape_calculus`] assembles the volume form of the
//! shape derivative; [`deformation`] turns it into a descent field through a
//! linear elasticity solve; [`optimizer`] moves the mesh with Armijo
//! steepest descent or a stochastic gradient method driven by
//! [`randomfield`] samples.

pub mod config;
pub mod deformation;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod geometry;
pub mod mesh;
pub mod optimizer;
pub mod par;
pub mod physics;
pub mod randomfield;
pub mod shape_calculus;
pub mod verify;

pub use error::{Error, Result};
