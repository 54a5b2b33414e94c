//! One-dimensional finite elements for the integral fractional Laplacian.

mod analytic;
mod assembly;
mod dynamics;
mod mesh;
pub(crate) mod quadrature;

pub use analytic::AnalyticPair;
pub use assembly::{
    assemble_fractional_stiffness, assemble_load, assemble_load_split, assemble_mass,
    assemble_target_mass, fractional_constant, toeplitz_stiffness_entry,
};
pub use dynamics::{discounted_l2_distance, DiscreteDynamics, FemSystem, Forcing, Nonlinearity, Scheme};
pub use mesh::FeMesh;
