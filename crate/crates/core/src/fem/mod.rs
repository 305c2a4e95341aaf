//! Taylor–Hood Q2/Q1 discretization: spaces, assembly, partition of unity.

pub mod assembly;
pub mod export;
pub mod reference;
pub mod space;

pub use assembly::{
    assemble_divergence, assemble_load, assemble_pressure_mass, assemble_scalar_forms, assemble_stiffness,
    assemble_weighted_mass, build_pou, region_norms, PouData,
};
pub use space::{build_spaces, FESpace};

#[cfg(test)]
mod tests;
