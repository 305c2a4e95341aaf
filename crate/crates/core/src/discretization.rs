use crate::error::Result;
use crate::fem::assembly::{assemble_divergence, assemble_pressure_mass, assemble_stiffness, assemble_weighted_mass, build_pou, PouData};
use crate::fem::space::{build_spaces, FESpace};
use crate::linalg::sparse::CsrMatrix;
use crate::mesh::{build_coarse_grid, CoarseGrid, PerforatedMesh};

/// Fine spaces, coarse partition and the global fine operators.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub space: FESpace,
    pub grid: CoarseGrid,
    pub pou: PouData,
    /// Vector stiffness on free velocity unknowns.
    pub stiffness: CsrMatrix,
    /// Divergence, pressure nodes × free velocity unknowns.
    pub divergence: CsrMatrix,
    /// κ̃-weighted vector mass on free velocity unknowns.
    pub weighted_mass: CsrMatrix,
    pub pressure_mass: CsrMatrix,
}

impl Discretization {
    pub fn new(mesh: &PerforatedMesh, n_coarse: usize) -> Result<Self> {
        let grid = build_coarse_grid(mesh, n_coarse)?;
        let space = build_spaces(mesh);
        let pou = build_pou(&grid, &space);
        Ok(Discretization {
            stiffness: assemble_stiffness(&space),
            divergence: assemble_divergence(&space),
            weighted_mass: assemble_weighted_mass(&space, &pou),
            pressure_mass: assemble_pressure_mass(&space),
            space,
            grid,
            pou,
        })
    }

    pub fn mesh(&self) -> &PerforatedMesh {
        &self.space.mesh
    }
}
