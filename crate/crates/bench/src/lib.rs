//! Fixtures shared by the benchmarks.

use stokes_cem::auxiliary::{build_aux_space, build_qh};
use stokes_cem::mesh::{build_fine_grid, demo_perforations};
use stokes_cem::{AuxSpace, Discretization, ModeCount, PressureAuxSpace, PressureConstraint};

/// Demo geometry at `nx` fine cells and `n_coarse` blocks per axis.
pub fn demo(nx: usize, n_coarse: usize) -> Discretization {
    let mesh = build_fine_grid(nx, &demo_perforations()).expect("demo mesh");
    Discretization::new(&mesh, n_coarse).expect("demo partition")
}

pub fn spaces(d: &Discretization, ell: usize) -> (AuxSpace, PressureAuxSpace) {
    let aux = build_aux_space(d, &ModeCount::Uniform(ell)).expect("auxiliary space");
    let qh = build_qh(d, &aux, PressureConstraint::Relaxed).expect("pressure space");
    (aux, qh)
}
