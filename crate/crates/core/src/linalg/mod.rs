//! Sparse and dense linear algebra used by the assembly and solver layers.

pub mod dense;
pub mod ldlt;
pub mod ordering;
pub mod saddle;
pub mod sparse;
pub mod subspace;

pub use dense::{eig_sym_generalized, null_space_basis, GeneralizedEigen, RANK_TOL};
pub use saddle::{solve_saddle, solve_spd, MeanRow, SaddleFactor, SaddleOperator, SaddleSolution, SaddleSystem};
pub use sparse::{CsrMatrix, TripletBuilder};
