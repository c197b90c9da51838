//! Linear algebra: block-sparse symmetric matrices, a fill-reducing
//! ordering, a block Cholesky factorization, and small dense helpers.

pub mod cholesky;
pub mod dense;
pub mod ordering;
pub mod sparse;

pub use cholesky::{factor_with_ridge, Cholesky, FactorError, Symbolic};
pub use sparse::{BlockPattern, SymMatrix};
