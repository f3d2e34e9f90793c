//! Covariant axial gauge fixing and block-averaging renormalization for
//! abelian lattice gauge fields, computed exactly with dense linear algebra.

pub mod averaging;
pub mod error;
pub mod field;
pub mod gauge;
pub mod gaussian;
pub mod lattice;
pub mod linalg;
pub mod rg;

pub use error::{Error, Result};
