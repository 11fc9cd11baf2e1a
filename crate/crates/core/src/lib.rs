//! Isogeometric Laplace and Maxwell eigenvalue problems on shape-morphing
//! domains, with derivatives of system matrices and eigenpairs of arbitrary
//! order in the morph parameter.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod jets;
pub mod oracles;
pub mod quadrature;
pub mod sensitivity;
pub mod shapes;
pub mod space;
pub mod sparse;
pub mod spline;

pub use error::{Error, Result};
