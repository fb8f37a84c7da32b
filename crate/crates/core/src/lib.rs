//! Generalized wavelet-Galerkin method on Coiflet-type scaling bases.
//!
//! The pipeline runs bottom-up: [`filterbank`] produces the low-pass filter,
//! [`scalfun`] evaluates the scaling function and its derivatives on dyadic
//! grids, [`basis`] builds the boundary-adapted basis on [0, 1], [`conncoef`]
//! computes and caches connection coefficients, and [`galerkin`] /
//! [`nonlinear`] assemble and solve the discrete systems.

pub mod error;
pub mod filterbank;
pub mod galerkin;
pub mod linalg;
pub mod nonlinear;
pub mod problemfile;
pub mod problems;
pub mod scalfun;
pub mod basis;
pub mod coeftransform;
pub mod conncoef;
pub mod exprlang;
pub mod special;

pub use error::{Error, Result};
pub use nalgebra;
