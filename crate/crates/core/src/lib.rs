//! Monte Carlo and multilevel Monte Carlo estimation of the integrated
//! density of states of honeycomb tight-binding materials with random
//! vacancies.
//!
//! The pipeline for one sample is: draw a [`disorder::DefectConfiguration`]
//! on a [`lattice::Supercell`], assemble Bloch operators with
//! [`tbmodel::BlochAssembler`], solve the band structure on a
//! [`spectrum::BzGrid`], and reduce it to a smoothed [`qoi::IdosCurve`].
//! The [`mlmc`] module combines such samples across supercell sizes.

pub mod disorder;
pub mod error;
pub mod exec;
pub mod lattice;
pub mod mlmc;
pub mod qoi;
pub mod spectrum;
pub mod tbmodel;

pub use error::{Error, Result};
