//! Minimum-energy robust exploration-input design for uncertain linear systems with
//! energy-bounded disturbances.
//!
//! The pipeline:
//! 1. [`plant`] — linear models, the two-mass spring-damper benchmark, simulation.
//! 2. [`setmem`] — least squares, the non-falsified parameter ellipsoid, the data condition.
//! 3. [`spectral`] — spectral lines, transfer blocks, design-side spectral assemblies.
//! 4. [`uncertainty`] — scenario-based transfer-matrix caps and disturbance-level bounds.
//! 5. [`lmi`] / [`sdp`] / [`design`] — robust LMIs, an interior-point SDP solver, and the
//!    iterative minimum-energy design with sampled certification.
//! 6. [`experiment`] — configuration, the end-to-end pipeline and the parameter studies
//!    (with [`plot`] for the SVG figures).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod design;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lmi;
pub mod plant;
pub mod plot;
pub mod sdp;
pub mod setmem;
pub mod spectral;
pub mod uncertainty;

pub use error::{Error, Result};
