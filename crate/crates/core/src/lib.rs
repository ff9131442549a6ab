//! Core algorithms for articulated object modeling from point cloud sequences.
//!
//! The object is represented as a set of dynamic 3D Gaussians, one per rigid
//! part, with per-timestep poses and time-shared scales. Fitting proceeds in
//! three steps: per-part Gaussian optimization against the observed clouds
//! ([`optimizer`]), kinematic tree extraction from the fitted motions
//! ([`kinematics`]), and joint-parameter refinement through forward
//! kinematics. [`metrics`] evaluates a fitted model against ground truth and
//! [`synth`] generates synthetic benchmark scenes, including partially
//! observed and camera-occluded variants.
//!
//! The crate is `no_std` (alloc required); all file formats, logging and the
//! command line live in the companion `artigauss` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod error;
mod float;
pub mod gaussian;
pub mod geometry;
pub mod kinematics;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optimizer;
pub mod rng;
pub mod synth;

mod diff;

pub use error::{Error, Result};
pub use geometry::{Mat3, Vec3};
