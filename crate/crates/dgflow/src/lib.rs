//! Distance-geometry flow matching for transition-state prediction.
//!
//! The crate provides, bottom up:
//!
//! - [`numerics`]: dense f64 tensors, reverse-mode automatic differentiation on a
//!   Wengert tape, Adam and L-BFGS optimizers, a Jacobi symmetric eigensolver, and
//!   a seeded xoshiro256++ RNG.
//! - [`geom`]: conformers, pairwise-distance matrices, Kabsch alignment, RMSD/DMAE
//!   metrics, Coulomb-matrix descriptors, and bond inference.
//! - [`reconstruct`]: Cartesian coordinates from a distance matrix (classical MDS
//!   followed by weighted-stress minimization).
//! - [`tsdvnet`]: the two-branch velocity-field network over distance geometry.
//! - [`flow`]: the conditional flow-matching objective, training loop, and Euler
//!   ODE inference that turn a velocity field into a transition-state prediction.
//! - [`pathband`]: reaction-path machinery on pluggable potentials — relaxation,
//!   IDPP interpolation, CI-NEB, finite-difference Hessians, harmonic analysis,
//!   IRC descent, and normal-mode sampling.
//! - [`explore`]: Coulomb→PCA→k-means clustering of sampled transition states and
//!   paired Wilcoxon statistics.
//! - [`dataio`]: XYZ geometry I/O, reaction-record datasets, deterministic splits,
//!   and a synthetic-reaction oracle for desk-scale verification.


pub mod error;


pub mod geom;
pub mod numerics;

pub mod reconstruct;


pub mod dataio;
pub mod flow;
pub mod tsdvnet;

pub use error::{Error, Result};
