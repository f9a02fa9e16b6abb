//! Upscaling and learned surrogates for diffusion in fractured porous media.
//!
//! The crate provides, end to end:
//!
//! 1. [`mesh`] — coarse rectangular grids with fracture-conforming fine
//!    triangulations and the continuum (multi-continuum) DOF indexing.
//! 2. [`fine`] — the fine-scale P1 backward-Euler solver.
//! 3. [`nlmc`] — non-local multi-continuum upscaling: constrained
//!    energy-minimizing basis functions, transmissibility couplings, and the
//!    coarse time stepper.
//! 4. [`datagen`] — source samplers, mobility fronts, trajectory datasets on
//!    simulation vs observation geometries, and training-pair packaging.
//! 5. [`net`] — a from-scratch masked multi-layer perceptron (leaky ReLU,
//!    AdaMax, influence masks, rollout).
//! 6. [`experiment`] — the experiment harness behind the `fracflow` CLI.
//!
//! Everything is deterministic under a master seed: random streams are
//! derived per purpose via [`seed`], collections iterate in index order, and
//! numerical kernels are single-threaded.

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod fine;
pub mod mesh;
pub mod net;
pub mod nlmc;
pub mod seed;
pub mod sparse;

pub use error::{FracError, Result};
