//! Latent-space Bayesian optimization toolkit.
//!
//! This crate bundles the pieces needed to run and compare black-box
//! global optimizers that operate either directly in the ambient search
//! space or in a learned low-dimensional latent space:
//!
//! * [`testbed`] — benchmark objective functions, noisy wrappers, and
//!   high-dimensional low-rank problem construction;
//! * [`gp`] — exact Gaussian-process regression with the Matérn-5/2 kernel;
//! * [`acquisition`] — expected improvement and its maximization over a box;
//! * [`sdr`] — sequential domain reduction (panning/zooming region contraction);
//! * [`nn`] / [`vae`] / [`dml`] — a small MLP engine with reverse-mode
//!   gradients, variational autoencoders trained on the ELBO, and the
//!   triplet-style deep metric losses used to shape latent geometry;
//! * [`algorithms`] — the five optimizers (`bo_sdr`, `v_bovae`, `r_bovae`,
//!   `s_bovae`, `rembo`);
//! * [`profiles`] — performance and data profiles over result sets;
//! * [`harness`] — config-driven experiment runner with CSV traces and
//!   SVG plots.
//!
//! Everything is deterministic given the seeds in the run configuration.

pub mod acquisition;
pub mod algorithms;
pub mod dml;
pub mod domain;
pub mod gp;
pub mod harness;
pub mod nn;
pub mod profiles;
pub mod sdr;
pub mod testbed;
pub mod vae;

mod seeds;

pub use domain::BoxDomain;
pub use seeds::SeedStream;
