//! Photoelastic fringe patterns of loaded circular particles.
//!
//! * [`elastic`]: closed-form stress and intensity of a disk under point contacts.
//! * [`sampler`]: random balanced force lists under the contact constraints.
//! * [`render`]: 8-bit rasterisation and the rotate/resize/blur chain.
//! * [`dataset`]: labelled dataset generation and the JSONL manifest.
//! * [`inverse`]: least-squares force reconstruction from a pattern.
//! * [`metrics`]: evaluation of predicted force lists against labels.
//! * [`forcefile`]: the plain-text force-list format used by the command line.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod elastic;
pub mod error;
pub mod forcefile;
pub mod inverse;
pub mod metrics;
pub mod rng;
pub mod render;
pub mod sampler;

pub use elastic::{ForceList, ForceTriplet, ParticleSpec, StressTensor2D};
pub use error::{Error, Result};
pub use render::{ImageSpec, IntensityImage};
pub use sampler::SamplerConfig;
