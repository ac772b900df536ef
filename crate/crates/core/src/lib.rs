//! Desk-scale molecular dynamics with a local deep potential evaluated under a
//! virtual Cartesian domain decomposition.
//!
//! The crate is organised bottom-up:
//!
//! - [`system`]: periodic box, particle state, structure generators and XYZ IO.
//! - [`neighbor`]: cell lists, full/half neighbor lists and an all-pairs oracle.
//! - [`classical`]: cut-and-shifted Lennard-Jones.
//! - [`deeppot`]: smooth environment matrix, type-embedded descriptor with optional
//!   gated self-attention, fitting network, exact forces and a training loop.
//! - [`decomp`]: rank grid, ghost halos, the two simulated collectives and the
//!   masked-reduction / wide-halo coupling schemes.
//! - [`engine`]: leap-frog MD loop with pluggable force providers.
//! - [`analysis`]: gyration radii, stability, throughput model fits, efficiency and
//!   load imbalance.
//! - [`trace`]: per-rank phase spans, Chrome trace export and phase summaries.

pub mod analysis;
pub mod classical;
pub mod decomp;
pub mod deeppot;
pub mod engine;
mod error;
pub mod neighbor;
pub mod system;
pub mod trace;
pub mod vec3;
pub mod xyz;

pub use error::{Error, Result};
pub use vec3::Vec3;
