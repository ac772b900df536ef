//! Local deep potential.
//!
//! Each atom `i` gets an environment matrix `R` (one row `(s, s·x/r, s·y/r, s·z/r)`
//! per neighbor inside `rc`), an embedding `G` of `(s, z_j, z_i)` per row, an
//! optional stack of gated self-attention layers acting on `G`, and the
//! contraction `D = (RᵀG)ᵀ(RᵀG_r) / n_max²`. A fitting net maps the standardised
//! `D` to the atomic energy `e_i`; the total energy is the sum over local atoms.
//!
//! Attention weights inside a layer are `A_jk = s_k·exp(S_jk) / Σ_l s_l·exp(S_jl)`
//! and are multiplied by the gate `R_j·R_k / Σ_l s_l²`. Both factors vanish
//! smoothly as a neighbor leaves the cutoff, so energies stay continuous.

pub mod data;
pub mod descriptor;
pub mod eval;
pub mod io;
mod linalg;
pub mod model;
pub mod train;

pub use descriptor::{descriptor, switch_fn, EnvNeighbor, EnvironmentMatrix};
pub use eval::{build_environment, evaluate_dp, evaluate_system, force_rmse, DPOutput, LocalMask};
pub use io::{load_model, save_model};
pub use model::{DPConfig, DPModel};
pub use train::{prepare_model, train, TrainFrame, TrainParams, TrainReport, TrainingSet};
