use std::path::PathBuf;

use crate::deeppot::DPModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pair distance {distance:e} between atoms {i} and {j} is singular")]
    Singularity { i: usize, j: usize, distance: f64 },

    #[error("cutoff {rc} exceeds half the box length {length} on periodic axis {axis}")]
    MinimumImage { axis: usize, rc: f64, length: f64 },

    #[error("atom {atom} has {count} neighbors, exceeding model capacity n_max = {capacity}")]
    NeighborOverflow { atom: usize, count: usize, capacity: usize },

    #[error("partition violation: {0}")]
    Partition(String),

    #[error("degenerate decomposition geometry: {0}")]
    Geometry(String),

    #[error("non-finite forces at step {step} from provider `{provider}`")]
    NonFiniteForces { step: usize, provider: String },

    #[error("training diverged at epoch {epoch}; last finite checkpoint retained")]
    Diverged { epoch: usize, checkpoint: Box<DPModel> },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
