//! Measurement harness: batches a document stream by date window, drives
//! updates against a server, checks every batch against a cleartext ground
//! truth, and records the per-update metrics as CSV.

pub mod batch;
pub mod experiment;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{make_batches, Batch, BatchSpec, Batches, Source};
pub use experiment::{run_experiment, BatchRow, ExperimentConfig, ExperimentOutcome};
pub use synth::{generate_stream, SyntheticDoc, SyntheticSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Client(#[from] fse_client::ClientError),
    #[error(transparent)]
    Build(#[from] fse_core::build::BuildError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot load source {path}: {reason}")]
    Source { path: PathBuf, reason: String },
    #[error("batch {batch}: document ids collide ({doc})")]
    IdCollision { batch: u64, doc: String },
    #[error("batch {batch}: stored orders are not pairwise distinct")]
    OrdersCollide { batch: u64 },
    #[error("batch {batch}: collection stores {got} tuples, ground truth has {want}")]
    TupleDrift { batch: u64, want: u64, got: u64 },
    #[error("batch {batch}: search for {word:?} returned {got} ids, ground truth has {want}")]
    OracleMismatch {
        batch: u64,
        word: String,
        want: usize,
        got: usize,
    },
}
