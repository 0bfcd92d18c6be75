//! Client side of the encrypted index: key handling, document loading,
//! the update cascade, and the single-keyword search flow.

pub mod docs;
pub mod keys;
pub mod session;
pub mod update;

use std::collections::BTreeSet;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

use fse_core::crypto::{derive_index_keys, make_token, MasterKey};
use fse_core::plain::tokenize;
use fse_core::wire::{ErrorCode, FrameError};
use fse_core::IndexId;

pub use session::{Session, SessionCounters};
pub use update::{index_gen, UpdateOutcome};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach server at {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("server closed the connection mid-request")]
    ConnectionClosed,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("server reported {code:?}: {message}")]
    Server { code: ErrorCode, message: String },
    #[error("the collection changed during the operation")]
    Stale,
    #[error("unexpected response to {0}")]
    UnexpectedResponse(&'static str),
    #[error(transparent)]
    Build(#[from] fse_core::build::BuildError),
    #[error("key file {path}: {reason}")]
    KeyFile { path: PathBuf, reason: String },
    #[error("id map problem (line {line}): {reason}")]
    IdMap { line: usize, reason: String },
    #[error("documents {a} and {b} collide on id {id}")]
    IdCollision {
        id: fse_core::DocId,
        a: PathBuf,
        b: PathBuf,
    },
    #[error("cannot read documents under {dir}: {reason}")]
    DocsDir { dir: PathBuf, reason: String },
    #[error("cannot recover index {index_id} for merging: {reason}")]
    MergeRecovery { index_id: IndexId, reason: String },
    #[error("collection invariant violated: {0}")]
    CollectionInvariant(&'static str),
    #[error("{0}")]
    Query(String),
}

impl ClientError {
    /// True for failures where retrying over a fresh connection makes
    /// sense.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ClientError::Io(_)
                | ClientError::ConnectionClosed
                | ClientError::Frame(FrameError::Io(_))
                | ClientError::Frame(FrameError::Truncated)
        )
    }
}

/// Normalizes a query string exactly like indexing does and insists on a
/// single keyword. Multi-word queries are rejected, not silently split.
pub fn normalize_query(input: &str) -> Result<String, ClientError> {
    let words = tokenize(input.as_bytes(), &BTreeSet::new());
    match words.len() {
        1 => Ok(words.into_iter().next().unwrap()),
        0 => Err(ClientError::Query(format!(
            "{input:?} contains no searchable word (2..64 letters or digits)"
        ))),
        _ => Err(ClientError::Query(format!(
            "{input:?} is more than one word; search takes a single keyword"
        ))),
    }
}

/// Full search flow: list the collection, derive each index's keys from its
/// salt, send one SEARCH carrying every token triple, and return ascending
/// ids. A stale listing is refreshed and retried up to three times.
pub fn search_collection(
    master: &MasterKey,
    session: &mut Session,
    word: &str,
) -> Result<Vec<u64>, ClientError> {
    let mut attempts = 0;
    loop {
        let listing = session.list_indexes()?;
        let mut queries = Vec::with_capacity(listing.len());
        for manifest in &listing {
            let keys = derive_index_keys(master, &manifest.salt);
            let token = make_token(&keys, word.as_bytes())
                .map_err(|e| ClientError::Query(e.to_string()))?;
            queries.push((manifest.index_id, token));
        }
        match session.search(queries) {
            Ok(ids) => return Ok(ids),
            Err(ClientError::Stale) if attempts < 3 => attempts += 1,
            Err(e) => return Err(e),
        }
    }
}
