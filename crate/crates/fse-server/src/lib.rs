//! The untrusted host: persists encrypted indexes, answers token searches
//! across the collection, and serves encrypted meta blocks. It never holds
//! a key; the only decryption it performs is the bucket scan a search token
//! explicitly enables.

pub mod net;
pub mod storage;

pub use net::{BindError, Server, ServerHandle};
pub use storage::{Collection, OpError, Store, StoreError, StoredIndex};
