//! Shared foundation for the encrypted keyword index: deterministic crypto
//! primitives, storage layout arithmetic, client-side index construction,
//! merge planning, and the binary wire protocol spoken between client and
//! server.
//!
//! The server only ever sees the output of [`crypto::make_token`] plus the
//! opaque byte sections produced by [`build::setup`]; everything it needs to
//! answer a query is derivable from a token, and nothing else is.

pub mod build;
pub mod crypto;
pub mod delta;
pub mod layout;
pub mod merge;
pub mod plain;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

/// 64-bit document identifier, printed as fixed-width hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub u64);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DocId({:016x})", self.0)
    }
}

impl FromStr for DocId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_prefix("0x").unwrap_or(s);
        u64::from_str_radix(s, 16).map(DocId)
    }
}

/// Public 16-byte identifier naming one stored index.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndexId(pub [u8; 16]);

impl IndexId {
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut id = [0u8; 16];
        rng.fill_bytes(&mut id);
        IndexId(id)
    }

    pub fn to_hex(self) -> String {
        self.to_string()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 || !s.is_ascii() {
            return None;
        }
        let mut id = [0u8; 16];
        for (i, byte) in id.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(IndexId(id))
    }
}

impl fmt::Display for IndexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for IndexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IndexId({self})")
    }
}

/// Public per-index salt; combined with the master key it fixes that
/// index's key triple.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Salt(pub [u8; 16]);

impl Salt {
    pub fn random(rng: &mut dyn RngCore) -> Self {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        Salt(salt)
    }
}
