//! Deterministic primitives everything else is built on.
//!
//! The PRF is HMAC-SHA-256, the hash is SHA-256, and the entry cipher is
//! AES-256-CTR with an explicit random 16-byte nonce. All functions here are
//! pure given their inputs; the only randomness is the nonce and filler
//! generation, which draw from a caller-supplied generator so builds can be
//! reproduced under a fixed seed.

use aes::cipher::{KeyIvInit, StreamCipher};
use aes::Aes256;
use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::{DocId, Salt};

type HmacSha256 = Hmac<Sha256>;
type Aes256Ctr = ctr::Ctr128BE<Aes256>;

/// All symmetric keys and PRF outputs are 32 bytes.
pub const KEY_LEN: usize = 32;
/// Serialized width of one bucket entry: 16-byte nonce plus 24-byte body.
pub const ENTRY_LEN: usize = 40;
/// Nonce prefix of an entry ciphertext.
pub const ENTRY_NONCE_LEN: usize = 16;
/// Zero padding appended to the document id before encryption; a decryption
/// is accepted only if these bytes come back as zeros.
pub const VALIDITY_PAD_LEN: usize = 16;

const ENTRY_BODY_LEN: usize = ENTRY_LEN - ENTRY_NONCE_LEN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("cannot make a search token for an empty word")]
    EmptyWord,
    #[error("key file must hold exactly {KEY_LEN} bytes")]
    BadKeyLength,
}

/// Client-side root secret. Never serialized into an index or wire message;
/// everything sent to the server is derived through the PRF.
#[derive(Clone)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn generate(rng: &mut dyn RngCore) -> Self {
        let mut key = [0u8; KEY_LEN];
        rng.fill_bytes(&mut key);
        MasterKey(key)
    }

    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        MasterKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bytes: [u8; KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::BadKeyLength)?;
        Ok(MasterKey(bytes))
    }

    /// Raw bytes, needed only to write the key file.
    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

/// Per-index secret triple (k1, k2, k3).
#[derive(Clone, PartialEq, Eq)]
pub struct IndexKeys {
    k1: [u8; KEY_LEN],
    k2: [u8; KEY_LEN],
    k3: [u8; KEY_LEN],
}

impl std::fmt::Debug for IndexKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("IndexKeys(..)")
    }
}

/// PRF image of one word under an index's key triple. This is the only
/// word-derived value a server ever receives.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SearchToken {
    pub t1: [u8; KEY_LEN],
    pub t2: [u8; KEY_LEN],
    pub t3: [u8; KEY_LEN],
}

/// One encrypted (word, document-id) entry, or indistinguishable filler.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct EntryCiphertext(pub [u8; ENTRY_LEN]);

impl std::fmt::Debug for EntryCiphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("EntryCiphertext(..)")
    }
}

/// HMAC-SHA-256 over arbitrary-length key and data.
pub fn hmac_sha256(key: &[u8], data: &[u8]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

/// The PRF F: fixed 32-byte key, arbitrary data.
pub fn prf(key: &[u8; KEY_LEN], data: &[u8]) -> [u8; 32] {
    hmac_sha256(key, data)
}

/// The hash H: SHA-256.
pub fn hash(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// Derives an index's key triple from the master key and the index's public
/// salt: k_i = F(master, 0x6b || i || salt). A fresh salt yields a fresh,
/// unrelated triple, so rebuilt indexes get new keys without any client-side
/// keyring.
pub fn derive_index_keys(master: &MasterKey, salt: &Salt) -> IndexKeys {
    let component = |i: u8| {
        let mut data = [0u8; 2 + 16];
        data[0] = 0x6b;
        data[1] = i;
        data[2..].copy_from_slice(&salt.0);
        prf(&master.0, &data)
    };
    IndexKeys {
        k1: component(1),
        k2: component(2),
        k3: component(3),
    }
}

/// Symmetric key for a word's bucket entries: H(t3). The client computes it
/// from F(k3, w), the server from the token, and both land on the same bytes.
pub fn entry_key(t3: &[u8; 32]) -> [u8; KEY_LEN] {
    hash(t3)
}

/// Builds the token (F(k1,w), F(k2,w), F(k3,w)) the server needs to locate
/// and decrypt the word's entries.
pub fn make_token(keys: &IndexKeys, word: &[u8]) -> Result<SearchToken, CryptoError> {
    if word.is_empty() {
        return Err(CryptoError::EmptyWord);
    }
    Ok(SearchToken {
        t1: prf(&keys.k1, word),
        t2: prf(&keys.k2, word),
        t3: prf(&keys.k3, word),
    })
}

fn ctr_apply(key: &[u8; KEY_LEN], nonce: &[u8; ENTRY_NONCE_LEN], buf: &mut [u8]) {
    let mut cipher = Aes256Ctr::new(key.into(), nonce.into());
    cipher.apply_keystream(buf);
}

pub(crate) fn stream_encrypt(
    key: &[u8; KEY_LEN],
    rng: &mut dyn RngCore,
    plaintext: &[u8],
) -> ([u8; ENTRY_NONCE_LEN], Vec<u8>) {
    let mut nonce = [0u8; ENTRY_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut body = plaintext.to_vec();
    ctr_apply(key, &nonce, &mut body);
    (nonce, body)
}

pub(crate) fn stream_decrypt(
    key: &[u8; KEY_LEN],
    nonce: &[u8; ENTRY_NONCE_LEN],
    ciphertext: &[u8],
) -> Vec<u8> {
    let mut body = ciphertext.to_vec();
    ctr_apply(key, nonce, &mut body);
    body
}

/// Encrypts one (word, id) entry under the word's entry key. The plaintext
/// is the big-endian id followed by the zero validity pad; the nonce is
/// fresh, so repeated encryptions of the same tuple differ.
pub fn encrypt_entry(
    word_key: &[u8; KEY_LEN],
    id: DocId,
    rng: &mut dyn RngCore,
) -> EntryCiphertext {
    let mut out = [0u8; ENTRY_LEN];
    rng.fill_bytes(&mut out[..ENTRY_NONCE_LEN]);
    let (nonce, body) = out.split_at_mut(ENTRY_NONCE_LEN);
    body[..8].copy_from_slice(&id.0.to_be_bytes());
    // body[8..] is already the zero pad
    let nonce: &[u8; ENTRY_NONCE_LEN] = (&*nonce).try_into().unwrap();
    ctr_apply(word_key, nonce, body);
    EntryCiphertext(out)
}

/// Decrypts one 40-byte slot. `Some(id)` iff the validity pad comes back as
/// all zeros; anything else (wrong key, filler) is `None`.
pub fn decrypt_entry(word_key: &[u8; KEY_LEN], ct: &EntryCiphertext) -> Option<DocId> {
    let nonce: &[u8; ENTRY_NONCE_LEN] = ct.0[..ENTRY_NONCE_LEN].try_into().unwrap();
    let mut body = [0u8; ENTRY_BODY_LEN];
    body.copy_from_slice(&ct.0[ENTRY_NONCE_LEN..]);
    ctr_apply(word_key, nonce, &mut body);
    if body[8..] != [0u8; VALIDITY_PAD_LEN] {
        return None;
    }
    Some(DocId(u64::from_be_bytes(body[..8].try_into().unwrap())))
}

/// Uniform random bytes shaped like an entry; pads unused bucket slots.
pub fn random_filler(rng: &mut dyn RngCore) -> EntryCiphertext {
    let mut out = [0u8; ENTRY_LEN];
    rng.fill_bytes(&mut out);
    EntryCiphertext(out)
}
