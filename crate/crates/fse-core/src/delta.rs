//! Encrypted word-list blocks.
//!
//! The index itself is only usable by someone who already knows the words
//! they are searching for, so absorbing an old index into a new one needs a
//! side channel: the sorted word list, encrypted in fixed 4096-byte blocks
//! that only the owning client can locate or decrypt. Blocks are keyed and
//! encrypted under labels starting with a 0x00 byte, which no real word can
//! begin with, so they can never collide with search-token material.

use rand::RngCore;
use thiserror::Error;

use crate::build::BuildError;
use crate::crypto::{self, IndexKeys};
use crate::plain::valid_word;

/// Width of a meta-store key.
pub const META_KEY_LEN: usize = 16;
/// Stored width of one encrypted block.
pub const META_BLOCK_LEN: usize = 4096;
/// Bytes of framed words a block's plaintext may carry.
pub const DELTA_PLAIN_LEN: usize = 4064;
/// A block closes after this many words even if bytes remain.
pub const WORDS_PER_BLOCK: usize = 100;

const LABEL_PREFIX: &[u8; 6] = b"\x00DELTA";

pub type MetaKey = [u8; META_KEY_LEN];

/// One meta-store record: lookup key plus opaque block.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MetaRecord {
    pub key: MetaKey,
    pub block: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed word-list block {block}: {reason}")]
pub struct MalformedBlock {
    pub block: u64,
    pub reason: &'static str,
}

#[derive(Debug, Error)]
pub enum DeltaError<E> {
    #[error("fetching word-list block {block}: {source}")]
    Fetch { block: u64, source: E },
    #[error(transparent)]
    Malformed(#[from] MalformedBlock),
}

fn block_label(block_no: u64) -> [u8; 14] {
    let mut label = [0u8; 14];
    label[..6].copy_from_slice(LABEL_PREFIX);
    label[6..].copy_from_slice(&block_no.to_be_bytes());
    label
}

fn block_secrets(keys: &IndexKeys, block_no: u64) -> (MetaKey, [u8; 32]) {
    let token = crypto::make_token(keys, &block_label(block_no)).expect("label is nonempty");
    let key = crypto::hash(&token.t1)[..META_KEY_LEN].try_into().unwrap();
    let cipher_key = crypto::entry_key(&token.t3);
    (key, cipher_key)
}

/// Meta-store key under which block `block_no` is filed.
pub fn delta_block_key(keys: &IndexKeys, block_no: u64) -> MetaKey {
    block_secrets(keys, block_no).0
}

/// Packs the word list into encrypted fixed-width blocks: words sorted,
/// framed as (16-bit length || bytes), at most [`WORDS_PER_BLOCK`] words or
/// [`DELTA_PLAIN_LEN`] payload bytes per block, whichever fills first.
pub fn serialize_delta_blocks<'a, I>(
    keys: &IndexKeys,
    words: I,
    rng: &mut dyn RngCore,
) -> Result<Vec<MetaRecord>, BuildError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut sorted: Vec<&str> = words.into_iter().collect();
    sorted.sort_unstable();
    sorted.dedup();

    let mut blocks: Vec<Vec<u8>> = Vec::new();
    let mut plain: Vec<u8> = Vec::with_capacity(DELTA_PLAIN_LEN);
    let mut words_in_block = 0usize;
    for word in sorted {
        if !valid_word(word) {
            return Err(BuildError::InvalidWord(word.into()));
        }
        let framed = 2 + word.len();
        if framed > DELTA_PLAIN_LEN {
            return Err(BuildError::WordOverflowsBlock(word.into()));
        }
        if words_in_block == WORDS_PER_BLOCK || plain.len() + framed > DELTA_PLAIN_LEN {
            blocks.push(std::mem::take(&mut plain));
            words_in_block = 0;
        }
        plain.extend_from_slice(&(word.len() as u16).to_be_bytes());
        plain.extend_from_slice(word.as_bytes());
        words_in_block += 1;
    }
    if !plain.is_empty() {
        blocks.push(plain);
    }

    let mut records = Vec::with_capacity(blocks.len());
    for (block_no, mut plain) in blocks.into_iter().enumerate() {
        plain.resize(DELTA_PLAIN_LEN, 0);
        let (key, cipher_key) = block_secrets(keys, block_no as u64);
        let (nonce, body) = crypto::stream_encrypt(&cipher_key, rng, &plain);
        let mut block = Vec::with_capacity(META_BLOCK_LEN);
        block.extend_from_slice(&nonce);
        block.extend_from_slice(&body);
        block.resize(META_BLOCK_LEN, 0);
        rng.fill_bytes(&mut block[16 + DELTA_PLAIN_LEN..]);
        records.push(MetaRecord { key, block });
    }
    Ok(records)
}

/// Decrypts and unframes one block fetched from the meta store.
pub fn decode_delta_block(
    keys: &IndexKeys,
    block_no: u64,
    block: &[u8],
) -> Result<Vec<String>, MalformedBlock> {
    let bad = |reason| MalformedBlock {
        block: block_no,
        reason,
    };
    if block.len() != META_BLOCK_LEN {
        return Err(bad("wrong block length"));
    }
    let (_, cipher_key) = block_secrets(keys, block_no);
    let nonce: &[u8; 16] = block[..16].try_into().unwrap();
    let plain = crypto::stream_decrypt(&cipher_key, nonce, &block[16..16 + DELTA_PLAIN_LEN]);

    let mut words = Vec::new();
    let mut pos = 0;
    while pos + 2 <= plain.len() {
        let len = u16::from_be_bytes(plain[pos..pos + 2].try_into().unwrap()) as usize;
        if len == 0 {
            break;
        }
        pos += 2;
        if pos + len > plain.len() {
            return Err(bad("word frame overruns block"));
        }
        let word = std::str::from_utf8(&plain[pos..pos + len])
            .map_err(|_| bad("word is not UTF-8"))?
            .to_owned();
        if !valid_word(&word) {
            return Err(bad("word violates the index word rules"));
        }
        words.push(word);
        pos += len;
    }
    if words.is_empty() {
        return Err(bad("block holds no words"));
    }
    Ok(words)
}

/// Recovers the full word list by probing blocks 0, 1, 2, ... until one is
/// absent. `fetch` resolves a meta key to its block, however the caller
/// reaches the store.
pub fn recover_delta<E>(
    keys: &IndexKeys,
    mut fetch: impl FnMut(&MetaKey) -> Result<Option<Vec<u8>>, E>,
) -> Result<Vec<String>, DeltaError<E>> {
    let mut words = Vec::new();
    for block_no in 0.. {
        let key = delta_block_key(keys, block_no);
        match fetch(&key).map_err(|source| DeltaError::Fetch {
            block: block_no,
            source,
        })? {
            Some(block) => {
                words.extend(decode_delta_block(keys, block_no, &block).map_err(DeltaError::from)?)
            }
            None => break,
        }
    }
    Ok(words)
}
