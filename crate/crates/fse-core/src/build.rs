//! Client-side construction of one encrypted index from a cleartext posting
//! map.
//!
//! Words are placed in a random order. Each word's posting list is assigned
//! the smallest stored level with room for it, split into at most L balanced
//! chunks, and each chunk dropped into a uniformly chosen bucket with enough
//! free slots (appending a fresh bucket when none qualifies). One hash-table
//! record per chunk points the word's token at its buckets. Afterwards every
//! partial bucket is topped up with random filler, bucket slots are permuted,
//! and the hash table is padded with random records to a power-of-two size at
//! most half full, so the finished sections carry no visible structure.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{self, EntryCiphertext, IndexKeys};
use crate::delta::{self, MetaRecord};
use crate::layout::{self, HtRecord, IndexParams, Location};
use crate::plain::PlainIndex;
use crate::wire::{LevelSpec, Manifest, FORMAT_VERSION};
use crate::{DocId, IndexId, Salt};

/// Spare bucket headroom allocated up front, in percent of exact demand.
const BUCKET_SLACK_PERCENT: u64 = 25;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("cannot build an index from zero tuples")]
    EmptyIndex,
    #[error("duplicate document id {0}")]
    DuplicateDocId(DocId),
    #[error("word {0:?} cannot be stored in an index")]
    InvalidWord(String),
    #[error("word {0:?} exceeds a word-list block")]
    WordOverflowsBlock(String),
}

/// All sections of one built index, ready for upload.
#[derive(Clone, Debug)]
pub struct EncryptedIndex {
    pub manifest: Manifest,
    /// Sorted by key; padded with random records to `manifest.ht_records`.
    pub hash_table: Vec<HtRecord>,
    /// Descending level order, matching `manifest.levels`.
    pub levels: Vec<LevelBuckets>,
    /// Sorted by key.
    pub meta: Vec<MetaRecord>,
}

#[derive(Clone, Debug)]
pub struct LevelBuckets {
    pub level: u32,
    /// Every bucket holds exactly `bucket_capacity(level)` entries.
    pub buckets: Vec<Vec<EntryCiphertext>>,
}

impl EncryptedIndex {
    pub fn ht_section(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.hash_table.len() * layout::HT_RECORD_LEN);
        for record in &self.hash_table {
            out.extend_from_slice(&record.encode());
        }
        out
    }

    pub fn levels_section(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for level in &self.levels {
            for bucket in &level.buckets {
                for entry in bucket {
                    out.extend_from_slice(&entry.0);
                }
            }
        }
        out
    }

    pub fn meta_section(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(self.meta.len() * (delta::META_KEY_LEN + delta::META_BLOCK_LEN));
        for record in &self.meta {
            out.extend_from_slice(&record.key);
            out.extend_from_slice(&record.block);
        }
        out
    }

    /// Checksum the server verifies at COMMIT: SHA-256 over the hash-table,
    /// level, and meta sections in that order.
    pub fn sections_checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.ht_section());
        hasher.update(self.levels_section());
        hasher.update(self.meta_section());
        hasher.finalize().into()
    }
}

struct LevelState {
    level: u32,
    capacity: usize,
    /// Entries placed so far, per bucket.
    fill: Vec<usize>,
    buckets: Vec<Vec<EntryCiphertext>>,
}

impl LevelState {
    fn new(level: u32, demand: u64) -> Self {
        let capacity = layout::bucket_capacity(level) as usize;
        let want = demand + demand * BUCKET_SLACK_PERCENT / 100;
        let count = want.div_ceil(capacity as u64) as usize;
        LevelState {
            level,
            capacity,
            fill: vec![0; count],
            buckets: vec![Vec::new(); count],
        }
    }

    /// Uniform pick among buckets with at least `need` free slots; appends a
    /// fresh bucket when none qualifies.
    fn pick_bucket(&mut self, need: usize, rng: &mut dyn RngCore) -> u32 {
        let open: Vec<u32> = self
            .fill
            .iter()
            .enumerate()
            .filter(|(_, &used)| self.capacity - used >= need)
            .map(|(x, _)| x as u32)
            .collect();
        if let Some(&x) = open.as_slice().choose(rng) {
            return x;
        }
        self.fill.push(0);
        self.buckets.push(Vec::new());
        (self.buckets.len() - 1) as u32
    }

    fn store(&mut self, bucket: u32, entries: impl Iterator<Item = EntryCiphertext>) {
        let before = self.buckets[bucket as usize].len();
        self.buckets[bucket as usize].extend(entries);
        let after = self.buckets[bucket as usize].len();
        self.fill[bucket as usize] = after;
        debug_assert!(after <= self.capacity && after > before);
    }

    fn finalize(mut self, rng: &mut dyn RngCore) -> LevelBuckets {
        for bucket in &mut self.buckets {
            while bucket.len() < self.capacity {
                bucket.push(crypto::random_filler(rng));
            }
            bucket.shuffle(rng);
        }
        LevelBuckets {
            level: self.level,
            buckets: self.buckets,
        }
    }
}

/// Builds the complete encrypted index for `plain` under `keys`. All
/// randomness (placement, nonces, filler, padding, the index id) is drawn
/// from `rng`, so a seeded generator reproduces the index bit for bit.
pub fn setup(
    keys: &IndexKeys,
    salt: Salt,
    plain: &PlainIndex,
    params: IndexParams,
    rng: &mut dyn RngCore,
) -> Result<EncryptedIndex, BuildError> {
    let tuple_count = plain.tuple_count();
    if tuple_count == 0 {
        return Err(BuildError::EmptyIndex);
    }
    let locality = params.locality;
    let level_set = layout::level_set(tuple_count, params.stored_levels, locality);

    let mut demand: BTreeMap<u32, u64> = level_set.iter().map(|&l| (l, 0)).collect();
    for ids in plain.postings().values() {
        let level = layout::assign_level(&level_set, locality, ids.len() as u64);
        *demand.get_mut(&level).unwrap() += ids.len() as u64;
    }
    let mut levels: BTreeMap<u32, LevelState> = demand
        .into_iter()
        .map(|(level, demand)| (level, LevelState::new(level, demand)))
        .collect();

    let mut words: Vec<&str> = plain.words().collect();
    words.shuffle(rng);

    let mut hash_table = Vec::new();
    for word in words {
        let ids: Vec<DocId> = plain.ids(word).unwrap().iter().copied().collect();
        let token = crypto::make_token(keys, word.as_bytes())
            .map_err(|_| BuildError::InvalidWord(word.into()))?;
        let word_key = crypto::entry_key(&token.t3);
        let level = layout::assign_level(&level_set, locality, ids.len() as u64);
        let state = levels.get_mut(&level).unwrap();
        for (chunk_index, chunk) in layout::split_chunks(&ids, locality, level)
            .iter()
            .enumerate()
        {
            let chunk_no = chunk_index as u32 + 1;
            let bucket = state.pick_bucket(chunk.len(), rng);
            state.store(
                bucket,
                chunk
                    .iter()
                    .map(|&id| crypto::encrypt_entry(&word_key, id, rng)),
            );
            let loc = Location { level, bucket };
            hash_table.push(HtRecord {
                key: layout::ht_key(&token.t1, chunk_no),
                value: layout::ht_value(&token.t2, chunk_no, loc),
            });
        }
    }

    let ht_records = (hash_table.len() as u64 * 2).next_power_of_two();
    while (hash_table.len() as u64) < ht_records {
        let mut record = [0u8; layout::HT_RECORD_LEN];
        rng.fill_bytes(&mut record);
        hash_table.push(HtRecord::decode(&record));
    }
    hash_table.sort_unstable_by_key(|record| record.key);

    let mut meta = delta::serialize_delta_blocks(keys, plain.words(), rng)?;
    meta.sort_unstable_by_key(|record| record.key);

    // Descending level order everywhere: manifest, section bytes, files.
    let finished: Vec<LevelBuckets> = levels
        .into_values()
        .rev()
        .map(|state| state.finalize(rng))
        .collect();

    let manifest = Manifest {
        version: FORMAT_VERSION,
        index_id: IndexId::random(rng),
        order: layout::order_of(tuple_count),
        tuple_count,
        locality,
        stored_levels: params.stored_levels,
        salt,
        ht_records,
        meta_blocks: meta.len() as u32,
        levels: finished
            .iter()
            .map(|l| LevelSpec {
                level: l.level,
                buckets: l.buckets.len() as u32,
            })
            .collect(),
    };

    Ok(EncryptedIndex {
        manifest,
        hash_table,
        levels: finished,
        meta,
    })
}
