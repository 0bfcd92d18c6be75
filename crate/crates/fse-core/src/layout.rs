//! Storage-layout arithmetic for one index: orders, level sets, level
//! assignment, chunk splitting, and the hash-table entry encoding.
//!
//! Everything here is pure integer math shared verbatim by the builder and
//! the server's read path, so the two sides agree byte for byte.

use crate::crypto::{self, SearchToken};
use crate::DocId;

/// Width of a hash-table key: truncated H(t1 || c).
pub const HT_KEY_LEN: usize = 16;
/// Width of a hash-table value: encoded location XOR truncated H(t2 || c).
pub const HT_VALUE_LEN: usize = 8;
/// One serialized hash-table record.
pub const HT_RECORD_LEN: usize = HT_KEY_LEN + HT_VALUE_LEN;

/// Public build parameters; stored in the manifest.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct IndexParams {
    /// Maximum number of non-contiguous chunks one word's postings may be
    /// split into. Must be at least 1.
    pub locality: u32,
    /// Number of stored levels. Must be at least 1.
    pub stored_levels: u32,
}

impl IndexParams {
    pub fn new(locality: u32, stored_levels: u32) -> Self {
        assert!(locality >= 1, "locality must be at least 1");
        assert!(stored_levels >= 1, "stored level count must be at least 1");
        IndexParams {
            locality,
            stored_levels,
        }
    }
}

/// A bucket address: level and bucket number within that level.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Location {
    pub level: u32,
    pub bucket: u32,
}

/// One hash-table record. Real records carry an encoded location openable
/// with the matching token; filler records are uniform random bytes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct HtRecord {
    pub key: [u8; HT_KEY_LEN],
    pub value: [u8; HT_VALUE_LEN],
}

impl HtRecord {
    pub fn encode(&self) -> [u8; HT_RECORD_LEN] {
        let mut out = [0u8; HT_RECORD_LEN];
        out[..HT_KEY_LEN].copy_from_slice(&self.key);
        out[HT_KEY_LEN..].copy_from_slice(&self.value);
        out
    }

    pub fn decode(bytes: &[u8; HT_RECORD_LEN]) -> Self {
        HtRecord {
            key: bytes[..HT_KEY_LEN].try_into().unwrap(),
            value: bytes[HT_KEY_LEN..].try_into().unwrap(),
        }
    }
}

/// Order of an index holding `n` tuples: ceil(log2 n), with order 0 for a
/// single tuple. Panics on `n == 0`; an empty index is never built.
pub fn order_of(n: u64) -> u32 {
    assert!(n >= 1, "an index holds at least one tuple");
    if n == 1 {
        0
    } else {
        (n - 1).ilog2() + 1
    }
}

/// Number of entries a bucket at `level` holds.
pub fn bucket_capacity(level: u32) -> u64 {
    assert!(level < 64);
    1u64 << level
}

/// The descending set of levels materialized for an index of `n` tuples:
/// {l, l-p, ..., l-(s-1)p} clamped at zero with p = ceil(l/s), plus level 0
/// whenever locality allows multi-chunk words.
pub fn level_set(n: u64, stored_levels: u32, locality: u32) -> Vec<u32> {
    assert!(stored_levels >= 1 && locality >= 1);
    let top = order_of(n);
    let step = if top == 0 {
        1
    } else {
        top.div_ceil(stored_levels)
    };
    let mut levels = Vec::with_capacity(stored_levels as usize + 1);
    for k in 0..stored_levels {
        levels.push(top.saturating_sub(k * step));
    }
    if locality > 1 && !levels.contains(&0) {
        levels.push(0);
    }
    levels.dedup();
    levels
}

/// Smallest stored level whose buckets can hold `posting_len` ids split into
/// at most `locality` chunks. `levels` must be descending.
pub fn assign_level(levels: &[u32], locality: u32, posting_len: u64) -> u32 {
    assert!(posting_len >= 1);
    for &level in levels.iter().rev() {
        if posting_len as u128 <= locality as u128 * (1u128 << level) {
            return level;
        }
    }
    panic!("posting list of {posting_len} exceeds the top level's capacity");
}

/// Splits a posting list into min(locality, len) balanced chunks whose
/// concatenation equals the input and each of which fits one bucket at
/// `level`.
pub fn split_chunks(ids: &[DocId], locality: u32, level: u32) -> Vec<&[DocId]> {
    assert!(!ids.is_empty());
    assert!(
        ids.len() as u128 <= locality as u128 * (1u128 << level),
        "posting list does not fit {locality} buckets at level {level}"
    );
    let count = (locality as usize).min(ids.len());
    let base = ids.len() / count;
    let extra = ids.len() % count;
    let mut chunks = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < extra);
        chunks.push(&ids[start..start + len]);
        start += len;
    }
    debug_assert_eq!(start, ids.len());
    chunks
}

/// Big-endian (level, bucket) pair packed into eight bytes.
pub fn encode_location(loc: Location) -> [u8; HT_VALUE_LEN] {
    let mut out = [0u8; HT_VALUE_LEN];
    out[..4].copy_from_slice(&loc.level.to_be_bytes());
    out[4..].copy_from_slice(&loc.bucket.to_be_bytes());
    out
}

pub fn decode_location(bytes: &[u8; HT_VALUE_LEN]) -> Location {
    Location {
        level: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
        bucket: u32::from_be_bytes(bytes[4..].try_into().unwrap()),
    }
}

fn chunk_label(t: &[u8; 32], chunk_no: u32) -> [u8; 36] {
    let mut data = [0u8; 36];
    data[..32].copy_from_slice(t);
    data[32..].copy_from_slice(&chunk_no.to_be_bytes());
    data
}

/// Hash-table key for chunk `chunk_no` (1-based) of the word behind `t1`:
/// the first 16 bytes of H(t1 || c).
pub fn ht_key(t1: &[u8; 32], chunk_no: u32) -> [u8; HT_KEY_LEN] {
    let digest = crypto::hash(&chunk_label(t1, chunk_no));
    digest[..HT_KEY_LEN].try_into().unwrap()
}

/// Hash-table value hiding `loc`: encoded location XOR the first 8 bytes of
/// H(t2 || c).
pub fn ht_value(t2: &[u8; 32], chunk_no: u32, loc: Location) -> [u8; HT_VALUE_LEN] {
    let mut out = encode_location(loc);
    let digest = crypto::hash(&chunk_label(t2, chunk_no));
    for (o, d) in out.iter_mut().zip(&digest) {
        *o ^= d;
    }
    out
}

/// Recovers the location from a hash-table value; XOR makes this its own
/// inverse.
pub fn ht_open(t2: &[u8; 32], chunk_no: u32, value: &[u8; HT_VALUE_LEN]) -> Location {
    let mut raw = *value;
    let digest = crypto::hash(&chunk_label(t2, chunk_no));
    for (o, d) in raw.iter_mut().zip(&digest) {
        *o ^= d;
    }
    decode_location(&raw)
}

/// Hash-table records a token's word contributes, one per stored chunk.
pub fn token_ht_keys(
    token: &SearchToken,
    locality: u32,
) -> impl Iterator<Item = [u8; HT_KEY_LEN]> + '_ {
    (1..=locality).map(move |c| ht_key(&token.t1, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn order_of_known_values() {
        assert_eq!(order_of(17), 5);
        assert_eq!(order_of(1), 0);
        assert_eq!(order_of(2), 1);
    }

    #[test]
    fn order_of_powers_of_two() {
        // float-free oracle: o is the order of n iff 2^(o-1) < n <= 2^o
        for k in 1..=24u32 {
            let n = 1u64 << k;
            let o = order_of(n);
            assert_eq!(o, k);
            assert!((1u64 << (o - 1)) < n && n <= (1u64 << o));
            assert_eq!(order_of(n + 1), k + 1);
            assert_eq!(
                order_of(n - 1),
                if n - 1 == 1 << (k - 1) { k - 1 } else { k }
            );
        }
    }

    #[test]
    fn order_is_monotone() {
        let mut prev = order_of(1);
        for n in 2..5_000u64 {
            let o = order_of(n);
            assert!(o >= prev);
            prev = o;
        }
    }

    #[test]
    #[should_panic(expected = "at least one tuple")]
    fn order_of_zero_is_rejected() {
        order_of(0);
    }

    #[test]
    fn level_set_known_values() {
        assert_eq!(level_set(17, 3, 1), vec![5, 3, 1]);
        assert_eq!(level_set(17, 3, 2), vec![5, 3, 1, 0]);
        assert_eq!(level_set(1, 4, 1), vec![0]);
    }

    #[test]
    fn level_set_shape_invariants() {
        let mut r = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..2_000 {
            let n = r.random_range(1..1_000_000u64);
            let s = r.random_range(1..=6u32);
            let locality = [1u32, 2, 4, 8][r.random_range(0..4)];
            let levels = level_set(n, s, locality);
            assert_eq!(levels[0], order_of(n), "top level is the order");
            assert!(
                levels.windows(2).all(|w| w[0] > w[1]),
                "strictly descending"
            );
            assert!(levels.len() <= s as usize + 1);
            if locality > 1 {
                assert_eq!(*levels.last().unwrap(), 0);
            }
        }
    }

    #[test]
    fn assign_level_known_values() {
        let levels = [5u32, 3, 1, 0];
        assert_eq!(assign_level(&levels, 2, 5), 3); // 2*2^1 = 4 < 5 <= 2*2^3 = 16
        assert_eq!(assign_level(&levels, 2, 1), 0);
    }

    #[test]
    fn assign_level_matches_exhaustive_scan() {
        let mut r = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..2_000 {
            let n = r.random_range(1..100_000u64);
            let s = r.random_range(1..=5u32);
            let locality = [1u32, 2, 4][r.random_range(0..3)];
            let levels = level_set(n, s, locality);
            let m = r.random_range(1..=n);
            let picked = assign_level(&levels, locality, m);
            // oracle: scan every level, keep those with capacity, take the smallest
            let expect = levels
                .iter()
                .copied()
                .filter(|&l| m as u128 <= locality as u128 * (1u128 << l))
                .min()
                .unwrap();
            assert_eq!(picked, expect);
        }
    }

    #[test]
    fn split_chunks_known_values() {
        let ids: Vec<DocId> = (0..16).map(DocId).collect();
        let sizes = |chunks: Vec<&[DocId]>| chunks.iter().map(|c| c.len()).collect::<Vec<_>>();
        assert_eq!(sizes(split_chunks(&ids[..5], 2, 3)), vec![3, 2]);
        assert_eq!(sizes(split_chunks(&ids[..1], 4, 0)), vec![1]);
        assert_eq!(sizes(split_chunks(&ids, 2, 3)), vec![8, 8]);
    }

    #[test]
    fn split_chunks_partitions_in_order() {
        let mut r = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..2_000 {
            let locality = r.random_range(1..=8u32);
            let level = r.random_range(0..=7u32);
            let max = locality as usize * (1usize << level);
            let len = r.random_range(1..=max);
            let ids: Vec<DocId> = (0..len as u64).map(DocId).collect();
            let chunks = split_chunks(&ids, locality, level);
            assert_eq!(chunks.len(), (locality as usize).min(len));
            assert!(chunks.iter().all(|c| c.len() <= 1 << level));
            let lens: Vec<usize> = chunks.iter().map(|c| c.len()).collect();
            assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
            let rebuilt: Vec<DocId> = chunks.concat();
            assert_eq!(rebuilt, ids);
        }
    }

    #[test]
    #[should_panic(expected = "does not fit")]
    fn split_chunks_rejects_oversized_lists() {
        let ids: Vec<DocId> = (0..9).map(DocId).collect();
        split_chunks(&ids, 2, 2); // 9 > 2 * 2^2
    }

    #[test]
    fn location_encoding_known_values() {
        assert_eq!(
            encode_location(Location {
                level: 1,
                bucket: 0
            }),
            [0, 0, 0, 1, 0, 0, 0, 0]
        );
        assert_eq!(
            encode_location(Location {
                level: 0,
                bucket: 0
            }),
            [0u8; 8]
        );
    }

    #[test]
    fn location_encoding_round_trips() {
        let mut r = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let loc = Location {
                level: r.random(),
                bucket: r.random(),
            };
            assert_eq!(decode_location(&encode_location(loc)), loc);
        }
    }

    #[test]
    fn ht_value_opens_to_original_location() {
        let mut r = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..1_000 {
            let mut t2 = [0u8; 32];
            r.fill_bytes(&mut t2);
            let c = r.random_range(1..=16u32);
            let loc = Location {
                level: r.random_range(0..32),
                bucket: r.random(),
            };
            assert_eq!(ht_open(&t2, c, &ht_value(&t2, c, loc)), loc);
        }
    }

    #[test]
    fn ht_key_depends_on_chunk_counter() {
        let t1 = [0x42u8; 32];
        assert_ne!(ht_key(&t1, 1), ht_key(&t1, 2));
    }
}
