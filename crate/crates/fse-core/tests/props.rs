//! Property tests for the layout math, tokenizer, and frame codec.

use std::collections::BTreeSet;

use proptest::prelude::*;

use fse_core::layout::{
    assign_level, decode_location, encode_location, ht_open, ht_value, level_set, order_of,
    split_chunks, Location,
};
use fse_core::plain::{tokenize, valid_word};
use fse_core::wire::{read_frame, write_frame, IndexQuery, Request};
use fse_core::{DocId, IndexId};

proptest! {
    #[test]
    fn order_brackets_the_tuple_count(n in 2u64..1_000_000_000) {
        let o = order_of(n);
        prop_assert!(n <= 1u64 << o);
        prop_assert!(n > 1u64 << (o - 1));
    }

    #[test]
    fn order_is_monotone(a in 1u64..1_000_000, b in 1u64..1_000_000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(order_of(lo) <= order_of(hi));
    }

    #[test]
    fn level_set_is_descending_and_topped_by_the_order(
        n in 1u64..10_000_000,
        s in 1u32..8,
        locality in 1u32..8,
    ) {
        let levels = level_set(n, s, locality);
        prop_assert_eq!(levels[0], order_of(n));
        prop_assert!(levels.windows(2).all(|w| w[0] > w[1]));
        prop_assert!(levels.len() <= s as usize + 1);
        if locality > 1 {
            prop_assert_eq!(*levels.last().unwrap(), 0);
        }
    }

    #[test]
    fn assigned_level_is_minimal(
        n in 1u64..100_000,
        s in 1u32..6,
        locality in 1u32..5,
        m_seed in 0u64..u64::MAX,
    ) {
        let levels = level_set(n, s, locality);
        let m = m_seed % n + 1;
        let level = assign_level(&levels, locality, m);
        prop_assert!(m <= locality as u64 * (1u64 << level));
        for &smaller in levels.iter().filter(|&&l| l < level) {
            prop_assert!(m > locality as u64 * (1u64 << smaller));
        }
    }

    #[test]
    fn chunks_partition_the_posting_list(
        len in 1usize..200,
        locality in 1u32..6,
    ) {
        let ids: Vec<DocId> = (0..len as u64).map(DocId).collect();
        let level = (0..)
            .find(|&l| len as u64 <= locality as u64 * (1u64 << l))
            .unwrap();
        let chunks = split_chunks(&ids, locality, level);
        prop_assert!(chunks.len() as u32 <= locality);
        prop_assert!(chunks.iter().all(|c| c.len() as u64 <= 1 << level));
        let sizes: Vec<usize> = chunks.iter().map(|c| c.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(chunks.concat(), ids);
    }

    #[test]
    fn location_codec_is_a_bijection(level in any::<u32>(), bucket in any::<u32>()) {
        let loc = Location { level, bucket };
        prop_assert_eq!(decode_location(&encode_location(loc)), loc);
    }

    #[test]
    fn ht_value_is_an_involution(
        t2 in any::<[u8; 32]>(),
        chunk_no in 1u32..64,
        level in any::<u32>(),
        bucket in any::<u32>(),
    ) {
        let loc = Location { level, bucket };
        prop_assert_eq!(ht_open(&t2, chunk_no, &ht_value(&t2, chunk_no, loc)), loc);
    }

    #[test]
    fn tokens_are_always_storable_words(text in proptest::collection::vec(any::<u8>(), 0..500)) {
        let words = tokenize(&text, &BTreeSet::new());
        for w in &words {
            prop_assert!(valid_word(w));
            prop_assert!(w.len() >= 2 && w.len() <= 64);
            prop_assert!(w.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()));
        }
        // tokenizing a document twice is stable
        prop_assert_eq!(tokenize(&text, &BTreeSet::new()), words);
    }

    #[test]
    fn frames_survive_the_stream(
        data in proptest::collection::vec(any::<u8>(), 0..2_000),
        offset in any::<u64>(),
        id in any::<[u8; 16]>(),
    ) {
        let req = Request::UploadPart {
            index_id: IndexId(id),
            section: fse_core::wire::Section::Levels,
            offset,
            data,
        };
        let mut stream = Vec::new();
        write_frame(&mut stream, &req.encode_body()).unwrap();
        let body = read_frame(&mut stream.as_slice()).unwrap().unwrap();
        let back = Request::decode_body(&body).unwrap();
        prop_assert_eq!(format!("{req:?}"), format!("{back:?}"));
    }

    #[test]
    fn search_queries_round_trip(count in 0usize..6, seed in any::<[u8; 32]>()) {
        let queries: Vec<IndexQuery> = (0..count)
            .map(|i| {
                let mut id = [0u8; 16];
                id.copy_from_slice(&seed[..16]);
                id[0] = i as u8;
                IndexQuery {
                    index_id: IndexId(id),
                    token: fse_core::crypto::SearchToken { t1: seed, t2: seed, t3: seed },
                }
            })
            .collect();
        let req = Request::Search { queries };
        let body = req.encode_body();
        let back = Request::decode_body(&body).unwrap();
        prop_assert_eq!(format!("{req:?}"), format!("{back:?}"));
    }
}
