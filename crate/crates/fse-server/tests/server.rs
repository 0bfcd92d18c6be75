mod common;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tempfile::TempDir;

use common::{build_fixture, fixture_plain, TestClient};
use fse_core::build::setup;
use fse_core::crypto::{derive_index_keys, make_token, MasterKey};
use fse_core::delta::{delta_block_key, recover_delta};
use fse_core::layout::{ht_key, ht_value, IndexParams, Location, HT_RECORD_LEN};
use fse_core::plain::PlainIndex;
use fse_core::wire::{ErrorCode, IndexQuery, Request, Response, Section};
use fse_core::{DocId, Salt};
use fse_server::Server;

fn start_server(dir: &TempDir) -> fse_server::ServerHandle {
    Server::bind("127.0.0.1:0", dir.path())
        .expect("bind test server")
        .spawn()
}

#[test]
fn upload_then_search_round_trip() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (keys, index) = build_fixture(100, IndexParams::new(1, 1));
    client.upload(&index);

    assert_eq!(client.search_word(&keys, &index, "dolphin"), vec![3, 12]);
    assert_eq!(
        client.search_word(&keys, &index, "arthur"),
        vec![3, 5, 8, 12, 15]
    );
    assert_eq!(client.search_word(&keys, &index, "hooloovoo"), vec![3]);
    assert!(client.search_word(&keys, &index, "marvin").is_empty());

    match client.roundtrip(&Request::ListIndexes) {
        Response::Listing { entries } => {
            assert_eq!(entries.len(), 1);
            assert_eq!(entries[0], index.manifest);
        }
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown();
}

#[test]
fn fixture_association_list_is_exact_with_locality() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (keys, index) = build_fixture(101, IndexParams::new(2, 3));
    client.upload(&index);

    let plain = fixture_plain();
    for (word, ids) in plain.postings() {
        let expect: Vec<u64> = ids.iter().map(|d| d.0).collect();
        assert_eq!(client.search_word(&keys, &index, word), expect, "{word}");
    }
    handle.shutdown();
}

#[test]
fn random_corpora_match_the_plain_oracle() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut rng = ChaCha20Rng::seed_from_u64(102);
    for round in 0..20u64 {
        let mut plain = PlainIndex::new();
        for doc in 0..rng.random_range(1..=15u64) {
            for _ in 0..rng.random_range(1..=10) {
                let word = format!("w{}", rng.random_range(0..40u32));
                plain.insert_posting(&word, DocId(doc + 1)).unwrap();
            }
        }
        let master = MasterKey::generate(&mut rng);
        let salt = Salt::random(&mut rng);
        let keys = derive_index_keys(&master, &salt);
        let locality = [1u32, 2, 4][round as usize % 3];
        let stored = [1u32, 2, 3][round as usize % 3];
        let index = setup(
            &keys,
            salt,
            &plain,
            IndexParams::new(locality, stored),
            &mut rng,
        )
        .unwrap();
        let mut client = TestClient::connect(handle.addr());
        client.upload(&index);
        for (word, ids) in plain.postings() {
            let expect: Vec<u64> = ids.iter().map(|d| d.0).collect();
            assert_eq!(client.search_word(&keys, &index, word), expect, "{word}");
        }
        client.expect_ok(&Request::DeleteIndex {
            index_id: index.manifest.index_id,
        });
    }
    handle.shutdown();
}

#[test]
fn checksum_mismatch_discards_the_upload() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (_, index) = build_fixture(103, IndexParams::new(1, 1));

    client.expect_ok(&Request::BeginUpload {
        manifest: index.manifest.clone(),
    });
    client.expect_ok(&Request::UploadPart {
        index_id: index.manifest.index_id,
        section: Section::HashTable,
        offset: 0,
        data: index.ht_section(),
    });
    client.expect_ok(&Request::UploadPart {
        index_id: index.manifest.index_id,
        section: Section::Levels,
        offset: 0,
        data: index.levels_section(),
    });
    client.expect_ok(&Request::UploadPart {
        index_id: index.manifest.index_id,
        section: Section::Meta,
        offset: 0,
        data: index.meta_section(),
    });
    match client.roundtrip(&Request::CommitUpload {
        index_id: index.manifest.index_id,
        checksum: [0u8; 32],
    }) {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::ChecksumMismatch),
        other => panic!("unexpected {other:?}"),
    }

    // nothing committed, staging wiped
    match client.roundtrip(&Request::ListIndexes) {
        Response::Listing { entries } => assert!(entries.is_empty()),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!dir
        .path()
        .join("staging")
        .join(index.manifest.index_id.to_hex())
        .exists());
    handle.shutdown();
}

#[test]
fn duplicate_order_commit_is_rejected() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (_, first) = build_fixture(104, IndexParams::new(1, 1));
    let (_, second) = build_fixture(105, IndexParams::new(1, 1));
    assert_eq!(first.manifest.order, second.manifest.order);
    client.upload(&first);

    client.expect_ok(&Request::BeginUpload {
        manifest: second.manifest.clone(),
    });
    for (section, bytes) in [
        (Section::HashTable, second.ht_section()),
        (Section::Levels, second.levels_section()),
        (Section::Meta, second.meta_section()),
    ] {
        client.expect_ok(&Request::UploadPart {
            index_id: second.manifest.index_id,
            section,
            offset: 0,
            data: bytes,
        });
    }
    match client.roundtrip(&Request::CommitUpload {
        index_id: second.manifest.index_id,
        checksum: second.sections_checksum(),
    }) {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::DuplicateOrder),
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown();
}

#[test]
fn search_for_a_deleted_index_reports_stale() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (keys, index) = build_fixture(106, IndexParams::new(1, 1));
    client.upload(&index);
    client.expect_ok(&Request::DeleteIndex {
        index_id: index.manifest.index_id,
    });
    let token = make_token(&keys, b"dolphin").unwrap();
    match client.roundtrip(&Request::Search {
        queries: vec![IndexQuery {
            index_id: index.manifest.index_id,
            token,
        }],
    }) {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::Stale),
        other => panic!("unexpected {other:?}"),
    }
    // deleting again: the id no longer exists
    match client.roundtrip(&Request::DeleteIndex {
        index_id: index.manifest.index_id,
    }) {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::NotFound),
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown();
}

#[test]
fn meta_blocks_round_trip_through_the_server() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let mut rng = ChaCha20Rng::seed_from_u64(107);
    let master = MasterKey::generate(&mut rng);
    let salt = Salt::random(&mut rng);
    let keys = derive_index_keys(&master, &salt);
    // enough words for several blocks
    let mut plain = PlainIndex::new();
    for w in 0..250u32 {
        plain
            .insert_posting(&format!("word{w:04}"), DocId(w as u64 + 1))
            .unwrap();
    }
    let index = setup(&keys, salt, &plain, IndexParams::new(1, 2), &mut rng).unwrap();
    client.upload(&index);

    let words = recover_delta(&keys, |key| {
        let resp = client.roundtrip(&Request::GetMeta {
            index_id: index.manifest.index_id,
            key: *key,
        });
        match resp {
            Response::MetaBlock { data } => Ok(Some(data)),
            Response::Error {
                code: ErrorCode::NotFound,
                ..
            } => Ok(None),
            other => Err(std::io::Error::other(format!("unexpected {other:?}"))),
        }
    })
    .unwrap();
    let expect: Vec<String> = plain.words().map(str::to_owned).collect();
    assert_eq!(words, expect);

    // an unknown meta key is NotFound, not an empty block
    let bogus = delta_block_key(&keys, 9_999);
    match client.roundtrip(&Request::GetMeta {
        index_id: index.manifest.index_id,
        key: bogus,
    }) {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::NotFound),
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown();
}

#[test]
fn collection_survives_a_restart() {
    let dir = TempDir::new().unwrap();
    let (keys, index) = build_fixture(108, IndexParams::new(2, 2));
    {
        let handle = start_server(&dir);
        let mut client = TestClient::connect(handle.addr());
        client.upload(&index);
        handle.shutdown();
    }
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    assert_eq!(client.search_word(&keys, &index, "dolphin"), vec![3, 12]);
    handle.shutdown();
}

#[test]
fn unfinished_upload_is_gone_after_restart() {
    let dir = TempDir::new().unwrap();
    let (keys, committed) = build_fixture(109, IndexParams::new(1, 1));
    let (_, staged) = build_fixture(110, IndexParams::new(1, 2));
    {
        let handle = start_server(&dir);
        let mut client = TestClient::connect(handle.addr());
        client.upload(&committed);
        // a second upload that never commits
        client.expect_ok(&Request::BeginUpload {
            manifest: staged.manifest.clone(),
        });
        client.expect_ok(&Request::UploadPart {
            index_id: staged.manifest.index_id,
            section: Section::HashTable,
            offset: 0,
            data: staged.ht_section(),
        });
        handle.shutdown();
    }
    assert!(dir
        .path()
        .join("staging")
        .join(staged.manifest.index_id.to_hex())
        .exists());

    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    match client.roundtrip(&Request::ListIndexes) {
        Response::Listing { entries } => {
            assert_eq!(entries.len(), 1);
            assert_eq!(entries[0].index_id, committed.manifest.index_id);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(
        client.search_word(&keys, &committed, "zaphod"),
        vec![3, 5, 8, 12, 15]
    );
    assert!(
        !dir.path().join("staging").exists()
            || std::fs::read_dir(dir.path().join("staging"))
                .map(|mut d| d.next().is_none())
                .unwrap_or(true)
    );
    handle.shutdown();
}

#[test]
fn out_of_bounds_location_is_corruption_not_empty() {
    let dir = TempDir::new().unwrap();
    let (keys, index) = build_fixture(111, IndexParams::new(1, 1));
    {
        let handle = start_server(&dir);
        let mut client = TestClient::connect(handle.addr());
        client.upload(&index);
        handle.shutdown();
    }

    // rewrite dolphin's hash-table record to point at a level that does not
    // exist, directly in the stored file
    let token = make_token(&keys, b"dolphin").unwrap();
    let key = ht_key(&token.t1, 1);
    let bogus = ht_value(
        &token.t2,
        1,
        Location {
            level: 7_777,
            bucket: 0,
        },
    );
    let ht_path = dir.path().join(index.manifest.index_id.to_hex()).join("ht");
    let mut bytes = std::fs::read(&ht_path).unwrap();
    let mut patched = false;
    for record in bytes.chunks_exact_mut(HT_RECORD_LEN) {
        if record[..16] == key {
            record[16..].copy_from_slice(&bogus);
            patched = true;
        }
    }
    assert!(patched, "fixture record not found");
    std::fs::write(&ht_path, bytes).unwrap();

    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    match client.roundtrip(&Request::Search {
        queries: vec![IndexQuery {
            index_id: index.manifest.index_id,
            token,
        }],
    }) {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::Corrupt),
        other => panic!("expected corruption error, got {other:?}"),
    }
    // an untouched word still searches fine on the same snapshot
    assert_eq!(client.search_word(&keys, &index, "krikkit"), vec![8, 12]);
    handle.shutdown();
}

#[test]
fn a_restarted_upload_commits_cleanly() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (keys, index) = build_fixture(116, IndexParams::new(1, 2));

    // first attempt stalls after one part (a lost connection, say)
    client.expect_ok(&Request::BeginUpload {
        manifest: index.manifest.clone(),
    });
    client.expect_ok(&Request::UploadPart {
        index_id: index.manifest.index_id,
        section: Section::HashTable,
        offset: 0,
        data: index.ht_section(),
    });

    // the retry re-sends BEGIN for the same id and runs to completion
    client.upload(&index);
    assert_eq!(client.search_word(&keys, &index, "dolphin"), vec![3, 12]);
    handle.shutdown();
}

#[test]
fn identical_searches_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut client = TestClient::connect(handle.addr());
    let (keys, index) = build_fixture(113, IndexParams::new(2, 2));
    client.upload(&index);
    let first = client.search_word(&keys, &index, "arthur");
    for _ in 0..20 {
        assert_eq!(client.search_word(&keys, &index, "arthur"), first);
    }
    handle.shutdown();
}

#[test]
fn readers_keep_their_snapshot_while_writers_mutate() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let (keys_a, stable) = build_fixture(114, IndexParams::new(1, 1));
    let mut client = TestClient::connect(handle.addr());
    client.upload(&stable);

    let addr = handle.addr();
    let stop = std::sync::atomic::AtomicBool::new(false);
    std::thread::scope(|scope| {
        // readers hammer the stable index the whole time
        let readers: Vec<_> = (0..3)
            .map(|_| {
                let stable = &stable;
                let keys_a = &keys_a;
                let stop = &stop;
                scope.spawn(move || {
                    let mut client = TestClient::connect(addr);
                    let mut rounds = 0u32;
                    while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                        assert_eq!(client.search_word(keys_a, stable, "dolphin"), vec![3, 12]);
                        rounds += 1;
                    }
                    assert!(rounds > 0);
                })
            })
            .collect();

        // the writer commits and deletes other indexes concurrently
        let mut writer = TestClient::connect(addr);
        let mut rng = ChaCha20Rng::seed_from_u64(115);
        for round in 0..10 {
            let mut plain = PlainIndex::new();
            for w in 0..40u32 {
                plain
                    .insert_posting(&format!("spin{w}"), DocId(round * 100 + w as u64 + 1))
                    .unwrap();
            }
            let master = MasterKey::generate(&mut rng);
            let salt = Salt::random(&mut rng);
            let keys = derive_index_keys(&master, &salt);
            let index = setup(&keys, salt, &plain, IndexParams::new(1, 1), &mut rng).unwrap();
            writer.upload(&index);
            writer.expect_ok(&Request::DeleteIndex {
                index_id: index.manifest.index_id,
            });
        }
        stop.store(true, std::sync::atomic::Ordering::Relaxed);
        for reader in readers {
            reader.join().unwrap();
        }
    });
    handle.shutdown();
}

#[test]
fn oversize_frame_is_answered_then_the_connection_closes() {
    use std::io::{Read, Write};
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut stream = std::net::TcpStream::connect(handle.addr()).unwrap();
    stream.write_all(&[0xff, 0xff, 0xff, 0xff]).unwrap();
    let mut buf = Vec::new();
    stream.read_to_end(&mut buf).unwrap();
    let resp = Response::decode_body(&buf[4..]).unwrap();
    match resp {
        Response::Error { code, .. } => assert_eq!(code, ErrorCode::Oversize),
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown();
}

#[test]
fn garbage_frames_never_crash_the_server() {
    let dir = TempDir::new().unwrap();
    let handle = start_server(&dir);
    let mut rng = ChaCha20Rng::seed_from_u64(112);
    for _ in 0..200 {
        use std::io::Write;
        let mut stream = std::net::TcpStream::connect(handle.addr()).unwrap();
        let len = rng.random_range(1..200u32);
        let mut body = vec![0u8; len as usize];
        rng.fill_bytes(&mut body);
        let mut frame = len.to_be_bytes().to_vec();
        frame.extend(body);
        let _ = stream.write_all(&frame);
        // response or closed connection are both fine; a hung or crashed
        // server is not
        drop(stream);
    }
    // the server still answers
    let mut client = TestClient::connect(handle.addr());
    match client.roundtrip(&Request::Ping) {
        Response::Pong => {}
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown();
}
