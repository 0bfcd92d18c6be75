//! Shared helpers for the server integration tests: a minimal frame-level
//! client and fixture index construction through the public build path.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fse_core::build::{setup, EncryptedIndex};
use fse_core::crypto::{derive_index_keys, IndexKeys, MasterKey};
use fse_core::layout::IndexParams;
use fse_core::plain::PlainIndex;
use fse_core::wire::{
    read_frame, write_frame, IndexQuery, Request, Response, Section, DEFAULT_PART_LEN,
};
use fse_core::{DocId, Salt};

pub struct TestClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TestClient {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).expect("connect to test server");
        stream.set_nodelay(true).unwrap();
        TestClient {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: BufWriter::new(stream),
        }
    }

    pub fn roundtrip(&mut self, request: &Request) -> Response {
        write_frame(&mut self.writer, &request.encode_body()).expect("send frame");
        let body = read_frame(&mut self.reader)
            .expect("read frame")
            .expect("server closed the connection");
        Response::decode_body(&body).expect("decode response")
    }

    pub fn expect_ok(&mut self, request: &Request) {
        match self.roundtrip(request) {
            Response::Ok => {}
            other => panic!("expected Ok, got {other:?}"),
        }
    }

    pub fn upload(&mut self, index: &EncryptedIndex) {
        self.expect_ok(&Request::BeginUpload {
            manifest: index.manifest.clone(),
        });
        let index_id = index.manifest.index_id;
        for (section, bytes) in [
            (Section::HashTable, index.ht_section()),
            (Section::Levels, index.levels_section()),
            (Section::Meta, index.meta_section()),
        ] {
            for (part, chunk) in bytes.chunks(DEFAULT_PART_LEN).enumerate() {
                self.expect_ok(&Request::UploadPart {
                    index_id,
                    section,
                    offset: (part * DEFAULT_PART_LEN) as u64,
                    data: chunk.to_vec(),
                });
            }
        }
        self.expect_ok(&Request::CommitUpload {
            index_id,
            checksum: index.sections_checksum(),
        });
    }

    pub fn search_word(
        &mut self,
        keys: &IndexKeys,
        index: &EncryptedIndex,
        word: &str,
    ) -> Vec<u64> {
        let token = fse_core::crypto::make_token(keys, word.as_bytes()).unwrap();
        match self.roundtrip(&Request::Search {
            queries: vec![IndexQuery {
                index_id: index.manifest.index_id,
                token,
            }],
        }) {
            Response::Results { ids } => ids,
            other => panic!("expected results, got {other:?}"),
        }
    }
}

pub fn fixture_plain() -> PlainIndex {
    let docs: Vec<(DocId, &[u8])> = vec![
        (DocId(3), b"arthur dolphin hooloovoo zaphod".as_slice()),
        (DocId(5), b"arthur zaphod"),
        (DocId(8), b"arthur krikkit zaphod"),
        (DocId(12), b"arthur dolphin fenchurch krikkit zaphod"),
        (DocId(15), b"arthur fenchurch zaphod"),
    ];
    PlainIndex::from_documents(docs, &BTreeSet::new()).unwrap()
}

pub fn build_fixture(seed: u64, params: IndexParams) -> (IndexKeys, EncryptedIndex) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let master = MasterKey::generate(&mut rng);
    let salt = Salt::random(&mut rng);
    let keys = derive_index_keys(&master, &salt);
    let index = setup(&keys, salt, &fixture_plain(), params, &mut rng).unwrap();
    (keys, index)
}
