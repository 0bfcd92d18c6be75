//! One TCP connection to the server: a single request in flight at a time,
//! with transaction and byte counters for the measurement harness.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;

use fse_core::build::EncryptedIndex;
use fse_core::crypto::SearchToken;
use fse_core::delta::MetaKey;
use fse_core::wire::{
    read_frame, write_frame, ErrorCode, IndexQuery, Manifest, Request, Response, Section,
    DEFAULT_PART_LEN,
};
use fse_core::IndexId;

use crate::ClientError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionCounters {
    /// Frames sent by this client.
    pub transactions: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

pub struct Session {
    addr: String,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    counters: SessionCounters,
}

impl Session {
    pub fn connect(addr: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(|source| ClientError::Connect {
            addr: addr.to_owned(),
            source,
        })?;
        stream.set_nodelay(true)?;
        Ok(Session {
            addr: addr.to_owned(),
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            counters: SessionCounters::default(),
        })
    }

    /// Re-establishes the connection after a transport failure. Counters
    /// keep accumulating across reconnects.
    pub fn reconnect(&mut self) -> Result<(), ClientError> {
        let fresh = Session::connect(&self.addr)?;
        self.reader = fresh.reader;
        self.writer = fresh.writer;
        Ok(())
    }

    pub fn counters(&self) -> SessionCounters {
        self.counters
    }

    fn roundtrip(&mut self, request: &Request) -> Result<Response, ClientError> {
        let body = request.encode_body();
        write_frame(&mut self.writer, &body)?;
        self.counters.transactions += 1;
        self.counters.bytes_sent += 4 + body.len() as u64;
        let reply = read_frame(&mut self.reader)?.ok_or(ClientError::ConnectionClosed)?;
        self.counters.bytes_received += 4 + reply.len() as u64;
        Ok(Response::decode_body(&reply)?)
    }

    fn server_err(code: ErrorCode, message: String) -> ClientError {
        if code == ErrorCode::Stale {
            ClientError::Stale
        } else {
            ClientError::Server { code, message }
        }
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        match self.roundtrip(&Request::Ping)? {
            Response::Pong => Ok(()),
            Response::Error { code, message } => Err(Self::server_err(code, message)),
            _ => Err(ClientError::UnexpectedResponse("ping")),
        }
    }

    pub fn list_indexes(&mut self) -> Result<Vec<Manifest>, ClientError> {
        match self.roundtrip(&Request::ListIndexes)? {
            Response::Listing { entries } => Ok(entries),
            Response::Error { code, message } => Err(Self::server_err(code, message)),
            _ => Err(ClientError::UnexpectedResponse("list")),
        }
    }

    /// One search across any number of indexes; the server returns the
    /// deduplicated ascending union.
    pub fn search(
        &mut self,
        queries: Vec<(IndexId, SearchToken)>,
    ) -> Result<Vec<u64>, ClientError> {
        let queries = queries
            .into_iter()
            .map(|(index_id, token)| IndexQuery { index_id, token })
            .collect();
        match self.roundtrip(&Request::Search { queries })? {
            Response::Results { ids } => Ok(ids),
            Response::Error { code, message } => Err(Self::server_err(code, message)),
            _ => Err(ClientError::UnexpectedResponse("search")),
        }
    }

    /// `Ok(None)` when the key has no block, which ends a word-list probe.
    pub fn get_meta(
        &mut self,
        index_id: IndexId,
        key: &MetaKey,
    ) -> Result<Option<Vec<u8>>, ClientError> {
        match self.roundtrip(&Request::GetMeta {
            index_id,
            key: *key,
        })? {
            Response::MetaBlock { data } => Ok(Some(data)),
            Response::Error {
                code: ErrorCode::NotFound,
                ..
            } => Ok(None),
            Response::Error { code, message } => Err(Self::server_err(code, message)),
            _ => Err(ClientError::UnexpectedResponse("get_meta")),
        }
    }

    pub fn delete_index(&mut self, index_id: IndexId) -> Result<(), ClientError> {
        match self.roundtrip(&Request::DeleteIndex { index_id })? {
            Response::Ok => Ok(()),
            Response::Error { code, message } => Err(Self::server_err(code, message)),
            _ => Err(ClientError::UnexpectedResponse("delete")),
        }
    }

    fn expect_ok(&mut self, request: &Request, op: &'static str) -> Result<(), ClientError> {
        match self.roundtrip(request)? {
            Response::Ok => Ok(()),
            Response::Error { code, message } => Err(Self::server_err(code, message)),
            _ => Err(ClientError::UnexpectedResponse(op)),
        }
    }

    /// Chunked upload: BEGIN, then the three sections in parts of at most
    /// 1 MiB, then COMMIT with the checksum the server must reproduce.
    pub fn upload(&mut self, index: &EncryptedIndex) -> Result<(), ClientError> {
        self.expect_ok(
            &Request::BeginUpload {
                manifest: index.manifest.clone(),
            },
            "begin upload",
        )?;
        let index_id = index.manifest.index_id;
        for (section, bytes) in [
            (Section::HashTable, index.ht_section()),
            (Section::Levels, index.levels_section()),
            (Section::Meta, index.meta_section()),
        ] {
            for (part, chunk) in bytes.chunks(DEFAULT_PART_LEN).enumerate() {
                self.expect_ok(
                    &Request::UploadPart {
                        index_id,
                        section,
                        offset: (part * DEFAULT_PART_LEN) as u64,
                        data: chunk.to_vec(),
                    },
                    "upload part",
                )?;
            }
        }
        self.expect_ok(
            &Request::CommitUpload {
                index_id,
                checksum: index.sections_checksum(),
            },
            "commit upload",
        )
    }
}
