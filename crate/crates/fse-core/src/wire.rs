//! Length-prefixed binary frames and the request/response schema.
//!
//! Every frame is a 32-bit big-endian length (covering opcode plus payload),
//! one opcode byte, and the payload. Payloads carry index sections as raw
//! bytes; nothing is ever re-encoded as text. Uploads are chunked into
//! BEGIN/PART/COMMIT so neither side ever materializes an index-sized
//! buffer, and a frame above 64 MiB is rejected before any allocation.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::crypto::SearchToken;
use crate::layout::bucket_capacity;
use crate::{IndexId, Salt};

/// Hard cap on the length field of a single frame.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;
/// Default upload chunk size.
pub const DEFAULT_PART_LEN: usize = 1024 * 1024;
/// Manifest format version understood by this build.
pub const FORMAT_VERSION: u8 = 1;

const OP_LIST_INDEXES: u8 = 0x01;
const OP_BEGIN_UPLOAD: u8 = 0x02;
const OP_UPLOAD_PART: u8 = 0x03;
const OP_COMMIT_UPLOAD: u8 = 0x04;
const OP_DELETE_INDEX: u8 = 0x05;
const OP_PING: u8 = 0x06;
const OP_SEARCH: u8 = 0x07;
const OP_GET_META: u8 = 0x08;

const OP_OK: u8 = 0x80;
const OP_LISTING: u8 = 0x81;
const OP_RESULTS: u8 = 0x82;
const OP_META_BLOCK: u8 = 0x83;
const OP_PONG: u8 = 0x84;
const OP_ERROR: u8 = 0xff;

const TOKEN_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    Oversize(u64),
    #[error("truncated frame")]
    Truncated,
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FrameError {
    /// Wire error code a server reports for this decode failure.
    pub fn code(&self) -> ErrorCode {
        match self {
            FrameError::Oversize(_) => ErrorCode::Oversize,
            FrameError::Truncated => ErrorCode::Truncated,
            FrameError::UnknownOpcode(_) => ErrorCode::UnknownOpcode,
            FrameError::Malformed(_) => ErrorCode::Malformed,
            FrameError::Io(_) => ErrorCode::Internal,
        }
    }
}

/// Error codes carried by [`Response::Error`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ErrorCode {
    Oversize,
    Truncated,
    UnknownOpcode,
    Malformed,
    NotFound,
    Stale,
    DuplicateOrder,
    ChecksumMismatch,
    UploadRejected,
    Corrupt,
    Internal,
    Other(u16),
}

impl ErrorCode {
    pub fn to_u16(self) -> u16 {
        match self {
            ErrorCode::Oversize => 1,
            ErrorCode::Truncated => 2,
            ErrorCode::UnknownOpcode => 3,
            ErrorCode::Malformed => 4,
            ErrorCode::NotFound => 5,
            ErrorCode::Stale => 6,
            ErrorCode::DuplicateOrder => 7,
            ErrorCode::ChecksumMismatch => 8,
            ErrorCode::UploadRejected => 9,
            ErrorCode::Corrupt => 10,
            ErrorCode::Internal => 11,
            ErrorCode::Other(raw) => raw,
        }
    }

    pub fn from_u16(raw: u16) -> Self {
        match raw {
            1 => ErrorCode::Oversize,
            2 => ErrorCode::Truncated,
            3 => ErrorCode::UnknownOpcode,
            4 => ErrorCode::Malformed,
            5 => ErrorCode::NotFound,
            6 => ErrorCode::Stale,
            7 => ErrorCode::DuplicateOrder,
            8 => ErrorCode::ChecksumMismatch,
            9 => ErrorCode::UploadRejected,
            10 => ErrorCode::Corrupt,
            11 => ErrorCode::Internal,
            other => ErrorCode::Other(other),
        }
    }
}

/// Index sections addressed by UPLOAD_PART offsets.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Section {
    HashTable,
    Levels,
    Meta,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::HashTable, Section::Levels, Section::Meta];

    fn tag(self) -> u8 {
        match self {
            Section::HashTable => 1,
            Section::Levels => 2,
            Section::Meta => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Section::HashTable),
            2 => Some(Section::Levels),
            3 => Some(Section::Meta),
            _ => None,
        }
    }
}

/// Per-level bucket count, in the descending level order of the manifest.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LevelSpec {
    pub level: u32,
    pub buckets: u32,
}

/// Public description of one stored index: identity, shape, and the salt
/// clients need to re-derive its key triple. Serialized identically on the
/// wire (BEGIN_UPLOAD, listings) and on the server's disk.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Manifest {
    pub version: u8,
    pub index_id: IndexId,
    pub order: u32,
    pub tuple_count: u64,
    pub locality: u32,
    pub stored_levels: u32,
    pub salt: Salt,
    pub ht_records: u64,
    pub meta_blocks: u32,
    pub levels: Vec<LevelSpec>,
}

impl Manifest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(70 + self.levels.len() * 8);
        out.push(self.version);
        out.extend_from_slice(&self.index_id.0);
        out.extend_from_slice(&self.order.to_be_bytes());
        out.extend_from_slice(&self.tuple_count.to_be_bytes());
        out.extend_from_slice(&self.locality.to_be_bytes());
        out.extend_from_slice(&self.stored_levels.to_be_bytes());
        out.extend_from_slice(&self.salt.0);
        out.extend_from_slice(&self.ht_records.to_be_bytes());
        out.extend_from_slice(&self.meta_blocks.to_be_bytes());
        out.extend_from_slice(&(self.levels.len() as u32).to_be_bytes());
        for spec in &self.levels {
            out.extend_from_slice(&spec.level.to_be_bytes());
            out.extend_from_slice(&spec.buckets.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        let mut cur = Cursor::new(bytes);
        let manifest = Self::read(&mut cur)?;
        cur.finish()?;
        Ok(manifest)
    }

    fn read(cur: &mut Cursor<'_>) -> Result<Self, FrameError> {
        let version = cur.u8()?;
        if version != FORMAT_VERSION {
            return Err(FrameError::Malformed("unsupported manifest version"));
        }
        let index_id = IndexId(cur.array()?);
        let order = cur.u32()?;
        let tuple_count = cur.u64()?;
        let locality = cur.u32()?;
        let stored_levels = cur.u32()?;
        let salt = Salt(cur.array()?);
        let ht_records = cur.u64()?;
        let meta_blocks = cur.u32()?;
        let level_count = cur.u32()?;
        if level_count > 64 {
            return Err(FrameError::Malformed("implausible level count"));
        }
        if ht_records > 1 << 50 {
            return Err(FrameError::Malformed("implausible hash-table size"));
        }
        let mut levels = Vec::with_capacity(level_count as usize);
        for _ in 0..level_count {
            let level = cur.u32()?;
            let buckets = cur.u32()?;
            if level >= 48 {
                return Err(FrameError::Malformed("implausible level"));
            }
            levels.push(LevelSpec { level, buckets });
        }
        Ok(Manifest {
            version,
            index_id,
            order,
            tuple_count,
            locality,
            stored_levels,
            salt,
            ht_records,
            meta_blocks,
            levels,
        })
    }

    /// Semantic checks a server applies before accepting an upload.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.tuple_count == 0 {
            return Err("index holds no tuples");
        }
        if self.order != crate::layout::order_of(self.tuple_count) {
            return Err("order does not match the tuple count");
        }
        if self.locality == 0 || self.stored_levels == 0 {
            return Err("locality and stored levels must be at least 1");
        }
        if self.levels.is_empty() {
            return Err("no levels");
        }
        if !self.levels.windows(2).all(|w| w[0].level > w[1].level) {
            return Err("levels are not strictly descending");
        }
        if self.ht_records == 0 || !self.ht_records.is_power_of_two() {
            return Err("hash-table size is not a power of two");
        }
        if self.meta_blocks == 0 {
            return Err("no word-list blocks");
        }
        let levels_len: u128 = self
            .levels
            .iter()
            .map(|spec| {
                spec.buckets as u128
                    * bucket_capacity(spec.level) as u128
                    * crate::crypto::ENTRY_LEN as u128
            })
            .sum();
        if levels_len > 1 << 50 {
            return Err("level data implausibly large");
        }
        Ok(())
    }

    pub fn ht_len(&self) -> u64 {
        self.ht_records * crate::layout::HT_RECORD_LEN as u64
    }

    pub fn levels_len(&self) -> u64 {
        self.levels
            .iter()
            .map(|spec| {
                spec.buckets as u64 * bucket_capacity(spec.level) * crate::crypto::ENTRY_LEN as u64
            })
            .sum()
    }

    pub fn meta_len(&self) -> u64 {
        self.meta_blocks as u64 * (crate::delta::META_KEY_LEN + crate::delta::META_BLOCK_LEN) as u64
    }

    /// Total bytes this index occupies on disk (manifest plus sections).
    pub fn disk_bytes(&self) -> u64 {
        self.encode().len() as u64 + self.ht_len() + self.levels_len() + self.meta_len()
    }
}

/// One per-index entry of a SEARCH request.
#[derive(Clone, Copy, Debug)]
pub struct IndexQuery {
    pub index_id: IndexId,
    pub token: SearchToken,
}

#[derive(Clone, Debug)]
pub enum Request {
    ListIndexes,
    BeginUpload {
        manifest: Manifest,
    },
    UploadPart {
        index_id: IndexId,
        section: Section,
        offset: u64,
        data: Vec<u8>,
    },
    CommitUpload {
        index_id: IndexId,
        checksum: [u8; 32],
    },
    DeleteIndex {
        index_id: IndexId,
    },
    Ping,
    Search {
        queries: Vec<IndexQuery>,
    },
    GetMeta {
        index_id: IndexId,
        key: [u8; 16],
    },
}

#[derive(Clone, Debug)]
pub enum Response {
    Ok,
    Listing { entries: Vec<Manifest> },
    Results { ids: Vec<u64> },
    MetaBlock { data: Vec<u8> },
    Pong,
    Error { code: ErrorCode, message: String },
}

impl Request {
    /// Frame body: opcode plus payload, without the length prefix.
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Request::ListIndexes => out.push(OP_LIST_INDEXES),
            Request::BeginUpload { manifest } => {
                out.push(OP_BEGIN_UPLOAD);
                out.extend_from_slice(&manifest.encode());
            }
            Request::UploadPart {
                index_id,
                section,
                offset,
                data,
            } => {
                out.push(OP_UPLOAD_PART);
                out.extend_from_slice(&index_id.0);
                out.push(section.tag());
                out.extend_from_slice(&offset.to_be_bytes());
                out.extend_from_slice(data);
            }
            Request::CommitUpload { index_id, checksum } => {
                out.push(OP_COMMIT_UPLOAD);
                out.extend_from_slice(&index_id.0);
                out.extend_from_slice(checksum);
            }
            Request::DeleteIndex { index_id } => {
                out.push(OP_DELETE_INDEX);
                out.extend_from_slice(&index_id.0);
            }
            Request::Ping => out.push(OP_PING),
            Request::Search { queries } => {
                out.push(OP_SEARCH);
                out.extend_from_slice(&(queries.len() as u32).to_be_bytes());
                for q in queries {
                    out.extend_from_slice(&q.index_id.0);
                    out.extend_from_slice(&q.token.t1);
                    out.extend_from_slice(&q.token.t2);
                    out.extend_from_slice(&q.token.t3);
                }
            }
            Request::GetMeta { index_id, key } => {
                out.push(OP_GET_META);
                out.extend_from_slice(&index_id.0);
                out.extend_from_slice(key);
            }
        }
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, FrameError> {
        let (&opcode, payload) = body
            .split_first()
            .ok_or(FrameError::Malformed("empty frame"))?;
        let mut cur = Cursor::new(payload);
        let req = match opcode {
            OP_LIST_INDEXES => Request::ListIndexes,
            OP_BEGIN_UPLOAD => Request::BeginUpload {
                manifest: Manifest::read(&mut cur)?,
            },
            OP_UPLOAD_PART => Request::UploadPart {
                index_id: IndexId(cur.array()?),
                section: Section::from_tag(cur.u8()?)
                    .ok_or(FrameError::Malformed("unknown section tag"))?,
                offset: cur.u64()?,
                data: cur.rest().to_vec(),
            },
            OP_COMMIT_UPLOAD => Request::CommitUpload {
                index_id: IndexId(cur.array()?),
                checksum: cur.array()?,
            },
            OP_DELETE_INDEX => Request::DeleteIndex {
                index_id: IndexId(cur.array()?),
            },
            OP_PING => Request::Ping,
            OP_SEARCH => {
                let count = cur.u32()? as usize;
                if cur.remaining() != count * (16 + 3 * TOKEN_LEN) {
                    return Err(FrameError::Malformed("search payload length mismatch"));
                }
                let mut queries = Vec::with_capacity(count);
                for _ in 0..count {
                    queries.push(IndexQuery {
                        index_id: IndexId(cur.array()?),
                        token: SearchToken {
                            t1: cur.array()?,
                            t2: cur.array()?,
                            t3: cur.array()?,
                        },
                    });
                }
                Request::Search { queries }
            }
            OP_GET_META => Request::GetMeta {
                index_id: IndexId(cur.array()?),
                key: cur.array()?,
            },
            other => return Err(FrameError::UnknownOpcode(other)),
        };
        cur.finish()?;
        Ok(req)
    }
}

impl Response {
    pub fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Response::Ok => out.push(OP_OK),
            Response::Listing { entries } => {
                out.push(OP_LISTING);
                out.extend_from_slice(&(entries.len() as u32).to_be_bytes());
                for manifest in entries {
                    let bytes = manifest.encode();
                    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
                    out.extend_from_slice(&bytes);
                }
            }
            Response::Results { ids } => {
                out.push(OP_RESULTS);
                out.extend_from_slice(&(ids.len() as u32).to_be_bytes());
                for id in ids {
                    out.extend_from_slice(&id.to_be_bytes());
                }
            }
            Response::MetaBlock { data } => {
                out.push(OP_META_BLOCK);
                out.extend_from_slice(data);
            }
            Response::Pong => out.push(OP_PONG),
            Response::Error { code, message } => {
                out.push(OP_ERROR);
                out.extend_from_slice(&code.to_u16().to_be_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        out
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, FrameError> {
        let (&opcode, payload) = body
            .split_first()
            .ok_or(FrameError::Malformed("empty frame"))?;
        let mut cur = Cursor::new(payload);
        let resp = match opcode {
            OP_OK => Response::Ok,
            OP_LISTING => {
                let count = cur.u32()? as usize;
                if count > cur.remaining() / 4 {
                    return Err(FrameError::Malformed("listing count exceeds payload"));
                }
                let mut entries = Vec::with_capacity(count);
                for _ in 0..count {
                    let len = cur.u32()? as usize;
                    let bytes = cur.bytes(len)?;
                    entries.push(Manifest::decode(bytes)?);
                }
                Response::Listing { entries }
            }
            OP_RESULTS => {
                let count = cur.u32()? as usize;
                if cur.remaining() != count * 8 {
                    return Err(FrameError::Malformed("result payload length mismatch"));
                }
                let mut ids = Vec::with_capacity(count);
                for _ in 0..count {
                    ids.push(cur.u64()?);
                }
                Response::Results { ids }
            }
            OP_META_BLOCK => Response::MetaBlock {
                data: cur.rest().to_vec(),
            },
            OP_PONG => Response::Pong,
            OP_ERROR => {
                let code = ErrorCode::from_u16(cur.u16()?);
                let message = String::from_utf8(cur.rest().to_vec())
                    .map_err(|_| FrameError::Malformed("error message is not UTF-8"))?;
                Response::Error { code, message }
            }
            other => return Err(FrameError::UnknownOpcode(other)),
        };
        cur.finish()?;
        Ok(resp)
    }
}

/// Writes one frame: length prefix plus body.
pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    debug_assert!(body.len() as u64 <= MAX_FRAME_LEN as u64);
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame body. `Ok(None)` means the peer closed the connection
/// cleanly before a new frame started. The length field is validated before
/// any buffer is allocated.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, FrameError> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < len_buf.len() {
        match r.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(FrameError::Io(e)),
        }
    }
    let len = u32::from_be_bytes(len_buf);
    if len == 0 {
        return Err(FrameError::Malformed("zero-length frame"));
    }
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(len as u64));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FrameError::Truncated
        } else {
            FrameError::Io(e)
        }
    })?;
    Ok(Some(body))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.remaining() < n {
            return Err(FrameError::Malformed("payload shorter than declared"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FrameError> {
        Ok(self.bytes(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    fn finish(self) -> Result<(), FrameError> {
        if self.pos != self.buf.len() {
            return Err(FrameError::Malformed("trailing bytes after payload"));
        }
        Ok(())
    }
}
