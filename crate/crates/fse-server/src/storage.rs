//! On-disk index storage and atomic collection mutations.
//!
//! Layout under the data root:
//!
//! ```text
//! <root>/collection.journal       committed index ids, one per line
//! <root>/<index_id_hex>/manifest
//! <root>/<index_id_hex>/ht        sorted fixed-width 24-byte records
//! <root>/<index_id_hex>/levels/<i>  concatenated fixed-width buckets
//! <root>/<index_id_hex>/meta      sorted 16-byte-key + 4096-byte-block records
//! <root>/staging/<index_id_hex>/  upload sections before COMMIT
//! ```
//!
//! The journal is the single source of truth for what is committed. Every
//! mutation prepares files first, then atomically replaces the journal, so
//! a crash at any point leaves the previously committed collection intact:
//! on startup anything under `staging/` and any index directory the journal
//! does not list is discarded.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use fse_core::crypto::{self, EntryCiphertext, SearchToken, ENTRY_LEN};
use fse_core::delta::{META_BLOCK_LEN, META_KEY_LEN};
use fse_core::layout::{self, bucket_capacity, HT_KEY_LEN, HT_RECORD_LEN};
use fse_core::wire::{ErrorCode, Manifest, Section};
use fse_core::IndexId;

const JOURNAL: &str = "collection.journal";
const JOURNAL_MAGIC: &str = "fse-collection v1";
const STAGING: &str = "staging";
const META_RECORD_LEN: usize = META_KEY_LEN + META_BLOCK_LEN;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal is corrupt: {0}")]
    Journal(String),
    #[error("unreadable manifest at {path}: {reason}")]
    BadManifest { path: PathBuf, reason: String },
    #[error("index {id} is damaged: {reason}")]
    Damaged { id: IndexId, reason: String },
    #[error("indexes {a} and {b} share order {order}")]
    DuplicateOrderOnDisk { a: IndexId, b: IndexId, order: u32 },
}

/// Failure of one client-visible operation, mapped onto a wire error code.
#[derive(Debug, Error)]
pub enum OpError {
    #[error("not found")]
    NotFound,
    #[error("index is no longer part of the collection")]
    Stale,
    #[error("an index of order {0} is already committed; merge first")]
    DuplicateOrder(u32),
    #[error("section checksum mismatch")]
    ChecksumMismatch,
    #[error("upload rejected: {0}")]
    UploadRejected(&'static str),
    #[error("stored index is corrupt: {0}")]
    Corrupt(&'static str),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl OpError {
    pub fn code(&self) -> ErrorCode {
        match self {
            OpError::NotFound => ErrorCode::NotFound,
            OpError::Stale => ErrorCode::Stale,
            OpError::DuplicateOrder(_) => ErrorCode::DuplicateOrder,
            OpError::ChecksumMismatch => ErrorCode::ChecksumMismatch,
            OpError::UploadRejected(_) => ErrorCode::UploadRejected,
            OpError::Corrupt(_) => ErrorCode::Corrupt,
            OpError::Io(_) => ErrorCode::Internal,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One committed index, opened read-only. Shared freely across reader
/// threads; positional reads keep it lock-free.
pub struct StoredIndex {
    pub manifest: Manifest,
    dir: PathBuf,
    ht: File,
    meta: File,
    levels: BTreeMap<u32, File>,
}

impl StoredIndex {
    /// Opens and size-checks every section named by the manifest.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let manifest_path = dir.join("manifest");
        let bytes = fs::read(&manifest_path).map_err(io_at(&manifest_path))?;
        let manifest = Manifest::decode(&bytes).map_err(|e| StoreError::BadManifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
        let id = manifest.index_id;
        let damaged = |reason: String| StoreError::Damaged { id, reason };

        manifest
            .validate()
            .map_err(|reason| damaged(format!("manifest: {reason}")))?;

        let expect_len = |file: &File, want: u64, what: &str| -> Result<(), StoreError> {
            let got = file.metadata().map_err(io_at(dir))?.len();
            if got != want {
                return Err(damaged(format!(
                    "{what} holds {got} bytes, manifest says {want}"
                )));
            }
            Ok(())
        };

        let ht_path = dir.join("ht");
        let ht = File::open(&ht_path).map_err(io_at(&ht_path))?;
        expect_len(&ht, manifest.ht_len(), "hash table")?;

        let meta_path = dir.join("meta");
        let meta = File::open(&meta_path).map_err(io_at(&meta_path))?;
        expect_len(&meta, manifest.meta_len(), "meta store")?;

        let mut levels = BTreeMap::new();
        for spec in &manifest.levels {
            let path = dir.join("levels").join(spec.level.to_string());
            let file = File::open(&path).map_err(io_at(&path))?;
            expect_len(
                &file,
                spec.buckets as u64 * bucket_capacity(spec.level) * ENTRY_LEN as u64,
                &format!("level {}", spec.level),
            )?;
            levels.insert(spec.level, file);
        }

        Ok(StoredIndex {
            manifest,
            dir: dir.to_owned(),
            ht,
            meta,
            levels,
        })
    }

    /// Binary search over the sorted hash-table records.
    fn ht_get(&self, key: &[u8; HT_KEY_LEN]) -> Result<Option<[u8; 8]>, OpError> {
        let mut lo = 0u64;
        let mut hi = self.manifest.ht_records;
        let mut record = [0u8; HT_RECORD_LEN];
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            self.ht
                .read_exact_at(&mut record, mid * HT_RECORD_LEN as u64)?;
            match record[..HT_KEY_LEN].cmp(key) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => {
                    return Ok(Some(record[HT_KEY_LEN..].try_into().unwrap()))
                }
            }
        }
        Ok(None)
    }

    fn read_bucket(&self, loc: layout::Location) -> Result<Vec<u8>, OpError> {
        let spec = self
            .manifest
            .levels
            .iter()
            .find(|s| s.level == loc.level)
            .ok_or(OpError::Corrupt("location names a level the index lacks"))?;
        if loc.bucket >= spec.buckets {
            return Err(OpError::Corrupt("location is past the end of its level"));
        }
        let width = bucket_capacity(loc.level) * ENTRY_LEN as u64;
        let mut bucket = vec![0u8; width as usize];
        self.levels[&loc.level].read_exact_at(&mut bucket, loc.bucket as u64 * width)?;
        Ok(bucket)
    }

    /// Full single-index search: probe the hash table for each chunk counter
    /// until one misses, then decrypt every slot of each referenced bucket,
    /// keeping the entries the token's key validates.
    pub fn lookup_one(&self, token: &SearchToken) -> Result<BTreeSet<u64>, OpError> {
        let word_key = crypto::entry_key(&token.t3);
        let mut ids = BTreeSet::new();
        for chunk_no in 1..=self.manifest.locality {
            let key = layout::ht_key(&token.t1, chunk_no);
            let Some(value) = self.ht_get(&key)? else {
                break;
            };
            let loc = layout::ht_open(&token.t2, chunk_no, &value);
            let bucket = self.read_bucket(loc)?;
            for slot in bucket.chunks_exact(ENTRY_LEN) {
                let entry = EntryCiphertext(slot.try_into().unwrap());
                if let Some(id) = crypto::decrypt_entry(&word_key, &entry) {
                    ids.insert(id.0);
                }
            }
        }
        Ok(ids)
    }

    /// Binary search over the sorted meta records.
    pub fn get_meta(&self, key: &[u8; META_KEY_LEN]) -> Result<Option<Vec<u8>>, OpError> {
        let mut lo = 0u64;
        let mut hi = self.manifest.meta_blocks as u64;
        let mut probe = [0u8; META_KEY_LEN];
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            self.meta
                .read_exact_at(&mut probe, mid * META_RECORD_LEN as u64)?;
            match probe[..].cmp(key) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => {
                    let mut block = vec![0u8; META_BLOCK_LEN];
                    self.meta.read_exact_at(
                        &mut block,
                        mid * META_RECORD_LEN as u64 + META_KEY_LEN as u64,
                    )?;
                    return Ok(Some(block));
                }
            }
        }
        Ok(None)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Immutable snapshot of the committed collection. Readers clone the `Arc`
/// around it and keep working on their snapshot while mutations swap in a
/// successor.
#[derive(Default)]
pub struct Collection {
    pub generation: u64,
    pub by_order: BTreeMap<u32, std::sync::Arc<StoredIndex>>,
}

impl Collection {
    pub fn get(&self, id: IndexId) -> Option<&std::sync::Arc<StoredIndex>> {
        self.by_order
            .values()
            .find(|index| index.manifest.index_id == id)
    }

    pub fn manifests(&self) -> Vec<Manifest> {
        self.by_order.values().map(|i| i.manifest.clone()).collect()
    }
}

/// An upload between BEGIN and COMMIT: three staged section files.
pub struct PendingUpload {
    manifest: Manifest,
    dir: PathBuf,
    ht: File,
    levels: File,
    meta: File,
}

impl PendingUpload {
    fn section(&self, section: Section) -> (&File, u64) {
        match section {
            Section::HashTable => (&self.ht, self.manifest.ht_len()),
            Section::Levels => (&self.levels, self.manifest.levels_len()),
            Section::Meta => (&self.meta, self.manifest.meta_len()),
        }
    }
}

/// Owns the data root: journal bookkeeping, staging, commit and delete.
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (or initializes) a data root and recovers the last committed
    /// collection: staging leftovers and unjournaled index directories are
    /// removed, journaled indexes are opened and size-checked.
    pub fn open(root: &Path) -> Result<(Store, Collection), StoreError> {
        fs::create_dir_all(root).map_err(io_at(root))?;
        let store = Store {
            root: root.to_owned(),
        };
        let (generation, ids) = store.read_journal()?;

        let staging = root.join(STAGING);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_at(&staging))?;
        }

        let keep: BTreeSet<String> = ids.iter().map(|id| id.to_hex()).collect();
        for entry in fs::read_dir(root).map_err(io_at(root))? {
            let entry = entry.map_err(io_at(root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type().map_err(io_at(root))?.is_dir()
                && IndexId::from_hex(&name).is_some()
                && !keep.contains(&name)
            {
                let path = entry.path();
                fs::remove_dir_all(&path).map_err(io_at(&path))?;
            }
        }

        let mut by_order = BTreeMap::new();
        for id in ids {
            let index = StoredIndex::open(&store.index_dir(id))?;
            if index.manifest.index_id != id {
                return Err(StoreError::Damaged {
                    id,
                    reason: "manifest id does not match its directory".into(),
                });
            }
            let order = index.manifest.order;
            if let Some(prev) = by_order.insert(order, std::sync::Arc::new(index)) {
                let prev: &StoredIndex = &prev;
                return Err(StoreError::DuplicateOrderOnDisk {
                    a: prev.manifest.index_id,
                    b: id,
                    order,
                });
            }
        }

        Ok((
            store,
            Collection {
                generation,
                by_order,
            },
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn index_dir(&self, id: IndexId) -> PathBuf {
        self.root.join(id.to_hex())
    }

    fn staging_dir(&self, id: IndexId) -> PathBuf {
        self.root.join(STAGING).join(id.to_hex())
    }

    fn read_journal(&self) -> Result<(u64, Vec<IndexId>), StoreError> {
        let path = self.root.join(JOURNAL);
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((0, Vec::new())),
            Err(e) => return Err(io_at(&path)(e)),
        };
        let mut lines = text.lines();
        if lines.next() != Some(JOURNAL_MAGIC) {
            return Err(StoreError::Journal("bad header".into()));
        }
        let generation = lines
            .next()
            .and_then(|l| l.strip_prefix("generation "))
            .and_then(|g| g.parse().ok())
            .ok_or_else(|| StoreError::Journal("bad generation line".into()))?;
        let mut ids = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let id = IndexId::from_hex(line)
                .ok_or_else(|| StoreError::Journal(format!("bad index id {line:?}")))?;
            ids.push(id);
        }
        Ok((generation, ids))
    }

    fn write_journal(&self, generation: u64, ids: &[IndexId]) -> Result<(), io::Error> {
        let tmp = self.root.join("collection.journal.tmp");
        let mut out = String::new();
        out.push_str(JOURNAL_MAGIC);
        out.push('\n');
        out.push_str(&format!("generation {generation}\n"));
        for id in ids {
            out.push_str(&id.to_hex());
            out.push('\n');
        }
        let mut file = File::create(&tmp)?;
        file.write_all(out.as_bytes())?;
        file.sync_all()?;
        fs::rename(&tmp, self.root.join(JOURNAL))?;
        File::open(&self.root)?.sync_all()?;
        Ok(())
    }

    /// Starts an upload: wipes any stale staging for the id and creates the
    /// three section files. The manifest must already have passed
    /// validation, and the id must not be committed.
    pub fn begin_upload(
        &self,
        manifest: Manifest,
        collection: &Collection,
    ) -> Result<PendingUpload, OpError> {
        if collection.get(manifest.index_id).is_some() {
            return Err(OpError::UploadRejected("index id is already committed"));
        }
        let dir = self.staging_dir(manifest.index_id);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let open = |name: &str| -> io::Result<File> {
            OpenOptions::new()
                .read(true)
                .write(true)
                .create_new(true)
                .open(dir.join(name))
        };
        let (ht, levels, meta) = (open("sec_ht")?, open("sec_levels")?, open("sec_meta")?);
        Ok(PendingUpload {
            dir,
            ht,
            levels,
            meta,
            manifest,
        })
    }

    /// Writes one chunk at its stated offset. Offsets past the manifest's
    /// section size are rejected, so a client cannot grow staging beyond
    /// what BEGIN declared.
    pub fn upload_part(
        &self,
        pending: &PendingUpload,
        section: Section,
        offset: u64,
        data: &[u8],
    ) -> Result<(), OpError> {
        let (file, expected) = pending.section(section);
        let end = offset
            .checked_add(data.len() as u64)
            .ok_or(OpError::UploadRejected("part offset overflows"))?;
        if end > expected {
            return Err(OpError::UploadRejected("part extends past the section"));
        }
        file.write_all_at(data, offset)?;
        Ok(())
    }

    /// Discards staged files after a failed or abandoned upload.
    pub fn abort_upload(&self, pending: PendingUpload) {
        let _ = fs::remove_dir_all(&pending.dir);
    }

    /// Verifies and atomically publishes a finished upload, returning the
    /// successor collection. Must be called with mutations serialized.
    pub fn commit_upload(
        &self,
        pending: PendingUpload,
        checksum: [u8; 32],
        collection: &Collection,
    ) -> Result<Collection, OpError> {
        let result = self.try_commit(&pending, checksum, collection);
        if result.is_err() {
            self.abort_upload(pending);
        }
        result
    }

    fn try_commit(
        &self,
        pending: &PendingUpload,
        checksum: [u8; 32],
        collection: &Collection,
    ) -> Result<Collection, OpError> {
        let manifest = &pending.manifest;
        let order = manifest.order;
        if collection.by_order.contains_key(&order) {
            return Err(OpError::DuplicateOrder(order));
        }
        if collection.get(manifest.index_id).is_some() {
            return Err(OpError::UploadRejected("index id is already committed"));
        }

        for (section, want) in [
            (&pending.ht, manifest.ht_len()),
            (&pending.levels, manifest.levels_len()),
            (&pending.meta, manifest.meta_len()),
        ] {
            if section.metadata()?.len() != want {
                return Err(OpError::UploadRejected("section size mismatch"));
            }
        }

        let mut hasher = Sha256::new();
        for file in [&pending.ht, &pending.levels, &pending.meta] {
            hash_file(file, &mut hasher)?;
        }
        if <[u8; 32]>::from(hasher.finalize()) != checksum {
            return Err(OpError::ChecksumMismatch);
        }

        verify_sorted(&pending.ht, HT_RECORD_LEN, HT_KEY_LEN)
            .map_err(map_unsorted("hash table records are not sorted"))?;
        verify_sorted(&pending.meta, META_RECORD_LEN, META_KEY_LEN)
            .map_err(map_unsorted("meta records are not sorted"))?;

        // materialize the final directory layout inside staging
        let dir = &pending.dir;
        self.split_levels(pending)?;
        fs::remove_file(dir.join("sec_levels"))?;
        fs::rename(dir.join("sec_ht"), dir.join("ht"))?;
        fs::rename(dir.join("sec_meta"), dir.join("meta"))?;
        let mut manifest_file = File::create(dir.join("manifest"))?;
        manifest_file.write_all(&manifest.encode())?;
        manifest_file.sync_all()?;
        pending.ht.sync_all()?;
        pending.meta.sync_all()?;
        File::open(dir)?.sync_all()?;

        // publish: rename into the root, then journal the new membership;
        // an unjournaled directory left by an interrupted commit gives way
        let final_dir = self.index_dir(manifest.index_id);
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir)?;
        }
        fs::rename(dir, &final_dir)?;
        File::open(&self.root)?.sync_all()?;

        let index = StoredIndex::open(&final_dir).map_err(|e| {
            OpError::UploadRejected(match e {
                StoreError::Damaged { .. } => "staged sections do not match the manifest",
                _ => "failed to reopen the committed index",
            })
        })?;

        let mut by_order = collection.by_order.clone();
        by_order.insert(order, std::sync::Arc::new(index));
        let generation = collection.generation + 1;
        let ids: Vec<IndexId> = by_order.values().map(|i| i.manifest.index_id).collect();
        self.write_journal(generation, &ids)?;
        Ok(Collection {
            generation,
            by_order,
        })
    }

    fn split_levels(&self, pending: &PendingUpload) -> Result<(), OpError> {
        let levels_dir = pending.dir.join("levels");
        fs::create_dir_all(&levels_dir)?;
        let mut offset = 0u64;
        let mut buf = vec![0u8; 1 << 20];
        for spec in &pending.manifest.levels {
            let path = levels_dir.join(spec.level.to_string());
            let mut out = File::create(&path)?;
            let mut remaining =
                spec.buckets as u64 * bucket_capacity(spec.level) * ENTRY_LEN as u64;
            while remaining > 0 {
                let take = remaining.min(buf.len() as u64) as usize;
                pending.levels.read_exact_at(&mut buf[..take], offset)?;
                out.write_all(&buf[..take])?;
                offset += take as u64;
                remaining -= take as u64;
            }
            out.sync_all()?;
        }
        Ok(())
    }

    /// Unlinks an index: journal first, then files. A crash in between
    /// leaves an orphan directory that startup recovery removes.
    pub fn delete_index(
        &self,
        id: IndexId,
        collection: &Collection,
    ) -> Result<Collection, OpError> {
        let index = collection.get(id).ok_or(OpError::NotFound)?;
        let order = index.manifest.order;
        let mut by_order = collection.by_order.clone();
        by_order.remove(&order);
        let generation = collection.generation + 1;
        let ids: Vec<IndexId> = by_order.values().map(|i| i.manifest.index_id).collect();
        self.write_journal(generation, &ids)?;
        let _ = fs::remove_dir_all(self.index_dir(id));
        Ok(Collection {
            generation,
            by_order,
        })
    }
}

fn map_unsorted(msg: &'static str) -> impl FnOnce(SortCheckError) -> OpError {
    move |e| match e {
        SortCheckError::Io(e) => OpError::Io(e),
        SortCheckError::Unsorted => OpError::UploadRejected(msg),
    }
}

enum SortCheckError {
    Io(io::Error),
    Unsorted,
}

impl From<io::Error> for SortCheckError {
    fn from(e: io::Error) -> Self {
        SortCheckError::Io(e)
    }
}

/// Single streaming pass confirming fixed-width records are sorted by their
/// key prefix, so binary search is sound.
fn verify_sorted(file: &File, record_len: usize, key_len: usize) -> Result<(), SortCheckError> {
    let len = file.metadata()?.len();
    debug_assert_eq!(len % record_len as u64, 0);
    let mut reader = io::BufReader::with_capacity(1 << 20, clone_for_read(file)?);
    let mut prev: Option<Vec<u8>> = None;
    let mut record = vec![0u8; record_len];
    for _ in 0..len / record_len as u64 {
        reader.read_exact(&mut record)?;
        let key = &record[..key_len];
        if let Some(p) = &prev {
            if p.as_slice() > key {
                return Err(SortCheckError::Unsorted);
            }
        }
        prev = Some(key.to_vec());
    }
    Ok(())
}

fn clone_for_read(file: &File) -> io::Result<File> {
    let mut f = file.try_clone()?;
    f.seek(io::SeekFrom::Start(0))?;
    Ok(f)
}

fn hash_file(file: &File, hasher: &mut Sha256) -> io::Result<()> {
    let mut reader = io::BufReader::with_capacity(1 << 20, clone_for_read(file)?);
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}

/// Resolves every id of a search, then unions the per-index results.
/// Any id missing from the snapshot means the client's listing is stale.
pub fn search(
    collection: &Collection,
    queries: &[(IndexId, SearchToken)],
) -> Result<BTreeSet<u64>, OpError> {
    let mut indexes = Vec::with_capacity(queries.len());
    for (id, token) in queries {
        let index = collection.get(*id).ok_or(OpError::Stale)?;
        indexes.push((index.clone(), token));
    }
    let mut ids = BTreeSet::new();
    for (index, token) in indexes {
        ids.append(&mut index.lookup_one(token)?);
    }
    Ok(ids)
}
