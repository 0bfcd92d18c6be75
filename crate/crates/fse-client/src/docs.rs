//! Reads a document batch from a directory tree, one file per document.
//!
//! Ids default to the first eight bytes of the content hash, with collision
//! detection; files with byte-identical content are the same document and
//! are indexed once. An id-map file (lines of `<hex id> TAB <relative
//! path>`) overrides that and must then cover every file in the batch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use fse_core::crypto::hash;
use fse_core::DocId;

use crate::ClientError;

#[derive(Debug)]
pub struct LoadedDoc {
    pub id: DocId,
    pub rel_path: PathBuf,
    pub bytes: Vec<u8>,
}

/// Id for a document with these contents: the first eight bytes of its
/// SHA-256 digest, big-endian.
pub fn doc_id_from_content(bytes: &[u8]) -> DocId {
    let digest = hash(bytes);
    DocId(u64::from_be_bytes(digest[..8].try_into().unwrap()))
}

fn parse_id_map(path: &Path) -> Result<BTreeMap<PathBuf, DocId>, ClientError> {
    let text = fs::read_to_string(path).map_err(|source| ClientError::IdMap {
        line: 0,
        reason: format!("cannot read {}: {source}", path.display()),
    })?;
    let mut map = BTreeMap::new();
    let mut seen_ids = BTreeMap::new();
    for (number, line) in text.lines().enumerate() {
        let line_no = number + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| ClientError::IdMap {
            line: line_no,
            reason,
        };
        let (id, rel) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `<hex id> TAB <relative path>`".into()))?;
        let id: DocId = id
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad id {id:?}")))?;
        if let Some(prev) = seen_ids.insert(id, rel.to_owned()) {
            return Err(bad(format!("id {id} already maps to {prev:?}")));
        }
        map.insert(PathBuf::from(rel), id);
    }
    Ok(map)
}

/// Loads every regular file under `dir` in sorted path order.
pub fn load_docs(dir: &Path, id_map: Option<&Path>) -> Result<Vec<LoadedDoc>, ClientError> {
    let id_map = id_map.map(parse_id_map).transpose()?;
    let mut docs: Vec<LoadedDoc> = Vec::new();
    let mut by_id: BTreeMap<DocId, ([u8; 32], PathBuf)> = BTreeMap::new();

    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| ClientError::DocsDir {
            dir: dir.to_owned(),
            reason: e.to_string(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel_path = entry
            .path()
            .strip_prefix(dir)
            .expect("walked path is under the root")
            .to_owned();
        let bytes = fs::read(entry.path()).map_err(|e| ClientError::DocsDir {
            dir: dir.to_owned(),
            reason: format!("{}: {e}", rel_path.display()),
        })?;
        let digest = hash(&bytes);
        let id = match &id_map {
            Some(map) => *map.get(&rel_path).ok_or_else(|| ClientError::IdMap {
                line: 0,
                reason: format!("{} is not listed in the id map", rel_path.display()),
            })?,
            None => doc_id_from_content(&bytes),
        };
        match by_id.get(&id) {
            None => {
                by_id.insert(id, (digest, rel_path.clone()));
                docs.push(LoadedDoc {
                    id,
                    rel_path,
                    bytes,
                });
            }
            Some((prev_digest, _)) if *prev_digest == digest && id_map.is_none() => {
                // byte-identical duplicate of an already loaded document
                continue;
            }
            Some((_, prev_path)) => {
                return Err(ClientError::IdCollision {
                    id,
                    a: prev_path.clone(),
                    b: rel_path,
                });
            }
        }
    }
    Ok(docs)
}
