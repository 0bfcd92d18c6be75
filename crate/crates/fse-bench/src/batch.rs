//! Groups a document stream into consecutive date windows.
//!
//! Directory sources are date-stamped like mail files: the first `Date:`
//! header line fixes the document's day. Documents whose date is missing or
//! unparsable land in a reject list rather than being silently dropped.

use std::fs;
use std::path::PathBuf;

use chrono::Datelike;

use crate::synth::{generate_stream, SyntheticSpec};
use crate::BenchError;

#[derive(Clone, Debug)]
pub enum Source {
    Directory(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug)]
pub struct BatchSpec {
    pub window_days: u32,
    pub source: Source,
}

#[derive(Clone, Debug)]
pub struct BatchDoc {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Consecutive window number, starting at 0 for the earliest window.
    pub id: u64,
    pub docs: Vec<BatchDoc>,
}

#[derive(Debug, Default)]
pub struct Batches {
    pub batches: Vec<Batch>,
    /// Documents that could not be dated, with the reason.
    pub rejected: Vec<(PathBuf, String)>,
}

/// Day number of the first `Date:` header in a mail-like file.
fn document_day(bytes: &[u8]) -> Result<i64, String> {
    let text = String::from_utf8_lossy(bytes);
    for line in text.lines() {
        if line.is_empty() {
            break; // end of the header block
        }
        let Some(value) = line
            .get(..5)
            .filter(|p| p.eq_ignore_ascii_case("date:"))
            .map(|_| line[5..].trim())
        else {
            continue;
        };
        // drop a trailing "(PDT)"-style comment the RFC 2822 parser rejects
        let value = match value.rfind('(') {
            Some(open) if value.ends_with(')') => value[..open].trim(),
            _ => value,
        };
        return chrono::DateTime::parse_from_rfc2822(value)
            .map(|dt| dt.date_naive().num_days_from_ce() as i64)
            .map_err(|e| format!("unparsable date {value:?}: {e}"));
    }
    Err("no Date: header line".into())
}

fn window_batches(mut dated: Vec<(i64, BatchDoc)>, window_days: u32) -> Vec<Batch> {
    assert!(window_days >= 1);
    if dated.is_empty() {
        return Vec::new();
    }
    dated.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.name.cmp(&b.1.name)));
    let first_day = dated[0].0;
    let mut batches: Vec<Batch> = Vec::new();
    for (day, doc) in dated {
        let id = ((day - first_day) as u64) / window_days as u64;
        match batches.last_mut() {
            Some(last) if last.id == id => last.docs.push(doc),
            _ => batches.push(Batch {
                id,
                docs: vec![doc],
            }),
        }
    }
    batches
}

/// Loads the source and partitions it into consecutive `window_days`-wide
/// batches. Windows with no documents produce no batch.
pub fn make_batches(spec: &BatchSpec) -> Result<Batches, BenchError> {
    match &spec.source {
        Source::Synthetic(synth) => {
            let dated = generate_stream(synth)
                .into_iter()
                .map(|doc| {
                    (
                        doc.day as i64,
                        BatchDoc {
                            name: doc.name,
                            bytes: doc.body,
                        },
                    )
                })
                .collect();
            Ok(Batches {
                batches: window_batches(dated, spec.window_days),
                rejected: Vec::new(),
            })
        }
        Source::Directory(dir) => {
            let mut dated = Vec::new();
            let mut rejected = Vec::new();
            for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
                let entry = entry.map_err(|e| BenchError::Source {
                    path: dir.clone(),
                    reason: e.to_string(),
                })?;
                if !entry.file_type().is_file() {
                    continue;
                }
                let path = entry.path();
                let bytes = fs::read(path).map_err(|e| BenchError::Source {
                    path: path.to_owned(),
                    reason: e.to_string(),
                })?;
                match document_day(&bytes) {
                    Ok(day) => dated.push((
                        day,
                        BatchDoc {
                            name: path
                                .strip_prefix(dir)
                                .unwrap_or(path)
                                .to_string_lossy()
                                .into_owned(),
                            bytes,
                        },
                    )),
                    Err(reason) => rejected.push((path.to_owned(), reason)),
                }
            }
            if dated.is_empty() {
                return Err(BenchError::Source {
                    path: dir.clone(),
                    reason: format!("no datable documents ({} rejected)", rejected.len()),
                });
            }
            Ok(Batches {
                batches: window_batches(dated, spec.window_days),
                rejected,
            })
        }
    }
}
