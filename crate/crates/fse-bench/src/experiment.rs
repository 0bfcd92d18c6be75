//! Drives a batch stream against a live server, checking the collection
//! against a cleartext ground truth after every update and recording the
//! per-update measurements as CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use fse_client::{docs::doc_id_from_content, index_gen, search_collection, Session};
use fse_core::crypto::{hash, MasterKey};
use fse_core::layout::IndexParams;
use fse_core::plain::{tokenize, PlainIndex};
use fse_core::DocId;

use crate::batch::Batches;
use crate::BenchError;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub params: IndexParams,
    /// Words sampled for the equivalence check after each batch (all words
    /// when the ground truth is smaller).
    pub sample_words: usize,
    /// Seed for sampling and for all build-side randomness.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            params: IndexParams::new(1, 3),
            sample_words: 100,
            seed: 0,
        }
    }
}

/// One CSV row: the per-update measurement set.
#[derive(Clone, Debug)]
pub struct BatchRow {
    pub batch_id: u64,
    pub docs_added: u64,
    pub words_added: u64,
    pub tuples_added: u64,
    pub wall_seconds: f64,
    pub transactions: u64,
    pub bytes_exchanged: u64,
    pub merged_orders: Vec<u32>,
    pub merged_words_downloaded: u64,
    pub merged_tuples_downloaded: u64,
    /// (order, tuples, disk bytes) per stored index after the batch.
    pub per_index: Vec<(u32, u64, u64)>,
}

pub const CSV_HEADER: &str = "batch_id,docs_added,words_added,tuples_added,wall_seconds,\
transactions,bytes_exchanged,merged_orders,merged_words_downloaded,\
merged_tuples_downloaded,per_index";

impl BatchRow {
    pub fn csv_line(&self) -> String {
        let join = |items: Vec<String>| items.join(";");
        format!(
            "{},{},{},{},{:.3},{},{},{},{},{},{}",
            self.batch_id,
            self.docs_added,
            self.words_added,
            self.tuples_added,
            self.wall_seconds,
            self.transactions,
            self.bytes_exchanged,
            join(self.merged_orders.iter().map(u32::to_string).collect()),
            self.merged_words_downloaded,
            self.merged_tuples_downloaded,
            join(
                self.per_index
                    .iter()
                    .map(|(order, tuples, bytes)| format!("{order}:{tuples}:{bytes}"))
                    .collect()
            ),
        )
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<BatchRow>,
    pub total_bytes_exchanged: u64,
    pub total_transactions: u64,
    /// Tuples in the ground-truth inverted index at the end.
    pub cumulative_tuples: u64,
    /// Orders stored on the server at the end.
    pub final_orders: Vec<u32>,
}

/// Runs every batch against the server at `addr` (whose data directory must
/// start empty), verifying after each one that stored orders are pairwise
/// distinct, the collection-wide tuple count matches the ground truth, and
/// a sampled word set searches identically to the ground truth.
///
/// With `out_csv` set, measurements stream to that file; raw per-word batch
/// counts go to a `<out>.words.csv` sidecar.
pub fn run_experiment(
    batches: &Batches,
    master: &MasterKey,
    addr: &str,
    cfg: &ExperimentConfig,
    out_csv: Option<&Path>,
) -> Result<ExperimentOutcome, BenchError> {
    let mut session = Session::connect(addr)?;
    let mut sample_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut build_rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b97f4a7c15));

    let mut csv = out_csv
        .map(|path| -> Result<_, std::io::Error> {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "{CSV_HEADER}")?;
            Ok(w)
        })
        .transpose()?;
    let mut sidecar = out_csv
        .map(|path| -> Result<_, std::io::Error> {
            let mut name = path.as_os_str().to_owned();
            name.push(".words.csv");
            let mut w = BufWriter::new(File::create(Path::new(&name))?);
            writeln!(w, "batch_id,word,docs")?;
            Ok(w)
        })
        .transpose()?;

    let no_stopwords = BTreeSet::new();
    let mut truth: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    let mut rows = Vec::with_capacity(batches.batches.len());

    for batch in &batches.batches {
        // assign content-hash ids, folding byte-identical duplicates
        let mut by_id: BTreeMap<DocId, [u8; 32]> = BTreeMap::new();
        let mut docs: Vec<(DocId, &[u8])> = Vec::with_capacity(batch.docs.len());
        for doc in &batch.docs {
            let digest = hash(&doc.bytes);
            let id = doc_id_from_content(&doc.bytes);
            match by_id.get(&id) {
                None => {
                    by_id.insert(id, digest);
                    docs.push((id, &doc.bytes));
                }
                Some(prev) if *prev == digest => continue,
                Some(_) => {
                    return Err(BenchError::IdCollision {
                        batch: batch.id,
                        doc: doc.name.clone(),
                    })
                }
            }
        }

        let mut working = PlainIndex::new();
        for (id, bytes) in &docs {
            for word in tokenize(bytes, &no_stopwords) {
                truth.entry(word.clone()).or_default().insert(id.0);
                working.insert_posting(&word, *id)?;
            }
        }
        let batch_postings = working.postings().clone();

        let outcome = index_gen(
            master,
            &mut working,
            docs.len() as u64,
            cfg.params,
            &mut session,
            &mut build_rng,
        )?;

        let listing = session.list_indexes()?;
        let mut orders: Vec<u32> = listing.iter().map(|m| m.order).collect();
        orders.sort_unstable();
        let distinct = orders.windows(2).all(|w| w[0] != w[1]);
        if !distinct {
            return Err(BenchError::OrdersCollide { batch: batch.id });
        }

        let truth_tuples: u64 = truth.values().map(|ids| ids.len() as u64).sum();
        let stored_tuples: u64 = listing.iter().map(|m| m.tuple_count).sum();
        if truth_tuples != stored_tuples {
            return Err(BenchError::TupleDrift {
                batch: batch.id,
                want: truth_tuples,
                got: stored_tuples,
            });
        }

        verify_sample(master, &mut session, &truth, cfg, &mut sample_rng, batch.id)?;

        let row = BatchRow {
            batch_id: batch.id,
            docs_added: docs.len() as u64,
            words_added: outcome.words_added,
            tuples_added: outcome.tuples_added,
            wall_seconds: outcome.wall_seconds,
            transactions: outcome.transactions,
            bytes_exchanged: outcome.bytes_sent + outcome.bytes_received,
            merged_orders: outcome.merged_orders.clone(),
            merged_words_downloaded: outcome.merged_words,
            merged_tuples_downloaded: outcome.merged_tuples,
            per_index: listing
                .iter()
                .map(|m| (m.order, m.tuple_count, m.disk_bytes()))
                .collect(),
        };
        if let Some(w) = csv.as_mut() {
            writeln!(w, "{}", row.csv_line())?;
            w.flush()?;
        }
        if let Some(w) = sidecar.as_mut() {
            for (word, ids) in &batch_postings {
                writeln!(w, "{},{},{}", batch.id, word, ids.len())?;
            }
            w.flush()?;
        }
        rows.push(row);
    }

    let listing = session.list_indexes()?;
    Ok(ExperimentOutcome {
        total_bytes_exchanged: rows.iter().map(|r| r.bytes_exchanged).sum(),
        total_transactions: rows.iter().map(|r| r.transactions).sum(),
        cumulative_tuples: truth.values().map(|ids| ids.len() as u64).sum(),
        final_orders: listing.iter().map(|m| m.order).collect(),
        rows,
    })
}

fn verify_sample(
    master: &MasterKey,
    session: &mut Session,
    truth: &BTreeMap<String, BTreeSet<u64>>,
    cfg: &ExperimentConfig,
    rng: &mut ChaCha20Rng,
    batch: u64,
) -> Result<(), BenchError> {
    let mut words: Vec<&String> = truth.keys().collect();
    words.shuffle(rng);
    words.truncate(cfg.sample_words.max(1));
    for word in words {
        let got = search_collection(master, session, word)?;
        let want: Vec<u64> = truth[word].iter().copied().collect();
        if got != want {
            return Err(BenchError::OracleMismatch {
                batch,
                word: word.clone(),
                want: want.len(),
                got: got.len(),
            });
        }
    }
    // words that cannot be in any vocabulary: digits never follow the
    // synthetic letter-only words, and these never appeared in truth
    for probe in 0..10 {
        let word = format!("zz{probe}absent{batch}");
        if truth.contains_key(&word) {
            continue;
        }
        let got = search_collection(master, session, &word)?;
        if !got.is_empty() {
            return Err(BenchError::OracleMismatch {
                batch,
                word,
                want: 0,
                got: got.len(),
            });
        }
    }
    Ok(())
}
