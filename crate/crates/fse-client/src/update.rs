//! The update operation: build an index for a batch, absorbing any stored
//! index whose order collides, until the result's order is free.
//!
//! An absorbed index is fully recovered before its delete is issued: the
//! word list comes from the encrypted meta blocks, the postings from the
//! ordinary search path, word by word. The caller keeps ownership of the
//! working posting map, so even if the final upload fails after deletes
//! were issued, nothing is lost — a later retry re-plans against the
//! surviving collection and carries the absorbed postings with it.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::RngCore;

use fse_core::build;
use fse_core::crypto::{derive_index_keys, make_token, MasterKey};
use fse_core::delta::{recover_delta, DeltaError};
use fse_core::layout::{order_of, IndexParams};
use fse_core::plain::PlainIndex;
use fse_core::wire::Manifest;
use fse_core::{DocId, Salt};

use crate::session::Session;
use crate::ClientError;

/// Machine-readable summary of one update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateOutcome {
    pub docs_added: u64,
    /// Distinct words in the new batch.
    pub words_added: u64,
    /// Tuples in the new batch, before any merge.
    pub tuples_added: u64,
    /// Orders absorbed, in absorption sequence.
    pub merged_orders: Vec<u32>,
    /// Words recovered from absorbed indexes.
    pub merged_words: u64,
    /// Tuples recovered from absorbed indexes.
    pub merged_tuples: u64,
    /// Order of the uploaded index; `None` for a no-op update.
    pub final_order: Option<u32>,
    /// Tuple count of the uploaded index.
    pub final_tuple_count: u64,
    pub wall_seconds: f64,
    pub transactions: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl UpdateOutcome {
    /// The stable one-line key=value form the CLI prints and the harness
    /// parses.
    pub fn summary_line(&self) -> String {
        let orders: Vec<String> = self.merged_orders.iter().map(u32::to_string).collect();
        format!(
            "docs={} new_words={} new_tuples={} merged_orders={} merged_words={} \
             merged_tuples={} final_order={} final_n={} seconds={:.3} transactions={} \
             bytes_sent={} bytes_received={}",
            self.docs_added,
            self.words_added,
            self.tuples_added,
            orders.join(","),
            self.merged_words,
            self.merged_tuples,
            self.final_order.map(|o| o.to_string()).unwrap_or_default(),
            self.final_tuple_count,
            self.wall_seconds,
            self.transactions,
            self.bytes_sent,
            self.bytes_received,
        )
    }
}

/// Runs one update. `working` starts as the batch's posting map and absorbs
/// merged postings as the cascade proceeds; it stays valid for a retry if
/// the update fails partway.
pub fn index_gen(
    master: &MasterKey,
    working: &mut PlainIndex,
    docs_added: u64,
    params: IndexParams,
    session: &mut Session,
    rng: &mut dyn RngCore,
) -> Result<UpdateOutcome, ClientError> {
    let started = Instant::now();
    let before = session.counters();
    let mut outcome = UpdateOutcome {
        docs_added,
        words_added: working.word_count(),
        tuples_added: working.tuple_count(),
        ..UpdateOutcome::default()
    };
    if working.is_empty() {
        return Ok(outcome);
    }

    let mut by_order: BTreeMap<u32, Manifest> = BTreeMap::new();
    for manifest in session.list_indexes()? {
        if by_order.insert(manifest.order, manifest).is_some() {
            return Err(ClientError::CollectionInvariant(
                "server listed two indexes of the same order",
            ));
        }
    }

    // absorb stored indexes until the candidate order is free
    loop {
        let order = order_of(working.tuple_count());
        let Some(manifest) = by_order.remove(&order) else {
            break;
        };
        let (words, tuples) = absorb(master, working, session, &manifest)?;
        outcome.merged_orders.push(order);
        outcome.merged_words += words;
        outcome.merged_tuples += tuples;
        // download finished and verified: the old index may now go
        session.delete_index(manifest.index_id)?;
    }

    let salt = Salt::random(rng);
    let keys = derive_index_keys(master, &salt);
    let index = build::setup(&keys, salt, working, params, rng)?;

    // The absorbed indexes are already deleted, so the upload must land.
    // On a transport failure, reconnect and either find our index already
    // committed (the ack was lost) or upload it again from scratch.
    let mut attempts = 0;
    loop {
        match session.upload(&index) {
            Ok(()) => break,
            Err(e) if e.is_transport() && attempts < 3 => {
                attempts += 1;
                session.reconnect()?;
                let listed = session.list_indexes()?;
                if listed.iter().any(|m| m.index_id == index.manifest.index_id) {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }

    let after = session.counters();
    outcome.final_order = Some(index.manifest.order);
    outcome.final_tuple_count = index.manifest.tuple_count;
    outcome.wall_seconds = started.elapsed().as_secs_f64();
    outcome.transactions = after.transactions - before.transactions;
    outcome.bytes_sent = after.bytes_sent - before.bytes_sent;
    outcome.bytes_received = after.bytes_received - before.bytes_received;
    Ok(outcome)
}

/// Recovers one stored index into `working`: word list from the encrypted
/// blocks, postings per word through the search path. Returns how many
/// words and tuples were downloaded.
fn absorb(
    master: &MasterKey,
    working: &mut PlainIndex,
    session: &mut Session,
    manifest: &Manifest,
) -> Result<(u64, u64), ClientError> {
    let keys = derive_index_keys(master, &manifest.salt);
    let index_id = manifest.index_id;
    let words =
        recover_delta(&keys, |key| session.get_meta(index_id, key)).map_err(|e| match e {
            DeltaError::Fetch { source, .. } => source,
            DeltaError::Malformed(m) => ClientError::MergeRecovery {
                index_id,
                reason: m.to_string(),
            },
        })?;
    if words.is_empty() {
        return Err(ClientError::MergeRecovery {
            index_id,
            reason: "no word-list blocks found".into(),
        });
    }

    let mut recovered_tuples = 0u64;
    for word in &words {
        let token = make_token(&keys, word.as_bytes()).map_err(|e| ClientError::MergeRecovery {
            index_id,
            reason: format!("word {word:?}: {e}"),
        })?;
        let ids = session.search(vec![(index_id, token)])?;
        recovered_tuples += ids.len() as u64;
        for id in ids {
            working
                .insert_posting(word, DocId(id))
                .map_err(|e| ClientError::MergeRecovery {
                    index_id,
                    reason: e.to_string(),
                })?;
        }
    }
    if recovered_tuples != manifest.tuple_count {
        return Err(ClientError::MergeRecovery {
            index_id,
            reason: format!(
                "recovered {recovered_tuples} tuples but the manifest records {}",
                manifest.tuple_count
            ),
        });
    }
    Ok((words.len() as u64, recovered_tuples))
}
