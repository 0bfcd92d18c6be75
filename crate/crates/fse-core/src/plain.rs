//! Keyword extraction and the cleartext posting map an index is built from.

use std::collections::{BTreeMap, BTreeSet};

use crate::build::BuildError;
use crate::DocId;

/// Tokens shorter than this are dropped.
pub const MIN_WORD_LEN: usize = 2;
/// Tokens longer than this are dropped; also the hard cap any indexed word
/// must satisfy (the word-list block format depends on it).
pub const MAX_WORD_LEN: usize = 64;

/// True if `word` may be stored in an index: nonempty, at most 64 bytes,
/// and free of control bytes. Tokenizer output always qualifies; words
/// recovered from a foreign index are checked against this on ingest.
pub fn valid_word(word: &str) -> bool {
    !word.is_empty() && word.len() <= MAX_WORD_LEN && word.bytes().all(|b| b >= 0x20)
}

/// Extracts the deduplicated keyword set of one document: ASCII-lowercased,
/// split on any byte outside [a-z0-9], length-filtered, minus stopwords.
/// Binary input is safe and simply yields few or no tokens.
pub fn tokenize(text: &[u8], stopwords: &BTreeSet<String>) -> BTreeSet<String> {
    let mut words = BTreeSet::new();
    let mut current = String::new();
    for &byte in text {
        let b = byte.to_ascii_lowercase();
        if b.is_ascii_lowercase() || b.is_ascii_digit() {
            if current.len() <= MAX_WORD_LEN {
                current.push(b as char);
            }
        } else if !current.is_empty() {
            take_token(&mut current, stopwords, &mut words);
        }
    }
    take_token(&mut current, stopwords, &mut words);
    words
}

fn take_token(current: &mut String, stopwords: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    if (MIN_WORD_LEN..=MAX_WORD_LEN).contains(&current.len())
        && !stopwords.contains(current.as_str())
    {
        out.insert(std::mem::take(current));
    } else {
        current.clear();
    }
}

/// Cleartext word → document-id map. The tuple count N is the sum of all
/// posting-list lengths; the word list Δ is the sorted key set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlainIndex {
    postings: BTreeMap<String, BTreeSet<DocId>>,
}

impl PlainIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the map from a document batch. Ids must be unique within the
    /// batch.
    pub fn from_documents<'a, I>(docs: I, stopwords: &BTreeSet<String>) -> Result<Self, BuildError>
    where
        I: IntoIterator<Item = (DocId, &'a [u8])>,
    {
        let mut index = PlainIndex::new();
        let mut seen = BTreeSet::new();
        for (id, text) in docs {
            if !seen.insert(id) {
                return Err(BuildError::DuplicateDocId(id));
            }
            for word in tokenize(text, stopwords) {
                index.postings.entry(word).or_default().insert(id);
            }
        }
        Ok(index)
    }

    /// Records that `id`'s document contains `word`. Used when absorbing a
    /// previously built index, so the word is validated rather than trusted.
    pub fn insert_posting(&mut self, word: &str, id: DocId) -> Result<(), BuildError> {
        if !valid_word(word) {
            return Err(BuildError::InvalidWord(word.into()));
        }
        self.postings.entry(word.to_owned()).or_default().insert(id);
        Ok(())
    }

    pub fn postings(&self) -> &BTreeMap<String, BTreeSet<DocId>> {
        &self.postings
    }

    pub fn ids(&self, word: &str) -> Option<&BTreeSet<DocId>> {
        self.postings.get(word)
    }

    /// Δ, the sorted list of indexed words.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn word_count(&self) -> u64 {
        self.postings.len() as u64
    }

    /// N, the total number of (word, id) tuples.
    pub fn tuple_count(&self) -> u64 {
        self.postings.values().map(|ids| ids.len() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }
}
