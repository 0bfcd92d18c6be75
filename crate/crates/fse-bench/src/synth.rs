//! Deterministic synthetic document stream: a Zipf-weighted vocabulary
//! sampled into date-stamped documents, reproducible from the seed alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub days: u32,
    pub vocab: u32,
    pub zipf_exponent: f64,
    /// Inclusive range of words per document.
    pub words_per_doc: (u32, u32),
    /// Inclusive range of documents per day.
    pub docs_per_day: (u32, u32),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            days: 180,
            vocab: 20_000,
            zipf_exponent: 1.1,
            words_per_doc: (50, 500),
            docs_per_day: (20, 80),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDoc {
    pub day: u32,
    pub name: String,
    pub body: Vec<u8>,
}

/// Rank-weighted sampler over word indexes: weight of rank k is
/// 1/(k+1)^s, drawn by binary search over the cumulative sum.
struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    fn new(n: u32, exponent: f64) -> Self {
        assert!(n >= 1);
        let mut cumulative = Vec::with_capacity(n as usize);
        let mut total = 0.0;
        for k in 0..n {
            total += 1.0 / ((k + 1) as f64).powf(exponent);
            cumulative.push(total);
        }
        ZipfSampler { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha20Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let target = rng.random_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= target)
    }
}

fn make_vocabulary(count: u32, rng: &mut ChaCha20Rng) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut vocab = Vec::with_capacity(count as usize);
    while vocab.len() < count as usize {
        let len = rng.random_range(3..=10);
        let word: String = (0..len)
            .map(|_| (b'a' + rng.random_range(0..26u8)) as char)
            .collect();
        if seen.insert(word.clone()) {
            vocab.push(word);
        }
    }
    vocab
}

/// Generates the full stream for `spec`, in day order. Equal specs yield
/// byte-identical streams.
pub fn generate_stream(spec: &SyntheticSpec) -> Vec<SyntheticDoc> {
    assert!(spec.days >= 1 && spec.vocab >= 1);
    assert!(spec.words_per_doc.0 >= 1 && spec.words_per_doc.0 <= spec.words_per_doc.1);
    assert!(spec.docs_per_day.0 <= spec.docs_per_day.1);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let vocab = make_vocabulary(spec.vocab, &mut rng);
    let sampler = ZipfSampler::new(spec.vocab, spec.zipf_exponent);

    let mut docs = Vec::new();
    for day in 0..spec.days {
        let today = rng.random_range(spec.docs_per_day.0..=spec.docs_per_day.1);
        for doc in 0..today {
            let words = rng.random_range(spec.words_per_doc.0..=spec.words_per_doc.1);
            let mut body = Vec::new();
            for w in 0..words {
                body.extend_from_slice(vocab[sampler.sample(&mut rng)].as_bytes());
                body.push(if w % 12 == 11 { b'\n' } else { b' ' });
            }
            docs.push(SyntheticDoc {
                day,
                name: format!("day{day:04}_doc{doc:04}.txt"),
                body,
            });
        }
    }
    docs
}
