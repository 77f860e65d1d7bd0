//! Vocabulary construction, subword n-gram hashing and the negative-sampling
//! distribution.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Words with their corpus counts, ordered by descending count.
///
/// Ties are broken lexicographically so ids are deterministic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary from `(word, count)` pairs in any order.
    pub fn from_counts<I>(counts: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        if entries.is_empty() {
            return Err(Error::Data(format!(
                "no word occurs at least {min_count} times"
            )));
        }
        entries.sort_by(|(wa, ca), (wb, cb)| cb.cmp(ca).then_with(|| wa.cmp(wb)));

        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        let (words, counts) = entries.into_iter().unzip();

        Ok(Vocabulary {
            words,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Sum of the counts of all retained words.
    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Write `word<TAB>count` lines in id order.
    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        for (word, count) in self.words.iter().zip(&self.counts) {
            writeln!(writer, "{word}\t{count}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut counts = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(idx + 1, "expected word<TAB>count"))?;
            let count = count
                .parse()
                .map_err(|_| Error::parse(idx + 1, format!("invalid count `{count}`")))?;
            counts.push((word.to_owned(), count));
        }
        Vocabulary::from_counts(counts, 0)
    }
}

/// Count tokens and keep the words occurring at least `min_count` times.
pub fn build_vocab<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for token in tokens {
        let token = token.as_ref();
        match counts.get_mut(token) {
            Some(c) => *c += 1,
            None => {
                counts.insert(token.to_owned(), 1);
            }
        }
    }
    Vocabulary::from_counts(counts, min_count)
}

pub const DEFAULT_BUCKETS: usize = 2_000_000;

/// Extracts boundary-marked character n-grams and maps them to hash buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubwordIndexer {
    min_n: usize,
    max_n: usize,
    buckets: usize,
}

impl SubwordIndexer {
    pub fn new(min_n: usize, max_n: usize, buckets: usize) -> Result<Self> {
        if min_n == 0 || min_n > max_n {
            return Err(Error::InvalidArgument(format!(
                "n-gram bounds must satisfy 1 <= min_n <= max_n, got {min_n}..{max_n}"
            )));
        }
        if max_n > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "max_n must fit in a byte, got {max_n}"
            )));
        }
        if buckets == 0 {
            return Err(Error::InvalidArgument("bucket count must be positive".into()));
        }
        Ok(SubwordIndexer {
            min_n,
            max_n,
            buckets,
        })
    }

    pub fn min_n(&self) -> usize {
        self.min_n
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// N-grams of `<word>`, shorter lengths first, left to right.
    ///
    /// When the marked form is shorter than `min_n` the whole marked form is
    /// the only n-gram, so every word has at least one subword.
    pub fn ngrams(&self, word: &str) -> Vec<String> {
        let marked: Vec<char> = std::iter::once('<')
            .chain(word.chars())
            .chain(std::iter::once('>'))
            .collect();
        if marked.len() < self.min_n {
            return vec![marked.iter().collect()];
        }

        let mut ngrams = Vec::new();
        for n in self.min_n..=self.max_n.min(marked.len()) {
            for window in marked.windows(n) {
                ngrams.push(window.iter().collect());
            }
        }
        ngrams
    }

    /// Bucket indices of the n-grams of `word`, in [`ngrams`](Self::ngrams) order.
    pub fn subword_indices(&self, word: &str) -> Vec<usize> {
        self.ngrams(word)
            .iter()
            .map(|ngram| ngram_bucket(ngram, self.buckets))
            .collect()
    }
}

pub fn extract_ngrams(word: &str, indexer: &SubwordIndexer) -> Vec<String> {
    indexer.ngrams(word)
}

/// 32-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a_32(s: &str) -> u32 {
    const OFFSET: u32 = 0x811c_9dc5;
    const PRIME: u32 = 0x0100_0193;
    s.bytes()
        .fold(OFFSET, |h, b| (h ^ b as u32).wrapping_mul(PRIME))
}

pub fn ngram_bucket(ngram: &str, buckets: usize) -> usize {
    assert!(buckets > 0, "bucket count must be positive");
    fnv1a_32(ngram) as usize % buckets
}

pub const NEGATIVE_SAMPLING_POWER: f64 = 0.75;

/// Draws word ids with probability proportional to `count^power`.
///
/// Sampling is a binary search over the cumulative mass table. The sampler
/// holds no RNG; callers bring their own.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary, power: f64) -> Result<Self> {
        Self::from_counts(vocab.counts(), power)
    }

    pub fn from_counts(counts: &[u64], power: f64) -> Result<Self> {
        let mut total = 0.0;
        let cumulative: Vec<f64> = counts
            .iter()
            .map(|&c| {
                total += (c as f64).powf(power);
                total
            })
            .collect();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Data("negative-sampling mass must be positive".into()));
        }
        Ok(NegativeSampler { cumulative })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Unnormalized sampling mass of `id`.
    pub fn mass(&self, id: usize) -> f64 {
        match id {
            0 => self.cumulative[0],
            _ => self.cumulative[id] - self.cumulative[id - 1],
        }
    }

    pub fn total_mass(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn probability(&self, id: usize) -> f64 {
        self.mass(id) / self.total_mass()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let target = rng.random::<f64>() * self.total_mass();
        let idx = self.cumulative.partition_point(|&c| c <= target);
        // target < total, but rounding can still land on the end.
        idx.min(self.cumulative.len() - 1)
    }
}

pub fn build_negative_sampler(vocab: &Vocabulary, power: f64) -> Result<NegativeSampler> {
    NegativeSampler::new(vocab, power)
}
