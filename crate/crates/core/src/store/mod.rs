//! Immutable embedding stores.
//!
//! A store is a word table in vocabulary order, optionally extended with a
//! table of hashed character n-gram buckets. Subword stores compose a vector
//! for any word, including words missing from the word table, as the mean of
//! the word row (when present) and the rows of its n-gram buckets.

mod binary;
mod text;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

pub use binary::{read_binary, write_binary, BINARY_MAGIC, BINARY_VERSION};
pub use text::{read_text, write_text};

use crate::error::{Error, Result};
use crate::vocab::SubwordIndexer;

/// Default vocabulary cut-off for analogy evaluation.
pub const DEFAULT_RESTRICT_VOCAB: usize = 400_000;

/// Hashed n-gram rows of a subword store.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordTable {
    indexer: SubwordIndexer,
    buckets: Vec<f32>,
}

impl SubwordTable {
    pub fn indexer(&self) -> &SubwordIndexer {
        &self.indexer
    }

    /// Bucket rows, `buckets × dim`, row-major.
    pub fn rows(&self) -> &[f32] {
        &self.buckets
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Neighbor {
    pub word: String,
    pub id: usize,
    pub similarity: f32,
}

#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    table: Vec<f32>,
    subwords: Option<SubwordTable>,
    // Unit-length copies of vector(word) for every word, for queries.
    unit: Vec<f32>,
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.words == other.words
            && self.table == other.table
            && self.subwords == other.subwords
    }
}

impl EmbeddingStore {
    /// Create a plain store from words and a row-major `V × dim` table.
    pub fn new(words: Vec<String>, dim: usize, table: Vec<f32>) -> Result<Self> {
        Self::build(words, dim, table, None)
    }

    /// Create a subword store. `buckets` holds `indexer.buckets() × dim` values.
    pub fn with_subwords(
        words: Vec<String>,
        dim: usize,
        table: Vec<f32>,
        indexer: SubwordIndexer,
        buckets: Vec<f32>,
    ) -> Result<Self> {
        if buckets.len() != indexer.buckets() * dim {
            return Err(Error::InvalidArgument(format!(
                "bucket table has {} values, expected {} × {dim}",
                buckets.len(),
                indexer.buckets()
            )));
        }
        if buckets.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("bucket table contains non-finite values".into()));
        }
        Self::build(words, dim, table, Some(SubwordTable { indexer, buckets }))
    }

    fn build(
        words: Vec<String>,
        dim: usize,
        table: Vec<f32>,
        subwords: Option<SubwordTable>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if table.len() != words.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "word table has {} values, expected {} × {dim}",
                table.len(),
                words.len()
            )));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("word table contains non-finite values".into()));
        }

        let mut index = HashMap::with_capacity(words.len());
        for (id, word) in words.iter().enumerate() {
            if index.insert(word.clone(), id).is_some() {
                return Err(Error::Data(format!("duplicate word `{word}`")));
            }
        }

        let mut store = EmbeddingStore {
            dim,
            words,
            index,
            table,
            subwords,
            unit: Vec::new(),
        };
        store.unit = store.compute_unit_rows();
        Ok(store)
    }

    fn compute_unit_rows(&self) -> Vec<f32> {
        let mut unit = Vec::with_capacity(self.table.len());
        for id in 0..self.len() {
            let v = self.compose(Some(id), &self.words[id]);
            unit.extend(normalized(&v));
        }
        unit
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// The raw word-table row, without subword composition.
    pub fn row(&self, id: usize) -> &[f32] {
        &self.table[id * self.dim..(id + 1) * self.dim]
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    pub fn subwords(&self) -> Option<&SubwordTable> {
        self.subwords.as_ref()
    }

    pub fn has_subwords(&self) -> bool {
        self.subwords.is_some()
    }

    /// Unit-length `vector(word(id))`, or all zeros for a zero vector.
    pub fn unit_row(&self, id: usize) -> &[f32] {
        &self.unit[id * self.dim..(id + 1) * self.dim]
    }

    fn bucket_row(&self, bucket: usize) -> &[f32] {
        let table = self.subwords.as_ref().expect("subword store");
        &table.buckets[bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Vector of `word`, composing from subwords when the store has them.
    pub fn vector(&self, word: &str) -> Option<Vec<f32>> {
        self.vector_within(word, self.len())
    }

    /// Like [`vector`](Self::vector), but only the first `limit` words of the
    /// word table count as in-vocabulary.
    pub fn vector_within(&self, word: &str, limit: usize) -> Option<Vec<f32>> {
        let id = self.id(word).filter(|&id| id < limit);
        match (&self.subwords, id) {
            (None, None) => None,
            (None, Some(id)) => Some(self.row(id).to_vec()),
            (Some(_), id) => Some(self.compose(id, word)),
        }
    }

    fn compose(&self, id: Option<usize>, word: &str) -> Vec<f32> {
        let Some(subwords) = &self.subwords else {
            return self.row(id.expect("plain stores have no OOV vectors")).to_vec();
        };

        let mut sum = vec![0f64; self.dim];
        let mut rows = 0usize;
        let mut add = |row: &[f32]| {
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += v as f64;
            }
            rows += 1;
        };
        if let Some(id) = id {
            add(self.row(id));
        }
        for bucket in subwords.indexer.subword_indices(word) {
            add(self.bucket_row(bucket));
        }
        sum.into_iter().map(|s| (s / rows as f64) as f32).collect()
    }

    /// Top-`k` words by cosine similarity to `query`.
    ///
    /// Words in `exclude` are never returned. Ties are broken by ascending
    /// word id. A zero query gives similarity 0 for every word.
    pub fn nearest(&self, query: &[f32], k: usize, exclude: &[&str]) -> Result<Vec<Neighbor>> {
        self.nearest_within(query, k, exclude, self.len())
    }

    pub fn nearest_within(
        &self,
        query: &[f32],
        k: usize,
        exclude: &[&str],
        limit: usize,
    ) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "query has dimension {}, store has {}",
                query.len(),
                self.dim
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }

        let query = normalized(query);
        let excluded: HashSet<usize> = exclude.iter().filter_map(|w| self.id(w)).collect();

        // Min-heap on (similarity, reverse id): the root is the worst kept entry.
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for id in 0..limit.min(self.len()) {
            if excluded.contains(&id) {
                continue;
            }
            let similarity = dot(self.unit_row(id), &query);
            let candidate = Candidate { similarity, id };
            if heap.len() < k {
                heap.push(candidate);
            } else if candidate < *heap.peek().unwrap() {
                heap.pop();
                heap.push(candidate);
            }
        }

        let mut best = heap.into_vec();
        best.sort();
        Ok(best
            .into_iter()
            .map(|c| Neighbor {
                word: self.words[c.id].clone(),
                id: c.id,
                similarity: c.similarity,
            })
            .collect())
    }

    /// Keep the first `n` words. Any subword table is kept as is.
    pub fn restrict_vocab(&self, n: usize) -> EmbeddingStore {
        if n >= self.len() {
            return self.clone();
        }
        let mut words = self.words.clone();
        words.truncate(n);
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        EmbeddingStore {
            dim: self.dim,
            words,
            index,
            table: self.table[..n * self.dim].to_vec(),
            subwords: self.subwords.clone(),
            unit: self.unit[..n * self.dim].to_vec(),
        }
    }

    /// Save in the text format. Subword stores cannot be written as text.
    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        write_text(std::io::BufWriter::new(file), self)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        read_text(BufReader::new(File::open(path)?))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        write_binary(std::io::BufWriter::new(file), self)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        read_binary(BufReader::new(File::open(path)?))
    }

    /// Load either format, detected by the binary magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut magic = [0u8; 4];
        let is_binary = {
            let mut file = File::open(path)?;
            let mut read = 0;
            while read < 4 {
                match file.read(&mut magic[read..])? {
                    0 => break,
                    n => read += n,
                }
            }
            read == 4 && &magic == BINARY_MAGIC
        };
        if is_binary {
            Self::load_binary(path)
        } else {
            Self::load_text(path)
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    similarity: f32,
    id: usize,
}

// "Less" means better: higher similarity, then lower id.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

pub(crate) fn dot(u: &[f32], v: &[f32]) -> f32 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// `v / |v|`, or a zero vector when `v` is zero.
pub fn normalized(v: &[f32]) -> Vec<f32> {
    let norm = l2_norm(v);
    if norm == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|&x| (x as f64 / norm) as f32).collect()
}

/// Cosine similarity. Zero vectors have no direction and are rejected.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "vectors have different dimensions ({} and {})",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0) as f32)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    use super::*;
    use crate::vocab::ngram_bucket;

    fn plain(words: &[&str], rows: &[&[f32]]) -> EmbeddingStore {
        let dim = rows[0].len();
        EmbeddingStore::new(
            words.iter().map(|w| w.to_string()).collect(),
            dim,
            rows.concat(),
        )
        .unwrap()
    }

    fn random_store(rng: &mut impl Rng, n: usize, dim: usize) -> EmbeddingStore {
        let words = (0..n).map(|i| format!("w{i}")).collect();
        let table = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingStore::new(words, dim, table).unwrap()
    }

    #[test]
    fn plain_lookup() {
        let s = plain(&["a", "b"], &[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(s.vector("b"), Some(vec![3.0, 4.0]));
        assert_eq!(s.vector("zzz"), None);
        assert_eq!(s.vector_within("b", 1), None);
    }

    #[test]
    fn oov_composition_from_buckets() {
        let indexer = SubwordIndexer::new(3, 3, 5).unwrap();
        let buckets: Vec<f32> = (0..10).map(|i| i as f32).collect();
        let s = EmbeddingStore::with_subwords(vec!["x".into()], 2, vec![100.0, 100.0], indexer, buckets.clone())
            .unwrap();

        // Gather buckets by hand.
        let b1 = ngram_bucket("<ab", 5);
        let b2 = ngram_bucket("ab>", 5);
        let expected: Vec<f32> = (0..2)
            .map(|d| (buckets[b1 * 2 + d] + buckets[b2 * 2 + d]) / 2.0)
            .collect();
        assert_eq!(s.vector("ab").unwrap(), expected);
    }

    #[test]
    fn single_bucket_gives_that_row() {
        let indexer = SubwordIndexer::new(2, 4, 1).unwrap();
        let s = EmbeddingStore::with_subwords(vec![], 3, vec![], indexer, vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(s.vector("whatever").unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn in_vocab_subword_vector_includes_word_row() {
        let indexer = SubwordIndexer::new(3, 3, 1).unwrap();
        let s = EmbeddingStore::with_subwords(vec!["a".into()], 1, vec![4.0], indexer, vec![1.0]).unwrap();
        // "<a>" is one n-gram: mean of word row and one bucket row.
        assert_eq!(s.vector("a").unwrap(), vec![2.5]);
        assert_eq!(s.vector_within("a", 0).unwrap(), vec![1.0]);
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 1.5];
        let neg = v.map(|x| -x);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-7);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-7);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn nearest_basics() {
        let s = plain(&["a", "b", "c"], &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        assert!(s.nearest(&[1.0, 0.0], 0, &[]).unwrap().is_empty());

        let q = s.vector("b").unwrap();
        let top = s.nearest(&q, 1, &[]).unwrap();
        assert_eq!(top[0].word, "b");
        assert!((top[0].similarity - 1.0).abs() < 1e-6);

        let top = s.nearest(&q, 3, &["b"]).unwrap();
        assert_eq!(top.iter().map(|n| n.word.as_str()).collect::<Vec<_>>(), ["c", "a"]);
        assert!(s.nearest(&[1.0], 1, &[]).is_err());
    }

    #[test]
    fn nearest_ties_break_by_id() {
        let s = plain(&["a", "b", "c"], &[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 0.0]]);
        let top = s.nearest(&[1.0, 0.0], 2, &[]).unwrap();
        assert_eq!((top[0].id, top[1].id), (1, 2));
    }

    #[test]
    fn nearest_matches_exhaustive_scan() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_store(&mut rng, 50, 8);
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

            let mut oracle: Vec<(f64, usize)> = (0..50)
                .map(|id| {
                    let row = s.row(id);
                    let dot: f64 = row.iter().zip(&q).map(|(&a, &b)| a as f64 * b as f64).sum();
                    let nr: f64 = row.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
                    let nq: f64 = q.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
                    (dot / (nr * nq), id)
                })
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

            let got: Vec<usize> = s.nearest(&q, 5, &[]).unwrap().iter().map(|n| n.id).collect();
            let want: Vec<usize> = oracle[..5].iter().map(|&(_, id)| id).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn restrict_vocab_keeps_prefix() {
        let s = plain(&["a", "b", "c"], &[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(s.restrict_vocab(3), s);
        assert_eq!(s.restrict_vocab(10), s);
        let one = s.restrict_vocab(1);
        assert_eq!(one.words(), ["a"]);
        assert_eq!(one.vector("b"), None);
        assert_eq!(DEFAULT_RESTRICT_VOCAB, 400_000);
    }

    #[test]
    fn restrict_keeps_subword_table() {
        let indexer = SubwordIndexer::new(3, 3, 4).unwrap();
        let s = EmbeddingStore::with_subwords(
            vec!["a".into(), "b".into()],
            1,
            vec![1.0, 2.0],
            indexer,
            vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let r = s.restrict_vocab(1);
        assert_eq!(r.subwords(), s.subwords());
        assert_eq!(r.vector("b"), s.vector_within("b", 1));
    }

    #[test]
    fn construction_validation() {
        assert!(EmbeddingStore::new(vec!["a".into(), "a".into()], 1, vec![1.0, 2.0]).is_err());
        assert!(EmbeddingStore::new(vec!["a".into()], 2, vec![1.0]).is_err());
        assert!(EmbeddingStore::new(vec!["a".into()], 1, vec![f32::NAN]).is_err());
        assert!(EmbeddingStore::new(vec!["a".into()], 0, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn nearest_is_scale_invariant(seed: u64, scale in 0.001f32..1000.0) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let s = random_store(&mut rng, 30, 6);
            let q: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f32> = q.iter().map(|x| x * scale).collect();
            let a: Vec<usize> = s.nearest(&q, 5, &[]).unwrap().iter().map(|n| n.id).collect();
            let b: Vec<usize> = s.nearest(&scaled, 5, &[]).unwrap().iter().map(|n| n.id).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn composition_is_exact_mean(word in "[a-d]{1,6}", seed: u64) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let indexer = SubwordIndexer::new(2, 3, 7).unwrap();
            let buckets: Vec<f32> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = EmbeddingStore::with_subwords(vec!["ab".into()], 2, vec![0.25, -0.5], indexer, buckets.clone()).unwrap();

            let mut rows: Vec<&[f32]> = Vec::new();
            if word == "ab" {
                rows.push(&[0.25, -0.5]);
            }
            for b in indexer.subword_indices(&word) {
                rows.push(&buckets[b * 2..b * 2 + 2]);
            }
            let expected: Vec<f32> = (0..2)
                .map(|d| (rows.iter().map(|r| r[d] as f64).sum::<f64>() / rows.len() as f64) as f32)
                .collect();
            prop_assert_eq!(s.vector(&word).unwrap(), expected.clone());
            prop_assert_eq!(s.vector(&word).unwrap(), expected);
        }
    }
}
