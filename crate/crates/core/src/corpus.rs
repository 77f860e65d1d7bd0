//! Text ingestion: normalization, stop-word filtering, labeled documents,
//! CoNLL-U treebanks and seeded random splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::Deserialize;

use crate::error::{Error, Result};

/// A normalized document: lowercase runs of letters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(tokens: Vec<String>) -> Self {
        Document { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A normalized document with its category label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledDocument {
    pub label: String,
    pub doc: Document,
}

/// One token of a treebank sentence, restricted to the columns the tagger uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluToken {
    pub form: String,
    pub upos: String,
    pub feats: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluSentence {
    pub tokens: Vec<ConlluToken>,
}

/// Lowercase `text` and split it into maximal runs of letters.
///
/// Everything that is not alphabetic (punctuation of any script, digits,
/// whitespace, symbols) separates tokens and is dropped. Lowercasing can
/// expand a character into a letter plus a combining mark; only the
/// alphabetic part of such an expansion is kept, so the function is
/// idempotent on its own output.
pub fn normalize_and_tokenize(text: &str) -> Document {
    let mut tokens = Vec::new();
    let mut current = String::new();

    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase().filter(|c| c.is_alphabetic()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }

    Document { tokens }
}

/// A set of words to drop before feature extraction.
#[derive(Clone, Debug, Default)]
pub struct Stoplist {
    words: HashSet<String>,
}

impl Stoplist {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Stoplist {
            words: words.into_iter().map(Into::into).collect(),
        }
    }

    /// Read a UTF-8 list with one word per line. Entries are trimmed and
    /// lowercased to match normalized tokens; blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read stop-word list {}: {e}", path.display()))
        })?;
        Ok(Stoplist::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_lowercase),
        ))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn remove_stopwords(doc: &Document, stoplist: &Stoplist) -> Document {
    Document {
        tokens: doc
            .tokens
            .iter()
            .filter(|t| !stoplist.contains(t))
            .cloned()
            .collect(),
    }
}

/// Read a raw corpus: one document per line.
pub fn read_raw_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    reader
        .lines()
        .map(|line| Ok(normalize_and_tokenize(&line?)))
        .collect()
}

pub fn load_raw_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    read_raw_corpus(BufReader::new(File::open(path)?))
}

#[derive(Deserialize)]
struct LabeledRecord {
    label: String,
    text: String,
}

/// Read JSON lines of the form `{"label": ..., "text": ...}`.
///
/// Texts are normalized on load. Blank lines are skipped.
pub fn read_labeled<R: BufRead>(reader: R) -> Result<Vec<LabeledDocument>> {
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabeledRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        let label = record.label.trim();
        if label.is_empty() {
            return Err(Error::parse(idx + 1, "empty label"));
        }
        docs.push(LabeledDocument {
            label: label.to_owned(),
            doc: normalize_and_tokenize(&record.text),
        });
    }
    Ok(docs)
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledDocument>> {
    read_labeled(BufReader::new(File::open(path)?))
}

/// Parse a CoNLL-U treebank, keeping FORM, UPOS and FEATS.
///
/// Comment lines, multiword-token ranges (`3-4`) and empty nodes (`5.1`)
/// are skipped. A sentence is closed by a blank line or end of input.
pub fn read_conllu<R: Read>(reader: R) -> Result<Vec<ConlluSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                sentences.push(ConlluSentence {
                    tokens: std::mem::take(&mut tokens),
                });
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }

        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != 10 {
            return Err(Error::parse(
                idx + 1,
                format!("expected 10 tab-separated columns, found {}", columns.len()),
            ));
        }
        let id = columns[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if id.parse::<usize>().is_err() {
            return Err(Error::parse(idx + 1, format!("invalid token id `{id}`")));
        }

        tokens.push(ConlluToken {
            form: columns[1].to_owned(),
            upos: columns[3].to_owned(),
            feats: columns[5].to_owned(),
        });
    }
    if !tokens.is_empty() {
        sentences.push(ConlluSentence { tokens });
    }

    Ok(sentences)
}

pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<ConlluSentence>> {
    read_conllu(File::open(path)?)
}

/// Write sentences as CoNLL-U. Columns the reader ignores are written as `_`.
pub fn write_conllu<W: Write>(mut writer: W, sentences: &[ConlluSentence]) -> Result<()> {
    for sentence in sentences {
        for (i, token) in sentence.tokens.iter().enumerate() {
            writeln!(
                writer,
                "{}\t{}\t_\t{}\t_\t{}\t_\t_\t_\t_",
                i + 1,
                token.form,
                token.upos,
                token.feats
            )?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Seeded permutation of `0..n` used by [`split_random`].
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices
}

/// Split `items` into `(part_a, part_b)` with `|part_b| = round(fraction * N)`.
///
/// Indices are shuffled with a seeded SplitMix64 generator and the last
/// `round(fraction * N)` of the permutation form `part_b`. Both parts keep
/// the permuted order.
pub fn split_random<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if items.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty list".into()));
    }

    let n = items.len();
    let b_len = (fraction * n as f64).round() as usize;
    let order = shuffled_indices(n, seed);
    let (a, b) = order.split_at(n - b_len);

    Ok((
        a.iter().map(|&i| items[i].clone()).collect(),
        b.iter().map(|&i| items[i].clone()).collect(),
    ))
}
