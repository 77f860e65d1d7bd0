//! GloVe: weighted least-squares factorization of log co-occurrence counts.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::shared::{shard_ranges, SharedMatrix};
use super::{corpus_ids, TrainConfig, Trained};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;
use crate::vocab::Vocabulary;

/// Sparse symmetric co-occurrence weights, sorted by `(i, j)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooccurrenceMatrix {
    entries: Vec<(u32, u32, f64)>,
}

impl CooccurrenceMatrix {
    /// Build from arbitrary triples. Duplicate coordinates are summed.
    pub fn from_entries(mut entries: Vec<(u32, u32, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(entries.len());
        for (i, j, x) in entries {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (i, j) => last.2 += x,
                _ => merged.push((i, j, x)),
            }
        }
        if let Some(&(i, j, x)) = merged.iter().find(|e| !(e.2 > 0.0) || !e.2.is_finite()) {
            return Err(Error::Data(format!(
                "co-occurrence X[{i},{j}] = {x} is not a positive finite weight"
            )));
        }
        Ok(CooccurrenceMatrix { entries: merged })
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: u32, j: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&(i, j), |&(a, b, _)| (a, b))
            .ok()
            .map(|idx| self.entries[idx].2)
    }
}

/// Write `(u32 i, u32 j, f64 x)` little-endian triples.
pub fn write_triples<W: Write>(mut writer: W, entries: &[(u32, u32, f64)]) -> Result<()> {
    for &(i, j, x) in entries {
        writer.write_u32::<LittleEndian>(i)?;
        writer.write_u32::<LittleEndian>(j)?;
        writer.write_f64::<LittleEndian>(x)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_triple<R: Read>(reader: &mut R) -> Result<Option<(u32, u32, f64)>> {
    let i = match reader.read_u32::<LittleEndian>() {
        Ok(i) => i,
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let truncated = |_| Error::Format("truncated co-occurrence triple".into());
    let j = reader.read_u32::<LittleEndian>().map_err(truncated)?;
    let x = reader.read_f64::<LittleEndian>().map_err(truncated)?;
    Ok(Some((i, j, x)))
}

pub fn read_triples<R: Read>(mut reader: R) -> Result<Vec<(u32, u32, f64)>> {
    let mut entries = Vec::new();
    while let Some(t) = read_triple(&mut reader)? {
        entries.push(t);
    }
    Ok(entries)
}

/// Count co-occurrences within `window` positions, weighting a pair at
/// distance `d` by `1/d`. Every center→context observation adds to the
/// `(center, context)` cell, so the matrix is symmetric. Windows stay
/// within a sentence.
///
/// With `max_entries` set, the in-memory accumulator is spilled to sorted
/// runs in temporary files whenever it grows past that many cells; the runs
/// are merged at the end.
pub fn build_cooccurrence_ids(
    sentences: &[Vec<u32>],
    window: usize,
    max_entries: Option<usize>,
) -> Result<CooccurrenceMatrix> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }

    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    let mut runs = Vec::new();
    for sentence in sentences {
        for (pos, &center) in sentence.iter().enumerate() {
            for (d, &context) in sentence[pos + 1..].iter().take(window).enumerate() {
                let w = 1.0 / (d + 1) as f64;
                *counts.entry((center, context)).or_default() += w;
                *counts.entry((context, center)).or_default() += w;
            }
        }
        if max_entries.is_some_and(|limit| counts.len() > limit) {
            runs.push(spill(&mut counts)?);
        }
    }

    if runs.is_empty() {
        let entries = counts.into_iter().map(|((i, j), x)| (i, j, x)).collect();
        return CooccurrenceMatrix::from_entries(entries);
    }
    if !counts.is_empty() {
        runs.push(spill(&mut counts)?);
    }
    debug!("merging {} co-occurrence runs", runs.len());
    CooccurrenceMatrix::from_entries(merge_runs(runs)?)
}

fn spill(counts: &mut HashMap<(u32, u32), f64>) -> Result<std::fs::File> {
    let mut entries: Vec<(u32, u32, f64)> = counts.drain().map(|((i, j), x)| (i, j, x)).collect();
    entries.sort_by_key(|&(i, j, _)| (i, j));
    let mut file = tempfile::tempfile()?;
    write_triples(BufWriter::new(&mut file), &entries)?;
    file.seek(SeekFrom::Start(0))?;
    Ok(file)
}

fn merge_runs(runs: Vec<std::fs::File>) -> Result<Vec<(u32, u32, f64)>> {
    let mut readers: Vec<BufReader<std::fs::File>> = runs.into_iter().map(BufReader::new).collect();
    let mut heap = BinaryHeap::new();
    let mut heads: Vec<f64> = vec![0.0; readers.len()];
    for (r, reader) in readers.iter_mut().enumerate() {
        if let Some((i, j, x)) = read_triple(reader)? {
            heads[r] = x;
            heap.push(Reverse((i, j, r)));
        }
    }

    let mut merged: Vec<(u32, u32, f64)> = Vec::new();
    while let Some(Reverse((i, j, r))) = heap.pop() {
        match merged.last_mut() {
            Some(last) if (last.0, last.1) == (i, j) => last.2 += heads[r],
            _ => merged.push((i, j, heads[r])),
        }
        if let Some((ni, nj, x)) = read_triple(&mut readers[r])? {
            heads[r] = x;
            heap.push(Reverse((ni, nj, r)));
        }
    }
    Ok(merged)
}

pub fn build_cooccurrence(
    corpus: &[Document],
    vocab: &Vocabulary,
    window: usize,
) -> Result<CooccurrenceMatrix> {
    build_cooccurrence_ids(&corpus_ids(corpus, vocab), window, None)
}

/// `(x / x_max)^alpha`, capped at 1.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

/// GloVe parameters. Row `i` of `words` is `[w_i, b_i]`, likewise for
/// `contexts`.
pub struct GloveModel {
    dim: usize,
    vocab_size: usize,
    words: SharedMatrix,
    contexts: SharedMatrix,
    word_gradsq: SharedMatrix,
    context_gradsq: SharedMatrix,
}

impl GloveModel {
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let bound = 0.5 / dim as f32;
        let mut init = || -> Vec<f32> {
            let mut values = Vec::with_capacity(vocab_size * (dim + 1));
            for _ in 0..vocab_size {
                values.extend((0..dim).map(|_| rng.random_range(-bound..=bound)));
                values.push(0.0);
            }
            values
        };
        let (words, contexts) = (init(), init());
        GloveModel {
            dim,
            vocab_size,
            words: SharedMatrix::from_vec(dim + 1, words),
            contexts: SharedMatrix::from_vec(dim + 1, contexts),
            word_gradsq: SharedMatrix::from_vec(dim + 1, vec![1.0; vocab_size * (dim + 1)]),
            context_gradsq: SharedMatrix::from_vec(dim + 1, vec![1.0; vocab_size * (dim + 1)]),
        }
    }

    /// `w_i·w̃_j + b_i + b̃_j - ln X_ij`, reading rows into the buffers.
    fn residual(&self, i: u32, j: u32, x: f64, w: &mut [f32], c: &mut [f32]) -> f64 {
        self.words.read_row(i as usize, w);
        self.contexts.read_row(j as usize, c);
        let dot: f64 = w[..self.dim]
            .iter()
            .zip(&c[..self.dim])
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        dot + w[self.dim] as f64 + c[self.dim] as f64 - x.ln()
    }

    /// `Σ f(X_ij) (w_i·w̃_j + b_i + b̃_j - ln X_ij)²`.
    pub fn loss(&self, cooc: &CooccurrenceMatrix, x_max: f64, alpha: f64) -> f64 {
        let mut w = vec![0.0; self.dim + 1];
        let mut c = vec![0.0; self.dim + 1];
        cooc.entries()
            .iter()
            .map(|&(i, j, x)| {
                let r = self.residual(i, j, x, &mut w, &mut c);
                glove_weight(x, x_max, alpha) * r * r
            })
            .sum()
    }

    /// One AdaGrad step on a single cell. Returns its weighted squared error.
    fn update(&self, (i, j, x): (u32, u32, f64), lr: f32, x_max: f64, alpha: f64, buf: &mut Buffers) -> f64 {
        let r = self.residual(i, j, x, &mut buf.w, &mut buf.c);
        let weight = glove_weight(x, x_max, alpha);
        let fdiff = (weight * r) as f32;

        self.word_gradsq.read_row(i as usize, &mut buf.wg);
        self.context_gradsq.read_row(j as usize, &mut buf.cg);
        let d = self.dim;
        for k in 0..d {
            let gw = fdiff * buf.c[k];
            let gc = fdiff * buf.w[k];
            buf.w[k] -= lr * gw / buf.wg[k].sqrt();
            buf.c[k] -= lr * gc / buf.cg[k].sqrt();
            buf.wg[k] += gw * gw;
            buf.cg[k] += gc * gc;
        }
        buf.w[d] -= lr * fdiff / buf.wg[d].sqrt();
        buf.c[d] -= lr * fdiff / buf.cg[d].sqrt();
        buf.wg[d] += fdiff * fdiff;
        buf.cg[d] += fdiff * fdiff;

        self.words.write_row(i as usize, &buf.w);
        self.contexts.write_row(j as usize, &buf.c);
        self.word_gradsq.write_row(i as usize, &buf.wg);
        self.context_gradsq.write_row(j as usize, &buf.cg);
        weight * r * r
    }

    fn all_finite(&self) -> bool {
        self.words.all_finite() && self.contexts.all_finite()
    }

    /// Emitted vectors: `w_i + w̃_i`.
    pub fn vectors(&self) -> Vec<f32> {
        let rows = self.vocab_size;
        let mut out = Vec::with_capacity(rows * self.dim);
        let mut w = vec![0.0; self.dim + 1];
        let mut c = vec![0.0; self.dim + 1];
        for i in 0..rows {
            self.words.read_row(i, &mut w);
            self.contexts.read_row(i, &mut c);
            out.extend(w[..self.dim].iter().zip(&c[..self.dim]).map(|(a, b)| a + b));
        }
        out
    }
}

struct Buffers {
    w: Vec<f32>,
    c: Vec<f32>,
    wg: Vec<f32>,
    cg: Vec<f32>,
}

/// Fit GloVe with AdaGrad over shuffled non-zero cells.
pub fn train_glove(cooc: &CooccurrenceMatrix, vocab: &Vocabulary, config: &TrainConfig) -> Result<Trained> {
    let (model, epoch_losses) = fit_glove(cooc, vocab.len(), config)?;
    let store = EmbeddingStore::new(vocab.words().to_vec(), config.dim, model.vectors())?;
    Ok(Trained { store, epoch_losses })
}

/// The AdaGrad loop behind [`train_glove`], returning the fitted parameters
/// and the mean weighted squared error of each epoch.
pub fn fit_glove(cooc: &CooccurrenceMatrix, vocab_size: usize, config: &TrainConfig) -> Result<(GloveModel, Vec<f64>)> {
    config.validate()?;
    if cooc.is_empty() {
        return Err(Error::Data("co-occurrence matrix is empty".into()));
    }
    if let Some(&(i, j, _)) = cooc
        .entries()
        .iter()
        .find(|&&(i, j, _)| i as usize >= vocab_size || j as usize >= vocab_size)
    {
        return Err(Error::Data(format!("co-occurrence cell ({i}, {j}) is outside the vocabulary")));
    }

    let model = GloveModel::new(vocab_size, config.dim, config.seed);
    let mut order: Vec<usize> = (0..cooc.len()).collect();
    let mut shuffle_rng = Xoshiro256PlusPlus::seed_from_u64(config.seed.wrapping_add(1));
    let shards = shard_ranges(order.len(), config.threads);

    let run_shard = |cells: &[usize]| {
        let mut buf = Buffers {
            w: vec![0.0; config.dim + 1],
            c: vec![0.0; config.dim + 1],
            wg: vec![0.0; config.dim + 1],
            cg: vec![0.0; config.dim + 1],
        };
        cells
            .iter()
            .map(|&e| model.update(cooc.entries()[e], config.learning_rate, config.x_max, config.alpha, &mut buf))
            .sum::<f64>()
    };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let loss: f64 = if shards.len() == 1 {
            run_shard(&order)
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = shards
                    .iter()
                    .map(|range| {
                        let cells = &order[range.clone()];
                        scope.spawn(move || run_shard(cells))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
            })
        };
        if !model.all_finite() {
            return Err(Error::Data(format!("training diverged in epoch {}", epoch + 1)));
        }
        let mean = loss / cooc.len() as f64;
        info!("epoch {}/{}: loss {mean:.5}", epoch + 1, config.epochs);
        epoch_losses.push(mean);
    }
    Ok((model, epoch_losses))
}
