//! Negative-sampling trainers: skip-gram, CBOW and subword skip-gram.
//!
//! All three share one loop. Each prediction has an *input set* of rows of
//! the input matrix whose mean is the hidden vector: the center word (plus
//! its n-gram buckets for subword skip-gram) or the context words for CBOW.
//! The error gradient on the hidden vector is added in full to every row of
//! the input set.

use std::sync::atomic::{AtomicU64, Ordering};

use log::info;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::shared::{shard_ranges, SharedMatrix};
use super::{corpus_ids, TrainConfig, Trained};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;
use crate::vocab::{NegativeSampler, SubwordIndexer, Vocabulary, NEGATIVE_SAMPLING_POWER};

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Learning rate after `processed` of `total` tokens: linear decay from
/// `initial` to `initial * 1e-4`.
pub fn linear_learning_rate(initial: f32, processed: u64, total: u64) -> f32 {
    let progress = if total == 0 {
        1.0
    } else {
        (processed as f64 / total as f64).min(1.0)
    };
    initial * (1.0 - progress).max(1e-4) as f32
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Arch {
    SkipGram,
    Cbow,
}

/// One logistic prediction against `out`, updating `out` in place and
/// accumulating the hidden-vector gradient into `grad`. Returns the loss.
pub(crate) fn logistic_update(
    hidden: &[f32],
    out: &mut [f32],
    grad: &mut [f32],
    label: f32,
    lr: f32,
) -> f32 {
    let score: f32 = hidden.iter().zip(out.iter()).map(|(h, o)| h * o).sum();
    let g = (label - sigmoid(score)) * lr;
    for ((gr, o), h) in grad.iter_mut().zip(out.iter_mut()).zip(hidden) {
        *gr += g * *o;
        *o += g * h;
    }
    if label > 0.5 {
        softplus(-score)
    } else {
        softplus(score)
    }
}

struct Model<'a> {
    arch: Arch,
    dim: usize,
    window: usize,
    negatives: usize,
    // Input rows of every word: the word itself, then any n-gram buckets.
    word_inputs: Vec<Vec<u32>>,
    keep_prob: Vec<f32>,
    sampler: NegativeSampler,
    input: SharedMatrix,
    output: SharedMatrix,
    sentences: &'a [Vec<u32>],
}

struct Scratch {
    hidden: Vec<f32>,
    grad: Vec<f32>,
    row: Vec<f32>,
    rows: Vec<u32>,
    kept: Vec<u32>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            hidden: vec![0.0; dim],
            grad: vec![0.0; dim],
            row: vec![0.0; dim],
            rows: Vec::new(),
            kept: Vec::new(),
        }
    }
}

impl Model<'_> {
    fn compute_hidden(&self, rows: &[u32], hidden: &mut [f32], buf: &mut [f32]) {
        hidden.fill(0.0);
        for &r in rows {
            self.input.read_row(r as usize, buf);
            for (h, v) in hidden.iter_mut().zip(buf.iter()) {
                *h += v;
            }
        }
        let scale = 1.0 / rows.len() as f32;
        hidden.iter_mut().for_each(|h| *h *= scale);
    }

    /// Predict `target` from the mean of `rows`, with negative samples.
    fn step<R: Rng>(&self, rows: &[u32], target: u32, lr: f32, rng: &mut R, s: &mut Scratch) -> f32 {
        self.compute_hidden(rows, &mut s.hidden, &mut s.row);
        s.grad.fill(0.0);

        let mut loss = 0.0;
        let mut predict = |id: usize, label: f32, s: &mut Scratch| {
            self.output.read_row(id, &mut s.row);
            loss += logistic_update(&s.hidden, &mut s.row, &mut s.grad, label, lr);
            self.output.write_row(id, &s.row);
        };
        predict(target as usize, 1.0, s);
        for _ in 0..self.negatives {
            let negative = self.sampler.sample(rng);
            if negative == target as usize {
                continue;
            }
            predict(negative, 0.0, s);
        }

        for &r in rows {
            self.input.add_to_row(r as usize, &s.grad, 1.0);
        }
        loss
    }

    /// Train on one sentence. Returns (summed loss, number of predictions).
    fn sentence<R: Rng>(&self, sentence: &[u32], lr: f32, rng: &mut R, s: &mut Scratch) -> (f64, u64) {
        let mut kept = std::mem::take(&mut s.kept);
        kept.clear();
        kept.extend(
            sentence
                .iter()
                .copied()
                .filter(|&w| rng.random::<f32>() < self.keep_prob[w as usize]),
        );

        let mut rows = std::mem::take(&mut s.rows);
        let (mut loss, mut steps) = (0.0f64, 0u64);
        for pos in 0..kept.len() {
            let radius = rng.random_range(1..=self.window);
            let start = pos.saturating_sub(radius);
            let end = (pos + radius + 1).min(kept.len());
            let center = kept[pos];

            match self.arch {
                Arch::SkipGram => {
                    for ctx in (start..end).filter(|&c| c != pos) {
                        loss += self.step(&self.word_inputs[center as usize], kept[ctx], lr, rng, s) as f64;
                        steps += 1;
                    }
                }
                Arch::Cbow => {
                    rows.clear();
                    for ctx in (start..end).filter(|&c| c != pos) {
                        rows.extend(&self.word_inputs[kept[ctx] as usize]);
                    }
                    if !rows.is_empty() {
                        loss += self.step(&rows, center, lr, rng, s) as f64;
                        steps += 1;
                    }
                }
            }
        }
        s.kept = kept;
        s.rows = rows;
        (loss, steps)
    }
}

fn uniform_init(rows: usize, dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    let bound = 0.5 / dim as f32;
    (0..rows * dim).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn worker_rng(seed: u64, worker: usize) -> Xoshiro256PlusPlus {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..worker {
        rng.long_jump();
    }
    rng
}

fn train_negative_sampling(
    corpus: &[Document],
    vocab: &Vocabulary,
    indexer: Option<&SubwordIndexer>,
    arch: Arch,
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    let sentences = corpus_ids(corpus, vocab);
    let total_tokens: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    if total_tokens == 0 {
        return Err(Error::Data("corpus has no in-vocabulary tokens".into()));
    }

    let n_words = vocab.len();
    let dim = config.dim;
    let word_inputs: Vec<Vec<u32>> = (0..n_words)
        .map(|id| {
            let mut rows = vec![id as u32];
            if let Some(indexer) = indexer {
                rows.extend(
                    indexer
                        .subword_indices(vocab.word(id))
                        .into_iter()
                        .map(|b| (n_words + b) as u32),
                );
            }
            rows
        })
        .collect();
    let input_rows = n_words + indexer.map_or(0, |i| i.buckets());
    if input_rows > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many input rows".into()));
    }

    let total_count = vocab.total_count() as f64;
    let keep_prob = vocab
        .counts()
        .iter()
        .map(|&c| {
            let t = config.subsample_threshold;
            if t <= 0.0 {
                1.0
            } else {
                (t / (c as f64 / total_count)).sqrt().min(1.0) as f32
            }
        })
        .collect();

    let mut init_rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let model = Model {
        arch,
        dim,
        window: config.window,
        negatives: config.negatives,
        word_inputs,
        keep_prob,
        sampler: NegativeSampler::new(vocab, NEGATIVE_SAMPLING_POWER)?,
        input: SharedMatrix::from_vec(dim, uniform_init(input_rows, dim, &mut init_rng)),
        output: SharedMatrix::from_vec(dim, vec![0.0; n_words * dim]),
        sentences: &sentences,
    };

    let budget = total_tokens * config.epochs as u64;
    let processed = AtomicU64::new(0);
    let shards = shard_ranges(sentences.len(), config.threads);
    let mut rngs: Vec<Xoshiro256PlusPlus> = (0..shards.len())
        .map(|w| worker_rng(config.seed.wrapping_add(1), w))
        .collect();

    let run_shard = |range: std::ops::Range<usize>, rng: &mut Xoshiro256PlusPlus| {
        let mut scratch = Scratch::new(model.dim);
        let (mut loss, mut steps) = (0.0, 0);
        for sentence in &model.sentences[range] {
            let lr = linear_learning_rate(config.learning_rate, processed.load(Ordering::Relaxed), budget);
            let (l, n) = model.sentence(sentence, lr, rng, &mut scratch);
            loss += l;
            steps += n;
            processed.fetch_add(sentence.len() as u64, Ordering::Relaxed);
        }
        (loss, steps)
    };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let results: Vec<(f64, u64)> = if shards.len() == 1 {
            vec![run_shard(shards[0].clone(), &mut rngs[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = shards
                    .iter()
                    .cloned()
                    .zip(rngs.iter_mut())
                    .map(|(range, rng)| scope.spawn(|| run_shard(range, rng)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            })
        };

        if !(model.input.all_finite() && model.output.all_finite()) {
            return Err(Error::Data(format!("training diverged in epoch {}", epoch + 1)));
        }
        let (loss, steps) = results
            .iter()
            .fold((0.0, 0), |(l, n), &(dl, dn)| (l + dl, n + dn));
        let mean = if steps == 0 { 0.0 } else { loss / steps as f64 };
        info!("epoch {}/{}: loss {mean:.5}", epoch + 1, config.epochs);
        epoch_losses.push(mean);
    }

    let mut input = model.input.into_vec();
    let words = vocab.words().to_vec();
    let store = match indexer {
        None => EmbeddingStore::new(words, dim, input)?,
        Some(indexer) => {
            let buckets = input.split_off(n_words * dim);
            EmbeddingStore::with_subwords(words, dim, input, *indexer, buckets)?
        }
    };
    Ok(Trained { store, epoch_losses })
}

/// Skip-gram with negative sampling.
pub fn train_sgns(corpus: &[Document], vocab: &Vocabulary, config: &TrainConfig) -> Result<Trained> {
    train_negative_sampling(corpus, vocab, None, Arch::SkipGram, config)
}

/// CBOW: the mean of the context vectors predicts the center word.
pub fn train_cbow(corpus: &[Document], vocab: &Vocabulary, config: &TrainConfig) -> Result<Trained> {
    train_negative_sampling(corpus, vocab, None, Arch::Cbow, config)
}

/// Skip-gram where a center word is the mean of its word row and the rows
/// of its hashed character n-grams. The resulting store keeps the bucket
/// table so it can compose vectors for unseen words.
pub fn train_subword_sg(
    corpus: &[Document],
    vocab: &Vocabulary,
    indexer: &SubwordIndexer,
    config: &TrainConfig,
) -> Result<Trained> {
    train_negative_sampling(corpus, vocab, Some(indexer), Arch::SkipGram, config)
}
