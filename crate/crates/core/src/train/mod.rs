//! Embedding trainers: skip-gram and CBOW with negative sampling, subword
//! skip-gram, and GloVe.

mod glove;
mod shared;
mod word2vec;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use glove::{
    build_cooccurrence, build_cooccurrence_ids, fit_glove, glove_weight, read_triples, train_glove,
    write_triples, CooccurrenceMatrix, GloveModel,
};
pub use word2vec::{linear_learning_rate, sigmoid, train_cbow, train_sgns, train_subword_sg};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;
use crate::vocab::{build_vocab, SubwordIndexer, Vocabulary, DEFAULT_BUCKETS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sgns,
    Cbow,
    Glove,
    SubwordSg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgns => "sgns",
            Algorithm::Cbow => "cbow",
            Algorithm::Glove => "glove",
            Algorithm::SubwordSg => "subword-sg",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgns" => Ok(Algorithm::Sgns),
            "cbow" => Ok(Algorithm::Cbow),
            "glove" => Ok(Algorithm::Glove),
            "subword-sg" => Ok(Algorithm::SubwordSg),
            _ => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{s}` (expected sgns, cbow, glove or subword-sg)"
            ))),
        }
    }
}

/// Hyperparameters for every trainer. Fields that an algorithm does not use
/// are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub dim: usize,
    pub window: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub learning_rate: f32,
    pub negatives: usize,
    pub subsample_threshold: f64,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub seed: u64,
    pub threads: usize,
}

impl TrainConfig {
    /// Defaults for `algorithm`.
    pub fn new(algorithm: Algorithm) -> Self {
        let (epochs, learning_rate) = match algorithm {
            Algorithm::Sgns | Algorithm::SubwordSg => (5, 0.025),
            Algorithm::Cbow => (5, 0.05),
            Algorithm::Glove => (15, 0.05),
        };
        TrainConfig {
            algorithm,
            dim: 100,
            window: 5,
            min_count: 5,
            epochs,
            learning_rate,
            negatives: 5,
            subsample_threshold: 1e-3,
            min_n: 3,
            max_n: 6,
            buckets: DEFAULT_BUCKETS,
            x_max: 100.0,
            alpha: 0.75,
            seed: 1,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.threads == 0 {
            return fail("threads must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        match self.algorithm {
            Algorithm::Glove => {
                if !(self.x_max > 0.0) || !(self.alpha >= 0.0) {
                    return fail("x_max must be positive and alpha non-negative");
                }
            }
            _ => {
                if self.negatives == 0 {
                    return fail("negatives must be at least 1");
                }
                if !(self.subsample_threshold >= 0.0) {
                    return fail("subsample threshold must be non-negative");
                }
            }
        }
        if self.algorithm == Algorithm::SubwordSg {
            self.subword_indexer()?;
        }
        Ok(())
    }

    pub fn subword_indexer(&self) -> Result<SubwordIndexer> {
        SubwordIndexer::new(self.min_n, self.max_n, self.buckets)
    }
}

/// A trained store together with the mean training loss of each epoch.
#[derive(Clone, Debug)]
pub struct Trained {
    pub store: EmbeddingStore,
    pub epoch_losses: Vec<f64>,
}

/// Map documents to id sequences, dropping out-of-vocabulary tokens.
pub fn corpus_ids(corpus: &[Document], vocab: &Vocabulary) -> Vec<Vec<u32>> {
    corpus
        .iter()
        .map(|doc| {
            doc.tokens
                .iter()
                .filter_map(|t| vocab.id(t).map(|id| id as u32))
                .collect()
        })
        .collect()
}

/// Build the vocabulary and run the configured algorithm.
pub fn train(corpus: &[Document], config: &TrainConfig) -> Result<(Vocabulary, Trained)> {
    config.validate()?;
    let vocab = build_vocab(corpus.iter().flat_map(|d| &d.tokens), config.min_count)?;
    let trained = match config.algorithm {
        Algorithm::Sgns => train_sgns(corpus, &vocab, config)?,
        Algorithm::Cbow => train_cbow(corpus, &vocab, config)?,
        Algorithm::SubwordSg => {
            let indexer = config.subword_indexer()?;
            train_subword_sg(corpus, &vocab, &indexer, config)?
        }
        Algorithm::Glove => {
            let cooc = build_cooccurrence(corpus, &vocab, config.window)?;
            train_glove(&cooc, &vocab, config)?
        }
    };
    Ok((vocab, trained))
}
