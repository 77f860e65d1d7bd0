//! Joint UPOS and FEATS tagger over frozen word embeddings.

mod checkpoint;
mod network;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{softmax, LstmParams, Scalar, Shape, TaggerParams, Tensor, TokenInput, TENSOR_NAMES};

use crate::corpus::{split_random, ConlluSentence};
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;
use network::{backward, char_features, cross_entropy, forward, lit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub lr0: f64,
    pub decay: f64,
    pub epochs: usize,
    pub dev_fraction: f64,
    pub seeds: Vec<u64>,
    pub char_emb_dim: usize,
    pub char_conv_width: usize,
    pub char_filters: usize,
    pub lstm_hidden: usize,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            lr0: 0.6,
            decay: 0.05,
            epochs: 200,
            dev_fraction: 0.2,
            seeds: (1..=10).collect(),
            char_emb_dim: 30,
            char_conv_width: 3,
            char_filters: 30,
            lstm_hidden: 150,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(msg.to_owned()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail("initial learning rate must be positive");
        }
        if !(self.decay >= 0.0) {
            return fail("decay must be non-negative");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return fail("dev fraction must lie in (0, 1)");
        }
        if self.epochs == 0 || self.seeds.is_empty() {
            return fail("need at least one epoch and one seed");
        }
        if self.char_emb_dim == 0 || self.char_conv_width == 0 || self.char_filters == 0 || self.lstm_hidden == 0 {
            return fail("network sizes must be positive");
        }
        Ok(())
    }
}

/// `lr0 / (1 + decay · epoch)`.
pub fn learning_rate(lr0: f64, decay: f64, epoch: usize) -> f64 {
    lr0 / (1.0 + decay * epoch as f64)
}

/// Character and tag inventories, fixed from training data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventories {
    pub chars: Vec<char>,
    pub upos: Vec<String>,
    pub feats: Vec<String>,
}

impl Inventories {
    pub fn from_sentences(sentences: &[ConlluSentence]) -> Self {
        let tokens = || sentences.iter().flat_map(|s| &s.tokens);
        Inventories {
            chars: tokens().flat_map(|t| t.form.chars()).collect::<BTreeSet<_>>().into_iter().collect(),
            upos: tokens().map(|t| t.upos.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
            feats: tokens().map(|t| t.feats.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
        }
    }
}

fn index_of<T: std::hash::Hash + Eq + Clone>(items: &[T]) -> HashMap<T, usize> {
    items.iter().enumerate().map(|(i, x)| (x.clone(), i)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerModel<F = f32> {
    shape: Shape,
    inventories: Inventories,
    char_index: HashMap<char, usize>,
    upos_index: HashMap<String, usize>,
    feats_index: HashMap<String, usize>,
    pub params: TaggerParams<F>,
}

impl<F: Scalar> TaggerModel<F> {
    pub fn new(inventories: Inventories, shape: Shape, params: TaggerParams<F>) -> Result<Self> {
        if shape.n_chars != inventories.chars.len() + 1
            || shape.n_upos != inventories.upos.len()
            || shape.n_feats != inventories.feats.len()
        {
            return Err(Error::InvalidArgument("inventory sizes do not match the network shape".into()));
        }
        let expected = Self::tensor_shapes(&shape);
        for ((name, t), want) in TENSOR_NAMES.iter().zip(params.tensors()).zip(expected) {
            if t.shape != want || t.data.len() != want.iter().product::<usize>() {
                return Err(Error::InvalidArgument(format!("tensor `{name}` has shape {:?}, expected {want:?}", t.shape)));
            }
        }
        Ok(TaggerModel {
            char_index: inventories.chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect(),
            upos_index: index_of(&inventories.upos),
            feats_index: index_of(&inventories.feats),
            inventories,
            shape,
            params,
        })
    }

    /// Fresh parameters for `inventories` and a store of dimension `word_dim`.
    pub fn init(inventories: Inventories, word_dim: usize, config: &TaggerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if inventories.upos.is_empty() || inventories.feats.is_empty() {
            return Err(Error::Data("empty tag inventory".into()));
        }
        let shape = Shape {
            word_dim,
            char_emb_dim: config.char_emb_dim,
            conv_width: config.char_conv_width,
            filters: config.char_filters,
            hidden: config.lstm_hidden,
            n_chars: inventories.chars.len() + 1,
            n_upos: inventories.upos.len(),
            n_feats: inventories.feats.len(),
        };
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let params = shape.init(&mut rng);
        Self::new(inventories, shape, params)
    }

    fn tensor_shapes(s: &Shape) -> [Vec<usize>; 13] {
        let (h, e) = (s.hidden, s.char_emb_dim);
        let lstm = [vec![4 * h, s.input_dim()], vec![4 * h, h], vec![4 * h]];
        [
            vec![s.n_chars, e],
            vec![s.filters, s.conv_width * e],
            vec![s.filters],
            lstm[0].clone(),
            lstm[1].clone(),
            lstm[2].clone(),
            lstm[0].clone(),
            lstm[1].clone(),
            lstm[2].clone(),
            vec![s.n_upos, 2 * h],
            vec![s.n_upos],
            vec![s.n_feats, 2 * h],
            vec![s.n_feats],
        ]
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn inventories(&self) -> &Inventories {
        &self.inventories
    }

    pub fn cast<G: Scalar>(&self) -> TaggerModel<G> {
        TaggerModel {
            shape: self.shape,
            inventories: self.inventories.clone(),
            char_index: self.char_index.clone(),
            upos_index: self.upos_index.clone(),
            feats_index: self.feats_index.clone(),
            params: self.params.cast(),
        }
    }

    fn check_store(&self, store: &EmbeddingStore) -> Result<()> {
        if store.dim() != self.shape.word_dim {
            return Err(Error::InvalidArgument(format!(
                "store dimension {} does not match tagger word dimension {}",
                store.dim(),
                self.shape.word_dim
            )));
        }
        Ok(())
    }

    /// Word vector (exact form, then lowercased, else zeros) and char rows.
    pub fn encode_token(&self, store: &EmbeddingStore, token: &str) -> TokenInput<F> {
        let word = store
            .vector(token)
            .or_else(|| store.vector(&token.to_lowercase()))
            .map(|v| v.into_iter().map(|x| F::from(x).expect("finite")).collect())
            .unwrap_or_else(|| vec![F::zero(); self.shape.word_dim]);
        TokenInput {
            chars: token.chars().map(|c| self.char_index.get(&c).copied().unwrap_or(0)).collect(),
            word,
        }
    }

    fn encode<S: AsRef<str>>(&self, store: &EmbeddingStore, forms: &[S]) -> Vec<TokenInput<F>> {
        forms.iter().map(|f| self.encode_token(store, f.as_ref())).collect()
    }

    fn tag_ids(&self, sentence: &ConlluSentence) -> Result<(Vec<usize>, Vec<usize>)> {
        let lookup = |index: &HashMap<String, usize>, inventory: &'static str, tag: &str| {
            index.get(tag).copied().ok_or_else(|| Error::Inventory {
                inventory,
                tag: tag.to_owned(),
            })
        };
        sentence
            .tokens
            .iter()
            .map(|t| Ok((lookup(&self.upos_index, "UPOS", &t.upos)?, lookup(&self.feats_index, "FEATS", &t.feats)?)))
            .collect::<Result<Vec<_>>>()
            .map(|pairs| pairs.into_iter().unzip())
    }
}

/// Input vector of one token: word vector followed by char features.
pub fn token_features<F: Scalar>(model: &TaggerModel<F>, store: &EmbeddingStore, token: &str) -> Result<Vec<F>> {
    model.check_store(store)?;
    let input = model.encode_token(store, token);
    let chars = char_features(&model.params, &model.shape, &input.chars);
    Ok(input.word.into_iter().chain(chars).collect())
}

/// Per-token logits of both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct TagLogits<F> {
    pub upos: Vec<Vec<F>>,
    pub feats: Vec<Vec<F>>,
}

pub fn forward_sentence<F: Scalar, S: AsRef<str>>(model: &TaggerModel<F>, store: &EmbeddingStore, forms: &[S]) -> Result<TagLogits<F>> {
    model.check_store(store)?;
    let trace = forward(&model.params, &model.shape, &model.encode(store, forms));
    Ok(TagLogits {
        upos: trace.upos,
        feats: trace.feats,
    })
}

struct Example<F> {
    tokens: Vec<TokenInput<F>>,
    upos: Vec<usize>,
    feats: Vec<usize>,
}

fn batch_loss_and_gradients<F: Scalar>(model: &TaggerModel<F>, batch: &[&Example<F>]) -> (F, TaggerParams<F>) {
    let p = &model.params;
    let mut grads = p.zeros_like();
    let n: usize = batch.iter().map(|e| e.tokens.len()).sum();
    if n == 0 {
        return (F::zero(), grads);
    }
    let scale = F::one() / lit::<F>(n as f64);
    let mut loss = F::zero();

    for ex in batch {
        let trace = forward(p, &model.shape, &ex.tokens);
        let head = |logits: &[Vec<F>], gold: &[usize], loss: &mut F| -> Vec<Vec<F>> {
            logits
                .iter()
                .zip(gold)
                .map(|(l, &g)| {
                    *loss += cross_entropy(l, g);
                    let mut d = softmax(l);
                    d[g] = d[g] - F::one();
                    d.iter_mut().for_each(|x| *x = *x * scale);
                    d
                })
                .collect()
        };
        let d_upos = head(&trace.upos, &ex.upos, &mut loss);
        let d_feats = head(&trace.feats, &ex.feats, &mut loss);
        backward(p, &model.shape, &ex.tokens, &trace, &d_upos, &d_feats, &mut grads);
    }
    (loss * scale, grads)
}

fn examples<F: Scalar>(model: &TaggerModel<F>, store: &EmbeddingStore, sentences: &[ConlluSentence]) -> Result<Vec<Example<F>>> {
    sentences
        .iter()
        .map(|s| {
            let (upos, feats) = model.tag_ids(s)?;
            let forms: Vec<&str> = s.tokens.iter().map(|t| t.form.as_str()).collect();
            Ok(Example {
                tokens: model.encode(store, &forms),
                upos,
                feats,
            })
        })
        .collect()
}

/// Mean over tokens of the summed UPOS and FEATS cross-entropies, with the
/// gradient of every network parameter. The word vectors get none.
pub fn loss_and_gradients<F: Scalar>(
    model: &TaggerModel<F>,
    store: &EmbeddingStore,
    batch: &[ConlluSentence],
) -> Result<(F, TaggerParams<F>)> {
    model.check_store(store)?;
    let examples = examples(model, store, batch)?;
    let refs: Vec<&Example<F>> = examples.iter().collect();
    Ok(batch_loss_and_gradients(model, &refs))
}

fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted (UPOS, FEATS) tags of each token.
pub fn predict<F: Scalar, S: AsRef<str>>(model: &TaggerModel<F>, store: &EmbeddingStore, forms: &[S]) -> Result<Vec<(String, String)>> {
    let logits = forward_sentence(model, store, forms)?;
    Ok(logits
        .upos
        .iter()
        .zip(&logits.feats)
        .map(|(u, f)| {
            (
                model.inventories.upos[argmax(u)].clone(),
                model.inventories.feats[argmax(f)].clone(),
            )
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagScores {
    pub tokens: usize,
    pub upos_accuracy: f64,
    pub feats_accuracy: f64,
}

impl TagScores {
    fn selection_metric(&self) -> f64 {
        (self.upos_accuracy + self.feats_accuracy) / 2.0
    }
}

/// Token-level accuracies. FEATS must match the whole string; tags the
/// model has never seen are simply wrong.
pub fn evaluate_tagger<F: Scalar>(model: &TaggerModel<F>, store: &EmbeddingStore, sentences: &[ConlluSentence]) -> Result<TagScores> {
    model.check_store(store)?;
    let counts = sentences
        .par_iter()
        .map(|s| {
            let forms: Vec<&str> = s.tokens.iter().map(|t| t.form.as_str()).collect();
            let predicted = predict(model, store, &forms)?;
            let mut c = (0, 0);
            for ((u, f), gold) in predicted.iter().zip(&s.tokens) {
                c.0 += usize::from(*u == gold.upos);
                c.1 += usize::from(*f == gold.feats);
            }
            Ok(c)
        })
        .collect::<Result<Vec<(usize, usize)>>>()?;

    let tokens: usize = sentences.iter().map(|s| s.tokens.len()).sum();
    let (upos, feats) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    let ratio = |x: usize| if tokens == 0 { 0.0 } else { x as f64 / tokens as f64 };
    Ok(TagScores {
        tokens,
        upos_accuracy: ratio(upos),
        feats_accuracy: ratio(feats),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-sentence loss over the epoch's updates.
    pub train_loss: f64,
    pub dev: TagScores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub model: TaggerModel<f32>,
    pub best_epoch: usize,
    pub epochs: Vec<EpochStats>,
}

/// Train one model with per-sentence SGD and keep the parameters of the
/// epoch with the best dev score (earliest on ties).
pub fn train_run(
    train: &[ConlluSentence],
    dev: &[ConlluSentence],
    store: &EmbeddingStore,
    config: &TaggerConfig,
    seed: u64,
) -> Result<TrainRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("tagger training set is empty".into()));
    }
    let mut model = TaggerModel::<f32>::init(Inventories::from_sentences(train), store.dim(), config, seed)?;
    let examples = examples(&model, store, train)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5eed_0f_7a66e7);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut best: Option<(f64, usize, TaggerParams<f32>)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = learning_rate(config.lr0, config.decay, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        for &i in &order {
            let (loss, grads) = batch_loss_and_gradients(&model, &[&examples[i]]);
            loss_sum += f64::from(loss);
            model.params.add_scaled(-(lr as f32), &grads);
        }
        if !model.params.all_finite() {
            return Err(Error::Data(format!("tagger training diverged in epoch {epoch}")));
        }
        let scores = evaluate_tagger(&model, store, dev)?;
        log::debug!(
            "seed {seed} epoch {epoch}: lr {lr:.6} loss {:.6} dev upos {:.4} feats {:.4}",
            loss_sum / order.len() as f64,
            scores.upos_accuracy,
            scores.feats_accuracy
        );
        log.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / order.len() as f64,
            dev: scores,
        });
        let metric = scores.selection_metric();
        // Without dev data the last epoch is kept.
        if dev.is_empty() || best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, model.params.clone()));
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainRun {
        model,
        best_epoch,
        epochs: log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev: TagScores,
    pub test: Option<TagScores>,
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageScores {
    pub upos_accuracy: f64,
    pub feats_accuracy: f64,
}

fn average<'a>(scores: impl Iterator<Item = &'a TagScores>) -> Option<AverageScores> {
    let all: Vec<&TagScores> = scores.collect();
    (!all.is_empty()).then(|| AverageScores {
        upos_accuracy: all.iter().map(|s| s.upos_accuracy).sum::<f64>() / all.len() as f64,
        feats_accuracy: all.iter().map(|s| s.feats_accuracy).sum::<f64>() / all.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagReport {
    pub config: TaggerConfig,
    pub runs: Vec<SeedRun>,
    pub dev_average: AverageScores,
    pub test_average: Option<AverageScores>,
}

impl TagReport {
    fn from_runs(config: &TaggerConfig, runs: Vec<SeedRun>) -> Self {
        TagReport {
            config: config.clone(),
            dev_average: average(runs.iter().map(|r| &r.dev)).expect("at least one seed"),
            test_average: if runs.iter().all(|r| r.test.is_some()) {
                average(runs.iter().filter_map(|r| r.test.as_ref()))
            } else {
                None
            },
            runs,
        }
    }
}

impl fmt::Display for TagReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| format!("{:.2}", x * 100.0);
        let test = |s: Option<&TagScores>, upos: bool| {
            s.map_or("-".to_owned(), |s| pct(if upos { s.upos_accuracy } else { s.feats_accuracy }))
        };
        writeln!(f, "{:>8} {:>6} {:>9} {:>9} {:>9} {:>9}", "seed", "epoch", "dev UPOS", "dev FEATS", "test UPOS", "test FEATS")?;
        for r in &self.runs {
            writeln!(
                f,
                "{:>8} {:>6} {:>9} {:>9} {:>9} {:>9}",
                r.seed,
                r.best_epoch,
                pct(r.dev.upos_accuracy),
                pct(r.dev.feats_accuracy),
                test(r.test.as_ref(), true),
                test(r.test.as_ref(), false)
            )?;
        }
        let avg_test = |upos: bool| {
            self.test_average
                .map_or("-".to_owned(), |a| pct(if upos { a.upos_accuracy } else { a.feats_accuracy }))
        };
        write!(
            f,
            "{:>8} {:>6} {:>9} {:>9} {:>9} {:>9}",
            "average",
            "",
            pct(self.dev_average.upos_accuracy),
            pct(self.dev_average.feats_accuracy),
            avg_test(true),
            avg_test(false)
        )
    }
}

fn seed_runs(
    train: &[ConlluSentence],
    test: Option<&[ConlluSentence]>,
    store: &EmbeddingStore,
    config: &TaggerConfig,
) -> Result<Vec<(TaggerModel<f32>, SeedRun)>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("tagger training set is empty".into()));
    }
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let (fit, dev) = if train.len() > 1 {
                split_random(train, config.dev_fraction, seed)?
            } else {
                (train.to_vec(), Vec::new())
            };
            let run = train_run(&fit, &dev, store, config, seed)?;
            let dev_scores = run.epochs[run.best_epoch].dev;
            let test_scores = test.map(|t| evaluate_tagger(&run.model, store, t)).transpose()?;
            Ok((
                run.model,
                SeedRun {
                    seed,
                    best_epoch: run.best_epoch,
                    dev: dev_scores,
                    test: test_scores,
                    epochs: run.epochs,
                },
            ))
        })
        .collect()
}

/// Train one model per configured seed, each on its own train/dev split.
/// Returns the model with the best dev score and the per-seed report.
pub fn train_tagger(train: &[ConlluSentence], store: &EmbeddingStore, config: &TaggerConfig) -> Result<(TaggerModel<f32>, TagReport)> {
    let runs = seed_runs(train, None, store, config)?;
    let mut best = 0;
    for (i, (_, r)) in runs.iter().enumerate() {
        if r.dev.selection_metric() > runs[best].1.dev.selection_metric() {
            best = i;
        }
    }
    let (models, runs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let model = models.into_iter().nth(best).expect("at least one seed");
    Ok((model, TagReport::from_runs(config, runs)))
}

/// As [`train_tagger`], additionally scoring every seed's model on `test`.
pub fn run_tagging_experiment(
    train: &[ConlluSentence],
    test: &[ConlluSentence],
    store: &EmbeddingStore,
    config: &TaggerConfig,
) -> Result<TagReport> {
    let runs = seed_runs(train, Some(test), store, config)?;
    Ok(TagReport::from_runs(config, runs.into_iter().map(|(_, r)| r).collect()))
}
