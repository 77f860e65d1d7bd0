//! Document classification with tf-idf weighted mean word vectors and
//! one-vs-rest logistic regression.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{remove_stopwords, split_random, Document, LabeledDocument, Stoplist};
use crate::error::{Error, Result};
use crate::store::EmbeddingStore;

/// Smoothed inverse document frequencies, fitted on training documents.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfidfModel {
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, word: &str) -> usize {
        self.df.get(word).copied().unwrap_or(0)
    }

    /// `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, word: &str) -> f64 {
        ((1 + self.n_docs) as f64 / (1 + self.df(word)) as f64).ln() + 1.0
    }
}

pub fn fit_tfidf(docs: &[Document]) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(Error::Data("tf-idf needs at least one document".into()));
    }
    let mut df = HashMap::new();
    for doc in docs {
        let distinct: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for word in distinct {
            *df.entry(word.to_owned()).or_insert(0) += 1;
        }
    }
    Ok(TfidfModel { n_docs: docs.len(), df })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocFeatures {
    pub vector: Vec<f32>,
    /// No token of the document had a vector; `vector` is all zeros.
    pub empty: bool,
}

/// Mean of the document's word vectors weighted by `count · idf`.
pub fn doc_vector(doc: &Document, tfidf: &TfidfModel, store: &EmbeddingStore) -> DocFeatures {
    weighted_doc_vector(doc, |w| tfidf.idf(w), store)
}

fn weighted_doc_vector(doc: &Document, idf: impl Fn(&str) -> f64, store: &EmbeddingStore) -> DocFeatures {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for token in &doc.tokens {
        *counts.entry(token).or_insert(0) += 1;
    }

    let mut sum = vec![0f64; store.dim()];
    let mut total = 0f64;
    for (word, count) in counts {
        let Some(v) = store.vector(word) else { continue };
        let weight = count as f64 * idf(word);
        for (s, &x) in sum.iter_mut().zip(&v) {
            *s += weight * x as f64;
        }
        total += weight;
    }

    if total == 0.0 {
        return DocFeatures {
            vector: vec![0.0; store.dim()],
            empty: true,
        };
    }
    DocFeatures {
        vector: sum.iter().map(|&s| (s / total) as f32).collect(),
        empty: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// Weight of the data term relative to `½‖w‖²`.
    pub c: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            c: 1.0,
            tolerance: 1e-4,
            max_iters: 1000,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn linear(params: &[f64], x: &[f64]) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b[0]
}

/// Binary objective `½‖w‖² + C Σ ln(1 + exp(-y (w·x + b)))` and its gradient.
///
/// `params` holds the weights followed by the (unregularized) bias; targets
/// are ±1.
pub fn objective_and_gradient(params: &[f64], features: &[Vec<f64>], targets: &[f64], c: f64) -> (f64, Vec<f64>) {
    let dim = params.len() - 1;
    let mut grad: Vec<f64> = params[..dim].iter().copied().chain([0.0]).collect();
    for (x, &y) in features.iter().zip(targets) {
        let margin = y * linear(params, x);
        // d/dz ln(1 + e^{-yz}) = -y σ(-yz)
        let g = -c * y * sigmoid(-margin);
        for (gi, xi) in grad[..dim].iter_mut().zip(x) {
            *gi += g * xi;
        }
        grad[dim] += g;
    }
    (objective(params, features, targets, c), grad)
}

fn objective(params: &[f64], features: &[Vec<f64>], targets: &[f64], c: f64) -> f64 {
    let w = &params[..params.len() - 1];
    let data: f64 = features
        .iter()
        .zip(targets)
        .map(|(x, &y)| softplus(-y * linear(params, x)))
        .sum();
    0.5 * w.iter().map(|w| w * w).sum::<f64>() + c * data
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective before the first step and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;

/// Full-batch gradient descent with backtracking line search.
pub fn fit_binary(features: &[Vec<f64>], targets: &[f64], dim: usize, config: &LogRegConfig) -> BinaryFit {
    let mut params = vec![0f64; dim + 1];
    let (mut f, mut grad) = objective_and_gradient(&params, features, targets, config.c);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iters {
        let norm_sq: f64 = grad.iter().map(|g| g * g).sum();
        if norm_sq.sqrt() < config.tolerance {
            converged = true;
            break;
        }

        let mut candidate = vec![0f64; dim + 1];
        let accepted = loop {
            for ((c, p), g) in candidate.iter_mut().zip(&params).zip(&grad) {
                *c = p - step * g;
            }
            let f_new = objective(&candidate, features, targets, config.c);
            if f_new <= f - ARMIJO * step * norm_sq {
                break Some(f_new);
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some(f_new) = accepted else { break };

        params = candidate;
        let (_, g) = objective_and_gradient(&params, features, targets, config.c);
        f = f_new;
        grad = g;
        trace.push(f);
        iterations += 1;
        step = (step * 2.0).min(1e6);
    }

    let bias = params.pop().unwrap();
    BinaryFit {
        weights: params,
        bias,
        objective_trace: trace,
        iterations,
        converged,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LogRegModel {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Linear score `w_c·x + b_c` of every class.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Per-class membership probabilities, each in (0, 1).
    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.scores(x)?.into_iter().map(sigmoid).collect())
    }

    /// Highest-scoring class; the first class wins ties.
    pub fn predict(&self, x: &[f64]) -> Result<&str> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(&self.classes[best])
    }
}

pub fn predict<'m>(model: &'m LogRegModel, x: &[f64]) -> Result<&'m str> {
    model.predict(x)
}

/// Train one binary classifier per class. Classes are sorted.
pub fn train_ovr_logreg(features: &[Vec<f64>], labels: &[String], config: &LogRegConfig) -> Result<LogRegModel> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    if features.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidArgument("feature vectors differ in dimension".into()));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Data("classification needs at least two classes".into()));
    }
    if !(config.c > 0.0) {
        return Err(Error::InvalidArgument("C must be positive".into()));
    }

    let fits: Vec<BinaryFit> = classes
        .par_iter()
        .map(|class| {
            let targets: Vec<f64> = labels.iter().map(|l| if l == class { 1.0 } else { -1.0 }).collect();
            fit_binary(features, &targets, dim, config)
        })
        .collect();
    for (class, fit) in classes.iter().zip(&fits) {
        if !fit.converged {
            log::warn!("class `{class}` stopped after {} iterations without converging", fit.iterations);
        }
    }

    Ok(LogRegModel {
        classes,
        biases: fits.iter().map(|f| f.bias).collect(),
        weights: fits.into_iter().map(|f| f.weights).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentInfo {
    pub seed: u64,
    pub train_fraction: f64,
    pub c: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub empty_train_docs: usize,
    pub empty_test_docs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Metrics for each gold label, sorted.
    pub per_class: Vec<ClassMetrics>,
    /// Row/column labels of `confusion`: gold labels, then labels that were
    /// only predicted.
    pub labels: Vec<String>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub experiment: Option<ExperimentInfo>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate_classification<S: AsRef<str>>(predicted: &[S], gold: &[S]) -> Result<ClassificationReport> {
    if predicted.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold labels",
            predicted.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }

    let gold_set: BTreeSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    let mut labels: Vec<String> = gold_set.iter().map(|s| s.to_string()).collect();
    let extra: BTreeSet<&str> = predicted
        .iter()
        .map(AsRef::as_ref)
        .filter(|p| !gold_set.contains(p))
        .collect();
    labels.extend(extra.into_iter().map(str::to_owned));
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();

    let n = labels.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (p, g) in predicted.iter().zip(gold) {
        confusion[index[g.as_ref()]][index[p.as_ref()]] += 1;
    }

    let per_class: Vec<ClassMetrics> = (0..gold_set.len())
        .map(|i| {
            let tp = confusion[i][i];
            let predicted_i: usize = confusion.iter().map(|row| row[i]).sum();
            let support: usize = confusion[i].iter().sum();
            let precision = ratio(tp, predicted_i);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: labels[i].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();

    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    let correct: usize = (0..n).map(|i| confusion[i][i]).sum();
    Ok(ClassificationReport {
        accuracy: ratio(correct, gold.len()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        labels,
        confusion,
        experiment: None,
    })
}

impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>10} {:>10} {:>10}", "Accuracy", "Precision", "Recall", "F-1")?;
        writeln!(
            f,
            "{:>10.2} {:>10.2} {:>10.2} {:>10.2}",
            self.accuracy * 100.0,
            self.macro_precision * 100.0,
            self.macro_recall * 100.0,
            self.macro_f1 * 100.0
        )?;
        let width = self.per_class.iter().map(|m| m.label.len()).max().unwrap_or(0).max(5);
        writeln!(f)?;
        write!(f, "{:<width$} {:>10} {:>10} {:>10} {:>8}", "class", "Precision", "Recall", "F-1", "support")?;
        for m in &self.per_class {
            write!(
                f,
                "\n{:<width$} {:>10.2} {:>10.2} {:>10.2} {:>8}",
                m.label,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0,
                m.support
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub logreg: LogRegConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            seed: 1,
            train_fraction: 0.8,
            logreg: LogRegConfig::default(),
        }
    }
}

/// The fitted feature extractor and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationPipeline {
    pub tfidf: TfidfModel,
    pub model: LogRegModel,
}

fn features(docs: &[&Document], tfidf: &TfidfModel, store: &EmbeddingStore) -> (Vec<Vec<f64>>, usize) {
    let feats: Vec<DocFeatures> = docs.par_iter().map(|d| doc_vector(d, tfidf, store)).collect();
    let empty = feats.iter().filter(|f| f.empty).count();
    let vectors = feats
        .into_iter()
        .map(|f| f.vector.into_iter().map(f64::from).collect())
        .collect();
    (vectors, empty)
}

impl ClassificationPipeline {
    /// Fit on already stop-word-filtered documents.
    pub fn fit(train: &[LabeledDocument], store: &EmbeddingStore, config: &LogRegConfig) -> Result<Self> {
        let docs: Vec<Document> = train.iter().map(|d| d.doc.clone()).collect();
        let tfidf = fit_tfidf(&docs)?;
        let refs: Vec<&Document> = docs.iter().collect();
        let (x, _) = features(&refs, &tfidf, store);
        let labels: Vec<String> = train.iter().map(|d| d.label.clone()).collect();
        let model = train_ovr_logreg(&x, &labels, config)?;
        Ok(ClassificationPipeline { tfidf, model })
    }

    pub fn predict(&self, doc: &Document, store: &EmbeddingStore) -> Result<&str> {
        let v: Vec<f64> = doc_vector(doc, &self.tfidf, store).vector.into_iter().map(f64::from).collect();
        self.model.predict(&v)
    }
}

fn distinct_labels(docs: &[LabeledDocument]) -> usize {
    docs.iter().map(|d| d.label.as_str()).collect::<BTreeSet<_>>().len()
}

/// Stop-word filter, split, fit on the training part and score the rest.
pub fn run_classification_experiment(
    corpus: &[LabeledDocument],
    store: &EmbeddingStore,
    stoplist: &Stoplist,
    config: &ClassifyConfig,
) -> Result<ClassificationReport> {
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::InvalidArgument("train fraction must lie in (0, 1)".into()));
    }
    let filtered: Vec<LabeledDocument> = corpus
        .iter()
        .map(|d| LabeledDocument {
            label: d.label.clone(),
            doc: remove_stopwords(&d.doc, stoplist),
        })
        .collect();
    let (train, test) = split_random(&filtered, 1.0 - config.train_fraction, config.seed)?;
    if distinct_labels(&train) < 2 || distinct_labels(&test) < 2 {
        return Err(Error::Data("both splits need at least two classes".into()));
    }

    let docs: Vec<Document> = train.iter().map(|d| d.doc.clone()).collect();
    let tfidf = fit_tfidf(&docs)?;
    let (x_train, empty_train) = features(&docs.iter().collect::<Vec<_>>(), &tfidf, store);
    let y_train: Vec<String> = train.iter().map(|d| d.label.clone()).collect();
    let model = train_ovr_logreg(&x_train, &y_train, &config.logreg)?;

    let (x_test, empty_test) = features(&test.iter().map(|d| &d.doc).collect::<Vec<_>>(), &tfidf, store);
    let predicted = x_test
        .iter()
        .map(|x| model.predict(x).map(str::to_owned))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<String> = test.iter().map(|d| d.label.clone()).collect();

    let mut report = evaluate_classification(&predicted, &gold)?;
    report.experiment = Some(ExperimentInfo {
        seed: config.seed,
        train_fraction: config.train_fraction,
        c: config.logreg.c,
        tolerance: config.logreg.tolerance,
        max_iters: config.logreg.max_iters,
        train_docs: train.len(),
        test_docs: test.len(),
        empty_train_docs: empty_train,
        empty_test_docs: empty_test,
    });
    Ok(report)
}
