#![allow(dead_code)]

use embedbench::analogy::{AnalogyDataset, AnalogyQuestion, AnalogySection, SectionKind, SectionReport};
use embedbench::corpus::{ConlluSentence, ConlluToken, Document, LabeledDocument};
use embedbench::store::EmbeddingStore;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const BLOCK_WORDS: usize = 20;

/// Two topic blocks of sentences. Block A draws from `a0..a19` plus a slot
/// filled by `x1` or `x2` at random, so the two are interchangeable by
/// construction. Block B draws from `b0..b19` only.
pub fn two_block_corpus(tokens: usize, seed: u64) -> Vec<Document> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let sentence_len = 10;
    (0..tokens / sentence_len)
        .map(|s| {
            let block_a = s % 2 == 0;
            let tokens = (0..sentence_len)
                .map(|_| {
                    if block_a {
                        match rng.random_range(0..=BLOCK_WORDS) {
                            BLOCK_WORDS if rng.random_bool(0.5) => "x1".to_string(),
                            BLOCK_WORDS => "x2".to_string(),
                            i => format!("a{i}"),
                        }
                    } else {
                        format!("b{}", rng.random_range(0..BLOCK_WORDS))
                    }
                })
                .collect();
            Document::new(tokens)
        })
        .collect()
}

/// Cosine computed in f64 directly from raw vectors.
pub fn cosine64(u: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    let nu: f64 = u.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// `(cos(x1, x2), max over b-words of cos(x1, b))` by exhaustive scan.
pub fn interchangeable_similarity(store: &EmbeddingStore) -> (f64, f64) {
    let x1 = store.vector("x1").expect("x1 in store");
    let x2 = store.vector("x2").expect("x2 in store");
    let cross = (0..BLOCK_WORDS)
        .map(|i| cosine64(&x1, &store.vector(&format!("b{i}")).expect("b word")))
        .fold(f64::NEG_INFINITY, f64::max);
    (cosine64(&x1, &x2), cross)
}

pub fn table_bits(store: &EmbeddingStore) -> Vec<u32> {
    let mut bits: Vec<u32> = store.table().iter().map(|v| v.to_bits()).collect();
    if let Some(sw) = store.subwords() {
        bits.extend(sw.rows().iter().map(|v| v.to_bits()));
    }
    bits
}

const LEXICON: &[(&str, &str, &str)] = &[
    ("the", "DET", "Definite=Def"),
    ("a", "DET", "Definite=Ind"),
    ("big", "ADJ", "Degree=Pos"),
    ("bigger", "ADJ", "Degree=Cmp"),
    ("cat", "NOUN", "Number=Sing"),
    ("cats", "NOUN", "Number=Plur"),
    ("dog", "NOUN", "Number=Sing"),
    ("dogs", "NOUN", "Number=Plur"),
    ("runs", "VERB", "Number=Sing|Tense=Pres"),
    ("run", "VERB", "Number=Plur|Tense=Pres"),
    ("ran", "VERB", "Tense=Past"),
    ("quickly", "ADV", "_"),
    (".", "PUNCT", "_"),
];

/// `n` short tagged sentences of the form DET (ADJ) NOUN VERB (ADV) `.`,
/// with the first word capitalised.
pub fn toy_treebank(n: usize, seed: u64) -> Vec<ConlluSentence> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut words = vec![LEXICON[rng.random_range(0..2)]];
            if rng.random_bool(0.5) {
                words.push(LEXICON[rng.random_range(2..4)]);
            }
            words.push(LEXICON[rng.random_range(4..8)]);
            words.push(LEXICON[rng.random_range(8..11)]);
            if rng.random_bool(0.5) {
                words.push(LEXICON[11]);
            }
            words.push(LEXICON[12]);
            let tokens = words
                .iter()
                .enumerate()
                .map(|(i, (form, upos, feats))| ConlluToken {
                    form: if i == 0 { capitalise(form) } else { form.to_string() },
                    upos: upos.to_string(),
                    feats: feats.to_string(),
                })
                .collect();
            ConlluSentence { tokens }
        })
        .collect()
}

fn capitalise(word: &str) -> String {
    let mut chars = word.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

/// Random vectors for every other lexicon word; the rest are out of
/// vocabulary and rely on character features.
pub fn toy_tagger_store(dim: usize, seed: u64) -> EmbeddingStore {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let words: Vec<String> = LEXICON.iter().step_by(2).map(|(w, _, _)| w.to_string()).collect();
    let table = (0..words.len() * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingStore::new(words, dim, table).unwrap()
}

pub const ANALOGY_SECTIONS: [(&str, usize, SectionKind); 13] = [
    ("capital-common-countries", 506, SectionKind::Semantic),
    ("capital-world", 4369, SectionKind::Semantic),
    ("currency", 866, SectionKind::Semantic),
    ("city-in-state", 56, SectionKind::Semantic),
    ("family", 506, SectionKind::Semantic),
    ("gram1-adjective-to-adverb", 992, SectionKind::Syntactic),
    ("gram2-opposite", 812, SectionKind::Syntactic),
    ("gram3-superlative", 1122, SectionKind::Syntactic),
    ("gram4-present-participle", 1056, SectionKind::Syntactic),
    ("gram5-nationality-adjective", 1599, SectionKind::Syntactic),
    ("gram6-past-tense", 1560, SectionKind::Syntactic),
    ("gram7-plural", 1332, SectionKind::Syntactic),
    ("gram8-plural-verbs", 870, SectionKind::Syntactic),
];

/// Published section accuracies (%) of the new GloVe vectors.
pub const GLOVE_NEW_ACCURACY: [f64; 13] = [
    75.3, 49.14, 2.19, 23.21, 15.8, 6.55, 11.2, 12.74, 2.27, 47.71, 1.85, 20.49, 5.4,
];

/// Section reports reconstructed from the published accuracies and
/// question counts, assuming nothing was skipped.
pub fn glove_new_sections() -> Vec<SectionReport> {
    ANALOGY_SECTIONS
        .iter()
        .zip(GLOVE_NEW_ACCURACY)
        .map(|(&(name, n, kind), acc)| {
            let correct = (acc * n as f64 / 100.0).round() as usize;
            SectionReport::new(name, kind, n, 0, correct)
        })
        .collect()
}

/// A questions file with the published section names and counts and
/// placeholder words.
pub fn published_shape_questions_file() -> String {
    let mut text = String::new();
    for (s, &(name, n, _)) in ANALOGY_SECTIONS.iter().enumerate() {
        text.push_str(&format!(": {name}\n"));
        for q in 0..n {
            text.push_str(&format!("s{s}a{q} s{s}b{q} s{s}c{q} s{s}d{q}\n"));
        }
    }
    text
}

/// Random store of `n` words `w0..`, with the occasional zero vector.
pub fn random_store<R: Rng>(rng: &mut R, n: usize, dim: usize) -> EmbeddingStore {
    let words = (0..n).map(|i| format!("w{i}")).collect();
    let mut table = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let zero = rng.random_bool(0.03);
        table.extend((0..dim).map(|_| if zero { 0.0 } else { rng.random_range(-1.0f32..1.0) }));
    }
    EmbeddingStore::new(words, dim, table).unwrap()
}

/// Questions over `w0..w{n}` plus a few out-of-vocabulary words, including
/// some of the degenerate form a:b::a:b.
pub fn random_questions<R: Rng>(rng: &mut R, n_words: usize, sections: usize, per_section: usize) -> AnalogyDataset {
    let word = |rng: &mut R| {
        if rng.random_bool(0.05) {
            format!("oov{}", rng.random_range(0..3))
        } else {
            format!("w{}", rng.random_range(0..n_words))
        }
    };
    let sections = (0..sections)
        .map(|s| {
            let questions = (0..per_section)
                .map(|_| {
                    let (a, b) = (word(rng), word(rng));
                    if rng.random_bool(0.1) {
                        AnalogyQuestion::new(&a, &b, &a, &b)
                    } else {
                        let (c, d) = (word(rng), word(rng));
                        AnalogyQuestion::new(&a, &b, &c, &d)
                    }
                })
                .collect();
            AnalogySection {
                name: format!("section{s}"),
                kind: if s < sections / 2 { SectionKind::Semantic } else { SectionKind::Syntactic },
                questions,
            }
        })
        .collect();
    AnalogyDataset::new(sections).unwrap()
}

fn unit64(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|&x| if norm == 0.0 { 0.0 } else { x as f64 / norm }).collect()
}

pub struct OracleAnswer {
    pub skipped: bool,
    pub predicted: Option<usize>,
    /// f64 cosine of every candidate id to the offset vector.
    pub scores: Vec<Option<f64>>,
}

/// Exhaustive f64 cosine scan over the first `limit` words.
pub fn oracle_solve(store: &EmbeddingStore, q: &AnalogyQuestion, exclude_inputs: bool, limit: usize) -> OracleAnswer {
    let id = |w: &str| store.words().iter().take(limit).position(|x| x == w);
    let ids = [id(&q.a), id(&q.b), id(&q.c), id(&q.d)];
    if ids.iter().any(Option::is_none) {
        return OracleAnswer {
            skipped: true,
            predicted: None,
            scores: Vec::new(),
        };
    }
    let [a, b, c, _] = ids.map(|i| unit64(store.row(i.unwrap())));
    let p: Vec<f64> = (0..store.dim()).map(|i| b[i] - a[i] + c[i]).collect();
    let p_norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut scores = vec![None; limit];
    let mut best: Option<(f64, usize)> = None;
    for cand in 0..limit {
        if exclude_inputs && ids[..3].contains(&Some(cand)) {
            continue;
        }
        let v = unit64(store.row(cand));
        let cos = if p_norm == 0.0 {
            0.0
        } else {
            v.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() / p_norm
        };
        scores[cand] = Some(cos);
        if best.is_none_or(|(s, _)| cos > s) {
            best = Some((cos, cand));
        }
    }
    OracleAnswer {
        skipped: false,
        predicted: best.map(|(_, id)| id),
        scores,
    }
}

/// Two classes in the plane, separated by `x0 = 0` with margin 1.
pub fn separable_points(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let x0 = 1.0 + rng.random_range(0.0..2.0);
            let x1 = rng.random_range(-2.0..2.0);
            let label = if positive { "pos" } else { "neg" };
            (vec![if positive { x0 } else { -x0 }, x1], label.to_owned())
        })
        .unzip()
}

/// Documents of two classes with disjoint vocabularies whose vectors lie on
/// orthogonal axes. Every document also contains `the`, a stop word whose
/// vector mixes both axes.
pub fn orthogonal_class_corpus(docs_per_class: usize, seed: u64) -> (Vec<LabeledDocument>, EmbeddingStore) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let alpha: Vec<String> = (0..10).map(|i| format!("alpha{}", (b'a' + i) as char)).collect();
    let beta: Vec<String> = (0..10).map(|i| format!("beta{}", (b'a' + i) as char)).collect();

    let mut words = vec!["the".to_owned()];
    let mut table = vec![1.0, 1.0, 0.0];
    for (i, w) in alpha.iter().enumerate() {
        words.push(w.clone());
        table.extend([0.5 + i as f32 / 10.0, 0.0, 0.0]);
    }
    for (i, w) in beta.iter().enumerate() {
        words.push(w.clone());
        table.extend([0.0, 0.5 + i as f32 / 10.0, 0.0]);
    }
    let store = EmbeddingStore::new(words, 3, table).unwrap();

    let mut docs = Vec::new();
    for i in 0..2 * docs_per_class {
        let (label, vocab) = if i % 2 == 0 { ("alpha", &alpha) } else { ("beta", &beta) };
        let len = rng.random_range(3..8);
        let mut tokens: Vec<String> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
        tokens.insert(rng.random_range(0..=tokens.len()), "the".to_owned());
        docs.push(LabeledDocument {
            label: label.to_owned(),
            doc: Document::new(tokens),
        });
    }
    (docs, store)
}

/// All nine cells of a 3-word matrix with `ln X_ij = w_i·w̃_j + b_i + b̃_j`
/// for fixed rank-3 factors, and the dimension that reproduces it exactly.
pub fn factorizable_cooccurrence() -> (Vec<(u32, u32, f64)>, usize) {
    let w = [[0.8, -0.3, 0.5], [0.1, 0.9, -0.4], [-0.6, 0.2, 0.7]];
    let c = [[0.5, 0.4, -0.2], [-0.7, 0.3, 0.6], [0.2, -0.8, 0.3]];
    let b = [1.0, 0.5, 1.5];
    let bc = [0.7, 1.2, 0.3];
    let mut entries = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| w[i][k] * c[j][k]).sum();
            entries.push((i as u32, j as u32, (dot + b[i] + bc[j]).exp()));
        }
    }
    (entries, 3)
}
