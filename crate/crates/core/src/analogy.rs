//! Word-analogy evaluation.
//!
//! A question `a b c d` asks for the word closest to `b - a + c` (3CosAdd
//! over unit vectors) and counts as correct when that word is `d`.
//! Questions with a word the store cannot produce a vector for are
//! skipped, and accuracies are taken over evaluated questions only.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{normalized, EmbeddingStore};

/// Sections before this index are semantic unless a kinds file says otherwise.
pub const SEMANTIC_SECTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Semantic,
    Syntactic,
}

impl std::str::FromStr for SectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(SectionKind::Semantic),
            "syntactic" => Ok(SectionKind::Syntactic),
            _ => Err(Error::InvalidArgument(format!("unknown section kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalogyQuestion {
    pub a: String,
    pub b: String,
    pub c: String,
    pub d: String,
}

impl AnalogyQuestion {
    pub fn new(a: &str, b: &str, c: &str, d: &str) -> Self {
        AnalogyQuestion {
            a: a.to_lowercase(),
            b: b.to_lowercase(),
            c: c.to_lowercase(),
            d: d.to_lowercase(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnalogySection {
    pub name: String,
    pub kind: SectionKind,
    pub questions: Vec<AnalogyQuestion>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnalogyDataset {
    sections: Vec<AnalogySection>,
}

impl AnalogyDataset {
    pub fn new(sections: Vec<AnalogySection>) -> Result<Self> {
        let mut names = HashSet::new();
        for section in &sections {
            if !names.insert(section.name.as_str()) {
                return Err(Error::Data(format!("duplicate section `{}`", section.name)));
            }
        }
        Ok(AnalogyDataset { sections })
    }

    /// Parse `: section` headers followed by four-word question lines.
    /// Words are lowercased. Blank lines are ignored.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut sections: Vec<AnalogySection> = Vec::new();
        let mut names = HashSet::new();

        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix(':') {
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::parse(idx + 1, "empty section name"));
                }
                if !names.insert(name.to_owned()) {
                    return Err(Error::parse(idx + 1, format!("duplicate section `{name}`")));
                }
                let kind = if sections.len() < SEMANTIC_SECTIONS {
                    SectionKind::Semantic
                } else {
                    SectionKind::Syntactic
                };
                sections.push(AnalogySection {
                    name: name.to_owned(),
                    kind,
                    questions: Vec::new(),
                });
                continue;
            }

            let words: Vec<&str> = line.split_whitespace().collect();
            let [a, b, c, d] = words[..] else {
                return Err(Error::parse(
                    idx + 1,
                    format!("expected 4 words, found {}", words.len()),
                ));
            };
            let Some(section) = sections.last_mut() else {
                return Err(Error::parse(idx + 1, "question before the first section header"));
            };
            section.questions.push(AnalogyQuestion::new(a, b, c, d));
        }

        Ok(AnalogyDataset { sections })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Override section kinds from `name kind` lines.
    pub fn apply_kinds<R: BufRead>(&mut self, reader: R) -> Result<()> {
        let mut kinds = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields[..] {
                [] => continue,
                [name, kind] => {
                    let kind = kind.parse().map_err(|e: Error| Error::parse(idx + 1, e.to_string()))?;
                    kinds.insert(name.to_owned(), kind);
                }
                _ => return Err(Error::parse(idx + 1, "expected `<section> <semantic|syntactic>`")),
            }
        }
        for section in &mut self.sections {
            if let Some(&kind) = kinds.get(&section.name) {
                section.kind = kind;
            }
        }
        Ok(())
    }

    pub fn sections(&self) -> &[AnalogySection] {
        &self.sections
    }

    pub fn question_count(&self) -> usize {
        self.sections.iter().map(|s| s.questions.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalogyPrediction {
    /// `b̂ - â + ĉ`; absent when the question was skipped.
    pub offset: Option<Vec<f32>>,
    pub predicted: Option<String>,
    pub correct: bool,
    pub skipped: bool,
}

impl AnalogyPrediction {
    fn skipped() -> Self {
        AnalogyPrediction {
            offset: None,
            predicted: None,
            correct: false,
            skipped: true,
        }
    }
}

pub fn solve(store: &EmbeddingStore, question: &AnalogyQuestion, exclude_inputs: bool) -> AnalogyPrediction {
    solve_within(store, question, exclude_inputs, store.len())
}

/// Solve with only the first `limit` words counting as vocabulary.
pub fn solve_within(
    store: &EmbeddingStore,
    q: &AnalogyQuestion,
    exclude_inputs: bool,
    limit: usize,
) -> AnalogyPrediction {
    let unit = |w: &str| store.vector_within(w, limit).map(|v| normalized(&v));
    let (Some(a), Some(b), Some(c), Some(_)) = (unit(&q.a), unit(&q.b), unit(&q.c), unit(&q.d)) else {
        return AnalogyPrediction::skipped();
    };

    let offset: Vec<f32> = b.iter().zip(&a).zip(&c).map(|((b, a), c)| b - a + c).collect();
    let exclude: Vec<&str> = if exclude_inputs {
        vec![q.a.as_str(), q.b.as_str(), q.c.as_str()]
    } else {
        Vec::new()
    };
    let predicted = store
        .nearest_within(&offset, 1, &exclude, limit)
        .expect("offset has the store dimension")
        .into_iter()
        .next()
        .map(|n| n.word);
    let correct = predicted.as_deref() == Some(q.d.as_str());

    AnalogyPrediction {
        offset: Some(offset),
        predicted,
        correct,
        skipped: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionReport {
    pub name: String,
    pub kind: SectionKind,
    pub questions: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub correct: usize,
    /// `correct / evaluated`; absent when nothing was evaluated.
    pub accuracy: Option<f64>,
}

impl SectionReport {
    pub fn new(name: impl Into<String>, kind: SectionKind, evaluated: usize, skipped: usize, correct: usize) -> Self {
        assert!(correct <= evaluated, "more correct answers than evaluated questions");
        SectionReport {
            name: name.into(),
            kind,
            questions: evaluated + skipped,
            evaluated,
            skipped,
            correct,
            accuracy: (evaluated > 0).then(|| correct as f64 / evaluated as f64),
        }
    }
}

/// Section-wise, pooled (micro) and section-averaged (macro) accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalogyReport {
    pub restrict_vocab: usize,
    pub exclude_inputs: bool,
    pub sections: Vec<SectionReport>,
    pub semantic: Option<f64>,
    pub syntactic: Option<f64>,
    pub total: Option<f64>,
    pub semantic_avg: Option<f64>,
    pub syntactic_avg: Option<f64>,
    pub total_avg: Option<f64>,
}

fn micro<'a>(sections: impl Iterator<Item = &'a SectionReport>) -> Option<f64> {
    let (correct, evaluated) = sections.fold((0, 0), |(c, e), s| (c + s.correct, e + s.evaluated));
    (evaluated > 0).then(|| correct as f64 / evaluated as f64)
}

fn macro_avg<'a>(sections: impl Iterator<Item = &'a SectionReport>) -> Option<f64> {
    let accuracies: Vec<f64> = sections.filter_map(|s| s.accuracy).collect();
    (!accuracies.is_empty()).then(|| accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

impl AnalogyReport {
    pub fn from_sections(sections: Vec<SectionReport>, restrict_vocab: usize, exclude_inputs: bool) -> Self {
        let of_kind = |kind| sections.iter().filter(move |s: &&SectionReport| s.kind == kind);
        AnalogyReport {
            restrict_vocab,
            exclude_inputs,
            semantic: micro(of_kind(SectionKind::Semantic)),
            syntactic: micro(of_kind(SectionKind::Syntactic)),
            total: micro(sections.iter()),
            semantic_avg: macro_avg(of_kind(SectionKind::Semantic)),
            syntactic_avg: macro_avg(of_kind(SectionKind::Syntactic)),
            total_avg: macro_avg(sections.iter()),
            sections,
        }
    }
}

fn percent(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_owned(), |v| format!("{:.2}%", v * 100.0))
}

impl fmt::Display for AnalogyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.sections.iter().map(|s| s.name.len()).max().unwrap_or(0).max(7);
        writeln!(
            f,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>8}",
            "section", "kind", "questions", "evaluated", "skipped", "accuracy"
        )?;
        for s in &self.sections {
            let kind = match s.kind {
                SectionKind::Semantic => "semantic",
                SectionKind::Syntactic => "syntactic",
            };
            writeln!(
                f,
                "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>8}",
                s.name,
                kind,
                s.questions,
                s.evaluated,
                s.skipped,
                percent(s.accuracy)
            )?;
        }
        writeln!(f)?;
        writeln!(f, "{:<10} {:>9} {:>9} {:>9}", "", "semantic", "syntactic", "total")?;
        writeln!(
            f,
            "{:<10} {:>9} {:>9} {:>9}",
            "micro",
            percent(self.semantic),
            percent(self.syntactic),
            percent(self.total)
        )?;
        write!(
            f,
            "{:<10} {:>9} {:>9} {:>9}",
            "macro",
            percent(self.semantic_avg),
            percent(self.syntactic_avg),
            percent(self.total_avg)
        )
    }
}

/// Evaluate every question with the vocabulary cut to the first `restrict`
/// words.
pub fn evaluate(
    store: &EmbeddingStore,
    dataset: &AnalogyDataset,
    restrict: usize,
    exclude_inputs: bool,
) -> Result<AnalogyReport> {
    if restrict == 0 {
        return Err(Error::InvalidArgument("vocabulary restriction must be at least 1".into()));
    }
    let limit = restrict.min(store.len());

    let sections = dataset
        .sections()
        .iter()
        .map(|section| {
            let (evaluated, skipped, correct) = section
                .questions
                .par_iter()
                .map(|q| {
                    let p = solve_within(store, q, exclude_inputs, limit);
                    (usize::from(!p.skipped), usize::from(p.skipped), usize::from(p.correct))
                })
                .reduce(|| (0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
            SectionReport::new(section.name.clone(), section.kind, evaluated, skipped, correct)
        })
        .collect();

    Ok(AnalogyReport::from_sections(sections, restrict, exclude_inputs))
}
