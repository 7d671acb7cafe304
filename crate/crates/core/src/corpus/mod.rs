//! Passages, influence questions, and the line-delimited record format.

mod record;
mod stats;
mod synth;
mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explanation::{Direction, Explanation, Verdict};

pub use record::{load_dataset, read_split, write_split, FieldMapping, GoldRecord, Record};
pub use stats::{split_stats, SplitStats};
pub use synth::{generate_synthetic_corpus, Lexicon, SynthConfig};
pub use vocab::{build_vocab, tokenize, VocabMap};

/// A procedural text: ordered steps x_1..x_K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub steps: Vec<String>,
}

impl Passage {
    pub fn new(id: impl Into<String>, steps: Vec<String>) -> Result<Passage, CorpusError> {
        let id = id.into();
        if steps.is_empty() {
            return Err(CorpusError::EmptyPassage(id));
        }
        if let Some(pos) = steps.iter().position(|s| s.trim().is_empty()) {
            return Err(CorpusError::EmptyStep { passage: id, step: pos + 1 });
        }
        Ok(Passage { id, steps })
    }

    /// Number of steps, K.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// 1-based step access.
    pub fn step(&self, k: usize) -> Option<&str> {
        k.checked_sub(1).and_then(|i| self.steps.get(i)).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QuestionType {
    InPara,
    OutOfPara,
    NoEffect,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::InPara, QuestionType::OutOfPara, QuestionType::NoEffect];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::InPara => "IN_PARA",
            QuestionType::OutOfPara => "OUT_OF_PARA",
            QuestionType::NoEffect => "NO_EFFECT",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A perturbation question about one passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfluenceQuestion {
    pub id: String,
    pub passage_id: String,
    pub q_p: String,
    pub q_e: String,
    pub question_type: Option<QuestionType>,
    pub gold: Option<Explanation>,
}

impl InfluenceQuestion {
    pub fn gold_answer(&self) -> Option<Direction> {
        self.gold.map(|g| g.d_e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub passage: Arc<Passage>,
    pub question: InfluenceQuestion,
}

impl Example {
    pub fn id(&self) -> &str {
        &self.question.id
    }

    pub fn k(&self) -> usize {
        self.passage.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub examples: Vec<Example>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> DatasetSplit {
        DatasetSplit {
            name: name.into(),
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn find(&self, question_id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.question.id == question_id)
    }

    pub fn passage_ids(&self) -> BTreeSet<&str> {
        self.examples.iter().map(|e| e.passage.id.as_str()).collect()
    }

    /// Distinct passages in first-seen order.
    pub fn passages(&self) -> Vec<Arc<Passage>> {
        let mut seen = BTreeSet::new();
        self.examples
            .iter()
            .filter(|e| seen.insert(e.passage.id.clone()))
            .map(|e| e.passage.clone())
            .collect()
    }

    /// Partitions examples by passage into consecutive named parts whose
    /// passage counts follow `fractions` (the last part takes the remainder).
    pub fn split_by_passage(&self, parts: &[(&str, f64)]) -> Vec<DatasetSplit> {
        let passages = self.passages();
        let n = passages.len();
        let mut bounds = Vec::with_capacity(parts.len());
        let mut acc = 0.0;
        for (idx, (_, frac)) in parts.iter().enumerate() {
            acc += frac;
            let end = if idx + 1 == parts.len() {
                n
            } else {
                ((acc * n as f64).round() as usize).min(n)
            };
            bounds.push(end);
        }
        let mut out = Vec::with_capacity(parts.len());
        let mut start = 0;
        for ((name, _), end) in parts.iter().zip(bounds) {
            let ids: BTreeSet<&str> = passages[start..end.max(start)].iter().map(|p| p.id.as_str()).collect();
            let examples = self
                .examples
                .iter()
                .filter(|e| ids.contains(e.passage.id.as_str()))
                .cloned()
                .collect();
            out.push(DatasetSplit::new(*name, examples));
            start = end.max(start);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record {id}: gold explanation violates {verdict}")]
    InvalidGold { line: usize, id: String, verdict: Verdict },
    #[error("line {line}: record {id}: question type {declared} disagrees with gold answer {answer}")]
    TypeMismatch {
        line: usize,
        id: String,
        declared: QuestionType,
        answer: Direction,
    },
    #[error("line {line}: record {id}: question type missing and not derivable from gold")]
    MissingType { line: usize, id: String },
    #[error("line {line}: passage {passage_id} is referenced before its steps are given")]
    UnresolvedPassage { line: usize, passage_id: String },
    #[error("line {line}: passage {passage_id} appears with conflicting steps")]
    PassageConflict { line: usize, passage_id: String },
    #[error("passage {0} has no steps")]
    EmptyPassage(String),
    #[error("passage {passage} step {step} is empty")]
    EmptyStep { passage: String, step: usize },
    #[error("invalid synthetic corpus parameters: {0}")]
    InvalidParams(String),
}
