//! Scoring: component accuracies, per-type answer accuracy, confusion
//! matrices, span-position histograms and correlation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetSplit, QuestionType};
use crate::explanation::{validate_explanation, Direction, Explanation, Verdict};
use crate::predict::Prediction;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no prediction for question {0}")]
    MissingPrediction(String),
    #[error("prediction for unknown question {0}")]
    UnknownId(String),
    #[error("duplicate prediction for question {0}")]
    DuplicateId(String),
    #[error("question {0} has no gold explanation")]
    MissingGold(String),
    #[error("prediction for {id} is invalid: {verdict}")]
    InvalidPrediction { id: String, verdict: Verdict },
    #[error("{preds} predictions for {golds} questions")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to score")]
    Empty,
    #[error("correlation needs at least two paired values of equal length")]
    BadSeries,
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
}

/// Rounds to 2 decimals. A tiny nudge away from zero keeps values such as
/// 81.625 from rounding down because of binary representation.
pub fn round2(x: f64) -> f64 {
    (x * 100.0 + x.signum() * 1e-9).round() / 100.0
}

/// One gold/prediction pair ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub id: String,
    pub gold: Explanation,
    pub pred: Explanation,
    pub question_type: Option<QuestionType>,
    pub k: usize,
}

fn checked(id: &str, pred: Explanation, k: usize) -> Result<Explanation, EvalError> {
    let verdict = validate_explanation(&pred, k);
    if verdict.is_valid() {
        Ok(pred)
    } else {
        Err(EvalError::InvalidPrediction {
            id: id.to_string(),
            verdict,
        })
    }
}

/// Pairs predictions with gold by question id. Every gold-labeled question
/// needs exactly one valid prediction and no prediction may be unmatched.
pub fn align(split: &DatasetSplit, preds: &[(String, Explanation)]) -> Result<Vec<Scored>, EvalError> {
    let mut by_id: HashMap<&str, Explanation> = HashMap::with_capacity(preds.len());
    for (id, p) in preds {
        if by_id.insert(id.as_str(), *p).is_some() {
            return Err(EvalError::DuplicateId(id.clone()));
        }
    }
    let mut out = Vec::with_capacity(split.len());
    for ex in &split.examples {
        let id = ex.id();
        let gold = ex.question.gold.ok_or_else(|| EvalError::MissingGold(id.to_string()))?;
        let pred = by_id.remove(id).ok_or_else(|| EvalError::MissingPrediction(id.to_string()))?;
        out.push(Scored {
            id: id.to_string(),
            gold,
            pred: checked(id, pred, ex.k())?,
            question_type: ex.question.question_type,
            k: ex.k(),
        });
    }
    if let Some(id) = preds.iter().map(|(id, _)| id).find(|id| by_id.contains_key(id.as_str())) {
        return Err(EvalError::UnknownId(id.clone()));
    }
    Ok(out)
}

/// Pairs predictions made in split order.
pub fn align_ordered(split: &DatasetSplit, preds: &[Prediction]) -> Result<Vec<Scored>, EvalError> {
    if preds.len() != split.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: split.len(),
        });
    }
    let pairs: Vec<(String, Explanation)> = split
        .examples
        .iter()
        .zip(preds)
        .map(|(ex, p)| (ex.id().to_string(), p.explanation))
        .collect();
    align(split, &pairs)
}

/// Percent accuracies of the four explanation components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub acc_i: f64,
    pub acc_j: f64,
    pub acc_di: f64,
    pub acc_de: f64,
}

impl Components {
    pub fn new(acc_i: f64, acc_j: f64, acc_di: f64, acc_de: f64) -> Components {
        Components {
            acc_i,
            acc_j,
            acc_di,
            acc_de,
        }
    }

    /// Mean of the four components, unrounded.
    pub fn acc_expl(&self) -> f64 {
        (self.acc_i + self.acc_j + self.acc_di + self.acc_de) / 4.0
    }

    pub fn acc_qa(&self) -> f64 {
        self.acc_de
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.acc_i, self.acc_j, self.acc_di, self.acc_de]
    }
}

/// Running correct counts per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComponentCounts {
    pub n: usize,
    pub i: usize,
    pub j: usize,
    pub d_i: usize,
    pub d_e: usize,
}

impl ComponentCounts {
    /// Scores raw component guesses; span indices use -1 for absent.
    pub fn add(&mut self, gold: &Explanation, i: i64, j: i64, d_i: Direction, d_e: Direction) {
        self.n += 1;
        self.i += (gold.i_id() == i) as usize;
        self.j += (gold.j_id() == j) as usize;
        self.d_i += (gold.d_i == d_i) as usize;
        self.d_e += (gold.d_e == d_e) as usize;
    }

    pub fn add_explanation(&mut self, gold: &Explanation, pred: &Explanation) {
        self.add(gold, pred.i_id(), pred.j_id(), pred.d_i, pred.d_e);
    }

    pub fn percent(&self) -> Result<Components, EvalError> {
        if self.n == 0 {
            return Err(EvalError::Empty);
        }
        let p = |c: usize| 100.0 * c as f64 / self.n as f64;
        Ok(Components::new(p(self.i), p(self.j), p(self.d_i), p(self.d_e)))
    }
}

/// Answer accuracy on one question-type subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetAccuracy {
    pub n: usize,
    pub correct: usize,
}

impl SubsetAccuracy {
    /// Percent correct; an empty subset scores 0.
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.n as f64
        }
    }
}

/// Answer accuracy per question type plus overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAccuracy {
    pub in_para: SubsetAccuracy,
    pub out_of_para: SubsetAccuracy,
    pub no_effect: SubsetAccuracy,
    pub untyped: SubsetAccuracy,
    pub overall: SubsetAccuracy,
}

pub fn accuracy_by_type(items: &[Scored]) -> TypeAccuracy {
    let zero = SubsetAccuracy { n: 0, correct: 0 };
    let mut t = TypeAccuracy {
        in_para: zero,
        out_of_para: zero,
        no_effect: zero,
        untyped: zero,
        overall: zero,
    };
    for s in items {
        let hit = (s.gold.d_e == s.pred.d_e) as usize;
        let cell = match s.question_type {
            Some(QuestionType::InPara) => &mut t.in_para,
            Some(QuestionType::OutOfPara) => &mut t.out_of_para,
            Some(QuestionType::NoEffect) => &mut t.no_effect,
            None => &mut t.untyped,
        };
        cell.n += 1;
        cell.correct += hit;
        t.overall.n += 1;
        t.overall.correct += hit;
    }
    t
}

/// Component and per-type accuracies of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub components: Components,
    pub by_type: TypeAccuracy,
}

impl MetricReport {
    pub fn acc_expl(&self) -> f64 {
        self.components.acc_expl()
    }

    pub fn acc_qa(&self) -> f64 {
        self.components.acc_qa()
    }
}

pub fn component_accuracies(items: &[Scored]) -> Result<MetricReport, EvalError> {
    let mut c = ComponentCounts::default();
    for s in items {
        c.add_explanation(&s.gold, &s.pred);
    }
    Ok(MetricReport {
        n: items.len(),
        components: c.percent()?,
        by_type: accuracy_by_type(items),
    })
}

/// Aligns and scores in one step.
pub fn evaluate(split: &DatasetSplit, preds: &[Prediction]) -> Result<MetricReport, EvalError> {
    component_accuracies(&align_ordered(split, preds)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionComponent {
    #[serde(rename = "d_i")]
    DI,
    #[serde(rename = "d_e")]
    DE,
}

impl DirectionComponent {
    pub fn as_str(self) -> &'static str {
        match self {
            DirectionComponent::DI => "d_i",
            DirectionComponent::DE => "d_e",
        }
    }

    fn of(self, e: &Explanation) -> Direction {
        match self {
            DirectionComponent::DI => e.d_i,
            DirectionComponent::DE => e.d_e,
        }
    }
}

/// Counts indexed `[gold][predicted]` in `LABELS` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub const LABELS: [Direction; 3] = [Direction::None, Direction::More, Direction::Less];

    fn slot(d: Direction) -> usize {
        match d {
            Direction::None => 0,
            Direction::More => 1,
            Direction::Less => 2,
        }
    }

    pub fn get(&self, gold: Direction, pred: Direction) -> usize {
        self.counts[Self::slot(gold)][Self::slot(pred)]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// Confusion of one direction component, optionally on one question type.
pub fn confusion(items: &[Scored], component: DirectionComponent, subset: Option<QuestionType>) -> ConfusionMatrix {
    let mut counts = [[0usize; 3]; 3];
    for s in items.iter().filter(|s| subset.is_none() || s.question_type == subset) {
        let g = ConfusionMatrix::slot(component.of(&s.gold));
        let p = ConfusionMatrix::slot(component.of(&s.pred));
        counts[g][p] += 1;
    }
    ConfusionMatrix { counts }
}

/// Gold and predicted counts per step index; -1 collects absent spans.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub gold: BTreeMap<i64, usize>,
    pub pred: BTreeMap<i64, usize>,
}

impl PositionHistogram {
    pub fn gold_total(&self) -> usize {
        self.gold.values().sum()
    }

    pub fn pred_total(&self) -> usize {
        self.pred.values().sum()
    }

    /// Every bucket present in either histogram, ascending.
    pub fn buckets(&self) -> Vec<i64> {
        let mut b: Vec<i64> = self.gold.keys().chain(self.pred.keys()).copied().collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionHistograms {
    pub i: PositionHistogram,
    pub j: PositionHistogram,
}

pub fn position_histograms(items: &[Scored]) -> PositionHistograms {
    let mut h = PositionHistograms::default();
    for s in items {
        *h.i.gold.entry(s.gold.i_id()).or_default() += 1;
        *h.i.pred.entry(s.pred.i_id()).or_default() += 1;
        *h.j.gold.entry(s.gold.j_id()).or_default() += 1;
        *h.j.pred.entry(s.pred.j_id()).or_default() += 1;
    }
    h
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(EvalError::BadSeries);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Published explanation accuracies: name, (acc_i, acc_j, acc_di, acc_de), acc_expl.
pub const REFERENCE_TABLE: [(&str, [f64; 4], f64); 7] = [
    ("random", [12.50, 12.50, 33.33, 33.33], 22.91),
    ("effect-only", [32.77, 32.77, 33.50, 44.82], 36.00),
    ("majority", [41.80, 41.80, 41.80, 41.80], 41.80),
    ("tagging", [42.26, 37.03, 56.74, 58.34], 48.59),
    ("answer-only", [38.66, 38.66, 69.20, 75.06], 55.40),
    ("quartet", [69.24, 65.97, 75.92, 82.07], 73.30),
    ("human", [75.90, 66.10, 88.20, 96.30], 81.63),
];

/// Correlation of answer accuracy with explanation accuracy across the
/// published model rows (human excluded).
pub fn reference_correlation() -> f64 {
    let rows = &REFERENCE_TABLE[..6];
    let de: Vec<f64> = rows.iter().map(|r| r.1[3]).collect();
    let expl: Vec<f64> = rows.iter().map(|r| r.2).collect();
    pearson(&de, &expl).expect("reference columns vary")
}
