//! Knowledge-injection probe: insert a background sentence into a passage
//! and compare predictions before and after.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Example, Passage};
use crate::error::ModelError;
use crate::explanation::Direction;
use crate::predict::{Prediction, Predictor};
use crate::quartet::HeadDistributions;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("inserted sentence is empty")]
    EmptySentence,
    #[error("insert position {position} outside 1..={max}")]
    Position { position: usize, max: usize },
    #[error("passage would have {steps} steps, over the marker budget of {budget}")]
    MarkerBudget { steps: usize, budget: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Copy of `ex` with `text` inserted so that it becomes step `position`.
pub fn insert_sentence(ex: &Example, text: &str, position: usize, marker_budget: usize) -> Result<Example, ProbeError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ProbeError::EmptySentence);
    }
    let k = ex.k();
    if position == 0 || position > k + 1 {
        return Err(ProbeError::Position { position, max: k + 1 });
    }
    if k + 1 > marker_budget {
        return Err(ProbeError::MarkerBudget {
            steps: k + 1,
            budget: marker_budget,
        });
    }
    let mut steps = ex.passage.steps.clone();
    steps.insert(position - 1, text.to_string());
    let passage = Passage::new(ex.passage.id.clone(), steps).expect("steps stay non-empty");
    Ok(Example {
        passage: Arc::new(passage),
        question: ex.question.clone(),
    })
}

/// Probability change per head, indexed by the rebuilt passage. The
/// inserted step had no mass before; the last entry of each span vector
/// is NULL.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassShift {
    pub s_i: Vec<f64>,
    pub s_j: Vec<f64>,
    pub p_di: [f64; 3],
    pub p_de: [f64; 3],
}

fn span_shift(before: &[f64], after: &[f64], position: usize) -> Vec<f64> {
    let k_after = after.len() - 1;
    (0..after.len())
        .map(|idx| {
            let old = if idx == k_after {
                Some(before.len() - 1)
            } else if idx + 1 < position {
                Some(idx)
            } else if idx + 1 == position {
                None
            } else {
                Some(idx - 1)
            };
            after[idx] - old.map_or(0.0, |o| before[o])
        })
        .collect()
}

pub fn mass_shift(before: &HeadDistributions, after: &HeadDistributions, position: usize) -> MassShift {
    let diff = |a: &[f64; 3], b: &[f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    MassShift {
        s_i: span_shift(&before.s_i, &after.s_i, position),
        s_j: span_shift(&before.s_j, &after.s_j, position),
        p_di: diff(&after.p_di, &before.p_di),
        p_de: diff(&after.p_de, &before.p_de),
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub probed: Example,
    pub position: usize,
    pub before: Prediction,
    pub after: Prediction,
    /// Present when the model exposes head distributions.
    pub shift: Option<MassShift>,
}

impl ProbeResult {
    pub fn render(&self) -> String {
        let mut lines = vec![
            format!("question {}", self.probed.id()),
            format!("inserted step {}: {}", self.position, self.probed.passage.steps[self.position - 1]),
            format!("before: {}", self.before.explanation),
            format!("after:  {}", self.after.explanation),
        ];
        if let Some(s) = &self.shift {
            let labels = [Direction::More, Direction::Less, Direction::None];
            let fmt3 = |v: &[f64; 3]| {
                labels
                    .iter()
                    .map(|d| format!("{} {:+.4}", d.as_str(), v[d.index()]))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let fmt_span = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .map(|(idx, x)| {
                        let label = if idx + 1 == v.len() { "NULL".to_string() } else { (idx + 1).to_string() };
                        format!("{label} {x:+.4}")
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            lines.push(format!("shift d_e: {}", fmt3(&s.p_de)));
            lines.push(format!("shift d_i: {}", fmt3(&s.p_di)));
            lines.push(format!("shift i:   {}", fmt_span(&s.s_i)));
            lines.push(format!("shift j:   {}", fmt_span(&s.s_j)));
        }
        lines.join("\n")
    }
}

pub fn probe(
    model: &dyn Predictor,
    ex: &Example,
    text: &str,
    position: usize,
    marker_budget: usize,
) -> Result<ProbeResult, ProbeError> {
    let probed = insert_sentence(ex, text, position, marker_budget)?;
    let before = model.predict(ex)?;
    let after = model.predict(&probed)?;
    let shift = match (&before.dists, &after.dists) {
        (Some(b), Some(a)) => Some(mass_shift(b, a, position)),
        _ => None,
    };
    Ok(ProbeResult {
        probed,
        position,
        before,
        after,
        shift,
    })
}
