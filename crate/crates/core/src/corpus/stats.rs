use std::collections::BTreeMap;

use serde::Serialize;

use super::{DatasetSplit, QuestionType};

/// Counts and fractions describing one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub n_examples: usize,
    pub n_passages: usize,
    /// Keyed by question type name; questions without a type count as "UNKNOWN".
    pub type_counts: BTreeMap<String, usize>,
    pub type_fractions: BTreeMap<String, f64>,
    /// Index = explanation length (0, 1, 2), over gold-labelled examples.
    pub length_counts: [usize; 3],
    pub length_fractions: [f64; 3],
    pub mean_steps_per_passage: f64,
}

impl SplitStats {
    pub fn type_fraction(&self, t: QuestionType) -> f64 {
        self.type_fractions.get(t.as_str()).copied().unwrap_or(0.0)
    }

    pub fn no_effect_fraction(&self) -> f64 {
        self.length_fractions[0]
    }
}

fn frac(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

pub fn split_stats(split: &DatasetSplit) -> SplitStats {
    let mut type_counts: BTreeMap<String, usize> =
        QuestionType::ALL.iter().map(|t| (t.as_str().to_string(), 0)).collect();
    let mut length_counts = [0usize; 3];
    for ex in &split.examples {
        let key = ex.question.question_type.map_or("UNKNOWN", |t| t.as_str());
        *type_counts.entry(key.to_string()).or_default() += 1;
        if let Some(g) = &ex.question.gold {
            length_counts[g.length()] += 1;
        }
    }
    let n = split.len();
    let labelled: usize = length_counts.iter().sum();
    let type_fractions = type_counts.iter().map(|(k, &c)| (k.clone(), frac(c, n))).collect();
    let passages = split.passages();
    let total_steps: usize = passages.iter().map(|p| p.len()).sum();
    SplitStats {
        n_examples: n,
        n_passages: passages.len(),
        type_counts,
        type_fractions,
        length_counts,
        length_fractions: length_counts.map(|c| frac(c, labelled)),
        mean_steps_per_passage: frac(total_steps, passages.len()),
    }
}
