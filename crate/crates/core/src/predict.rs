//! The predictor interface shared by every model and the prediction file schema.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Example, GoldRecord};
use crate::error::ModelError;
use crate::explanation::Explanation;
use crate::quartet::HeadDistributions;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub explanation: Explanation,
    pub dists: Option<HeadDistributions>,
}

impl Prediction {
    pub fn bare(explanation: Explanation) -> Prediction {
        Prediction {
            explanation,
            dists: None,
        }
    }
}

pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    fn predict(&self, ex: &Example) -> Result<Prediction, ModelError>;

    /// Predicts every example in parallel; results keep split order.
    fn predict_split(&self, split: &DatasetSplit) -> Result<Vec<Prediction>, ModelError> {
        split.examples.par_iter().map(|ex| self.predict(ex)).collect()
    }
}

/// Probability vectors rounded to 4 decimals for the prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistRecord {
    pub s_i: Vec<f64>,
    pub s_j: Vec<f64>,
    pub p_di: Vec<f64>,
    pub p_de: Vec<f64>,
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

impl From<&HeadDistributions> for DistRecord {
    fn from(d: &HeadDistributions) -> Self {
        DistRecord {
            s_i: round4(&d.s_i),
            s_j: round4(&d.s_j),
            p_di: round4(&d.p_di),
            p_de: round4(&d.p_de),
        }
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub pred: GoldRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<DistRecord>,
}

impl PredictionRecord {
    pub fn new(id: &str, p: &Prediction) -> PredictionRecord {
        PredictionRecord {
            id: id.to_string(),
            pred: GoldRecord::from(&p.explanation),
            dists: p.dists.as_ref().map(DistRecord::from),
        }
    }
}

pub fn write_predictions<W: Write>(split: &DatasetSplit, preds: &[Prediction], mut out: W) -> std::io::Result<()> {
    for (ex, p) in split.examples.iter().zip(preds) {
        let line = serde_json::to_string(&PredictionRecord::new(ex.id(), p)).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<(String, Explanation)>, String> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?;
        out.push((rec.id, rec.pred.to_explanation()));
    }
    Ok(out)
}
