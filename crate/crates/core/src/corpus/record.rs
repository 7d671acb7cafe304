use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorpusError, DatasetSplit, Example, InfluenceQuestion, Passage, QuestionType};
use crate::explanation::{step_from_id, validate_explanation, Direction, Explanation};

/// Gold explanation as stored on disk: 1-based indices with -1 for absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub i: i64,
    pub j: i64,
    pub d_i: Direction,
    pub d_e: Direction,
}

impl From<&Explanation> for GoldRecord {
    fn from(e: &Explanation) -> Self {
        GoldRecord {
            i: e.i_id(),
            j: e.j_id(),
            d_i: e.d_i,
            d_e: e.d_e,
        }
    }
}

impl GoldRecord {
    /// `d_j` is not stored; it is tied to `d_i`.
    pub fn to_explanation(&self) -> Explanation {
        Explanation {
            i: step_from_id(self.i),
            j: step_from_id(self.j),
            d_i: self.d_i,
            d_j: self.d_i,
            d_e: self.d_e,
        }
    }
}

/// One line of the normalized dataset format, fields in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub passage_id: String,
    #[serde(default)]
    pub steps: Vec<String>,
    pub q_p: String,
    pub q_e: String,
    #[serde(default)]
    pub question_type: Option<QuestionType>,
    #[serde(default)]
    pub gold: Option<GoldRecord>,
}

impl Record {
    pub fn from_example(ex: &Example) -> Record {
        Record {
            id: ex.question.id.clone(),
            passage_id: ex.passage.id.clone(),
            steps: ex.passage.steps.clone(),
            q_p: ex.question.q_p.clone(),
            q_e: ex.question.q_e.clone(),
            question_type: ex.question.question_type,
            gold: ex.question.gold.as_ref().map(GoldRecord::from),
        }
    }
}

/// Renames raw field names to the canonical ones before parsing.
///
/// Keys are canonical names (`gold.d_i` addresses a nested field), values the
/// raw names found in the input. Unmapped fields pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldMapping {
    pub fields: BTreeMap<String, String>,
}

impl FieldMapping {
    pub fn identity() -> FieldMapping {
        FieldMapping::default()
    }

    pub fn with(mut self, canonical: &str, raw: &str) -> FieldMapping {
        self.fields.insert(canonical.to_string(), raw.to_string());
        self
    }

    /// Parses `canonical = raw` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<FieldMapping, String> {
        let mut out = FieldMapping::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("mapping line {}: expected `canonical = raw`", n + 1))?;
            out.fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    fn apply(&self, value: Value) -> Value {
        let Value::Object(mut map) = value else {
            return value;
        };
        for (canon, raw) in self.fields.iter().filter(|(k, _)| !k.contains('.')) {
            if let Some(v) = map.remove(raw.as_str()) {
                map.insert(canon.clone(), v);
            }
        }
        for (canon, raw) in &self.fields {
            let Some((parent, child)) = canon.split_once('.') else {
                continue;
            };
            if let Some(Value::Object(inner)) = map.get_mut(parent) {
                if let Some(v) = inner.remove(raw.as_str()) {
                    inner.insert(child.to_string(), v);
                }
            }
        }
        Value::Object(map)
    }
}

/// Lenient gold parsing: indices may be null, directions may use raw
/// spellings such as "more" or "no_effect".
fn parse_gold(v: &Value) -> Result<Option<GoldRecord>, String> {
    if v.is_null() {
        return Ok(None);
    }
    let obj = v.as_object().ok_or("gold must be an object or null")?;
    let idx = |key: &str| -> Result<i64, String> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(-1),
            Some(x) => x.as_i64().ok_or_else(|| format!("gold.{key} must be an integer")),
        }
    };
    let dir = |key: &str| -> Result<Direction, String> {
        let s = obj
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| format!("gold.{key} must be a direction string"))?;
        s.parse::<Direction>().map_err(|e| e.to_string())
    };
    Ok(Some(GoldRecord {
        i: idx("i")?,
        j: idx("j")?,
        d_i: dir("d_i")?,
        d_e: dir("d_e")?,
    }))
}

fn parse_record(line: &str, mapping: &FieldMapping) -> Result<Record, String> {
    let raw: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut value = mapping.apply(raw);
    let gold = match &mut value {
        Value::Object(map) => map.remove("gold").unwrap_or(Value::Null),
        _ => return Err("record must be a JSON object".into()),
    };
    let mut record: Record = serde_json::from_value(value).map_err(|e| e.to_string())?;
    record.gold = parse_gold(&gold)?;
    Ok(record)
}

/// Parses a split from any reader. See [`load_dataset`].
pub fn read_split<R: Read>(reader: R, name: &str, mapping: &FieldMapping) -> Result<DatasetSplit, CorpusError> {
    let mut passages: HashMap<String, Arc<Passage>> = HashMap::new();
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(&line, mapping).map_err(|message| CorpusError::Malformed { line: line_no, message })?;

        let passage = match passages.get(&rec.passage_id) {
            Some(p) if rec.steps.is_empty() || p.steps == rec.steps => p.clone(),
            Some(_) => {
                return Err(CorpusError::PassageConflict {
                    line: line_no,
                    passage_id: rec.passage_id,
                })
            }
            None if rec.steps.is_empty() => {
                return Err(CorpusError::UnresolvedPassage {
                    line: line_no,
                    passage_id: rec.passage_id,
                })
            }
            None => {
                let p = Arc::new(Passage::new(rec.passage_id.clone(), rec.steps.clone())?);
                passages.insert(rec.passage_id.clone(), p.clone());
                p
            }
        };

        let gold = rec.gold.as_ref().map(GoldRecord::to_explanation);
        if let Some(g) = &gold {
            let verdict = validate_explanation(g, passage.len());
            if !verdict.is_valid() {
                return Err(CorpusError::InvalidGold {
                    line: line_no,
                    id: rec.id,
                    verdict,
                });
            }
        }
        let question_type = match (rec.question_type, gold) {
            (Some(t), Some(g)) => {
                if (t == QuestionType::NoEffect) != (g.d_e == Direction::None) {
                    return Err(CorpusError::TypeMismatch {
                        line: line_no,
                        id: rec.id,
                        declared: t,
                        answer: g.d_e,
                    });
                }
                Some(t)
            }
            (None, Some(g)) if g.d_e == Direction::None => Some(QuestionType::NoEffect),
            (None, Some(_)) => {
                return Err(CorpusError::MissingType {
                    line: line_no,
                    id: rec.id,
                })
            }
            (t, None) => t,
        };

        examples.push(Example {
            passage,
            question: InfluenceQuestion {
                id: rec.id,
                passage_id: rec.passage_id,
                q_p: rec.q_p,
                q_e: rec.q_e,
                question_type,
                gold,
            },
        });
    }
    Ok(DatasetSplit::new(name, examples))
}

/// Loads a line-delimited split. The split name is taken from the file stem.
pub fn load_dataset(path: impl AsRef<Path>, mapping: &FieldMapping) -> Result<DatasetSplit, CorpusError> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("split").to_string();
    read_split(File::open(path)?, &name, mapping)
}

/// Writes one canonical record per line.
pub fn write_split<W: Write>(split: &DatasetSplit, mut out: W) -> std::io::Result<()> {
    for ex in &split.examples {
        let line = serde_json::to_string(&Record::from_example(ex)).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
