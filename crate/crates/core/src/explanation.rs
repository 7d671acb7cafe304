//! Explanation structures, their consistency rules, and the BIEO tag codec.
//!
//! An explanation `(i, j, d_i, d_j, d_e)` names up to two supporting steps of
//! a procedural passage together with the qualitative direction in which the
//! perturbation pushes each of them and the candidate effect. Step indices are
//! 1-based; an absent index means the structure is the no-effect one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Qualitative direction of influence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    More,
    Less,
    None,
}

impl Direction {
    /// All three values in class-index order.
    pub const ALL: [Direction; 3] = [Direction::More, Direction::Less, Direction::None];
    /// The two directions an effect can take.
    pub const EFFECT: [Direction; 2] = [Direction::More, Direction::Less];

    pub fn index(self) -> usize {
        match self {
            Direction::More => 0,
            Direction::Less => 1,
            Direction::None => 2,
        }
    }

    pub fn from_index(idx: usize) -> Option<Direction> {
        Direction::ALL.get(idx).copied()
    }

    /// MORE <-> LESS; NONE stays NONE.
    pub fn flip(self) -> Direction {
        match self {
            Direction::More => Direction::Less,
            Direction::Less => Direction::More,
            Direction::None => Direction::None,
        }
    }

    pub fn is_effect(self) -> bool {
        self != Direction::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::More => "MORE",
            Direction::Less => "LESS",
            Direction::None => "NONE",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown direction label {0:?}")]
pub struct ParseDirectionError(pub String);

impl FromStr for Direction {
    type Err = ParseDirectionError;

    /// Accepts the canonical names plus the lower-case and sign spellings
    /// found in raw WIQA-style dumps.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "more" | "+" | "correct" => Ok(Direction::More),
            "less" | "-" | "opposite" => Ok(Direction::Less),
            "none" | "no_effect" | "no effect" | "." | "·" => Ok(Direction::None),
            _ => Err(ParseDirectionError(s.to_string())),
        }
    }
}

/// The structured answer to an influence question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Explanation {
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub d_i: Direction,
    pub d_j: Direction,
    pub d_e: Direction,
}

impl Explanation {
    /// The single structure used for no-effect answers.
    pub const NO_EFFECT: Explanation = Explanation {
        i: None,
        j: None,
        d_i: Direction::None,
        d_j: Direction::None,
        d_e: Direction::None,
    };

    /// An effect explanation; `d_j` is tied to `d_i`.
    pub fn effect(i: usize, j: usize, d_i: Direction, d_e: Direction) -> Explanation {
        Explanation {
            i: Some(i),
            j: Some(j),
            d_i,
            d_j: d_i,
            d_e,
        }
    }

    pub fn is_no_effect(&self) -> bool {
        self.d_e == Direction::None
    }

    /// Number of supporting sentences: 0, 1 (j = i) or 2.
    pub fn length(&self) -> usize {
        match (self.i, self.j) {
            (Some(i), Some(j)) if i == j => 1,
            (Some(_), Some(_)) => 2,
            _ => 0,
        }
    }

    /// Step ids as rendered in reports, with -1 for an absent step.
    pub fn i_id(&self) -> i64 {
        step_id(self.i)
    }

    pub fn j_id(&self) -> i64 {
        step_id(self.j)
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(i={}, j={}, d_i={}, d_j={}, d_e={})",
            self.i_id(),
            self.j_id(),
            self.d_i,
            self.d_j,
            self.d_e
        )
    }
}

pub fn step_id(idx: Option<usize>) -> i64 {
    idx.map_or(-1, |v| v as i64)
}

/// Parses the -1-for-absent convention back into an optional index.
pub fn step_from_id(id: i64) -> Option<usize> {
    if id < 1 {
        None
    } else {
        Some(id as usize)
    }
}

/// Consistency rules an explanation can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    /// i <= j
    A1,
    /// d_j = d_i
    A2,
    /// d_i = NONE implies d_e = NONE
    A4,
    /// i is absent exactly when d_i = NONE
    A5,
    /// d_e = NONE exactly when j is absent; no-effect also clears i and d_i
    A6,
    /// present indices lie in 1..=K
    Range,
}

impl Rule {
    pub fn id(self) -> &'static str {
        match self {
            Rule::A1 => "a1",
            Rule::A2 => "a2",
            Rule::A4 => "a4",
            Rule::A5 => "a5",
            Rule::A6 => "a6",
            Rule::Range => "range",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Result of [`validate_explanation`]: the sorted list of violated rules.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Verdict {
    pub violations: Vec<Rule>,
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("VALID");
        }
        let ids: Vec<_> = self.violations.iter().map(|r| r.id()).collect();
        write!(f, "INVALID {{{}}}", ids.join(", "))
    }
}

fn structural_violations(e: &Explanation) -> Vec<Rule> {
    let mut out = Vec::new();
    if let (Some(i), Some(j)) = (e.i, e.j) {
        if i > j {
            out.push(Rule::A1);
        }
    }
    if e.d_j != e.d_i {
        out.push(Rule::A2);
    }
    if e.d_i == Direction::None && e.d_e != Direction::None {
        out.push(Rule::A4);
    }
    if e.i.is_none() != (e.d_i == Direction::None) {
        out.push(Rule::A5);
    }
    let no_effect = e.d_e == Direction::None;
    if no_effect != e.j.is_none() || (no_effect && (e.i.is_some() || e.d_i != Direction::None)) {
        out.push(Rule::A6);
    }
    out
}

/// Checks every consistency rule against a passage of `k` steps.
pub fn validate_explanation(e: &Explanation, k: usize) -> Verdict {
    let mut violations = structural_violations(e);
    let out_of_range = |idx: Option<usize>| idx.is_some_and(|v| v == 0 || v > k);
    if out_of_range(e.i) || out_of_range(e.j) {
        violations.push(Rule::Range);
    }
    violations.sort();
    Verdict { violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid explanation {explanation}: {verdict}")]
pub struct InvalidExplanation {
    pub explanation: Explanation,
    pub verdict: Verdict,
}

/// The answer label carried by an explanation (its end node).
///
/// Rejects structurally inconsistent explanations; the step range is not
/// checked because no passage length is at hand.
pub fn answer_of(e: &Explanation) -> Result<Direction, InvalidExplanation> {
    let violations = structural_violations(e);
    if violations.is_empty() {
        Ok(e.d_e)
    } else {
        Err(InvalidExplanation {
            explanation: *e,
            verdict: Verdict { violations },
        })
    }
}

/// Every explanation satisfying the rules for a `k`-step passage: the
/// no-effect structure first, then spans in (i, j) order with
/// d_i, d_e in {MORE, LESS}.
pub fn enumerate_valid_explanations(k: usize) -> Vec<Explanation> {
    let mut out = vec![Explanation::NO_EFFECT];
    for i in 1..=k {
        for j in i..=k {
            for d_i in Direction::EFFECT {
                for d_e in Direction::EFFECT {
                    out.push(Explanation::effect(i, j, d_i, d_e));
                }
            }
        }
    }
    out
}

/// Seven-label BIEO alphabet; CORRECT marks MORE, OPPOSITE marks LESS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagLabel {
    BCorrect,
    ICorrect,
    BOpposite,
    IOpposite,
    ECorrect,
    EOpposite,
    O,
}

impl TagLabel {
    pub const ALL: [TagLabel; 7] = [
        TagLabel::BCorrect,
        TagLabel::ICorrect,
        TagLabel::BOpposite,
        TagLabel::IOpposite,
        TagLabel::ECorrect,
        TagLabel::EOpposite,
        TagLabel::O,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<TagLabel> {
        TagLabel::ALL.get(idx).copied()
    }

    pub fn begin(dir: Direction) -> Option<TagLabel> {
        match dir {
            Direction::More => Some(TagLabel::BCorrect),
            Direction::Less => Some(TagLabel::BOpposite),
            Direction::None => None,
        }
    }

    pub fn inside(dir: Direction) -> Option<TagLabel> {
        match dir {
            Direction::More => Some(TagLabel::ICorrect),
            Direction::Less => Some(TagLabel::IOpposite),
            Direction::None => None,
        }
    }

    pub fn end(dir: Direction) -> Option<TagLabel> {
        match dir {
            Direction::More => Some(TagLabel::ECorrect),
            Direction::Less => Some(TagLabel::EOpposite),
            Direction::None => None,
        }
    }

    /// Direction encoded by the label, NONE for O.
    pub fn direction(self) -> Direction {
        match self {
            TagLabel::BCorrect | TagLabel::ICorrect | TagLabel::ECorrect => Direction::More,
            TagLabel::BOpposite | TagLabel::IOpposite | TagLabel::EOpposite => Direction::Less,
            TagLabel::O => Direction::None,
        }
    }

    pub fn is_begin(self) -> bool {
        matches!(self, TagLabel::BCorrect | TagLabel::BOpposite)
    }

    pub fn is_inside(self) -> bool {
        matches!(self, TagLabel::ICorrect | TagLabel::IOpposite)
    }

    pub fn is_end(self) -> bool {
        matches!(self, TagLabel::ECorrect | TagLabel::EOpposite)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TagLabel::BCorrect => "B-CORRECT",
            TagLabel::ICorrect => "I-CORRECT",
            TagLabel::BOpposite => "B-OPPOSITE",
            TagLabel::IOpposite => "I-OPPOSITE",
            TagLabel::ECorrect => "E-CORRECT",
            TagLabel::EOpposite => "E-OPPOSITE",
            TagLabel::O => "O",
        }
    }
}

impl fmt::Display for TagLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagLabel {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TagLabel::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TagError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("unknown tag label {0:?}")]
    UnknownLabel(String),
    #[error("malformed tag sequence at position {position}: {reason}")]
    Malformed { position: usize, reason: &'static str },
    #[error("span ({i}, {j}) does not fit a passage of {k} steps")]
    OutOfRange { i: usize, j: usize, k: usize },
    #[error("direction NONE cannot be tagged")]
    NoneDirection,
    #[error("a single-step span needs dir_j = dir_i")]
    SingleStepMismatch,
    #[error("empty tag sequence")]
    Empty,
}

/// The supporting-span part of an explanation as seen by the tag codec.
/// Directions here are unconstrained: the codec accepts `dir_j != dir_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TagSpan {
    pub i: usize,
    pub j: usize,
    pub dir_i: Direction,
    pub dir_j: Direction,
}

impl TagSpan {
    pub fn of(e: &Explanation) -> Option<TagSpan> {
        match (e.i, e.j) {
            (Some(i), Some(j)) => Some(TagSpan {
                i,
                j,
                dir_i: e.d_i,
                dir_j: e.d_j,
            }),
            _ => None,
        }
    }
}

/// A sequence of tags, one per passage step. Construction does not check
/// the grammar; [`TagSequence::validate`] and [`decode_tags`] do.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TagSequence(pub Vec<TagLabel>);

impl TagSequence {
    pub fn all_outside(k: usize) -> TagSequence {
        TagSequence(vec![TagLabel::O; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[TagLabel] {
        &self.0
    }

    pub fn is_all_outside(&self) -> bool {
        self.0.iter().all(|&t| t == TagLabel::O)
    }

    pub fn is_valid(&self) -> bool {
        decode_tags(self).is_ok()
    }

    pub fn validate(&self) -> Result<(), TagError> {
        decode_tags(self).map(|_| ())
    }
}

impl fmt::Display for TagSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<_> = self.0.iter().map(|t| t.as_str()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for TagSequence {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(TagLabel::from_str)
            .collect::<Result<Vec<_>, _>>()
            .map(TagSequence)
    }
}

/// Reduces a span (or the no-effect case, `None`) to BIEO tags over `k` steps.
///
/// A single-step span becomes a lone B-label.
pub fn encode_tags(span: Option<TagSpan>, k: usize) -> Result<TagSequence, TagError> {
    if k == 0 {
        return Err(TagError::Empty);
    }
    let mut labels = vec![TagLabel::O; k];
    let Some(TagSpan { i, j, dir_i, dir_j }) = span else {
        return Ok(TagSequence(labels));
    };
    if i == 0 || i > j || j > k {
        return Err(TagError::OutOfRange { i, j, k });
    }
    let begin = TagLabel::begin(dir_i).ok_or(TagError::NoneDirection)?;
    let end = TagLabel::end(dir_j).ok_or(TagError::NoneDirection)?;
    if i == j {
        if dir_i != dir_j {
            return Err(TagError::SingleStepMismatch);
        }
        labels[i - 1] = begin;
        return Ok(TagSequence(labels));
    }
    let inside = TagLabel::inside(dir_i).ok_or(TagError::NoneDirection)?;
    labels[i - 1] = begin;
    for slot in &mut labels[i..j - 1] {
        *slot = inside;
    }
    labels[j - 1] = end;
    Ok(TagSequence(labels))
}

/// Inverse of [`encode_tags`]. `Ok(None)` is the all-O (no-effect) sequence.
/// Errors carry the 1-based position of the first grammar violation.
pub fn decode_tags(t: &TagSequence) -> Result<Option<TagSpan>, TagError> {
    enum State {
        Before,
        InRun { start: usize, dir: Direction, len: usize },
        After,
    }
    if t.is_empty() {
        return Err(TagError::Empty);
    }
    let malformed = |position, reason| TagError::Malformed { position, reason };
    let mut state = State::Before;
    let mut span = None;
    for (idx, &label) in t.0.iter().enumerate() {
        let pos = idx + 1;
        state = match state {
            State::Before => {
                if label == TagLabel::O {
                    State::Before
                } else if label.is_begin() {
                    State::InRun {
                        start: pos,
                        dir: label.direction(),
                        len: 1,
                    }
                } else {
                    return Err(malformed(pos, "run must start with a B-label"));
                }
            }
            State::InRun { start, dir, len } => {
                if label.is_inside() {
                    if label.direction() != dir {
                        return Err(malformed(pos, "I-label direction differs from its B-label"));
                    }
                    State::InRun { start, dir, len: len + 1 }
                } else if label.is_end() {
                    span = Some(TagSpan {
                        i: start,
                        j: pos,
                        dir_i: dir,
                        dir_j: label.direction(),
                    });
                    State::After
                } else if label == TagLabel::O && len == 1 {
                    span = Some(TagSpan {
                        i: start,
                        j: start,
                        dir_i: dir,
                        dir_j: dir,
                    });
                    State::After
                } else if label == TagLabel::O {
                    return Err(malformed(pos, "run of length >= 2 must end with an E-label"));
                } else {
                    return Err(malformed(pos, "second B-label inside a run"));
                }
            }
            State::After => {
                if label == TagLabel::O {
                    State::After
                } else {
                    return Err(malformed(pos, "only one tagged run is allowed"));
                }
            }
        };
    }
    match state {
        State::Before => Ok(None),
        State::After => Ok(span),
        State::InRun { start, dir, len: 1 } => Ok(Some(TagSpan {
            i: start,
            j: start,
            dir_i: dir,
            dir_j: dir,
        })),
        State::InRun { .. } => Err(malformed(t.len(), "run of length >= 2 must end with an E-label")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> TagSequence {
        s.parse().unwrap()
    }

    #[test]
    fn validate_examples() {
        let e = Explanation {
            i: Some(1),
            j: Some(2),
            d_i: Direction::More,
            d_j: Direction::More,
            d_e: Direction::Less,
        };
        assert!(validate_explanation(&e, 5).is_valid());
        assert!(validate_explanation(&Explanation::NO_EFFECT, 5).is_valid());

        let backwards = Explanation::effect(3, 2, Direction::More, Direction::More);
        assert_eq!(validate_explanation(&backwards, 5).violations, vec![Rule::A1]);
        assert_eq!(validate_explanation(&backwards, 5).to_string(), "INVALID {a1}");
    }

    #[test]
    fn single_rule_mutations() {
        let base = Explanation::effect(2, 3, Direction::Less, Direction::More);
        let mut e = base;
        e.d_j = Direction::More;
        assert_eq!(validate_explanation(&e, 4).violations, vec![Rule::A2]);
        let mut e = base;
        e.j = Some(5);
        assert_eq!(validate_explanation(&e, 4).violations, vec![Rule::Range]);
        let mut e = base;
        e.i = Some(0);
        assert_eq!(validate_explanation(&e, 4).violations, vec![Rule::Range]);
        let mut e = Explanation::NO_EFFECT;
        e.d_e = Direction::More;
        assert!(validate_explanation(&e, 4).violations.contains(&Rule::A4));
        let mut e = base;
        e.j = None;
        assert_eq!(validate_explanation(&e, 4).violations, vec![Rule::A6]);
        let mut e = Explanation::NO_EFFECT;
        e.i = Some(1);
        let v = validate_explanation(&e, 4).violations;
        assert!(v.contains(&Rule::A5) && v.contains(&Rule::A6));
    }

    #[test]
    fn answer_is_projection() {
        let e = Explanation::effect(1, 1, Direction::Less, Direction::More);
        assert_eq!(answer_of(&e).unwrap(), Direction::More);
        assert_eq!(answer_of(&Explanation::NO_EFFECT).unwrap(), Direction::None);
        let e = Explanation::effect(1, 2, Direction::More, Direction::Less);
        assert_eq!(answer_of(&e).unwrap(), Direction::Less);
        let bad = Explanation::effect(3, 1, Direction::More, Direction::Less);
        assert!(answer_of(&bad).is_err());
    }

    #[test]
    fn encode_examples() {
        let span = |i, j, dir_i, dir_j| Some(TagSpan { i, j, dir_i, dir_j });
        let got = encode_tags(span(1, 2, Direction::More, Direction::Less), 5).unwrap();
        assert_eq!(got, tags("B-CORRECT E-OPPOSITE O O O"));
        let got = encode_tags(span(2, 4, Direction::More, Direction::Less), 5).unwrap();
        assert_eq!(got, tags("O B-CORRECT I-CORRECT E-OPPOSITE O"));
        assert_eq!(encode_tags(None, 5).unwrap(), tags("O O O O O"));
        let got = encode_tags(span(3, 3, Direction::Less, Direction::Less), 4).unwrap();
        assert_eq!(got, tags("O O B-OPPOSITE O"));
    }

    #[test]
    fn encode_errors() {
        let span = |i, j| {
            Some(TagSpan {
                i,
                j,
                dir_i: Direction::More,
                dir_j: Direction::More,
            })
        };
        assert!(matches!(encode_tags(span(2, 6, ), 5), Err(TagError::OutOfRange { .. })));
        assert!(matches!(encode_tags(span(0, 1), 5), Err(TagError::OutOfRange { .. })));
        assert!(matches!(encode_tags(span(3, 2), 5), Err(TagError::OutOfRange { .. })));
        let none_dir = Some(TagSpan {
            i: 1,
            j: 2,
            dir_i: Direction::None,
            dir_j: Direction::More,
        });
        assert_eq!(encode_tags(none_dir, 3), Err(TagError::NoneDirection));
        let mixed_single = Some(TagSpan {
            i: 1,
            j: 1,
            dir_i: Direction::More,
            dir_j: Direction::Less,
        });
        assert_eq!(encode_tags(mixed_single, 3), Err(TagError::SingleStepMismatch));
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_tags(&tags("O O O O O")).unwrap(), None);
        assert_eq!(
            decode_tags(&tags("O B-CORRECT I-CORRECT E-OPPOSITE O")).unwrap(),
            Some(TagSpan {
                i: 2,
                j: 4,
                dir_i: Direction::More,
                dir_j: Direction::Less
            })
        );
        assert_eq!(
            decode_tags(&tags("O O B-OPPOSITE")).unwrap(),
            Some(TagSpan {
                i: 3,
                j: 3,
                dir_i: Direction::Less,
                dir_j: Direction::Less
            })
        );
    }

    #[test]
    fn decode_reports_first_bad_position() {
        let pos = |s: &str| match decode_tags(&tags(s)) {
            Err(TagError::Malformed { position, .. }) => position,
            other => panic!("expected malformed, got {other:?}"),
        };
        assert_eq!(pos("O I-CORRECT O"), 2);
        assert_eq!(pos("E-CORRECT O O"), 1);
        assert_eq!(pos("B-CORRECT E-CORRECT B-CORRECT"), 3);
        assert_eq!(pos("B-CORRECT O B-OPPOSITE"), 3);
        assert_eq!(pos("B-CORRECT I-OPPOSITE E-OPPOSITE"), 2);
        assert_eq!(pos("B-CORRECT I-CORRECT O"), 3);
        assert_eq!(pos("O B-CORRECT I-CORRECT"), 3);
        assert_eq!(pos("B-CORRECT B-CORRECT"), 2);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_valid_explanations(1).len(), 5);
        assert_eq!(enumerate_valid_explanations(2).len(), 13);
        assert_eq!(enumerate_valid_explanations(3).len(), 25);
        for k in 1..=8 {
            let all = enumerate_valid_explanations(k);
            assert_eq!(all.len(), 1 + 4 * k * (k + 1) / 2);
            assert!(all.iter().all(|e| validate_explanation(e, k).is_valid()));
        }
    }

    #[test]
    fn direction_parsing() {
        assert_eq!("more".parse::<Direction>().unwrap(), Direction::More);
        assert_eq!("-".parse::<Direction>().unwrap(), Direction::Less);
        assert_eq!("no_effect".parse::<Direction>().unwrap(), Direction::None);
        assert!("sideways".parse::<Direction>().is_err());
        assert_eq!(serde_json::to_string(&Direction::None).unwrap(), "\"NONE\"");
    }
}
