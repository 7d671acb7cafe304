//! Non-neural baselines: random guessing, the majority answer, and
//! bag-of-words alignment between the perturbation and the steps.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, DatasetSplit, Example};
use crate::error::ModelError;
use crate::explanation::{Direction, Explanation};
use crate::predict::{Prediction, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    Majority,
    Bow,
}

/// One random guess before validity is enforced. The span is always
/// proposed and both directions are uniform over all three labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomProposal {
    pub i: usize,
    pub j: usize,
    pub d_i: Direction,
    pub d_e: Direction,
    /// Fallback effect direction used when `d_i` is NONE but `d_e` is not.
    pub d_i_effect: Direction,
}

impl RandomProposal {
    /// The valid explanation emitted for this draw.
    pub fn emitted(&self) -> Explanation {
        if self.d_e == Direction::None {
            return Explanation::NO_EFFECT;
        }
        let d_i = if self.d_i.is_effect() { self.d_i } else { self.d_i_effect };
        Explanation::effect(self.i, self.j, d_i, self.d_e)
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Uniform guessing, reproducible per question id.
#[derive(Debug, Clone)]
pub struct RandomBaseline {
    pub seed: u64,
}

impl RandomBaseline {
    pub fn new(seed: u64) -> RandomBaseline {
        RandomBaseline { seed }
    }

    pub fn propose(&self, ex: &Example) -> RandomProposal {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(ex.id()));
        let k = ex.k();
        let i = rng.gen_range(1..=k);
        let j = rng.gen_range(i..=k);
        let d_i = Direction::ALL[rng.gen_range(0..3)];
        let d_e = Direction::ALL[rng.gen_range(0..3)];
        let d_i_effect = Direction::EFFECT[rng.gen_range(0..2)];
        RandomProposal {
            i,
            j,
            d_i,
            d_e,
            d_i_effect,
        }
    }
}

impl Predictor for RandomBaseline {
    fn name(&self) -> &str {
        "random"
    }

    fn predict(&self, ex: &Example) -> Result<Prediction, ModelError> {
        Ok(Prediction::bare(self.propose(ex).emitted()))
    }
}

/// Always predicts the most frequent training explanation among those
/// carrying the modal answer.
#[derive(Debug, Clone, PartialEq)]
pub struct MajorityBaseline {
    pub answer: Direction,
    pub explanation: Explanation,
}

impl MajorityBaseline {
    /// Ties go to the earlier label in NONE, MORE, LESS order.
    pub fn fit(train: &DatasetSplit) -> Result<MajorityBaseline, ModelError> {
        let golds: Vec<Explanation> = train.examples.iter().filter_map(|ex| ex.question.gold).collect();
        if golds.is_empty() {
            return Err(ModelError::EmptySplit);
        }
        let mut counts = [0usize; 3];
        for g in &golds {
            counts[g.d_e.index()] += 1;
        }
        let order = [Direction::None, Direction::More, Direction::Less];
        let answer = order
            .iter()
            .copied()
            .fold(Direction::None, |best, d| if counts[d.index()] > counts[best.index()] { d } else { best });
        let explanation = if answer == Direction::None {
            Explanation::NO_EFFECT
        } else {
            let mut freq: BTreeMap<(i64, i64, usize), usize> = BTreeMap::new();
            for g in golds.iter().filter(|g| g.d_e == answer) {
                *freq.entry((g.i_id(), g.j_id(), g.d_i.index())).or_default() += 1;
            }
            let top = freq.values().copied().max().unwrap_or(0);
            let (i, j, d_i) = freq.into_iter().find(|(_, c)| *c == top).map(|(key, _)| key).unwrap();
            Explanation::effect(i as usize, j as usize, Direction::from_index(d_i).unwrap(), answer)
        };
        Ok(MajorityBaseline { answer, explanation })
    }

    pub fn no_effect() -> MajorityBaseline {
        MajorityBaseline::constant(Explanation::NO_EFFECT)
    }

    pub fn constant(explanation: Explanation) -> MajorityBaseline {
        MajorityBaseline {
            answer: explanation.d_e,
            explanation,
        }
    }
}

impl Predictor for MajorityBaseline {
    fn name(&self) -> &str {
        "majority"
    }

    fn predict(&self, ex: &Example) -> Result<Prediction, ModelError> {
        let e = self.explanation;
        let fits = e.j.is_none_or(|j| j <= ex.k());
        Ok(Prediction::bare(if fits { e } else { Explanation::NO_EFFECT }))
    }
}

const STOPWORDS: [&str; 32] = [
    "a", "an", "the", "of", "to", "in", "on", "at", "for", "by", "with", "and", "or", "is", "are", "was",
    "were", "be", "will", "there", "it", "its", "that", "this", "what", "if", "suppose", "happen", "happens",
    "present", "amount", "nearby",
];

const NEGATIVE_CUES: [&str; 16] = [
    "less", "fewer", "reduced", "decreased", "lower", "smaller", "weaker", "no", "not", "never", "without",
    "lack", "lacks", "shortage", "absence", "prevented",
];

fn content_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()) && !NEGATIVE_CUES.contains(&t.as_str()))
        .collect()
}

fn negative_polarity(text: &str) -> bool {
    tokenize(text).iter().any(|t| NEGATIVE_CUES.contains(&t.as_str()))
}

/// Token-overlap alignment between the perturbation and each step.
#[derive(Debug, Clone, Default)]
pub struct BowBaseline;

impl BowBaseline {
    /// Content-token overlap of the perturbation with every step.
    pub fn overlaps(ex: &Example) -> Vec<usize> {
        let q = content_tokens(&ex.question.q_p);
        ex.passage
            .steps
            .iter()
            .map(|s| content_tokens(s).intersection(&q).count())
            .collect()
    }

    /// Best-aligned step, lowest index on ties.
    pub fn align(ex: &Example) -> usize {
        let ov = Self::overlaps(ex);
        let mut best = 0;
        for (k, &o) in ov.iter().enumerate() {
            if o > ov[best] {
                best = k;
            }
        }
        best + 1
    }
}

impl Predictor for BowBaseline {
    fn name(&self) -> &str {
        "bow"
    }

    fn predict(&self, ex: &Example) -> Result<Prediction, ModelError> {
        let i = Self::align(ex);
        let d_i = if negative_polarity(&ex.question.q_p) {
            Direction::Less
        } else {
            Direction::More
        };
        let d_e = if negative_polarity(&ex.question.q_e) {
            d_i.flip()
        } else {
            d_i
        };
        Ok(Prediction::bare(Explanation::effect(i, i, d_i, d_e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InfluenceQuestion, Passage, QuestionType};
    use crate::explanation::validate_explanation;
    use std::sync::Arc;

    fn example(id: &str, steps: &[&str], q_p: &str, q_e: &str, gold: Option<Explanation>) -> Example {
        let passage = Passage::new("p", steps.iter().map(|s| s.to_string()).collect()).unwrap();
        Example {
            passage: Arc::new(passage),
            question: InfluenceQuestion {
                id: id.into(),
                passage_id: "p".into(),
                q_p: q_p.into(),
                q_e: q_e.into(),
                question_type: gold.map(|g| {
                    if g.is_no_effect() {
                        QuestionType::NoEffect
                    } else {
                        QuestionType::InPara
                    }
                }),
                gold,
            },
        }
    }

    const STEPS: [&str; 4] = [
        "water flows into the valley",
        "the river carries mud and silt",
        "silt settles on the river bed",
        "the delta grows",
    ];

    #[test]
    fn dominant_overlap_picks_that_step() {
        let ex = example("q", &STEPS, "more mud silt river", "bigger delta", None);
        assert_eq!(BowBaseline::overlaps(&ex), vec![0, 3, 2, 0]);
        assert_eq!(BowBaseline::align(&ex), 2);
    }

    #[test]
    fn overlap_ties_go_to_lowest_index() {
        let steps = ["rain falls", "wind blows", "rain soaks the ground"];
        let ex = example("q", &steps, "heavy rain", "x", None);
        assert_eq!(BowBaseline::align(&ex), 1);
        let none = example("q", &steps, "volcano", "x", None);
        assert_eq!(BowBaseline::align(&none), 1);
    }

    #[test]
    fn negation_cues_set_directions() {
        let ex = example("q", &STEPS, "less water", "there will be less delta", None);
        let e = BowBaseline.predict(&ex).unwrap().explanation;
        assert_eq!(e, Explanation::effect(1, 1, Direction::Less, Direction::More));
        let ex = example("q", &STEPS, "more water", "a larger delta", None);
        let e = BowBaseline.predict(&ex).unwrap().explanation;
        assert_eq!(e, Explanation::effect(1, 1, Direction::More, Direction::More));
    }

    #[test]
    fn random_is_valid_and_reproducible() {
        let r = RandomBaseline::new(5);
        for n in 0..500 {
            let ex = example(&format!("q{n}"), &STEPS, "x", "y", None);
            let a = r.predict(&ex).unwrap().explanation;
            assert!(validate_explanation(&a, 4).is_valid());
            assert_eq!(a, r.predict(&ex).unwrap().explanation);
            let p = r.propose(&ex);
            assert!(1 <= p.i && p.i <= p.j && p.j <= 4);
        }
    }

    #[test]
    fn majority_follows_the_modal_answer() {
        let golds = [
            Explanation::NO_EFFECT,
            Explanation::NO_EFFECT,
            Explanation::effect(1, 2, Direction::More, Direction::More),
        ];
        let split = DatasetSplit::new(
            "train",
            golds
                .iter()
                .enumerate()
                .map(|(n, g)| example(&format!("q{n}"), &STEPS, "x", "y", Some(*g)))
                .collect(),
        );
        let m = MajorityBaseline::fit(&split).unwrap();
        assert_eq!(m, MajorityBaseline::no_effect());

        let golds = [
            Explanation::NO_EFFECT,
            Explanation::effect(1, 2, Direction::More, Direction::Less),
            Explanation::effect(1, 2, Direction::More, Direction::Less),
            Explanation::effect(3, 3, Direction::Less, Direction::Less),
        ];
        let split = DatasetSplit::new(
            "train",
            golds
                .iter()
                .enumerate()
                .map(|(n, g)| example(&format!("q{n}"), &STEPS, "x", "y", Some(*g)))
                .collect(),
        );
        let m = MajorityBaseline::fit(&split).unwrap();
        assert_eq!(m.answer, Direction::Less);
        assert_eq!(m.explanation, Explanation::effect(1, 2, Direction::More, Direction::Less));
    }

    #[test]
    fn majority_needs_gold() {
        let split = DatasetSplit::new("train", vec![example("q", &STEPS, "x", "y", None)]);
        assert!(matches!(MajorityBaseline::fit(&split), Err(ModelError::EmptySplit)));
    }
}
