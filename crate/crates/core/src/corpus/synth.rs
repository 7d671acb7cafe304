//! Deterministic templated influence-chain corpus.
//!
//! Each passage is a chain of steps "the amount of ENT VERB" where step k
//! enables step k+1. A question perturbs the entity of one step, either by
//! naming it (in-para) or through a fixed cause word linked to it
//! (out-of-para), and asks about the entity of the same or a later step.
//! No-effect questions ask about an entity that is not in the chain.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, CorpusError, DatasetSplit, Example, InfluenceQuestion, Passage, QuestionType};
use crate::explanation::{Direction, Explanation};

const ENTITIES: [&str; 40] = [
    "water", "heat", "sunlight", "sediment", "pressure", "rock", "magma", "ice", "snow", "oxygen", "carbon",
    "sugar", "energy", "pollen", "seeds", "roots", "leaves", "fruit", "soil", "sand", "clay", "wind", "waves",
    "steam", "vapor", "clouds", "algae", "fish", "insects", "bacteria", "nutrients", "minerals", "salt", "acid",
    "gas", "oil", "coal", "ash", "dust", "smoke",
];

const VERBS: [&str; 10] = [
    "rises", "forms", "grows", "builds", "spreads", "flows", "collects", "expands", "gathers", "moves",
];

/// Cause words; cause `c` acts on entity `c`.
const CAUSES: [&str; 40] = [
    "storms", "drought", "fire", "frost", "eruptions", "floods", "erosion", "pollution", "fertilizer", "shade",
    "irrigation", "overgrazing", "volcanoes", "glaciers", "deforestation", "mining", "farming", "tides",
    "hurricanes", "earthquakes", "wildfires", "dams", "heatwaves", "blizzards", "sunspots", "bees", "worms",
    "predators", "disease", "compost", "plowing", "logging", "factories", "traffic", "recycling", "lightning",
    "monsoons", "currents", "cooling", "warming",
];

const MORE_WORDS: [&str; 3] = ["more", "greater", "increased"];
const LESS_WORDS: [&str; 3] = ["less", "fewer", "reduced"];

/// The fixed word lists behind the generator.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub entities: Vec<&'static str>,
    pub verbs: Vec<&'static str>,
    pub causes: Vec<(&'static str, usize, Direction)>,
}

impl Lexicon {
    /// Every cause increases its entity.
    pub fn standard() -> Lexicon {
        Lexicon {
            entities: ENTITIES.to_vec(),
            verbs: VERBS.to_vec(),
            causes: CAUSES.iter().enumerate().map(|(c, &w)| (w, c, Direction::More)).collect(),
        }
    }

    /// Odd-numbered causes inhibit their entity instead.
    pub fn with_inhibitors() -> Lexicon {
        let mut lex = Lexicon::standard();
        for (c, cause) in lex.causes.iter_mut().enumerate() {
            if c % 2 == 1 {
                cause.2 = Direction::Less;
            }
        }
        lex
    }

    /// Every token the templates can emit.
    pub fn tokens(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let fixed = [
            step_text("x", "x"),
            perturbation_text(false, false, "x", "x"),
            perturbation_text(false, true, "x", "x"),
            perturbation_text(true, false, "x", "x"),
            perturbation_text(true, true, "x", "x"),
            effect_text(false, "x", "x"),
            effect_text(true, "x", "x"),
        ];
        for text in fixed {
            out.extend(tokenize(&text).into_iter().filter(|t| t != "x"));
        }
        let words = self
            .entities
            .iter()
            .chain(&self.verbs)
            .chain(self.causes.iter().map(|(w, _, _)| w))
            .chain(&MORE_WORDS)
            .chain(&LESS_WORDS);
        for w in words {
            out.extend(tokenize(w));
        }
        out
    }

    /// Entity the cause word acts on, with its polarity.
    pub fn cause_of(&self, entity: usize) -> (&'static str, Direction) {
        let (w, _, pol) = self.causes[entity];
        (w, pol)
    }
}

fn step_text(entity: &str, verb: &str) -> String {
    format!("the amount of {entity} {verb}")
}

fn perturbation_text(out_of_para: bool, paraphrase: bool, dir_word: &str, target: &str) -> String {
    match (out_of_para, paraphrase) {
        (false, false) => format!("suppose {dir_word} {target} is present"),
        (false, true) => format!("what if there is {dir_word} {target}"),
        (true, false) => format!("suppose {dir_word} {target} happen"),
        (true, true) => format!("what if there are {dir_word} {target} nearby"),
    }
}

fn effect_text(paraphrase: bool, dir_word: &str, entity: &str) -> String {
    if paraphrase {
        format!("{entity} will be {dir_word}")
    } else {
        format!("there will be {dir_word} {entity}")
    }
}

fn direction_word(dir: Direction, paraphrase: bool, rng: &mut ChaCha8Rng) -> &'static str {
    let words = match dir {
        Direction::Less => &LESS_WORDS,
        _ => &MORE_WORDS,
    };
    if paraphrase {
        words[rng.gen_range(1..words.len())]
    } else {
        words[0]
    }
}

/// Gold explanation of a chain question under forward flow: the perturbed
/// step moves in `perturbation ⊗ cause_polarity`, every later step follows,
/// and the answer flips when the effect statement asks about LESS.
pub fn propagate_gold(
    perturbed_step: usize,
    effect_step: usize,
    perturbation: Direction,
    cause_polarity: Direction,
    effect_polarity: Direction,
) -> Explanation {
    let d_i = if cause_polarity == Direction::Less {
        perturbation.flip()
    } else {
        perturbation
    };
    let d_e = if effect_polarity == Direction::Less { d_i.flip() } else { d_i };
    Explanation::effect(perturbed_step, effect_step, d_i, d_e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_passages: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub noeffect_frac: f64,
    pub paraphrase_rate: f64,
    pub questions_per_passage: usize,
    /// Share of effect questions phrased through a cause word.
    pub out_of_para_frac: f64,
    /// Use [`Lexicon::with_inhibitors`].
    pub inhibitors: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 13,
            n_passages: 500,
            k_min: 3,
            k_max: 6,
            noeffect_frac: 0.418,
            paraphrase_rate: 0.2,
            questions_per_passage: 4,
            out_of_para_frac: 0.7,
            inhibitors: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidParams(m));
        if self.k_min < 1 {
            return bad("k_min must be at least 1".into());
        }
        if self.k_max < self.k_min {
            return bad(format!("k_max {} is below k_min {}", self.k_max, self.k_min));
        }
        if self.k_max >= ENTITIES.len() {
            return bad(format!("k_max must stay below the {} lexicon entities", ENTITIES.len()));
        }
        for (name, v) in [
            ("noeffect_frac", self.noeffect_frac),
            ("paraphrase_rate", self.paraphrase_rate),
            ("out_of_para_frac", self.out_of_para_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.questions_per_passage == 0 {
            return bad("questions_per_passage must be positive".into());
        }
        Ok(())
    }
}

/// Generates `n_passages * questions_per_passage` questions. Exactly
/// `round(noeffect_frac * n)` of them are no-effect questions.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<DatasetSplit, CorpusError> {
    cfg.validate()?;
    let lex = if cfg.inhibitors {
        Lexicon::with_inhibitors()
    } else {
        Lexicon::standard()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_questions = cfg.n_passages * cfg.questions_per_passage;
    let n_none = (cfg.noeffect_frac * n_questions as f64).round() as usize;
    let mut no_effect = vec![false; n_questions];
    no_effect[..n_none].iter_mut().for_each(|f| *f = true);
    no_effect.shuffle(&mut rng);

    let mut examples = Vec::with_capacity(n_questions);
    for p in 0..cfg.n_passages {
        let k = rng.gen_range(cfg.k_min..=cfg.k_max);
        let mut pool: Vec<usize> = (0..lex.entities.len()).collect();
        pool.shuffle(&mut rng);
        let (chain, absent) = pool.split_at(k);
        let steps = chain
            .iter()
            .map(|&e| step_text(lex.entities[e], lex.verbs[rng.gen_range(0..lex.verbs.len())]))
            .collect();
        let passage_id = format!("syn{}-p{:05}", cfg.seed, p);
        let passage = Arc::new(Passage::new(passage_id.clone(), steps)?);

        for q in 0..cfg.questions_per_passage {
            let is_none = no_effect[p * cfg.questions_per_passage + q];
            let a = rng.gen_range(1..=k);
            let b = rng.gen_range(a..=k);
            let sign = if rng.gen_bool(0.5) { Direction::More } else { Direction::Less };
            let effect_polarity = if rng.gen_bool(0.5) { Direction::More } else { Direction::Less };
            let out_of_para = rng.gen_bool(cfg.out_of_para_frac);
            let para_p = rng.gen_bool(cfg.paraphrase_rate);
            let para_e = rng.gen_bool(cfg.paraphrase_rate);

            let perturbed = chain[a - 1];
            let (target, cause_polarity) = if out_of_para {
                lex.cause_of(perturbed)
            } else {
                (lex.entities[perturbed], Direction::More)
            };
            let q_p = perturbation_text(out_of_para, para_p, direction_word(sign, para_p, &mut rng), target);
            let effect_entity = if is_none {
                absent[rng.gen_range(0..absent.len())]
            } else {
                chain[b - 1]
            };
            let q_e = effect_text(
                para_e,
                direction_word(effect_polarity, para_e, &mut rng),
                lex.entities[effect_entity],
            );
            let (gold, question_type) = if is_none {
                (Explanation::NO_EFFECT, QuestionType::NoEffect)
            } else {
                let t = if out_of_para {
                    QuestionType::OutOfPara
                } else {
                    QuestionType::InPara
                };
                (propagate_gold(a, b, sign, cause_polarity, effect_polarity), t)
            };
            examples.push(Example {
                passage: passage.clone(),
                question: InfluenceQuestion {
                    id: format!("{passage_id}-q{q}"),
                    passage_id: passage_id.clone(),
                    q_p,
                    q_e,
                    question_type: Some(question_type),
                    gold: Some(gold),
                },
            });
        }
    }
    Ok(DatasetSplit::new("synthetic", examples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, split_stats, write_split, VocabMap};
    use crate::explanation::validate_explanation;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            n_passages: 60,
            ..SynthConfig::default()
        };
        let dump = |split: &DatasetSplit| {
            let mut buf = Vec::new();
            write_split(split, &mut buf).unwrap();
            buf
        };
        let a = dump(&generate_synthetic_corpus(&cfg).unwrap());
        let b = dump(&generate_synthetic_corpus(&cfg).unwrap());
        assert_eq!(a, b);
        let other = dump(&generate_synthetic_corpus(&SynthConfig { seed: 14, ..cfg }).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn golds_validate() {
        let split = generate_synthetic_corpus(&SynthConfig {
            n_passages: 300,
            k_min: 1,
            k_max: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        for ex in &split.examples {
            let g = ex.question.gold.unwrap();
            assert!(validate_explanation(&g, ex.k()).is_valid(), "{} {g}", ex.id());
            let t = ex.question.question_type.unwrap();
            assert_eq!(t == QuestionType::NoEffect, g.is_no_effect());
        }
    }

    #[test]
    fn no_effect_fraction_on_5000() {
        let split = generate_synthetic_corpus(&SynthConfig {
            n_passages: 1250,
            questions_per_passage: 4,
            noeffect_frac: 0.418,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(split.len(), 5000);
        let frac = split_stats(&split).no_effect_fraction();
        assert!((frac - 0.418).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn perturbation_sign_flips_every_direction() {
        for a in 1..=3 {
            for b in a..=3 {
                for sign in Direction::EFFECT {
                    for cause in Direction::EFFECT {
                        for eff in Direction::EFFECT {
                            let g = propagate_gold(a, b, sign, cause, eff);
                            let f = propagate_gold(a, b, sign.flip(), cause, eff);
                            assert_eq!((f.d_i, f.d_j, f.d_e), (g.d_i.flip(), g.d_j.flip(), g.d_e.flip()));
                            assert_eq!((f.i, f.j), (g.i, g.j));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn vocab_size_is_lexicon_plus_reserved() {
        let split = generate_synthetic_corpus(&SynthConfig {
            n_passages: 800,
            paraphrase_rate: 0.5,
            ..SynthConfig::default()
        })
        .unwrap();
        let lexicon = Lexicon::standard().tokens();
        let vocab = build_vocab(&[&split], 1, 16);
        assert_eq!(vocab.len(), lexicon.len() + VocabMap::reserved_tokens(16).len());
        assert!(lexicon.iter().all(|t| vocab.contains(t)));
    }

    #[test]
    fn rejects_bad_params() {
        let bad = SynthConfig {
            k_min: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_corpus(&bad).is_err());
        let bad = SynthConfig {
            noeffect_frac: 1.5,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_corpus(&bad).is_err());
    }
}
