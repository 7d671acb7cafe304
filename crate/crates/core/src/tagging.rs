//! The structured-prediction baseline: per-sentence BIEO emissions, a
//! grammar-masked CRF, and an auxiliary answer classifier.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{Example, VocabMap};
use crate::crf::{crf_nll, forward_backward, viterbi, CrfScores, TransitionMask};
use crate::encoder::{Backbone, EncoderConfig, EncoderStack, Features, ForwardCtx, StackConfig, ToyTransformer};
use crate::error::ModelError;
use crate::explanation::{decode_tags, encode_tags, Direction, Explanation, TagSequence, TagSpan};
use crate::layers::{linear, Mlp, HEAD_INIT_STD};
use crate::params::{Mat, ParamId, ParamStore};
use crate::predict::{Prediction, Predictor};
use crate::quartet::checked_gold;
use crate::train::Trainable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingConfig {
    pub encoder: EncoderConfig,
    pub stack: StackConfig,
    /// Weight of the answer cross-entropy next to the CRF likelihood.
    pub answer_weight: f64,
}

impl Default for TaggingConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        TaggingConfig {
            stack: StackConfig::for_layers(encoder.layers, encoder.dim),
            encoder,
            answer_weight: 1.0,
        }
    }
}

/// Reconciles a CRF decode with the answer distribution. The all-O
/// sequence pairs with NONE; any run pairs with MORE or LESS. The pairing
/// with the higher joint log-probability wins, ties going to no-effect.
pub fn reconcile(
    log_p_all_o: f64,
    best_run: Option<(&TagSequence, f64)>,
    p_de: &[f64; 3],
) -> Result<Explanation, ModelError> {
    let none_score = log_p_all_o + p_de[Direction::None.index()].ln();
    let Some((run, run_lp)) = best_run else {
        return Ok(Explanation::NO_EFFECT);
    };
    let d_e = if p_de[Direction::Less.index()] > p_de[Direction::More.index()] {
        Direction::Less
    } else {
        Direction::More
    };
    let effect_score = run_lp + p_de[d_e.index()].ln();
    if effect_score > none_score {
        let span = decode_tags(run)?.ok_or_else(|| ModelError::NonFinite("run decoded as all-O".into()))?;
        Ok(Explanation::effect(span.i, span.j, span.dir_i, d_e))
    } else {
        Ok(Explanation::NO_EFFECT)
    }
}

pub struct TaggingModel {
    pub config: TaggingConfig,
    pub store: ParamStore,
    pub stack: EncoderStack,
    mask: TransitionMask,
    emit: Mlp,
    pooler_w: ParamId,
    pooler_b: ParamId,
    de_w: ParamId,
    de_b: ParamId,
    trans: ParamId,
    start: ParamId,
    end: ParamId,
}

impl TaggingModel {
    pub fn new<R: Rng>(config: TaggingConfig, stack: EncoderStack, mut store: ParamStore, rng: &mut R) -> TaggingModel {
        let d = config.stack.head_dim;
        let emit = Mlp::new("tagger.emit", 3 * d, d, 7, &mut store, rng);
        let pooler_w = store.add_xavier("tagger.pooler.w", d, d, rng);
        let pooler_b = store.add_zeros("tagger.pooler.b", 1, d);
        let de_w = store.add_normal("tagger.d_e.w", d, 3, HEAD_INIT_STD, rng);
        let de_b = store.add_zeros("tagger.d_e.b", 1, 3);
        let trans = store.add_zeros("crf.transitions", 7, 7);
        let start = store.add_zeros("crf.start", 1, 7);
        let end = store.add_zeros("crf.end", 1, 7);
        TaggingModel {
            config,
            store,
            stack,
            mask: TransitionMask::grammar(),
            emit,
            pooler_w,
            pooler_b,
            de_w,
            de_b,
            trans,
            start,
            end,
        }
    }

    pub fn toy(config: TaggingConfig, vocab: VocabMap, seed: u64) -> Result<TaggingModel, ModelError> {
        if vocab.max_markers() != config.encoder.max_markers {
            return Err(ModelError::Config(format!(
                "vocabulary has {} markers, encoder expects {}",
                vocab.max_markers(),
                config.encoder.max_markers
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = ToyTransformer::new(config.encoder.clone(), vocab, &mut store, &mut rng);
        let stack = EncoderStack::new(Backbone::Toy(Arc::new(enc)), config.stack.clone(), &mut store, &mut rng)?;
        Ok(TaggingModel::new(config, stack, store, &mut rng))
    }

    pub fn crf_scores(&self) -> CrfScores {
        CrfScores {
            transitions: self.store.get(self.trans).clone(),
            start: self.store.get(self.start).clone(),
            end: self.store.get(self.end).clone(),
        }
    }

    pub fn mask(&self) -> &TransitionMask {
        &self.mask
    }

    /// K×7 emission scores and 1×3 answer logits.
    fn heads(&self, tape: &mut Tape, f: &Features) -> (Var, Var) {
        let sp = f.span;
        let k = tape.value(sp.sentences).nrows();
        let uq = tape.repeat_rows(sp.question, k);
        let prod = tape.mul(sp.sentences, uq);
        let feats = tape.concat_cols(&[sp.sentences, uq, prod]);
        let emissions = self.emit.apply(tape, feats);
        let pooled = linear(tape, f.direction.cls, self.pooler_w, self.pooler_b);
        let pooled = tape.tanh(pooled);
        let d_e = linear(tape, pooled, self.de_w, self.de_b);
        (emissions, d_e)
    }

    fn tape_heads(&self, tape: &mut Tape, ex: &Example, ctx: &mut ForwardCtx) -> Result<(Var, Var), ModelError> {
        let ts = self
            .stack
            .assemble(&ex.passage.steps, &ex.question.q_p, &ex.question.q_e)?;
        let f = self.stack.features(tape, &ts, ctx)?;
        Ok(self.heads(tape, &f))
    }

    /// Emission matrix and answer distribution in inference mode.
    pub fn emissions(&self, ex: &Example) -> Result<(Mat, [f64; 3]), ModelError> {
        let mut tape = Tape::new(&self.store);
        let (e, d) = self.tape_heads(&mut tape, ex, &mut ForwardCtx::inference())?;
        let p = tape.softmax_rows(d);
        let pv = tape.value(p);
        let p_de = [pv[[0, 0]], pv[[0, 1]], pv[[0, 2]]];
        let em = tape.value(e).clone();
        if !em.iter().chain(p_de.iter()).all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("tagger heads".into()));
        }
        Ok((em, p_de))
    }

    /// Decodes emissions and answer probabilities into an explanation.
    pub fn decode(&self, emissions: &Mat, p_de: &[f64; 3]) -> Result<Explanation, ModelError> {
        let scores = self.crf_scores();
        let k = emissions.nrows();
        let log_z = forward_backward(emissions, &scores, &self.mask).log_z;
        let all_o = TagSequence::all_outside(k);
        let all_o_lp = scores.path_score(emissions, &self.mask.path(&all_o)?) - log_z;
        let (run, run_score) = viterbi(emissions, &scores, &self.mask, true);
        reconcile(all_o_lp, Some((&run, run_score - log_z)), p_de)
    }

    fn gold_tags(gold: &Explanation, k: usize) -> Result<TagSequence, ModelError> {
        Ok(encode_tags(TagSpan::of(gold), k)?)
    }
}

impl Trainable for TaggingModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn example_loss(&self, tape: &mut Tape, ex: &Example, ctx: &mut ForwardCtx) -> Result<Var, ModelError> {
        let gold = checked_gold(ex)?;
        let tags = Self::gold_tags(&gold, ex.k())?;
        let (emissions, d_e) = self.tape_heads(tape, ex, ctx)?;
        let trans = tape.param(self.trans);
        let start = tape.param(self.start);
        let end = tape.param(self.end);
        let scores = CrfScores {
            transitions: tape.value(trans).clone(),
            start: tape.value(start).clone(),
            end: tape.value(end).clone(),
        };
        let r = crf_nll(tape.value(emissions), &tags, &scores, &self.mask)?;
        let crf = tape.custom_scalar(
            r.loss,
            vec![
                (emissions, r.d_emissions),
                (trans, r.d_transitions),
                (start, r.d_start),
                (end, r.d_end),
            ],
        );
        let mut terms = vec![(crf, 1.0)];
        if self.config.answer_weight != 0.0 {
            let lp = tape.log_softmax_rows(d_e);
            let picked = tape.pick_sum(lp, &[(0, gold.d_e.index())]);
            terms.push((picked, -self.config.answer_weight));
        }
        Ok(tape.weighted_sum(&terms))
    }
}

impl Predictor for TaggingModel {
    fn name(&self) -> &str {
        "tagging"
    }

    fn predict(&self, ex: &Example) -> Result<Prediction, ModelError> {
        let (em, p_de) = self.emissions(ex)?;
        Ok(Prediction::bare(self.decode(&em, &p_de)?))
    }
}
