//! The multitask explanation model: span heads for i and j, direction heads
//! for d_i and d_e, the summed cross-entropy loss and the joint decoder.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::corpus::{Example, VocabMap};
use crate::encoder::{Backbone, EncoderConfig, EncoderStack, Features, ForwardCtx, StackConfig, ToyTransformer};
use crate::error::ModelError;
use crate::explanation::{validate_explanation, Direction, Explanation};
use crate::layers::{linear, Mlp, HEAD_INIT_STD};
use crate::params::{ParamId, ParamStore};
use crate::predict::{Prediction, Predictor};
use crate::train::Trainable;

/// The four head distributions. Span vectors hold K step entries followed
/// by a NULL entry used by no-effect explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDistributions {
    pub s_i: Vec<f64>,
    pub s_j: Vec<f64>,
    pub p_di: [f64; 3],
    pub p_de: [f64; 3],
}

impl HeadDistributions {
    pub fn k(&self) -> usize {
        self.s_i.len() - 1
    }

    /// Uniform distributions over a `k`-step passage.
    pub fn uniform(k: usize) -> HeadDistributions {
        let s = vec![1.0 / (k + 1) as f64; k + 1];
        HeadDistributions {
            s_i: s.clone(),
            s_j: s,
            p_di: [1.0 / 3.0; 3],
            p_de: [1.0 / 3.0; 3],
        }
    }

    /// Each vector non-negative, finite and summing to 1 within `tol`.
    pub fn check(&self, tol: f64) -> Result<(), String> {
        if self.s_i.len() < 2 || self.s_i.len() != self.s_j.len() {
            return Err("span vectors must share a length of K + 1 ≥ 2".into());
        }
        for (name, v) in [
            ("s_i", &self.s_i[..]),
            ("s_j", &self.s_j[..]),
            ("p_di", &self.p_di[..]),
            ("p_de", &self.p_de[..]),
        ] {
            if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(format!("{name} has a negative or non-finite entry"));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(format!("{name} sums to {sum}"));
            }
        }
        Ok(())
    }

    fn span_index(k: usize, step: Option<usize>) -> usize {
        step.map_or(k, |s| s - 1)
    }
}

/// How no-effect examples supervise the span heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanTarget {
    /// Target the NULL entry.
    Null,
    /// Leave span heads unsupervised on no-effect examples.
    Mask,
}

/// Per-head weights in the order (i, j, d_i, d_e).
pub type HeadWeights = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartetConfig {
    pub encoder: EncoderConfig,
    pub stack: StackConfig,
    pub loss_weights: HeadWeights,
    pub decode_weights: HeadWeights,
    pub span_target: SpanTarget,
}

impl Default for QuartetConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        QuartetConfig {
            stack: StackConfig::for_layers(encoder.layers, encoder.dim),
            encoder,
            loss_weights: [1.0; 4],
            decode_weights: [1.0; 4],
            span_target: SpanTarget::Null,
        }
    }
}

impl QuartetConfig {
    /// Trains only the answer head.
    pub fn answer_only(mut self) -> QuartetConfig {
        self.loss_weights = [0.0, 0.0, 0.0, 1.0];
        self
    }

    /// Hides the perturbation from the encoder.
    pub fn effect_only(mut self) -> QuartetConfig {
        self.stack.mask_perturbation = true;
        self
    }
}

/// Cross-entropy of `dists` against `gold`, weighted per head.
pub fn multitask_loss(dists: &HeadDistributions, gold: &Explanation, weights: &HeadWeights, span_target: SpanTarget) -> f64 {
    let k = dists.k();
    let ce = |p: f64| -p.ln();
    let supervise_spans = !(gold.is_no_effect() && span_target == SpanTarget::Mask);
    let mut terms = Vec::with_capacity(4);
    if supervise_spans {
        terms.push((weights[0], ce(dists.s_i[HeadDistributions::span_index(k, gold.i)])));
        terms.push((weights[1], ce(dists.s_j[HeadDistributions::span_index(k, gold.j)])));
    }
    terms.push((weights[2], ce(dists.p_di[gold.d_i.index()])));
    terms.push((weights[3], ce(dists.p_de[gold.d_e.index()])));
    terms.iter().filter(|(w, _)| *w != 0.0).map(|(w, l)| w * l).sum()
}

fn weighted_log(w: f64, p: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else {
        w * p.ln()
    }
}

/// Highest-scoring explanation satisfying every structural rule. Scores are
/// weighted sums of head log-probabilities; ties keep the earliest candidate
/// in the order of `enumerate_valid_explanations`.
pub fn constrained_decode(dists: &HeadDistributions, weights: &HeadWeights) -> Explanation {
    let k = dists.k();
    let [wi, wj, wdi, wde] = *weights;
    let mut best = Explanation::NO_EFFECT;
    let mut best_score = weighted_log(wi, dists.s_i[k])
        + weighted_log(wj, dists.s_j[k])
        + weighted_log(wdi, dists.p_di[Direction::None.index()])
        + weighted_log(wde, dists.p_de[Direction::None.index()]);
    let mut take = |score: f64, e: Explanation| {
        // NaN never wins; -inf can only win against -inf, which it doesn't.
        if score > best_score {
            best_score = score;
            best = e;
        }
    };
    for i in 1..=k {
        let si = weighted_log(wi, dists.s_i[i - 1]);
        for j in i..=k {
            let sj = weighted_log(wj, dists.s_j[j - 1]);
            for d_i in Direction::EFFECT {
                let sdi = weighted_log(wdi, dists.p_di[d_i.index()]);
                for d_e in Direction::EFFECT {
                    let sde = weighted_log(wde, dists.p_de[d_e.index()]);
                    take(si + sj + sdi + sde, Explanation::effect(i, j, d_i, d_e));
                }
            }
        }
    }
    best
}

/// Rows of `u` scaled by the step entries of `s_i`: the s_i-weighted half of
/// the j-head input.
pub fn attended(tape: &mut Tape, s_i: Var, u: Var) -> Var {
    let k = tape.value(u).nrows();
    let steps = tape.slice_cols(s_i, 0, k);
    let col = tape.transpose(steps);
    tape.mul_col(u, col)
}

/// Head logits on a tape: `s_i`, `s_j` are 1×(K+1), `d_i`, `d_e` are 1×3.
#[derive(Debug, Clone, Copy)]
pub struct HeadLogits {
    pub s_i: Var,
    pub s_j: Var,
    pub d_i: Var,
    pub d_e: Var,
}

pub struct QuartetModel {
    pub config: QuartetConfig,
    pub store: ParamStore,
    pub stack: EncoderStack,
    span_i: Mlp,
    null_i: Mlp,
    span_j: Mlp,
    null_j: Mlp,
    pooler_w: ParamId,
    pooler_b: ParamId,
    di_w: ParamId,
    di_b: ParamId,
    de_w: ParamId,
    de_b: ParamId,
    name: String,
}

impl QuartetModel {
    /// Registers head parameters in `store`, which must already hold the
    /// stack's parameters.
    pub fn new<R: Rng>(config: QuartetConfig, stack: EncoderStack, mut store: ParamStore, rng: &mut R) -> QuartetModel {
        let d = config.stack.head_dim;
        let span_i = Mlp::new("head.span_i", 3 * d, d, 1, &mut store, rng);
        let null_i = Mlp::new("head.null_i", 2 * d, d, 1, &mut store, rng);
        let span_j = Mlp::new("head.span_j", 3 * d, d, 1, &mut store, rng);
        let null_j = Mlp::new("head.null_j", 2 * d, d, 1, &mut store, rng);
        let pooler_w = store.add_xavier("head.pooler.w", d, d, rng);
        let pooler_b = store.add_zeros("head.pooler.b", 1, d);
        let di_w = store.add_normal("head.d_i.w", d, 3, HEAD_INIT_STD, rng);
        let di_b = store.add_zeros("head.d_i.b", 1, 3);
        let de_w = store.add_normal("head.d_e.w", d, 3, HEAD_INIT_STD, rng);
        let de_b = store.add_zeros("head.d_e.b", 1, 3);
        let name = if config.stack.mask_perturbation {
            "effect-only"
        } else if config.loss_weights[..3].iter().all(|&w| w == 0.0) {
            "answer-only"
        } else {
            "quartet"
        };
        QuartetModel {
            config,
            store,
            stack,
            span_i,
            null_i,
            span_j,
            null_j,
            pooler_w,
            pooler_b,
            di_w,
            di_b,
            de_w,
            de_b,
            name: name.to_string(),
        }
    }

    /// A freshly initialized model on the toy transformer.
    pub fn toy(config: QuartetConfig, vocab: VocabMap, seed: u64) -> Result<QuartetModel, ModelError> {
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
        Ok(QuartetModel::new(config, stack, store, &mut rng))
    }

    pub fn logits(&self, tape: &mut Tape, f: &Features) -> HeadLogits {
        let sp = f.span;
        let k = tape.value(sp.sentences).nrows();
        let uq = tape.repeat_rows(sp.question, k);
        let prod = tape.mul(sp.sentences, uq);
        let ctx = tape.concat_cols(&[sp.cls, sp.question]);

        let fi = tape.concat_cols(&[sp.sentences, uq, prod]);
        let si = self.span_i.apply(tape, fi);
        let si = tape.transpose(si);
        let ni = self.null_i.apply(tape, ctx);
        let s_i = tape.concat_cols(&[si, ni]);

        let p_i = tape.softmax_rows(s_i);
        let att = attended(tape, p_i, sp.sentences);
        let fj = tape.concat_cols(&[att, sp.sentences, prod]);
        let sj = self.span_j.apply(tape, fj);
        let sj = tape.transpose(sj);
        let nj = self.null_j.apply(tape, ctx);
        let s_j = tape.concat_cols(&[sj, nj]);

        let pooled = linear(tape, f.direction.cls, self.pooler_w, self.pooler_b);
        let pooled = tape.tanh(pooled);
        let d_i = linear(tape, pooled, self.di_w, self.di_b);
        let d_e = linear(tape, pooled, self.de_w, self.de_b);
        HeadLogits { s_i, s_j, d_i, d_e }
    }

    fn tape_logits(&self, tape: &mut Tape, ex: &Example, ctx: &mut ForwardCtx) -> Result<HeadLogits, ModelError> {
        let ts = self
            .stack
            .assemble(&ex.passage.steps, &ex.question.q_p, &ex.question.q_e)?;
        let f = self.stack.features(tape, &ts, ctx)?;
        Ok(self.logits(tape, &f))
    }

    /// Head distributions in inference mode.
    pub fn forward(&self, ex: &Example) -> Result<HeadDistributions, ModelError> {
        let mut tape = Tape::new(&self.store);
        let l = self.tape_logits(&mut tape, ex, &mut ForwardCtx::inference())?;
        let row = |tape: &mut Tape, v: Var| {
            let p = tape.softmax_rows(v);
            tape.value(p).iter().copied().collect::<Vec<f64>>()
        };
        let s_i = row(&mut tape, l.s_i);
        let s_j = row(&mut tape, l.s_j);
        let p_di = row(&mut tape, l.d_i);
        let p_de = row(&mut tape, l.d_e);
        let dists = HeadDistributions {
            s_i,
            s_j,
            p_di: [p_di[0], p_di[1], p_di[2]],
            p_de: [p_de[0], p_de[1], p_de[2]],
        };
        dists.check(1e-6).map_err(ModelError::NonFinite)?;
        Ok(dists)
    }

    /// The weighted cross-entropy loss as a tape scalar.
    pub fn loss_on_tape(&self, tape: &mut Tape, l: &HeadLogits, gold: &Explanation) -> Var {
        let k = tape.value(l.s_i).ncols() - 1;
        let w = self.config.loss_weights;
        let supervise_spans = !(gold.is_no_effect() && self.config.span_target == SpanTarget::Mask);
        let mut terms = Vec::with_capacity(4);
        let mut ce = |tape: &mut Tape, logits: Var, target: usize, weight: f64| {
            if weight != 0.0 {
                let lp = tape.log_softmax_rows(logits);
                let picked = tape.pick_sum(lp, &[(0, target)]);
                terms.push((picked, -weight));
            }
        };
        if supervise_spans {
            ce(tape, l.s_i, HeadDistributions::span_index(k, gold.i), w[0]);
            ce(tape, l.s_j, HeadDistributions::span_index(k, gold.j), w[1]);
        }
        ce(tape, l.d_i, gold.d_i.index(), w[2]);
        ce(tape, l.d_e, gold.d_e.index(), w[3]);
        tape.weighted_sum(&terms)
    }
}

pub(crate) fn checked_gold(ex: &Example) -> Result<Explanation, ModelError> {
    let gold = ex.question.gold.ok_or_else(|| ModelError::MissingGold(ex.id().to_string()))?;
    let verdict = validate_explanation(&gold, ex.k());
    if !verdict.is_valid() {
        return Err(ModelError::InvalidGold {
            id: ex.id().to_string(),
            verdict,
        });
    }
    Ok(gold)
}

impl Trainable for QuartetModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn example_loss(&self, tape: &mut Tape, ex: &Example, ctx: &mut ForwardCtx) -> Result<Var, ModelError> {
        let gold = checked_gold(ex)?;
        let l = self.tape_logits(tape, ex, ctx)?;
        Ok(self.loss_on_tape(tape, &l, &gold))
    }
}

impl Predictor for QuartetModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, ex: &Example) -> Result<Prediction, ModelError> {
        let dists = self.forward(ex)?;
        Ok(Prediction {
            explanation: constrained_decode(&dists, &self.config.decode_weights),
            dists: Some(dists),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explanation::enumerate_valid_explanations;
    use ndarray::array;

    fn dists(s_i: &[f64], s_j: &[f64], p_di: [f64; 3], p_de: [f64; 3]) -> HeadDistributions {
        HeadDistributions {
            s_i: s_i.to_vec(),
            s_j: s_j.to_vec(),
            p_di,
            p_de,
        }
    }

    #[test]
    fn uniform_loss_closed_form() {
        let d = HeadDistributions::uniform(8);
        let gold = Explanation::effect(2, 5, Direction::More, Direction::Less);
        let loss = multitask_loss(&d, &gold, &[1.0; 4], SpanTarget::Null);
        let expected = 2.0 * 9f64.ln() + 2.0 * 3f64.ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 6.59).abs() < 0.005);
        let answer = multitask_loss(&d, &gold, &[0.0, 0.0, 0.0, 1.0], SpanTarget::Null);
        assert!((answer - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_gold_has_zero_loss() {
        let gold = Explanation::effect(1, 2, Direction::Less, Direction::More);
        let d = dists(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(multitask_loss(&d, &gold, &[1.0; 4], SpanTarget::Null), 0.0);
        let none = dists(&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]);
        assert_eq!(multitask_loss(&none, &Explanation::NO_EFFECT, &[1.0; 4], SpanTarget::Null), 0.0);
    }

    #[test]
    fn masked_span_target_ignores_spans_on_no_effect() {
        let d = HeadDistributions::uniform(4);
        let masked = multitask_loss(&d, &Explanation::NO_EFFECT, &[1.0; 4], SpanTarget::Mask);
        assert!((masked - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn decode_prefers_no_effect_when_none_dominates() {
        let d = dists(
            &[0.3, 0.3, 0.3, 0.1],
            &[0.3, 0.3, 0.3, 0.1],
            [0.4, 0.4, 0.2],
            [0.01, 0.01, 0.98],
        );
        assert_eq!(constrained_decode(&d, &[1.0; 4]), Explanation::NO_EFFECT);
    }

    #[test]
    fn decode_forced_by_argmax_under_constraints() {
        let d = dists(
            &[0.05, 0.6, 0.1, 0.1, 0.1, 0.05],
            &[0.5, 0.05, 0.05, 0.3, 0.05, 0.05],
            [0.2, 0.7, 0.1],
            [0.7, 0.2, 0.1],
        );
        // s_j peaks at 1 < i, so the best j ≥ 2 is 4.
        assert_eq!(
            constrained_decode(&d, &[1.0; 4]),
            Explanation::effect(2, 4, Direction::Less, Direction::More)
        );
    }

    #[test]
    fn decode_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut draw = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3) + 1e-9).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        for round in 0..400 {
            let k = 1 + round % 5;
            let di = draw(3);
            let de = draw(3);
            let d = dists(&draw(k + 1), &draw(k + 1), [di[0], di[1], di[2]], [de[0], de[1], de[2]]);
            let score = |e: &Explanation| {
                let i = e.i.map_or(k, |v| v - 1);
                let j = e.j.map_or(k, |v| v - 1);
                d.s_i[i].ln() + d.s_j[j].ln() + d.p_di[e.d_i.index()].ln() + d.p_de[e.d_e.index()].ln()
            };
            let mut best = Explanation::NO_EFFECT;
            for e in enumerate_valid_explanations(k) {
                if score(&e) > score(&best) {
                    best = e;
                }
            }
            let got = constrained_decode(&d, &[1.0; 4]);
            assert_eq!(got, best);
            assert!(validate_explanation(&got, k).is_valid());
        }
    }

    #[test]
    fn doubling_attention_mass_increases_contribution() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let u = tape.constant(array![[1.0, -2.0], [0.5, 3.0]]);
        let base = tape.constant(array![[0.2, 0.3, 0.5]]);
        let doubled = tape.constant(array![[0.4, 0.3, 0.5]]);
        let a = attended(&mut tape, base, u);
        let b = attended(&mut tape, doubled, u);
        let norm = |tape: &Tape, v: Var, r: usize| tape.value(v).row(r).mapv(|x| x * x).sum().sqrt();
        assert!(norm(&tape, b, 0) > norm(&tape, a, 0));
        assert_eq!(tape.value(b).row(1), tape.value(a).row(1));
    }

    #[test]
    fn presets() {
        let c = QuartetConfig::default().answer_only();
        assert_eq!(c.loss_weights, [0.0, 0.0, 0.0, 1.0]);
        let c = QuartetConfig::default().effect_only();
        assert!(c.stack.mask_perturbation);
        assert_eq!(c.loss_weights, [1.0; 4]);
    }
}
