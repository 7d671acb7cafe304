//! Marker-delimited input assembly, the layered sequence encoder, sentence
//! pooling and layer combination.
//!
//! Layout of an assembled input:
//!
//! ```text
//! [CLS] x_1 [M1] [SEP] x_2 [M2] [SEP] ... x_K [MK] [SEP] q_p q_e [SEP]
//! ```

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Tape, Var};
use crate::corpus::VocabMap;
use crate::params::{Mat, ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("passage has {k} steps but the marker budget is {budget}")]
    MarkerBudget { k: usize, budget: usize },
    #[error("question is empty after tokenization")]
    EmptyQuestion,
    #[error("step {0} is empty after tokenization")]
    EmptyStep(usize),
    #[error("input of {len} tokens exceeds the maximum length {max}")]
    TooLong { len: usize, max: usize },
    #[error("layer selection is empty")]
    EmptySelection,
    #[error("layer {layer} is outside 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("non-finite activation in {0}")]
    NonFinite(&'static str),
    #[error("pretrained adapter failed: {0}")]
    Adapter(String),
}

pub const SEGMENT_PASSAGE: usize = 0;
pub const SEGMENT_PERTURBATION: usize = 1;
pub const SEGMENT_EFFECT: usize = 2;

/// Source of token ids for input assembly: the desk-scale vocabulary or a
/// pretrained adapter's own tokenizer.
pub trait InputTokenizer {
    fn encode_text(&self, text: &str) -> Vec<u32>;
    fn cls_id(&self) -> u32;
    fn sep_id(&self) -> u32;
    /// Sentence marker for step `k` (1-based); `None` past the budget.
    fn marker_id(&self, k: usize) -> Option<u32>;
    fn max_markers(&self) -> usize;
}

impl InputTokenizer for VocabMap {
    fn encode_text(&self, text: &str) -> Vec<u32> {
        self.encode(text)
    }

    fn cls_id(&self) -> u32 {
        VocabMap::cls_id(self)
    }

    fn sep_id(&self) -> u32 {
        VocabMap::sep_id(self)
    }

    fn marker_id(&self, k: usize) -> Option<u32> {
        VocabMap::marker_id(self, k)
    }

    fn max_markers(&self) -> usize {
        VocabMap::max_markers(self)
    }
}

/// An assembled input with the positions the pooling step needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub cls: usize,
    /// Position of marker M_k for each step.
    pub markers: Vec<usize>,
    /// Token positions of each step's text (marker excluded).
    pub sentences: Vec<Range<usize>>,
    pub seps: Vec<usize>,
    pub question: Range<usize>,
    /// Segment of each token: passage, perturbation or effect.
    pub segments: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.markers.len()
    }
}

/// Builds the marker-delimited sequence for `steps` and the question
/// `q_p ⊕ q_e`. With `mask_perturbation` the question holds `q_e` only.
pub fn assemble_input<T: InputTokenizer + ?Sized>(
    steps: &[String],
    q_p: &str,
    q_e: &str,
    tok: &T,
    mask_perturbation: bool,
) -> Result<TokenSequence, EncoderError> {
    let k = steps.len();
    if k > tok.max_markers() {
        return Err(EncoderError::MarkerBudget {
            k,
            budget: tok.max_markers(),
        });
    }
    let mut ids = vec![tok.cls_id()];
    let mut markers = Vec::with_capacity(k);
    let mut sentences = Vec::with_capacity(k);
    let mut seps = Vec::with_capacity(k + 1);
    for (idx, step) in steps.iter().enumerate() {
        let toks = tok.encode_text(step);
        if toks.is_empty() {
            return Err(EncoderError::EmptyStep(idx + 1));
        }
        let start = ids.len();
        ids.extend(toks);
        sentences.push(start..ids.len());
        markers.push(ids.len());
        ids.push(tok.marker_id(idx + 1).expect("checked against the marker budget"));
        seps.push(ids.len());
        ids.push(tok.sep_id());
    }
    let perturbation = if mask_perturbation { Vec::new() } else { tok.encode_text(q_p) };
    let effect = tok.encode_text(q_e);
    if perturbation.is_empty() && effect.is_empty() {
        return Err(EncoderError::EmptyQuestion);
    }
    let q_start = ids.len();
    let mut segments = vec![SEGMENT_PASSAGE; q_start];
    segments.extend(std::iter::repeat_n(SEGMENT_PERTURBATION, perturbation.len()));
    segments.extend(std::iter::repeat_n(SEGMENT_EFFECT, effect.len() + 1));
    ids.extend(perturbation);
    ids.extend(effect);
    let q_end = ids.len();
    seps.push(ids.len());
    ids.push(tok.sep_id());
    Ok(TokenSequence {
        ids,
        cls: 0,
        markers,
        sentences,
        seps,
        question: q_start..q_end,
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Hidden state at the sentence's marker token.
    Marker,
    /// Mean over the sentence's own tokens.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMixing {
    /// Concatenate selected layers, then project.
    Concat,
    /// Softmax-weighted average of selected layers, then project.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub max_markers: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            dim: 64,
            heads: 4,
            ffn_dim: 128,
            max_len: 128,
            max_markers: 16,
            dropout: 0.2,
        }
    }
}

/// Per-pass state: dropout switch and its random stream.
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn inference() -> ForwardCtx {
        ForwardCtx {
            train: false,
            dropout: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn training(dropout: f64, seed: u64) -> ForwardCtx {
        ForwardCtx {
            train: true,
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Var {
        if !self.train || self.dropout <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let dim = tape.value(x).dim();
        let rng = &mut self.rng;
        let mask = Mat::from_shape_simple_fn(dim, || if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        tape.dropout_mask(x, mask)
    }
}

/// Per-layer token matrices H^1..H^L as tape variables.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub layers: Vec<Var>,
}

impl EncoderOutput {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Layer `l` (1-based).
    pub fn layer(&self, l: usize) -> Var {
        self.layers[l - 1]
    }

    pub fn values(&self, tape: &Tape) -> Vec<Mat> {
        self.layers.iter().map(|&v| tape.value(v).clone()).collect()
    }
}

struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Post-norm transformer encoder with learned positional embeddings.
pub struct ToyTransformer {
    pub config: EncoderConfig,
    pub vocab: VocabMap,
    tok_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerParams>,
}

impl ToyTransformer {
    pub fn new<R: Rng>(config: EncoderConfig, vocab: VocabMap, store: &mut ParamStore, rng: &mut R) -> ToyTransformer {
        assert!(config.dim % config.heads == 0, "dim must divide evenly into heads");
        let e = config.dim;
        let f = config.ffn_dim;
        let tok_emb = store.add_normal("encoder.tok_emb", vocab.len(), e, 0.1, rng);
        let pos_emb = store.add_normal("encoder.pos_emb", config.max_len, e, 0.1, rng);
        let seg_emb = store.add_normal("encoder.seg_emb", 3, e, 0.1, rng);
        let emb_ln_g = store.add_ones("encoder.emb_ln.gamma", 1, e);
        let emb_ln_b = store.add_zeros("encoder.emb_ln.beta", 1, e);
        let layers = (1..=config.layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                LayerParams {
                    wq: store.add_xavier(format!("{p}.attn.wq"), e, e, rng),
                    bq: store.add_zeros(format!("{p}.attn.bq"), 1, e),
                    wk: store.add_xavier(format!("{p}.attn.wk"), e, e, rng),
                    bk: store.add_zeros(format!("{p}.attn.bk"), 1, e),
                    wv: store.add_xavier(format!("{p}.attn.wv"), e, e, rng),
                    bv: store.add_zeros(format!("{p}.attn.bv"), 1, e),
                    wo: store.add_xavier(format!("{p}.attn.wo"), e, e, rng),
                    bo: store.add_zeros(format!("{p}.attn.bo"), 1, e),
                    ln1_g: store.add_ones(format!("{p}.ln1.gamma"), 1, e),
                    ln1_b: store.add_zeros(format!("{p}.ln1.beta"), 1, e),
                    w1: store.add_xavier(format!("{p}.ffn.w1"), e, f, rng),
                    b1: store.add_zeros(format!("{p}.ffn.b1"), 1, f),
                    w2: store.add_xavier(format!("{p}.ffn.w2"), f, e, rng),
                    b2: store.add_zeros(format!("{p}.ffn.b2"), 1, e),
                    ln2_g: store.add_ones(format!("{p}.ln2.gamma"), 1, e),
                    ln2_b: store.add_zeros(format!("{p}.ln2.beta"), 1, e),
                }
            })
            .collect();
        ToyTransformer {
            config,
            vocab,
            tok_emb,
            pos_emb,
            seg_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        }
    }

    fn linear(tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = tape.param(w);
        let b = tape.param(b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    pub fn encode(&self, tape: &mut Tape, ts: &TokenSequence, ctx: &mut ForwardCtx) -> Result<EncoderOutput, EncoderError> {
        let t = ts.len();
        if t > self.config.max_len {
            return Err(EncoderError::TooLong {
                len: t,
                max: self.config.max_len,
            });
        }
        let ids: Vec<usize> = ts.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..t).collect();
        let tok = tape.param(self.tok_emb);
        let pos = tape.param(self.pos_emb);
        let x = tape.gather(tok, &ids);
        let p = tape.gather(pos, &positions);
        let x = tape.add(x, p);
        let seg = tape.param(self.seg_emb);
        let sg = tape.gather(seg, &ts.segments);
        let x = tape.add(x, sg);
        let g = tape.param(self.emb_ln_g);
        let b = tape.param(self.emb_ln_b);
        let x = tape.layer_norm(x, g, b);
        let mut x = ctx.dropout(tape, x);

        let heads = self.config.heads;
        let dh = self.config.dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.layers.len());
        for lp in &self.layers {
            let q = Self::linear(tape, x, lp.wq, lp.bq);
            let k = Self::linear(tape, x, lp.wk, lp.bk);
            let v = Self::linear(tape, x, lp.wv, lp.bv);
            let mut head_out = Vec::with_capacity(heads);
            for h in 0..heads {
                let (a, z) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, a, z);
                let kh = tape.slice_cols(k, a, z);
                let vh = tape.slice_cols(v, a, z);
                let scores = tape.matmul_t(qh, kh);
                let scores = tape.scale(scores, scale);
                let attn = tape.softmax_rows(scores);
                head_out.push(tape.matmul(attn, vh));
            }
            let ctx_all = tape.concat_cols(&head_out);
            let attn_out = Self::linear(tape, ctx_all, lp.wo, lp.bo);
            let attn_out = ctx.dropout(tape, attn_out);
            let res = tape.add(x, attn_out);
            let g1 = tape.param(lp.ln1_g);
            let b1 = tape.param(lp.ln1_b);
            let a = tape.layer_norm(res, g1, b1);

            let hid = Self::linear(tape, a, lp.w1, lp.b1);
            let hid = tape.gelu(hid);
            let ffn = Self::linear(tape, hid, lp.w2, lp.b2);
            let ffn = ctx.dropout(tape, ffn);
            let res = tape.add(a, ffn);
            let g2 = tape.param(lp.ln2_g);
            let b2 = tape.param(lp.ln2_b);
            x = tape.layer_norm(res, g2, b2);
            if !tape.value(x).iter().all(|v| v.is_finite()) {
                return Err(EncoderError::NonFinite("encoder layer"));
            }
            outputs.push(x);
        }
        Ok(EncoderOutput { layers: outputs })
    }
}

/// Interface to an externally pretrained layered encoder. Its hidden states
/// enter the tape as constants (the adapter is not fine-tuned).
pub trait PretrainedAdapter: InputTokenizer + Send + Sync {
    fn name(&self) -> &str;
    fn layer_dims(&self) -> Vec<usize>;
    fn hidden_states(&self, ids: &[u32]) -> Result<Vec<Mat>, String>;
}

/// The layered encoder behind the heads.
#[derive(Clone)]
pub enum Backbone {
    Toy(Arc<ToyTransformer>),
    Pretrained(Arc<dyn PretrainedAdapter>),
}

impl Backbone {
    pub fn layer_dims(&self) -> Vec<usize> {
        match self {
            Backbone::Toy(t) => vec![t.config.dim; t.config.layers],
            Backbone::Pretrained(a) => a.layer_dims(),
        }
    }

    pub fn encode(&self, tape: &mut Tape, ts: &TokenSequence, ctx: &mut ForwardCtx) -> Result<EncoderOutput, EncoderError> {
        match self {
            Backbone::Toy(t) => t.encode(tape, ts, ctx),
            Backbone::Pretrained(a) => {
                let states = a.hidden_states(&ts.ids).map_err(EncoderError::Adapter)?;
                let layers = states
                    .into_iter()
                    .map(|m| {
                        if m.nrows() != ts.len() || !m.iter().all(|v| v.is_finite()) {
                            return Err(EncoderError::Adapter("malformed hidden state".into()));
                        }
                        Ok(tape.constant(m))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(EncoderOutput { layers })
            }
        }
    }
}

/// Pooled views of one token-feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Pooled {
    /// K×D sentence vectors u_1..u_K.
    pub sentences: Var,
    /// 1×D question vector u_q (mean over question positions).
    pub question: Var,
    /// 1×D vector at the CLS position.
    pub cls: Var,
}

pub fn pool_sentences(tape: &mut Tape, features: Var, ts: &TokenSequence, pooling: Pooling) -> Pooled {
    let sentences = match pooling {
        Pooling::Marker => tape.select_rows(features, &ts.markers),
        Pooling::Mean => {
            let rows: Vec<Var> = ts
                .sentences
                .iter()
                .map(|r| tape.mean_rows(features, &r.clone().collect::<Vec<_>>()))
                .collect();
            tape.concat_rows(&rows)
        }
    };
    let q_rows: Vec<usize> = ts.question.clone().collect();
    let question = tape.mean_rows(features, &q_rows);
    let cls = tape.select_rows(features, &[ts.cls]);
    Pooled {
        sentences,
        question,
        cls,
    }
}

/// Which head group a combination feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadGroup {
    Span,
    Direction,
}

impl HeadGroup {
    fn prefix(self) -> &'static str {
        match self {
            HeadGroup::Span => "combine.span",
            HeadGroup::Direction => "combine.direction",
        }
    }
}

/// Canonical (ascending, de-duplicated) 1-based layer indices.
pub fn canonical_layers(layers: &[usize], num_layers: usize) -> Result<Vec<usize>, EncoderError> {
    if layers.is_empty() {
        return Err(EncoderError::EmptySelection);
    }
    let mut out = layers.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&l| l == 0 || l > num_layers) {
        return Err(EncoderError::LayerOutOfRange {
            layer: bad,
            layers: num_layers,
        });
    }
    Ok(out)
}

/// Learned projection of selected encoder layers to a fixed head width.
pub struct LayerCombiner {
    pub group: HeadGroup,
    pub layers: Vec<usize>,
    pub mixing: LayerMixing,
    pub input_width: usize,
    proj_w: ParamId,
    proj_b: ParamId,
    mix_logits: Option<ParamId>,
}

impl LayerCombiner {
    pub fn new<R: Rng>(
        group: HeadGroup,
        layers: &[usize],
        layer_dims: &[usize],
        mixing: LayerMixing,
        out_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<LayerCombiner, EncoderError> {
        let layers = canonical_layers(layers, layer_dims.len())?;
        let input_width = match mixing {
            LayerMixing::Concat => layers.iter().map(|&l| layer_dims[l - 1]).sum(),
            LayerMixing::Weighted => {
                let d = layer_dims[layers[0] - 1];
                assert!(
                    layers.iter().all(|&l| layer_dims[l - 1] == d),
                    "weighted mixing needs equal layer widths"
                );
                d
            }
        };
        let p = group.prefix();
        let proj_w = store.add_xavier(format!("{p}.w"), input_width, out_dim, rng);
        let proj_b = store.add_zeros(format!("{p}.b"), 1, out_dim);
        let mix_logits = (mixing == LayerMixing::Weighted).then(|| store.add_zeros(format!("{p}.mix"), 1, layers.len()));
        Ok(LayerCombiner {
            group,
            layers,
            mixing,
            input_width,
            proj_w,
            proj_b,
            mix_logits,
        })
    }

    pub fn combine(&self, tape: &mut Tape, eo: &EncoderOutput) -> Var {
        let mixed = match self.mixing {
            LayerMixing::Concat => {
                let parts: Vec<Var> = self.layers.iter().map(|&l| eo.layer(l)).collect();
                if parts.len() == 1 {
                    parts[0]
                } else {
                    tape.concat_cols(&parts)
                }
            }
            LayerMixing::Weighted => {
                let logits = tape.param(self.mix_logits.expect("weighted mixing has logits"));
                let weights = tape.softmax_rows(logits);
                let t = tape.value(eo.layer(self.layers[0])).nrows();
                let mut acc = None;
                for (idx, &l) in self.layers.iter().enumerate() {
                    let w = tape.slice_cols(weights, idx, idx + 1);
                    let col = tape.repeat_rows(w, t);
                    let term = tape.mul_col(eo.layer(l), col);
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => tape.add(prev, term),
                    });
                }
                acc.expect("non-empty selection")
            }
        };
        let w = tape.param(self.proj_w);
        let b = tape.param(self.proj_b);
        let y = tape.matmul(mixed, w);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub head_dim: usize,
    pub span_layers: Vec<usize>,
    pub direction_layers: Vec<usize>,
    pub pooling: Pooling,
    pub mixing: LayerMixing,
    /// Drop `q_p` from the input (effect-only ablation).
    pub mask_perturbation: bool,
}

impl StackConfig {
    /// Span heads read layer 2, direction heads the top two layers.
    pub fn for_layers(layers: usize, head_dim: usize) -> StackConfig {
        StackConfig {
            head_dim,
            span_layers: vec![2.min(layers)],
            direction_layers: if layers >= 2 { vec![layers - 1, layers] } else { vec![layers] },
            pooling: Pooling::Marker,
            mixing: LayerMixing::Concat,
            mask_perturbation: false,
        }
    }
}

/// Pooled span-group and direction-group features of one input.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub span: Pooled,
    pub direction: Pooled,
}

/// A backbone plus the two per-head-group layer combinations.
pub struct EncoderStack {
    pub backbone: Backbone,
    pub config: StackConfig,
    pub span: LayerCombiner,
    pub direction: LayerCombiner,
}

impl EncoderStack {
    pub fn new<R: Rng>(backbone: Backbone, config: StackConfig, store: &mut ParamStore, rng: &mut R) -> Result<EncoderStack, EncoderError> {
        let dims = backbone.layer_dims();
        let span = LayerCombiner::new(HeadGroup::Span, &config.span_layers, &dims, config.mixing, config.head_dim, store, rng)?;
        let direction = LayerCombiner::new(
            HeadGroup::Direction,
            &config.direction_layers,
            &dims,
            config.mixing,
            config.head_dim,
            store,
            rng,
        )?;
        Ok(EncoderStack {
            backbone,
            config,
            span,
            direction,
        })
    }

    pub fn assemble(&self, steps: &[String], q_p: &str, q_e: &str) -> Result<TokenSequence, EncoderError> {
        let mask = self.config.mask_perturbation;
        match &self.backbone {
            Backbone::Toy(t) => assemble_input(steps, q_p, q_e, &t.vocab, mask),
            Backbone::Pretrained(a) => assemble_input(steps, q_p, q_e, a.as_ref(), mask),
        }
    }

    pub fn features(&self, tape: &mut Tape, ts: &TokenSequence, ctx: &mut ForwardCtx) -> Result<Features, EncoderError> {
        let out = self.backbone.encode(tape, ts, ctx)?;
        let span = self.span.combine(tape, &out);
        let direction = self.direction.combine(tape, &out);
        Ok(Features {
            span: pool_sentences(tape, span, ts, self.config.pooling),
            direction: pool_sentences(tape, direction, ts, self.config.pooling),
        })
    }

    pub fn max_markers(&self) -> usize {
        match &self.backbone {
            Backbone::Toy(t) => t.vocab.max_markers(),
            Backbone::Pretrained(a) => a.max_markers(),
        }
    }

    /// The toy encoder's vocabulary; adapters tokenize on their own.
    pub fn vocab(&self) -> Option<&VocabMap> {
        match &self.backbone {
            Backbone::Toy(t) => Some(&t.vocab),
            Backbone::Pretrained(_) => None,
        }
    }
}

/// Deterministic stand-in for a pretrained encoder: hashed token features
/// mixed with a running context average per layer. Used to exercise the
/// adapter path without external weights.
pub struct HashingAdapter {
    pub dims: Vec<usize>,
    pub vocab: VocabMap,
}

impl HashingAdapter {
    fn feature(token: u32, layer: usize, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(((token as u64) << 8) ^ layer as u64);
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl InputTokenizer for HashingAdapter {
    fn encode_text(&self, text: &str) -> Vec<u32> {
        self.vocab.encode(text)
    }

    fn cls_id(&self) -> u32 {
        self.vocab.cls_id()
    }

    fn sep_id(&self) -> u32 {
        self.vocab.sep_id()
    }

    fn marker_id(&self, k: usize) -> Option<u32> {
        self.vocab.marker_id(k)
    }

    fn max_markers(&self) -> usize {
        self.vocab.max_markers()
    }
}

impl PretrainedAdapter for HashingAdapter {
    fn name(&self) -> &str {
        "hashing"
    }

    fn layer_dims(&self) -> Vec<usize> {
        self.dims.clone()
    }

    fn hidden_states(&self, ids: &[u32]) -> Result<Vec<Mat>, String> {
        let mut out = Vec::with_capacity(self.dims.len());
        for (l, &d) in self.dims.iter().enumerate() {
            let mut m = Mat::zeros((ids.len(), d));
            let mut running = vec![0.0; d];
            for (r, &id) in ids.iter().enumerate() {
                let f = Self::feature(id, l, d);
                for c in 0..d {
                    running[c] += f[c];
                    m[[r, c]] = f[c] + running[c] / (r + 1) as f64;
                }
            }
            out.push(m);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabMap;

    fn vocab() -> VocabMap {
        VocabMap::from_corpus_tokens(
            ["water", "rises", "clouds", "form", "more", "rain", "less", "ice", "melts"]
                .iter()
                .map(|s| s.to_string()),
            4,
        )
    }

    fn steps(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn tiny(layers: usize, dim: usize) -> (ParamStore, ToyTransformer, VocabMap) {
        let v = vocab();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = EncoderConfig {
            layers,
            dim,
            heads: 2,
            ffn_dim: dim * 2,
            max_len: 40,
            max_markers: 4,
            dropout: 0.0,
        };
        let enc = ToyTransformer::new(cfg, v.clone(), &mut store, &mut rng);
        (store, enc, v)
    }

    #[test]
    fn layout_counts() {
        let v = vocab();
        let ts = assemble_input(&steps(&["water rises", "clouds form"]), "more rain", "more clouds", &v, false).unwrap();
        assert_eq!(ts.k(), 2);
        assert_eq!(ts.seps.len(), 3);
        assert_eq!(ts.ids.iter().filter(|&&i| i == v.cls_id()).count(), 1);
        assert_eq!(ts.ids.iter().filter(|&&i| i == v.sep_id()).count(), 3);
        assert_eq!(ts.ids[ts.markers[0]], v.marker_id(1).unwrap());
        assert_eq!(ts.ids[ts.markers[1]], v.marker_id(2).unwrap());
        assert_eq!(ts.question.len(), 4);
        assert_eq!(*ts.seps.last().unwrap(), ts.len() - 1);
    }

    #[test]
    fn empty_effect_and_masking() {
        let v = vocab();
        let s = steps(&["water rises"]);
        let ts = assemble_input(&s, "more rain", "", &v, false).unwrap();
        assert_eq!(ts.question.len(), 2);
        let masked = assemble_input(&s, "more rain", "less ice", &v, true).unwrap();
        assert_eq!(&masked.ids[masked.question.clone()], &v.encode("less ice")[..]);
        assert_eq!(
            assemble_input(&s, "", "", &v, false).unwrap_err(),
            EncoderError::EmptyQuestion
        );
        assert_eq!(
            assemble_input(&s, "more rain", "", &v, true).unwrap_err(),
            EncoderError::EmptyQuestion
        );
    }

    #[test]
    fn marker_budget_is_enforced() {
        let v = vocab();
        let five = steps(&["a", "b", "c", "d", "e"]);
        assert_eq!(
            assemble_input(&five, "more rain", "x", &v, false).unwrap_err(),
            EncoderError::MarkerBudget { k: 5, budget: 4 }
        );
    }

    #[test]
    fn deterministic_assembly_and_inference() {
        let (store, enc, v) = tiny(2, 16);
        let s = steps(&["water rises", "clouds form", "ice melts"]);
        let a = assemble_input(&s, "more rain", "less ice", &v, false).unwrap();
        let b = assemble_input(&s, "more rain", "less ice", &v, false).unwrap();
        assert_eq!(a, b);
        let run = || {
            let mut tape = Tape::new(&store);
            let out = enc.encode(&mut tape, &a, &mut ForwardCtx::inference()).unwrap();
            out.values(&tape)
        };
        let first = run();
        assert_eq!(first, run());
        assert_eq!(first.len(), 2);
        for m in &first {
            assert_eq!(m.dim(), (a.len(), 16));
        }
    }

    #[test]
    fn pooling_follows_markers() {
        let (store, enc, v) = tiny(2, 16);
        let s = steps(&["water rises", "clouds form", "ice melts"]);
        let ts = assemble_input(&s, "more rain", "less ice", &v, false).unwrap();
        let mut tape = Tape::new(&store);
        let out = enc.encode(&mut tape, &ts, &mut ForwardCtx::inference()).unwrap();
        let h = out.layer(2);
        let pooled = pool_sentences(&mut tape, h, &ts, Pooling::Marker);
        let hv = tape.value(h).clone();
        assert_eq!(tape.value(pooled.sentences).nrows(), 3);
        assert_eq!(tape.value(pooled.cls).row(0), hv.row(0));
        for (k, &m) in ts.markers.iter().enumerate() {
            assert_eq!(tape.value(pooled.sentences).row(k), hv.row(m));
        }
        let mean = pool_sentences(&mut tape, h, &ts, Pooling::Mean);
        assert_eq!(tape.value(mean.sentences).nrows(), 3);
    }

    #[test]
    fn permuted_steps_keep_marker_order() {
        let v = vocab();
        let a = assemble_input(&steps(&["water rises", "clouds form"]), "more rain", "x", &v, false).unwrap();
        let b = assemble_input(&steps(&["clouds form", "water rises"]), "more rain", "x", &v, false).unwrap();
        assert_eq!(&a.ids[a.sentences[0].clone()], &b.ids[b.sentences[1].clone()]);
        assert_eq!(&a.ids[a.sentences[1].clone()], &b.ids[b.sentences[0].clone()]);
        for (k, (&ma, &mb)) in a.markers.iter().zip(&b.markers).enumerate() {
            assert_eq!(a.ids[ma], v.marker_id(k + 1).unwrap());
            assert_eq!(b.ids[mb], v.marker_id(k + 1).unwrap());
        }
    }

    #[test]
    fn swapped_sentences_swap_pooled_vectors() {
        // Without positional embeddings and with M1 = M2, swapping two
        // equal-length sentences is a pure token permutation, under which
        // self-attention is equivariant. Marker states coincide here, so the
        // sentences are mean-pooled.
        let (mut store, enc, v) = tiny(2, 16);
        store.get_mut(store.id("encoder.pos_emb").unwrap()).fill(0.0);
        let tok = store.id("encoder.tok_emb").unwrap();
        let m1 = store.get(tok).row(v.marker_id(1).unwrap() as usize).to_owned();
        store.get_mut(tok).row_mut(v.marker_id(2).unwrap() as usize).assign(&m1);
        let pool = |st: &[String]| {
            let ts = assemble_input(st, "more rain", "less ice", &v, false).unwrap();
            let mut tape = Tape::new(&store);
            let out = enc.encode(&mut tape, &ts, &mut ForwardCtx::inference()).unwrap();
            let p = pool_sentences(&mut tape, out.layer(2), &ts, Pooling::Mean);
            tape.value(p.sentences).clone()
        };
        let a = pool(&steps(&["water rises", "clouds form", "ice melts"]));
        let b = pool(&steps(&["clouds form", "water rises", "ice melts"]));
        for (x, y) in [(0, 1), (1, 0), (2, 2)] {
            let diff = (&a.row(x) - &b.row(y)).mapv(f64::abs).fold(0.0_f64, |m, &d| m.max(d));
            assert!(diff < 1e-9, "u_{} vs swapped u_{}: {diff}", x + 1, y + 1);
        }
        assert!((&a.row(0) - &b.row(0)).mapv(f64::abs).sum() > 1e-3);
    }

    #[test]
    fn combine_widths_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let c = LayerCombiner::new(HeadGroup::Span, &[2], &[64; 4], LayerMixing::Concat, 32, &mut store, &mut rng).unwrap();
        assert_eq!(c.input_width, 64);
        let c = LayerCombiner::new(
            HeadGroup::Direction,
            &[11, 10],
            &[768; 12],
            LayerMixing::Concat,
            8,
            &mut store,
            &mut rng,
        )
        .unwrap();
        assert_eq!(c.input_width, 1536);
        assert_eq!(c.layers, vec![10, 11]);
        let mut other = ParamStore::new();
        assert_eq!(
            LayerCombiner::new(HeadGroup::Span, &[], &[64; 4], LayerMixing::Concat, 8, &mut other, &mut rng).err(),
            Some(EncoderError::EmptySelection)
        );
        assert!(matches!(
            LayerCombiner::new(HeadGroup::Span, &[5], &[64; 4], LayerMixing::Concat, 8, &mut other, &mut rng),
            Err(EncoderError::LayerOutOfRange { layer: 5, layers: 4 })
        ));
    }

    #[test]
    fn permuted_selection_gives_identical_output() {
        let (mut store, enc, v) = tiny(3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store_b = store.clone();
        let a = LayerCombiner::new(HeadGroup::Span, &[1, 3], &[8; 3], LayerMixing::Concat, 4, &mut store, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = LayerCombiner::new(HeadGroup::Span, &[3, 1], &[8; 3], LayerMixing::Concat, 4, &mut store_b, &mut rng).unwrap();
        let ts = assemble_input(&steps(&["water rises"]), "more rain", "less ice", &v, false).unwrap();
        let run = |store: &ParamStore, c: &LayerCombiner| {
            let mut tape = Tape::new(store);
            let out = enc.encode(&mut tape, &ts, &mut ForwardCtx::inference()).unwrap();
            let y = c.combine(&mut tape, &out);
            tape.value(y).clone()
        };
        assert_eq!(run(&store, &a), run(&store_b, &b));
    }

    #[test]
    fn adapter_backbone_shapes() {
        let v = vocab();
        let adapter = HashingAdapter {
            dims: vec![12, 12, 12],
            vocab: v.clone(),
        };
        let ts = assemble_input(&steps(&["water rises", "ice melts"]), "more rain", "less ice", &adapter, false).unwrap();
        let backbone = Backbone::Pretrained(Arc::new(adapter));
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let out = backbone.encode(&mut tape, &ts, &mut ForwardCtx::inference()).unwrap();
        assert_eq!(out.num_layers(), 3);
        assert_eq!(tape.value(out.layer(3)).dim(), (ts.len(), 12));
    }

    #[test]
    fn too_long_input_is_rejected() {
        let (store, enc, v) = tiny(1, 8);
        let long: Vec<String> = (0..4).map(|_| "water rises water rises water rises water rises".to_string()).collect();
        let ts = assemble_input(&long, "more rain", "less ice", &v, false).unwrap();
        let mut tape = Tape::new(&store);
        assert!(matches!(
            enc.encode(&mut tape, &ts, &mut ForwardCtx::inference()),
            Err(EncoderError::TooLong { .. })
        ));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let (mut store, enc, v) = tiny(2, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let comb = LayerCombiner::new(HeadGroup::Span, &[1, 2], &[16, 16], LayerMixing::Weighted, 6, &mut store, &mut rng).unwrap();
        let ts = assemble_input(&steps(&["water rises", "clouds form"]), "more rain", "less ice", &v, false).unwrap();
        let probe = Mat::from_shape_fn((1, 6), |(_, c)| 0.3 * c as f64 - 0.7);
        let report = crate::gradcheck::check_gradients(
            &mut store,
            |tape| {
                let out = enc.encode(tape, &ts, &mut ForwardCtx::inference()).unwrap();
                let f = comb.combine(tape, &out);
                let p = pool_sentences(tape, f, &ts, Pooling::Marker);
                let s = tape.concat_rows(&[p.sentences, p.question, p.cls]);
                let t = tape.tanh(s);
                let w = tape.constant(probe.clone());
                let y = tape.matmul_t(t, w);
                let rows = tape.value(y).nrows();
                tape.pick_sum(y, &(0..rows).map(|r| (r, 0)).collect::<Vec<_>>())
            },
            4,
            1e-5,
        );
        assert!(report.checked > 100);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
