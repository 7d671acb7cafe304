use serde::{Deserialize, Serialize};

use quartet_core::crf::{viterbi as crf_viterbi, CrfScores, TransitionMask};
use quartet_core::explanation::{
    answer_of, decode_tags, encode_tags, Direction, Explanation, TagLabel, TagSequence, TagSpan,
};
use quartet_core::params::Mat;
use quartet_core::quartet::{constrained_decode, HeadDistributions, HeadWeights};

#[derive(Debug, Deserialize)]
pub struct DecodeRequest {
    pub s_i: Vec<f64>,
    pub s_j: Vec<f64>,
    pub p_di: [f64; 3],
    pub p_de: [f64; 3],
    #[serde(default = "unit_weights")]
    pub weights: HeadWeights,
}

fn unit_weights() -> HeadWeights {
    [1.0; 4]
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ExplanationView {
    pub i: i64,
    pub j: i64,
    pub d_i: String,
    pub d_j: String,
    pub d_e: String,
    pub answer: String,
    pub text: String,
}

impl From<&Explanation> for ExplanationView {
    fn from(e: &Explanation) -> Self {
        ExplanationView {
            i: e.i_id(),
            j: e.j_id(),
            d_i: e.d_i.as_str().into(),
            d_j: e.d_j.as_str().into(),
            d_e: e.d_e.as_str().into(),
            answer: answer_of(e).map_or_else(|_| "INVALID".into(), |d| d.as_str().into()),
            text: e.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
struct DecodeResponse {
    explanation: ExplanationView,
    dists: HeadDistributions,
}

fn normalize(name: &str, v: &[f64]) -> Result<Vec<f64>, String> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(format!("{name} needs finite non-negative weights"));
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(format!("{name} has no mass"));
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

fn normalize3(name: &str, v: &[f64; 3]) -> Result<[f64; 3], String> {
    let n = normalize(name, v)?;
    Ok([n[0], n[1], n[2]])
}

/// Normalizes each slider group and returns the best valid explanation.
pub fn decode(request: &str) -> Result<String, String> {
    let req: DecodeRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.s_i.len() < 2 || req.s_i.len() != req.s_j.len() {
        return Err("s_i and s_j need K + 1 entries each, K ≥ 1".into());
    }
    if req.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err("decode weights must be finite and non-negative".into());
    }
    let dists = HeadDistributions {
        s_i: normalize("s_i", &req.s_i)?,
        s_j: normalize("s_j", &req.s_j)?,
        p_di: normalize3("p_di", &req.p_di)?,
        p_de: normalize3("p_de", &req.p_de)?,
    };
    let e = constrained_decode(&dists, &req.weights);
    let resp = DecodeResponse {
        explanation: ExplanationView::from(&e),
        dists,
    };
    serde_json::to_string(&resp).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct EncodeRequest {
    pub k: usize,
    #[serde(default)]
    pub i: Option<usize>,
    #[serde(default)]
    pub j: Option<usize>,
    #[serde(default)]
    pub d_i: Option<String>,
    #[serde(default)]
    pub d_j: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SpanView {
    pub i: usize,
    pub j: usize,
    pub d_i: String,
    pub d_j: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TagsView {
    pub tags: Vec<String>,
    pub span: Option<SpanView>,
}

fn parse_dir(s: &Option<String>, name: &str) -> Result<Direction, String> {
    s.as_deref()
        .ok_or_else(|| format!("{name} is required with a span"))?
        .parse()
        .map_err(|e: quartet_core::explanation::ParseDirectionError| e.to_string())
}

fn view(tags: &TagSequence, span: Option<TagSpan>) -> TagsView {
    TagsView {
        tags: tags.labels().iter().map(|t| t.as_str().to_string()).collect(),
        span: span.map(|s| SpanView {
            i: s.i,
            j: s.j,
            d_i: s.dir_i.as_str().into(),
            d_j: s.dir_j.as_str().into(),
        }),
    }
}

/// Tags for a span; omit `i` for the no-effect sequence.
pub fn encode(request: &str) -> Result<String, String> {
    let req: EncodeRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let span = match req.i {
        None => None,
        Some(i) => Some(TagSpan {
            i,
            j: req.j.unwrap_or(i),
            dir_i: parse_dir(&req.d_i, "d_i")?,
            dir_j: parse_dir(&req.d_j.clone().or(req.d_i.clone()), "d_j")?,
        }),
    };
    let tags = encode_tags(span, req.k).map_err(|e| e.to_string())?;
    serde_json::to_string(&view(&tags, span)).map_err(|e| e.to_string())
}

/// Whitespace-separated tag labels back to their span.
pub fn decode_tag_text(tags: &str) -> Result<String, String> {
    let seq: TagSequence = tags.parse().map_err(|e: quartet_core::explanation::TagError| e.to_string())?;
    let span = decode_tags(&seq).map_err(|e| e.to_string())?;
    serde_json::to_string(&view(&seq, span)).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct ViterbiRequest {
    /// K rows of seven label scores, in [`TagLabel::ALL`] order.
    pub emissions: Vec<Vec<f64>>,
    #[serde(default)]
    pub transitions: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default)]
    pub end: Option<Vec<f64>>,
    #[serde(default)]
    pub require_run: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ViterbiView {
    pub labels: Vec<String>,
    pub tags: Vec<String>,
    pub score: f64,
    pub span: Option<SpanView>,
}

fn matrix(name: &str, rows: &[Vec<f64>], ncols: usize) -> Result<Mat, String> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("every row of {name} needs {ncols} entries"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(format!("{name} has a non-finite entry"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Mat::from_shape_vec((rows.len(), ncols), flat).map_err(|e| e.to_string())
}

/// Best grammar-valid tag sequence for the given scores.
pub fn viterbi(request: &str) -> Result<String, String> {
    let req: ViterbiRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.emissions.is_empty() {
        return Err("emissions need at least one row".into());
    }
    let emissions = matrix("emissions", &req.emissions, TagLabel::COUNT)?;
    let mut scores = CrfScores::zeros();
    if let Some(t) = &req.transitions {
        if t.len() != TagLabel::COUNT {
            return Err("transitions must be 7×7".into());
        }
        scores.transitions = matrix("transitions", t, TagLabel::COUNT)?;
    }
    if let Some(s) = &req.start {
        scores.start = matrix("start", std::slice::from_ref(s), TagLabel::COUNT)?;
    }
    if let Some(e) = &req.end {
        scores.end = matrix("end", std::slice::from_ref(e), TagLabel::COUNT)?;
    }
    let (tags, score) = crf_viterbi(&emissions, &scores, &TransitionMask::grammar(), req.require_run);
    let span = decode_tags(&tags).map_err(|e| e.to_string())?;
    let mut out = view(&tags, span);
    let resp = ViterbiView {
        labels: TagLabel::ALL.iter().map(|t| t.as_str().to_string()).collect(),
        tags: std::mem::take(&mut out.tags),
        score,
        span: out.span,
    };
    serde_json::to_string(&resp).map_err(|e| e.to_string())
}
