//! Linear-chain CRF over the 7-label BIEO alphabet with grammar-masked
//! transitions.
//!
//! Scores are parameterized per label (7×7 transitions plus start and end
//! vectors). Decoding runs on an 8-state lattice in which `O` is split into
//! "before the run" and "after the run"; both states share the `O` scores.
//! This is what makes "at most one run" and "a lone B may be followed by O"
//! expressible as first-order constraints.

use crate::explanation::{TagError, TagLabel, TagSequence};
use crate::params::Mat;

const O_PRE: usize = 6;
const O_POST: usize = 7;
pub const LATTICE_STATES: usize = 8;
const O: usize = 6;

fn label_of(state: usize) -> usize {
    if state == O_POST {
        O
    } else {
        state
    }
}

/// Which lattice transitions, starts and ends the tag grammar allows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    pub allowed: [[bool; LATTICE_STATES]; LATTICE_STATES],
    pub start: [bool; LATTICE_STATES],
    pub end: [bool; LATTICE_STATES],
}

impl TransitionMask {
    pub fn grammar() -> TransitionMask {
        let bc = TagLabel::begin(crate::explanation::Direction::More).unwrap().index();
        let bo = TagLabel::begin(crate::explanation::Direction::Less).unwrap().index();
        let mut allowed = [[false; LATTICE_STATES]; LATTICE_STATES];
        let mut start = [false; LATTICE_STATES];
        let mut end = [false; LATTICE_STATES];
        start[O_PRE] = true;
        end[O_PRE] = true;
        end[O_POST] = true;
        allowed[O_PRE][O_PRE] = true;
        allowed[O_POST][O_POST] = true;
        for label in TagLabel::ALL {
            let s = label.index();
            if label.is_begin() {
                start[s] = true;
                end[s] = true;
                allowed[O_PRE][s] = true;
                allowed[s][O_POST] = true;
            }
            if label.is_end() {
                end[s] = true;
                allowed[s][O_POST] = true;
            }
            if label.is_begin() || label.is_inside() {
                let dir = label.direction();
                allowed[s][TagLabel::inside(dir).unwrap().index()] = true;
                allowed[s][TagLabel::end(dir).unwrap().index()] = true;
            }
        }
        debug_assert!(start[bc] && start[bo]);
        TransitionMask { allowed, start, end }
    }

    /// The 7×7 label-level projection: a label pair is allowed if some
    /// lattice transition between their states is.
    pub fn label_allowed(&self) -> [[bool; 7]; 7] {
        let mut out = [[false; 7]; 7];
        for a in 0..LATTICE_STATES {
            for b in 0..LATTICE_STATES {
                if self.allowed[a][b] {
                    out[label_of(a)][label_of(b)] = true;
                }
            }
        }
        out
    }

    pub fn label_start(&self) -> [bool; 7] {
        std::array::from_fn(|l| self.start[l] || (l == O && self.start[O_POST]))
    }

    pub fn label_end(&self) -> [bool; 7] {
        std::array::from_fn(|l| self.end[l] || (l == O && self.end[O_POST]))
    }

    /// Lattice path of a tag sequence, or an error if the grammar rejects it.
    pub fn path(&self, tags: &TagSequence) -> Result<Vec<usize>, TagError> {
        if tags.is_empty() {
            return Err(TagError::Empty);
        }
        let mut seen_run = false;
        let mut path: Vec<usize> = Vec::with_capacity(tags.len());
        for (pos, &label) in tags.labels().iter().enumerate() {
            let state = if label == TagLabel::O {
                if seen_run {
                    O_POST
                } else {
                    O_PRE
                }
            } else {
                seen_run = true;
                label.index()
            };
            let ok = match path.last() {
                None => self.start[state],
                Some(&prev) => self.allowed[prev][state],
            };
            if !ok {
                return Err(TagError::Malformed {
                    position: pos + 1,
                    reason: "transition forbidden by the tag grammar".into(),
                });
            }
            path.push(state);
        }
        if !self.end[*path.last().unwrap()] {
            return Err(TagError::Malformed {
                position: tags.len(),
                reason: "sequence may not end here".into(),
            });
        }
        Ok(path)
    }
}

/// Label-level CRF scores. Entries outside the grammar are stored as finite
/// numbers but never read.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfScores {
    pub transitions: Mat,
    pub start: Mat,
    pub end: Mat,
}

impl CrfScores {
    pub fn zeros() -> CrfScores {
        CrfScores {
            transitions: Mat::zeros((7, 7)),
            start: Mat::zeros((1, 7)),
            end: Mat::zeros((1, 7)),
        }
    }

    /// Transition scores with disallowed label pairs at −∞.
    pub fn effective_transitions(&self, mask: &TransitionMask) -> Mat {
        let allowed = mask.label_allowed();
        Mat::from_shape_fn((7, 7), |(a, b)| {
            if allowed[a][b] {
                self.transitions[[a, b]]
            } else {
                f64::NEG_INFINITY
            }
        })
    }

    fn trans(&self, a: usize, b: usize) -> f64 {
        self.transitions[[label_of(a), label_of(b)]]
    }

    fn start_score(&self, s: usize) -> f64 {
        self.start[[0, label_of(s)]]
    }

    fn end_score(&self, s: usize) -> f64 {
        self.end[[0, label_of(s)]]
    }

    /// Unnormalized score of a lattice path.
    pub fn path_score(&self, emissions: &Mat, path: &[usize]) -> f64 {
        let mut s = self.start_score(path[0]) + emissions[[0, label_of(path[0])]];
        for k in 1..path.len() {
            s += self.trans(path[k - 1], path[k]) + emissions[[k, label_of(path[k])]];
        }
        s + self.end_score(*path.last().unwrap())
    }
}

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-partition plus the expected feature counts needed for gradients.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// K×7 label marginals.
    pub labels: Mat,
    /// 7×7 expected label-transition counts.
    pub transitions: Mat,
    pub start: Mat,
    pub end: Mat,
}

/// Forward-backward over the grammar lattice.
pub fn forward_backward(emissions: &Mat, scores: &CrfScores, mask: &TransitionMask) -> Marginals {
    let k = emissions.nrows();
    assert!(k >= 1 && emissions.ncols() == 7, "emissions must be K×7");
    let ninf = f64::NEG_INFINITY;
    let emit = |pos: usize, s: usize| emissions[[pos, label_of(s)]];
    let mut alpha = vec![[ninf; LATTICE_STATES]; k];
    let mut beta = vec![[ninf; LATTICE_STATES]; k];
    for s in 0..LATTICE_STATES {
        if mask.start[s] {
            alpha[0][s] = scores.start_score(s) + emit(0, s);
        }
    }
    for pos in 1..k {
        for b in 0..LATTICE_STATES {
            alpha[pos][b] = logsumexp(
                (0..LATTICE_STATES)
                    .filter(|&a| mask.allowed[a][b])
                    .map(|a| alpha[pos - 1][a] + scores.trans(a, b)),
            ) + emit(pos, b);
        }
    }
    for s in 0..LATTICE_STATES {
        if mask.end[s] {
            beta[k - 1][s] = scores.end_score(s);
        }
    }
    for pos in (0..k - 1).rev() {
        for a in 0..LATTICE_STATES {
            beta[pos][a] = logsumexp(
                (0..LATTICE_STATES)
                    .filter(|&b| mask.allowed[a][b])
                    .map(|b| scores.trans(a, b) + emit(pos + 1, b) + beta[pos + 1][b]),
            );
        }
    }
    let log_z = logsumexp((0..LATTICE_STATES).map(|s| alpha[k - 1][s] + beta[k - 1][s]));

    let mut labels = Mat::zeros((k, 7));
    for pos in 0..k {
        for s in 0..LATTICE_STATES {
            let lp = alpha[pos][s] + beta[pos][s] - log_z;
            if lp > ninf {
                labels[[pos, label_of(s)]] += lp.exp();
            }
        }
    }
    let mut transitions = Mat::zeros((7, 7));
    for pos in 1..k {
        for a in 0..LATTICE_STATES {
            for b in 0..LATTICE_STATES {
                if mask.allowed[a][b] {
                    let lp = alpha[pos - 1][a] + scores.trans(a, b) + emit(pos, b) + beta[pos][b] - log_z;
                    if lp > ninf {
                        transitions[[label_of(a), label_of(b)]] += lp.exp();
                    }
                }
            }
        }
    }
    let mut start = Mat::zeros((1, 7));
    let mut end = Mat::zeros((1, 7));
    for s in 0..LATTICE_STATES {
        let ls = alpha[0][s] + beta[0][s] - log_z;
        if ls > ninf {
            start[[0, label_of(s)]] += ls.exp();
        }
        let le = alpha[k - 1][s] + beta[k - 1][s] - log_z;
        if le > ninf {
            end[[0, label_of(s)]] += le.exp();
        }
    }
    Marginals {
        log_z,
        labels,
        transitions,
        start,
        end,
    }
}

/// Negative log-likelihood of `gold` and its gradients with respect to
/// emissions, transitions, start and end scores.
#[derive(Debug, Clone)]
pub struct NllResult {
    pub loss: f64,
    pub d_emissions: Mat,
    pub d_transitions: Mat,
    pub d_start: Mat,
    pub d_end: Mat,
}

pub fn crf_nll(emissions: &Mat, gold: &TagSequence, scores: &CrfScores, mask: &TransitionMask) -> Result<NllResult, TagError> {
    if gold.len() != emissions.nrows() {
        return Err(TagError::Malformed {
            position: gold.len().min(emissions.nrows()) + 1,
            reason: "tag count differs from emission rows",
        });
    }
    let path = mask.path(gold)?;
    let m = forward_backward(emissions, scores, mask);
    let gold_score = scores.path_score(emissions, &path);
    let mut d_emissions = m.labels;
    let mut d_transitions = m.transitions;
    let mut d_start = m.start;
    let mut d_end = m.end;
    for (pos, &s) in path.iter().enumerate() {
        d_emissions[[pos, label_of(s)]] -= 1.0;
        if pos > 0 {
            d_transitions[[label_of(path[pos - 1]), label_of(s)]] -= 1.0;
        }
    }
    d_start[[0, label_of(path[0])]] -= 1.0;
    d_end[[0, label_of(*path.last().unwrap())]] -= 1.0;
    Ok(NllResult {
        loss: (m.log_z - gold_score).max(0.0),
        d_emissions,
        d_transitions,
        d_start,
        d_end,
    })
}

/// Best grammar-valid sequence and its unnormalized score. With
/// `require_run` the all-O sequence is excluded.
pub fn viterbi(emissions: &Mat, scores: &CrfScores, mask: &TransitionMask, require_run: bool) -> (TagSequence, f64) {
    let k = emissions.nrows();
    assert!(k >= 1 && emissions.ncols() == 7, "emissions must be K×7");
    let ninf = f64::NEG_INFINITY;
    let emit = |pos: usize, s: usize| emissions[[pos, label_of(s)]];
    let mut delta = vec![[ninf; LATTICE_STATES]; k];
    let mut back = vec![[0usize; LATTICE_STATES]; k];
    for s in 0..LATTICE_STATES {
        if mask.start[s] {
            delta[0][s] = scores.start_score(s) + emit(0, s);
        }
    }
    for pos in 1..k {
        for b in 0..LATTICE_STATES {
            let mut best = ninf;
            let mut arg = 0;
            for a in 0..LATTICE_STATES {
                if mask.allowed[a][b] {
                    let v = delta[pos - 1][a] + scores.trans(a, b);
                    if v > best {
                        best = v;
                        arg = a;
                    }
                }
            }
            delta[pos][b] = best + emit(pos, b);
            back[pos][b] = arg;
        }
    }
    let mut best = ninf;
    let mut last = O_PRE;
    for s in 0..LATTICE_STATES {
        if mask.end[s] && !(require_run && s == O_PRE) {
            let v = delta[k - 1][s] + scores.end_score(s);
            if v > best {
                best = v;
                last = s;
            }
        }
    }
    let mut path = vec![last; k];
    for pos in (1..k).rev() {
        path[pos - 1] = back[pos][path[pos]];
    }
    let labels = path
        .iter()
        .map(|&s| TagLabel::from_index(label_of(s)).expect("lattice state maps to a label"))
        .collect();
    (TagSequence(labels), best)
}

/// The constrained Viterbi decode.
pub fn viterbi_constrained(emissions: &Mat, scores: &CrfScores, mask: &TransitionMask) -> TagSequence {
    viterbi(emissions, scores, mask, false).0
}

/// Log-probability of a grammar-valid sequence.
pub fn sequence_log_prob(emissions: &Mat, tags: &TagSequence, scores: &CrfScores, mask: &TransitionMask) -> Result<f64, TagError> {
    let path = mask.path(tags)?;
    let m = forward_backward(emissions, scores, mask);
    Ok(scores.path_score(emissions, &path) - m.log_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explanation::decode_tags;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Every sequence over the alphabet that the codec accepts and whose
    /// run ends in its own direction.
    fn grammar_sequences(k: usize) -> Vec<TagSequence> {
        let mut out = Vec::new();
        let total = 7usize.pow(k as u32);
        for code in 0..total {
            let mut c = code;
            let labels: Vec<TagLabel> = (0..k)
                .map(|_| {
                    let l = TagLabel::from_index(c % 7).unwrap();
                    c /= 7;
                    l
                })
                .collect();
            let t = TagSequence(labels);
            if let Ok(span) = decode_tags(&t) {
                if span.is_none_or(|s| s.dir_i == s.dir_j) {
                    out.push(t);
                }
            }
        }
        out
    }

    fn random_scores(rng: &mut ChaCha8Rng, k: usize) -> (Mat, CrfScores) {
        let mut r = |rows, cols| Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-2.0..2.0));
        let e = r(k, 7);
        (
            e,
            CrfScores {
                transitions: r(7, 7),
                start: r(1, 7),
                end: r(1, 7),
            },
        )
    }

    #[test]
    fn grammar_paths_match_codec() {
        let mask = TransitionMask::grammar();
        for k in 1..=4 {
            let valid = grammar_sequences(k);
            let n_paths = (0..7usize.pow(k as u32))
                .filter(|&code| {
                    let mut c = code;
                    let t = TagSequence(
                        (0..k)
                            .map(|_| {
                                let l = TagLabel::from_index(c % 7).unwrap();
                                c /= 7;
                                l
                            })
                            .collect(),
                    );
                    mask.path(&t).is_ok()
                })
                .count();
            assert_eq!(n_paths, valid.len(), "K={k}");
            // one all-O sequence plus runs of every (i, j) in two directions
            assert_eq!(valid.len(), 1 + k * (k + 1));
        }
    }

    #[test]
    fn lone_begin_before_outside_is_allowed() {
        let mask = TransitionMask::grammar();
        let t: TagSequence = "O B-CORRECT O".parse().unwrap();
        assert!(mask.path(&t).is_ok());
        let two_runs: TagSequence = "B-CORRECT O B-OPPOSITE".parse().unwrap();
        assert!(mask.path(&two_runs).is_err());
        let mixed: TagSequence = "B-CORRECT E-OPPOSITE".parse().unwrap();
        assert!(mask.path(&mixed).is_err());
    }

    #[test]
    fn partition_matches_enumeration() {
        let mask = TransitionMask::grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..=5 {
            let seqs = grammar_sequences(k);
            for _ in 0..5 {
                let (e, s) = random_scores(&mut rng, k);
                let brute = logsumexp(seqs.iter().map(|t| s.path_score(&e, &mask.path(t).unwrap())));
                let m = forward_backward(&e, &s, &mask);
                assert!((m.log_z - brute).abs() < 1e-9, "K={k}: {} vs {brute}", m.log_z);
            }
        }
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mask = TransitionMask::grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for round in 0..200 {
            let k = 1 + round % 5;
            let (e, s) = random_scores(&mut rng, k);
            let seqs = grammar_sequences(k);
            let score = |t: &TagSequence| s.path_score(&e, &mask.path(t).unwrap());
            let best = seqs.iter().max_by(|a, b| score(a).total_cmp(&score(b))).unwrap();
            let got = viterbi_constrained(&e, &s, &mask);
            assert_eq!(&got, best);
            let run = seqs
                .iter()
                .filter(|t| !t.is_all_outside())
                .max_by(|a, b| score(a).total_cmp(&score(b)))
                .unwrap();
            assert_eq!(&viterbi(&e, &s, &mask, true).0, run);
        }
    }

    #[test]
    fn single_valid_sequence_has_zero_loss() {
        let mask = TransitionMask::grammar();
        let gold: TagSequence = "B-CORRECT".parse().unwrap();
        // K=1 allows O, B-CORRECT and B-OPPOSITE; starting scores shut the others out.
        let mut s = CrfScores::zeros();
        s.start.fill(-1e9);
        s.start[[0, TagLabel::BCorrect.index()]] = 0.0;
        let e = Mat::zeros((1, 7));
        let r = crf_nll(&e, &gold, &s, &mask).unwrap();
        assert!(r.loss.abs() < 1e-9);
    }

    #[test]
    fn invalid_gold_is_rejected() {
        let mask = TransitionMask::grammar();
        let gold: TagSequence = "E-CORRECT B-CORRECT".parse().unwrap();
        assert!(crf_nll(&Mat::zeros((2, 7)), &gold, &CrfScores::zeros(), &mask).is_err());
    }

    #[test]
    fn dominant_emissions_win_and_invalid_orders_are_repaired() {
        let mask = TransitionMask::grammar();
        let s = CrfScores::zeros();
        let mut e = Mat::zeros((2, 7));
        e[[0, TagLabel::BCorrect.index()]] = 50.0;
        e[[1, TagLabel::ECorrect.index()]] = 50.0;
        assert_eq!(viterbi_constrained(&e, &s, &mask).to_string(), "B-CORRECT E-CORRECT");
        let mut bad = Mat::zeros((2, 7));
        bad[[0, TagLabel::ECorrect.index()]] = 50.0;
        bad[[1, TagLabel::BCorrect.index()]] = 50.0;
        assert!(viterbi_constrained(&bad, &s, &mask).is_valid());
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mask = TransitionMask::grammar();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (e, s) = random_scores(&mut rng, 3);
        let gold: TagSequence = "O B-OPPOSITE E-OPPOSITE".parse().unwrap();
        let r = crf_nll(&e, &gold, &s, &mask).unwrap();
        let h = 1e-5;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "{analytic} vs {numeric}");
        };
        for idx in 0..e.len() {
            let (row, col) = (idx / 7, idx % 7);
            let mut ep = e.clone();
            ep[[row, col]] += h;
            let mut em = e.clone();
            em[[row, col]] -= h;
            let lp = crf_nll(&ep, &gold, &s, &mask).unwrap().loss;
            let lm = crf_nll(&em, &gold, &s, &mask).unwrap().loss;
            check(r.d_emissions[[row, col]], lp, lm);
        }
        for a in 0..7 {
            for b in 0..7 {
                let mut sp = s.clone();
                sp.transitions[[a, b]] += h;
                let mut sm = s.clone();
                sm.transitions[[a, b]] -= h;
                let lp = crf_nll(&e, &gold, &sp, &mask).unwrap().loss;
                let lm = crf_nll(&e, &gold, &sm, &mask).unwrap().loss;
                check(r.d_transitions[[a, b]], lp, lm);
            }
        }
        let allowed = mask.label_allowed();
        for a in 0..7 {
            for b in 0..7 {
                if !allowed[a][b] {
                    assert_eq!(r.d_transitions[[a, b]], 0.0);
                }
            }
        }
    }

    #[test]
    fn masked_entries_stay_at_negative_infinity() {
        let mask = TransitionMask::grammar();
        let eff = CrfScores::zeros().effective_transitions(&mask);
        let e = TagLabel::ECorrect.index();
        let b = TagLabel::BOpposite.index();
        assert_eq!(eff[[e, b]], f64::NEG_INFINITY);
        assert_eq!(eff[[O, TagLabel::IOpposite.index()]], f64::NEG_INFINITY);
        assert_eq!(eff[[O, b]], 0.0);
    }
}
