use std::collections::{BTreeMap, HashMap, HashSet};

use super::DatasetSplit;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Lower-cases, splits on whitespace, and emits punctuation as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Token <-> id map. Ids are dense: the reserved tokens come first
/// (`[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`, then sentence markers `[M1]..`),
/// followed by corpus tokens in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMap {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_markers: usize,
}

impl VocabMap {
    pub fn reserved_tokens(max_markers: usize) -> Vec<String> {
        let mut out: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        out.extend((1..=max_markers).map(|k| format!("[M{k}]")));
        out
    }

    /// Rebuilds a vocabulary from its full token list (as stored in a
    /// checkpoint). The reserved prefix must match `max_markers`.
    pub fn from_tokens(tokens: Vec<String>, max_markers: usize) -> Result<VocabMap, String> {
        let reserved = Self::reserved_tokens(max_markers);
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err("vocabulary does not start with the reserved tokens".into());
        }
        if let Some(t) = tokens[reserved.len()..].iter().find(|t| t.len() > 2 && t.starts_with('[') && t.ends_with(']')) {
            return Err(format!("reserved-looking token {t:?} outside the reserved block"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(format!("duplicate vocabulary token {tok:?}"));
            }
        }
        Ok(VocabMap {
            tokens,
            index,
            max_markers,
        })
    }

    pub fn from_corpus_tokens<I: IntoIterator<Item = String>>(corpus: I, max_markers: usize) -> VocabMap {
        let mut tokens = Self::reserved_tokens(max_markers);
        let reserved: HashSet<String> = tokens.iter().cloned().collect();
        let mut rest: Vec<String> = corpus.into_iter().filter(|t| !reserved.contains(t)).collect();
        rest.sort();
        rest.dedup();
        tokens.extend(rest);
        Self::from_tokens(tokens, max_markers).expect("reserved prefix is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_markers(&self) -> usize {
        self.max_markers
    }

    pub fn reserved_count(&self) -> usize {
        4 + self.max_markers
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn cls_id(&self) -> u32 {
        2
    }

    pub fn sep_id(&self) -> u32 {
        3
    }

    /// Marker id for sentence `k` (1-based), if within the marker budget.
    pub fn marker_id(&self, k: usize) -> Option<u32> {
        (k >= 1 && k <= self.max_markers).then(|| 3 + k as u32)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Builds a vocabulary over passage steps (counted once per passage) and
/// question texts. Tokens seen fewer than `min_count` times map to `[UNK]`.
pub fn build_vocab(splits: &[&DatasetSplit], min_count: usize, max_markers: usize) -> VocabMap {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen_passages = HashSet::new();
    let mut add = |text: &str| {
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
    };
    for split in splits {
        for ex in &split.examples {
            if seen_passages.insert(ex.passage.id.clone()) {
                ex.passage.steps.iter().for_each(|s| add(s));
            }
            add(&ex.question.q_p);
            add(&ex.question.q_e);
        }
    }
    let kept = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).map(|(t, _)| t);
    VocabMap::from_corpus_tokens(kept, max_markers)
}
