//! Word-level question vocabulary, tokenization, and the trainable text
//! encoder with its projection to the fusion width.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::io_err;
use crate::layers::Linear;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{RngStream, Tape, Var};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

/// Token ↔ id map. Ids 0–3 are reserved; ordinary tokens start at 4, ordered
/// by descending corpus frequency, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::argument("vocabulary from an empty corpus"));
        }
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for q in corpus {
            for w in q.as_ref().split_whitespace() {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !RESERVED.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(Self::from_tokens(ranked.into_iter().map(|(w, _)| w.to_string()).collect()))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + RESERVED.len()))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        RESERVED.len() + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        if id < RESERVED.len() {
            Some(RESERVED[id])
        } else {
            self.tokens.get(id - RESERVED.len()).map(String::as_str)
        }
    }

    /// Ordinary tokens in id order; line `i` holds id `i + 4`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let mut seen = std::collections::HashSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.split_whitespace().count() != 1 || t.trim() != t {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("invalid token {t:?}"),
                });
            }
            if !seen.insert(t) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate token {t:?}"),
                });
            }
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }
}

/// `[CLS] w₁ … w_L [SEP]` padded to `max_len + 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedQuestion {
    pub ids: Vec<usize>,
    /// Content tokens kept after truncation.
    pub length: usize,
    pub mask: Vec<bool>,
}

impl TokenizedQuestion {
    pub fn padded_len(&self) -> usize {
        self.ids.len()
    }

    pub fn real_len(&self) -> usize {
        self.length + 2
    }
}

pub fn tokenize(question: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenizedQuestion> {
    if max_len == 0 {
        return Err(Error::argument("maximum question length must be at least 1"));
    }
    let words: Vec<usize> = question
        .split_whitespace()
        .take(max_len)
        .map(|w| vocab.id(w))
        .collect();
    let length = words.len();
    let mut ids = Vec::with_capacity(max_len + 2);
    ids.push(CLS);
    ids.extend(words);
    ids.push(SEP);
    ids.resize(max_len + 2, PAD);
    let mask = (0..max_len + 2).map(|i| i < length + 2).collect();
    Ok(TokenizedQuestion { ids, length, mask })
}

/// Content tokens joined by single spaces.
pub fn detokenize(tq: &TokenizedQuestion, vocab: &Vocabulary) -> String {
    tq.ids[1..=tq.length]
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(RESERVED[UNK]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token and learned position tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderParams {
    pub embedding: ParamId,
    pub positions: ParamId,
    pub vocab_size: usize,
    pub max_len: usize,
    pub width: usize,
}

pub const TEXT_PREFIX: &str = "text.";

impl TextEncoderParams {
    pub fn register(store: &mut ParamStore, rng: &RngStream, vocab_size: usize, max_len: usize, width: usize) -> Self {
        TextEncoderParams {
            embedding: store.add_normal(rng, "text.embedding", &[vocab_size, width], 0.02),
            positions: store.add_normal(rng, "text.position", &[max_len + 2, width], 0.02),
            vocab_size,
            max_len,
            width,
        }
    }

    /// `(max_len + 2) × width` token-plus-position embeddings. Padding rows
    /// are produced too and left to the attention mask.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, tq: &TokenizedQuestion) -> Result<Var> {
        if tq.ids.len() != self.max_len + 2 {
            return Err(Error::shape(format!(
                "question padded to {} positions, encoder expects {}",
                tq.ids.len(),
                self.max_len + 2
            )));
        }
        let table = tape.param(store, self.embedding);
        let tokens = tape.embedding(table, &tq.ids)?;
        let pos = tape.param(store, self.positions);
        tape.add(tokens, pos)
    }
}

/// Single affine layer from the text width to the fusion width.
pub type ProjectionParams = Linear;

pub fn register_projection(store: &mut ParamStore, rng: &RngStream, width: usize, hidden: usize) -> ProjectionParams {
    Linear::register(store, rng, "text.projection", width, hidden)
}

pub fn project(tape: &mut Tape, store: &ParamStore, p: &ProjectionParams, q: Var) -> Result<Var> {
    p.forward(tape, store, q)
}
