//! Corpora, answer vocabulary, splits and folds, batching, corpus statistics
//! and the synthetic complementary-cue generator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, io_err};
use crate::metrics::canonicalize;
use crate::tensor::{RngStream, Tensor};
use crate::text::{tokenize, TokenizedQuestion, Vocabulary};
use crate::vision::{ImageTensor, IMAGE_CHANNELS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    #[serde(deserialize_with = "jsonl::id_string")]
    pub id: String,
    /// See [`ImageRef::parse`].
    pub image: String,
    pub question: String,
    pub answer: String,
}

/// Where an example's visual input comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef {
    /// `<base>.global.vvqf` and `<base>.local.vvqf` feature files.
    Features(PathBuf),
    /// A `3 × S × S` image stored as a VVQF tensor, written `raw:<path>`.
    Raw(PathBuf),
    /// `synthetic:<g>/<G>:<l>/<L>:<seed>`.
    Synthetic(SyntheticSpec),
}

impl ImageRef {
    /// Relative paths resolve against `base_dir`.
    pub fn parse(s: &str, base_dir: &Path) -> Result<Self> {
        if let Some(spec) = s.strip_prefix("synthetic:") {
            return SyntheticSpec::parse(spec).map(ImageRef::Synthetic);
        }
        if let Some(p) = s.strip_prefix("raw:") {
            return Ok(ImageRef::Raw(base_dir.join(p)));
        }
        if s.is_empty() {
            return Err(Error::data("empty image reference"));
        }
        Ok(ImageRef::Features(base_dir.join(s)))
    }

    pub fn feature_paths(base: &Path) -> (PathBuf, PathBuf) {
        let name = base.as_os_str().to_string_lossy();
        (
            PathBuf::from(format!("{name}.global.vvqf")),
            PathBuf::from(format!("{name}.local.vvqf")),
        )
    }
}

/// Loads a JSON Lines corpus. Ids must be unique and answers nonempty.
pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let examples: Vec<Example> = jsonl::read(path)?;
    validate_examples(&examples)?;
    Ok(examples)
}

pub fn validate_examples(examples: &[Example]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for e in examples {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::data(format!("duplicate example id {:?}", e.id)));
        }
        if e.answer.trim().is_empty() {
            return Err(Error::data(format!("example {:?} has an empty answer", e.id)));
        }
    }
    Ok(())
}

pub fn save_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    jsonl::write(path, examples)
}

/// Canonical answer string → class index, most frequent first, ties lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for AnswerVocab {
    fn from(answers: Vec<String>) -> Self {
        let index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        AnswerVocab { answers, index }
    }
}

impl From<AnswerVocab> for Vec<String> {
    fn from(v: AnswerVocab) -> Self {
        v.answers
    }
}

impl AnswerVocab {
    pub fn build<S: AsRef<str>>(answers: &[S]) -> Result<Self> {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for a in answers {
            let c = canonicalize(a.as_ref());
            if c.is_empty() {
                return Err(Error::data("empty answer"));
            }
            *freq.entry(c).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked.into_iter().map(|(a, _)| a).collect::<Vec<_>>().into())
    }

    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        let answers: Vec<&str> = examples.iter().map(|e| e.answer.as_str()).collect();
        Self::build(&answers)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn index(&self, answer: &str) -> Option<usize> {
        self.index.get(&canonicalize(answer)).copied()
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.answers.get(index).map(String::as_str)
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn to_text(&self) -> String {
        self.answers.iter().map(|a| format!("{a}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let answers: Vec<String> = text.lines().map(str::to_string).collect();
        let mut seen = BTreeSet::new();
        for (i, a) in answers.iter().enumerate() {
            if canonicalize(a) != *a || a.is_empty() || !seen.insert(a) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("invalid or duplicate answer {a:?}"),
                });
            }
        }
        Ok(answers.into())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }
}

/// `⌈ratio · n⌉`, ignoring floating-point noise in the product.
fn ceil_fraction(ratio: f64, n: usize) -> usize {
    let t = ratio * n as f64;
    let r = t.round();
    if (t - r).abs() <= 1e-9 * (n as f64).max(1.0) {
        r as usize
    } else {
        t.ceil() as usize
    }
}

/// Seeded shuffle of `0..n`.
pub fn shuffled_indices(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}

/// Index form of [`split_train_test`].
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::argument(format!("split ratio {ratio} outside [0, 1]")));
    }
    let idx = shuffled_indices(n, &mut RngStream::new(seed).split("split"));
    let cut = ceil_fraction(ratio, n).min(n);
    Ok((idx[..cut].to_vec(), idx[cut..].to_vec()))
}

/// Seeded shuffle, then the first `⌈ratio · N⌉` examples train.
pub fn split_train_test(examples: &[Example], ratio: f64, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
    if examples.is_empty() {
        return Err(Error::argument("splitting an empty corpus"));
    }
    let (a, b) = split_indices(examples.len(), ratio, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| examples[i].clone()).collect();
    Ok((pick(&a), pick(&b)))
}

/// Fold of every example after a seeded shuffle; fold sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// `(train, held_out)` indices for fold `f`, each ascending.
    pub fn fold(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (i, &a) in self.assignment.iter().enumerate() {
            if a == f {
                held.push(i);
            } else {
                train.push(i);
            }
        }
        (train, held)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::argument(format!("{k} folds over {n} examples")));
    }
    let order = shuffled_indices(n, &mut RngStream::new(seed).split("kfold"));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { k, assignment })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub longest_question: usize,
    pub longest_answer: usize,
    pub question_tokens: usize,
    pub answer_tokens: usize,
}

/// `num / den` rounded half-up to two decimals, computed exactly.
pub fn format_ratio_2dp(num: usize, den: usize) -> String {
    let hundredths = (200 * num as u128 + den as u128) / (2 * den as u128);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

impl CorpusStats {
    pub fn average_question(&self) -> String {
        format_ratio_2dp(self.question_tokens, self.count)
    }

    pub fn average_answer(&self) -> String {
        format_ratio_2dp(self.answer_tokens, self.count)
    }
}

pub fn corpus_stats(examples: &[Example]) -> Result<CorpusStats> {
    if examples.is_empty() {
        return Err(Error::argument("statistics of an empty corpus"));
    }
    let mut s = CorpusStats {
        count: examples.len(),
        longest_question: 0,
        longest_answer: 0,
        question_tokens: 0,
        answer_tokens: 0,
    };
    for e in examples {
        let q = e.question.split_whitespace().count();
        let a = e.answer.split_whitespace().count();
        s.longest_question = s.longest_question.max(q);
        s.longest_answer = s.longest_answer.max(a);
        s.question_tokens += q;
        s.answer_tokens += a;
    }
    Ok(s)
}

/// One synthetic image: a uniform grey level (the global cue) with one
/// coloured grid cell whose column encodes the local cue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub global: usize,
    pub n_global: usize,
    pub local: usize,
    pub n_local: usize,
    pub seed: u64,
}

const TONES: [&str; 8] = ["black", "dark", "dim", "grey", "silver", "pale", "light", "white"];
const SPOTS: [&str; 7] = ["far-left", "left", "mid-left", "centre", "mid-right", "right", "far-right"];
const QUESTIONS: [&str; 4] = [
    "what shade is the picture and where is the patch",
    "describe the tone and the patch position",
    "how bright is the image and where is the coloured square",
    "which tone and which spot",
];
/// Offset added to the grey level inside the marked cell; sums to zero so the
/// cell does not change overall brightness.
const PATCH_CHROMA: [f64; 3] = [0.2, -0.1, -0.1];
const PIXEL_NOISE: f64 = 0.03;

fn cue_word(words: &[&str], i: usize, n: usize, prefix: &str) -> String {
    if n <= words.len() {
        // spread the available words over the classes
        let j = if n == 1 { 0 } else { i * (words.len() - 1) / (n - 1) };
        words[j].to_string()
    } else {
        format!("{prefix}{i}")
    }
}

impl SyntheticSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::data(format!("bad synthetic spec {s:?}, expected <g>/<G>:<l>/<L>:<seed>"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let pair = |p: &str| -> Result<(usize, usize)> {
            let (a, b) = p.split_once('/').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        let (global, n_global) = pair(parts[0])?;
        let (local, n_local) = pair(parts[1])?;
        let seed = parts[2].parse().map_err(|_| bad())?;
        let spec = SyntheticSpec {
            global,
            n_global,
            local,
            n_local,
            seed,
        };
        if global >= n_global || local >= n_local {
            return Err(bad());
        }
        Ok(spec)
    }

    pub fn reference(&self) -> String {
        format!(
            "synthetic:{}/{}:{}/{}:{}",
            self.global, self.n_global, self.local, self.n_local, self.seed
        )
    }

    pub fn answer(&self) -> String {
        format!(
            "{} {}",
            cue_word(&TONES, self.global, self.n_global, "tone"),
            cue_word(&SPOTS, self.local, self.n_local, "spot")
        )
    }

    pub fn grey_level(&self) -> f64 {
        0.3 + 0.4 * self.global as f64 / (self.n_global - 1).max(1) as f64
    }

    /// Grid column of the marked cell.
    pub fn column(&self, grid: usize) -> usize {
        if self.n_local <= 1 {
            0
        } else {
            self.local * (grid - 1) / (self.n_local - 1)
        }
    }

    /// Renders the `3 × size × size` image; the marked cell spans `size / grid` pixels.
    pub fn render(&self, size: usize, grid: usize) -> Result<ImageTensor> {
        if grid == 0 || size % grid != 0 {
            return Err(Error::argument(format!("image size {size} is not a multiple of grid {grid}")));
        }
        if self.n_local > grid {
            return Err(Error::argument(format!(
                "{} local cues need distinct columns in a {grid}-wide grid",
                self.n_local
            )));
        }
        let mut rng = RngStream::new(self.seed).split("pixels");
        let cell = size / grid;
        let row = rng.below(grid);
        let col = self.column(grid);
        let level = self.grey_level();
        let mut data = vec![0.0; IMAGE_CHANNELS * size * size];
        for c in 0..IMAGE_CHANNELS {
            for y in 0..size {
                for x in 0..size {
                    let mut v = level;
                    if y / cell == row && x / cell == col {
                        v += PATCH_CHROMA[c];
                    }
                    v += rng.uniform_range(-PIXEL_NOISE, PIXEL_NOISE);
                    data[(c * size + y) * size + x] = v.clamp(0.0, 1.0);
                }
            }
        }
        ImageTensor::new(Tensor::new(&[IMAGE_CHANNELS, size, size], data)?, size)
    }
}

/// `n` examples over the `n_global × n_local` joint classes, balanced and
/// shuffled. The answer names both cues, so either cue alone leaves the other
/// one uniformly uncertain.
pub fn make_synthetic(n: usize, n_global: usize, n_local: usize, seed: u64) -> Result<Vec<Example>> {
    if n == 0 || n_global < 2 || n_local < 2 {
        return Err(Error::argument(format!(
            "synthetic corpus needs n ≥ 1 and at least 2 cues per kind, got n={n}, {n_global}×{n_local}"
        )));
    }
    if n_local > SPOTS.len() {
        return Err(Error::argument(format!(
            "at most {} local cues fit the grid, got {n_local}",
            SPOTS.len()
        )));
    }
    let root = RngStream::new(seed);
    let mut classes: Vec<usize> = (0..n).map(|i| i % (n_global * n_local)).collect();
    root.split("classes").shuffle(&mut classes);
    let mut qrng = root.split("questions");
    let mut seeds = root.split("images");
    Ok(classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let spec = SyntheticSpec {
                global: c / n_local,
                n_global,
                local: c % n_local,
                n_local,
                seed: seeds.next_u64(),
            };
            Example {
                id: format!("syn{i:05}"),
                image: spec.reference(),
                question: QUESTIONS[qrng.below(QUESTIONS.len())].to_string(),
                answer: spec.answer(),
            }
        })
        .collect())
}

/// One padded mini-batch. `targets[i]` is `None` for an answer outside the
/// training vocabulary (only possible for evaluation splits).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub questions: Vec<TokenizedQuestion>,
    pub targets: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Eval,
}

/// Mini-batches in a per-epoch seeded order; the last batch may be short.
#[allow(clippy::too_many_arguments)]
pub fn batch_iter(
    examples: &[Example],
    batch_size: usize,
    max_len: usize,
    vocab: &Vocabulary,
    answers: &AnswerVocab,
    seed: u64,
    epoch: usize,
    kind: SplitKind,
) -> Result<Vec<Batch>> {
    let order = shuffled_indices(examples.len(), &mut RngStream::new(seed).split(&format!("epoch{epoch}")));
    batches_in_order(examples, &order, batch_size, max_len, vocab, answers, kind)
}

/// Mini-batches in corpus order.
pub fn sequential_batches(
    examples: &[Example],
    batch_size: usize,
    max_len: usize,
    vocab: &Vocabulary,
    answers: &AnswerVocab,
    kind: SplitKind,
) -> Result<Vec<Batch>> {
    let order: Vec<usize> = (0..examples.len()).collect();
    batches_in_order(examples, &order, batch_size, max_len, vocab, answers, kind)
}

fn batches_in_order(
    examples: &[Example],
    order: &[usize],
    batch_size: usize,
    max_len: usize,
    vocab: &Vocabulary,
    answers: &AnswerVocab,
    kind: SplitKind,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::argument("batch size must be at least 1"));
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let mut b = Batch {
                indices: chunk.to_vec(),
                questions: Vec::with_capacity(chunk.len()),
                targets: Vec::with_capacity(chunk.len()),
            };
            for &i in chunk {
                let e = &examples[i];
                let target = answers.index(&e.answer);
                if target.is_none() && kind == SplitKind::Train {
                    return Err(Error::data(format!(
                        "training answer {:?} of example {:?} is not in the answer vocabulary",
                        e.answer, e.id
                    )));
                }
                b.questions.push(tokenize(&e.question, vocab, max_len)?);
                b.targets.push(target);
            }
            Ok(b)
        })
        .collect()
}
