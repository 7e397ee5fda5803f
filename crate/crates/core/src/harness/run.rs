use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::predict;
use crate::data::{
    batch_iter, load_jsonl, make_synthetic, sequential_batches, split_train_test, validate_examples, AnswerVocab,
    Example, ImageRef, SplitKind,
};
use crate::error::{Error, Result};
use crate::feature_file;
use crate::metrics::{evaluate as score, MetricsReport, PredictionRecord};
use crate::model::{VisualFeed, VisualInput, VqaModel};
use crate::optim::{adamw_step, lr_at, AdamWState};
use crate::tensor::{RngStream, Tape, Tensor};
use crate::text::Vocabulary;
use crate::vision::{GlobalFeatures, ImageTensor, LocalFeatures, VisualDims, EXTRACTOR_PREFIX};

use super::config::RunConfig;

/// Examples plus the directory relative image references resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub base_dir: PathBuf,
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Corpus {
            examples: load_jsonl(path)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn synthetic(n: usize, n_global: usize, n_local: usize, seed: u64) -> Result<Self> {
        Ok(Corpus {
            examples: make_synthetic(n, n_global, n_local, seed)?,
            base_dir: PathBuf::new(),
        })
    }

    /// The data file named by the config, else its synthetic corpus.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match (&cfg.data, &cfg.synthetic) {
            (Some(p), _) => Self::load(p),
            (None, Some(s)) => Self::synthetic(s.n, s.n_global, s.n_local, s.seed),
            (None, None) => Err(Error::config("no data file and no synthetic corpus configured")),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Seeded train/test split.
    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        let (a, b) = split_train_test(&self.examples, ratio, seed)?;
        let wrap = |examples| Corpus {
            examples,
            base_dir: self.base_dir.clone(),
        };
        Ok((wrap(a), wrap(b)))
    }
}

/// Reads or renders the visual input of one example.
pub fn load_visual(example: &Example, base_dir: &Path, dims: &VisualDims) -> Result<VisualInput> {
    let with_id = |e: Error| match e {
        Error::Shape(m) => Error::data(format!("example {:?}: {m}", example.id)),
        other => other,
    };
    match ImageRef::parse(&example.image, base_dir)? {
        ImageRef::Synthetic(spec) => Ok(VisualInput::Image(spec.render(dims.image_size, dims.patch_grid)?)),
        ImageRef::Raw(path) => {
            let t = feature_file::read(&path)?;
            Ok(VisualInput::Image(ImageTensor::new(t, dims.image_size).map_err(with_id)?))
        }
        ImageRef::Features(base) => {
            let (g, l) = ImageRef::feature_paths(&base);
            Ok(VisualInput::Features {
                global: GlobalFeatures::new(feature_file::read(&g)?, dims).map_err(with_id)?,
                local: LocalFeatures::new(feature_file::read(&l)?, dims).map_err(with_id)?,
            })
        }
    }
}

/// Visual inputs of a corpus, precomputed into encoder rows when the
/// extractors are frozen.
pub(crate) enum Visuals {
    Live(Vec<VisualInput>),
    Cached(Vec<Tensor>),
}

impl Visuals {
    pub(crate) fn prepare(model: &VqaModel, corpus: &Corpus) -> Result<Self> {
        let inputs = corpus
            .examples
            .iter()
            .map(|e| load_visual(e, &corpus.base_dir, &model.config.visual))
            .collect::<Result<Vec<_>>>()?;
        if model.visual_is_constant() {
            Ok(Visuals::Cached(
                inputs
                    .iter()
                    .map(|v| model.visual_constant(v))
                    .collect::<Result<_>>()?,
            ))
        } else {
            Ok(Visuals::Live(inputs))
        }
    }

    pub(crate) fn feed(&self, i: usize) -> VisualFeed<'_> {
        match self {
            Visuals::Live(v) => VisualFeed::Live(&v[i]),
            Visuals::Cached(t) => VisualFeed::Cached(&t[i]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: VqaModel,
    pub optimizer: AdamWState,
    /// Mean cross-entropy over the training set, per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// Backward-pass node visits summed over the run.
    pub node_visits: u64,
    /// Extractor parameter bytes before and after training.
    pub extractor_bytes: (Vec<u8>, Vec<u8>),
    pub seconds: f64,
}

impl Trained {
    pub fn param_counts(&self) -> ParamCounts {
        let s = &self.model.store;
        ParamCounts {
            total: s.total_count(),
            trainable: s.trainable_count(),
            frozen: s.frozen_count(),
        }
    }
}

/// Builds the vocabularies from `train_set` and trains a fresh model on it.
pub fn train(cfg: &RunConfig, train_set: &Corpus) -> Result<Trained> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    if train_set.examples.is_empty() {
        return Err(Error::data("empty training set"));
    }
    validate_examples(&train_set.examples)?;
    let questions: Vec<&str> = train_set.examples.iter().map(|e| e.question.as_str()).collect();
    let vocab = Vocabulary::build(&questions, cfg.min_token_count)?;
    let answers = AnswerVocab::from_examples(&train_set.examples)?;
    let mut model = VqaModel::new(model_cfg, vocab, answers, cfg.seed)?;

    let started = Instant::now();
    let visuals = Visuals::prepare(&model, train_set)?;
    let before = model.store.bytes_with_prefix(EXTRACTOR_PREFIX);
    let n = train_set.examples.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let schedule = cfg.schedule(batches_per_epoch * cfg.epochs as u64)?;
    let adamw = cfg.optimizer();
    let mut optimizer = AdamWState::new(&model.store);
    let mut rng = RngStream::new(cfg.seed).split("drop_path");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut node_visits = 0u64;
    let mut step = 0u64;
    let max_len = model.config.max_question_len;

    for epoch in 0..cfg.epochs {
        let batches = batch_iter(
            &train_set.examples,
            cfg.batch_size,
            max_len,
            &model.vocab,
            &model.answers,
            cfg.seed,
            epoch,
            SplitKind::Train,
        )?;
        let mut total = 0.0;
        for b in &batches {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(b.indices.len());
            for (j, &i) in b.indices.iter().enumerate() {
                let logits = model.forward(&mut tape, visuals.feed(i), &b.questions[j], true, &mut rng)?;
                let target = b.targets[j].expect("training targets are in the vocabulary");
                losses.push(tape.cross_entropy(logits, target)?);
            }
            let sum = tape.add_all(&losses)?;
            let loss = tape.scale(sum, 1.0 / losses.len() as f64)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Usage(format!("non-finite loss at epoch {epoch}, step {step}")));
            }
            total += value * losses.len() as f64;
            let grads = tape.backward(loss)?;
            node_visits += grads.node_visits() as u64;
            let lr = lr_at(step, &schedule)?;
            adamw_step(&mut model.store, &grads, &mut optimizer, lr, &adamw)?;
            step += 1;
        }
        epoch_losses.push(total / n as f64);
    }
    let after = model.store.bytes_with_prefix(EXTRACTOR_PREFIX);
    Ok(Trained {
        model,
        optimizer,
        epoch_losses,
        steps: step,
        node_visits,
        extractor_bytes: (before, after),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Eval-mode predictions for every example, in corpus order.
pub fn predict_corpus(model: &VqaModel, corpus: &Corpus) -> Result<Vec<PredictionRecord>> {
    if corpus.examples.is_empty() {
        return Err(Error::argument("evaluating an empty corpus"));
    }
    let visuals = Visuals::prepare(model, corpus)?;
    let batches = sequential_batches(
        &corpus.examples,
        64,
        model.config.max_question_len,
        &model.vocab,
        &model.answers,
        SplitKind::Eval,
    )?;
    let mut rng = RngStream::new(0);
    let mut out = Vec::with_capacity(corpus.examples.len());
    for b in &batches {
        for (j, &i) in b.indices.iter().enumerate() {
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, visuals.feed(i), &b.questions[j], false, &mut rng)?;
            let d = predict(tape.value(logits), &model.answers)?;
            let e = &corpus.examples[i];
            out.push(PredictionRecord::new(e.id.clone(), d.answer, e.answer.clone()));
        }
    }
    Ok(out)
}

/// Predictions and their metrics.
pub fn evaluate(model: &VqaModel, corpus: &Corpus, cfg: &RunConfig) -> Result<(MetricsReport, Vec<PredictionRecord>)> {
    let records = predict_corpus(model, corpus)?;
    Ok((score(&records, cfg.token_overlap)?, records))
}

/// Everything a training run reports. Wall-clock time is kept out of the
/// serialized form so that reports are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub answers: usize,
    pub vocabulary: usize,
    pub steps: u64,
    pub epoch_losses: Vec<f64>,
    pub train: MetricsReport,
    pub test: Option<MetricsReport>,
    pub params: ParamCounts,
    pub optimizer_tensors: usize,
    pub backward_node_visits: u64,
    pub extractors_unchanged: bool,
    #[serde(skip)]
    pub training_seconds: f64,
}

impl RunReport {
    /// Test accuracy, or train accuracy when there is no test split.
    pub fn headline_accuracy(&self) -> f64 {
        self.test.as_ref().unwrap_or(&self.train).accuracy
    }
}

/// A finished run: report, model state and predictions.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub trained: Trained,
    pub train_predictions: Vec<PredictionRecord>,
    pub test_predictions: Vec<PredictionRecord>,
}

/// Split, train, evaluate.
pub fn run(cfg: &RunConfig, corpus: &Corpus) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train_set, test_set) = corpus.split(cfg.train_ratio, cfg.split_seed)?;
    run_on(cfg, &train_set, &test_set)
}

/// Train on one corpus, evaluate on both.
pub fn run_on(cfg: &RunConfig, train_set: &Corpus, test_set: &Corpus) -> Result<RunOutcome> {
    let trained = train(cfg, train_set)?;
    let (train_metrics, train_predictions) = evaluate(&trained.model, train_set, cfg)?;
    let (test, test_predictions) = if test_set.examples.is_empty() {
        (None, Vec::new())
    } else {
        let (m, p) = evaluate(&trained.model, test_set, cfg)?;
        (Some(m), p)
    };
    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        train_size: train_set.examples.len(),
        test_size: test_set.examples.len(),
        answers: trained.model.answers.len(),
        vocabulary: trained.model.vocab.len(),
        steps: trained.steps,
        epoch_losses: trained.epoch_losses.clone(),
        train: train_metrics,
        test,
        params: trained.param_counts(),
        optimizer_tensors: trained.optimizer.moments.len(),
        backward_node_visits: trained.node_visits,
        extractors_unchanged: trained.extractor_bytes.0 == trained.extractor_bytes.1,
        training_seconds: trained.seconds,
    };
    Ok(RunOutcome {
        report,
        trained,
        train_predictions,
        test_predictions,
    })
}
