//! The full question-answering model: visual branch, text branch, Multiway
//! encoder and classification head, with shared parameter storage.

use serde::{Deserialize, Serialize};

use crate::classifier::{classify_traced, ClassifierParams};
use crate::data::AnswerVocab;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::multiway::{concat_modalities, multiway_block, pool_cls, FusionConfig, MultiwayParams};
use crate::params::ParamStore;
use crate::tensor::{RngStream, Tape, Tensor, Var};
use crate::text::{register_projection, TextEncoderParams, TokenizedQuestion, Vocabulary};
use crate::vision::{
    adapt_local_on_tape, fuse_on_tape, FusionOp, GlobalFeatures, ImageTensor, LocalFeatures, StubExtractorParams,
    VisualDims, EXTRACTOR_PREFIX,
};

/// Which visual representation feeds the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualSource {
    /// Global and adapted local features combined by the fusion operator.
    #[default]
    Combined,
    /// Global features only.
    GlobalOnly,
    /// Adapted local features only.
    LocalOnly,
}

impl VisualSource {
    pub fn label(self) -> &'static str {
        match self {
            VisualSource::Combined => "combined (BLIP-2-stub + EfficientNet-stub)",
            VisualSource::GlobalOnly => "BLIP-2-stub only",
            VisualSource::LocalOnly => "EfficientNet-stub only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub visual: VisualDims,
    pub text_width: usize,
    pub max_question_len: usize,
    pub fusion: FusionConfig,
    pub fusion_op: FusionOp,
    pub source: VisualSource,
    pub train_extractors: bool,
    pub extractor_seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.visual.validate()?;
        self.fusion.validate()?;
        if self.visual.hidden != self.fusion.hidden {
            return Err(Error::config(format!(
                "visual width {} differs from fusion width {}",
                self.visual.hidden, self.fusion.hidden
            )));
        }
        if self.text_width == 0 || self.max_question_len == 0 {
            return Err(Error::config("text width and question length must be positive"));
        }
        Ok(())
    }

    /// Visual rows `k` of the fused sequence.
    pub fn visual_tokens(&self) -> usize {
        match self.source {
            VisualSource::Combined => self.fusion_op.output_tokens(self.visual.tokens),
            _ => self.visual.tokens,
        }
    }

    pub fn sequence_len(&self) -> usize {
        self.visual_tokens() + self.max_question_len + 2
    }
}

/// Visual input of one example.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualInput {
    Image(ImageTensor),
    Features { global: GlobalFeatures, local: LocalFeatures },
}

/// Visual rows for a forward pass: recomputed on the tape, or a cached
/// constant when nothing upstream is trainable.
#[derive(Debug, Clone, Copy)]
pub enum VisualFeed<'a> {
    Live(&'a VisualInput),
    Cached(&'a Tensor),
}

/// Shapes of every stage of one forward pass, in order.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

#[derive(Debug, Clone)]
pub struct VqaModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub extractors: StubExtractorParams,
    pub text: TextEncoderParams,
    pub projection: Linear,
    pub fusion: MultiwayParams,
    pub classifier: ClassifierParams,
    pub vocab: Vocabulary,
    pub answers: AnswerVocab,
}

impl VqaModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, answers: AnswerVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if answers.is_empty() {
            return Err(Error::config("empty answer vocabulary"));
        }
        let mut store = ParamStore::new();
        let extractors = StubExtractorParams::register(&mut store, config.extractor_seed, &config.visual)?;
        if config.train_extractors {
            store.set_trainable_prefix(EXTRACTOR_PREFIX, true);
        }
        let rng = RngStream::new(seed).split("init");
        let text = TextEncoderParams::register(
            &mut store,
            &rng,
            vocab.len(),
            config.max_question_len,
            config.text_width,
        );
        let projection = register_projection(&mut store, &rng, config.text_width, config.fusion.hidden);
        let fusion = MultiwayParams::register(&mut store, &rng, &config.fusion, config.sequence_len())?;
        let classifier = ClassifierParams::register(&mut store, &rng, config.fusion.hidden, answers.len());
        Ok(VqaModel {
            config,
            store,
            extractors,
            text,
            projection,
            fusion,
            classifier,
            vocab,
            answers,
        })
    }

    /// True when visual rows can be computed once and reused.
    pub fn visual_is_constant(&self) -> bool {
        !self.config.train_extractors
    }

    fn visual_rows(&self, tape: &mut Tape, input: &VisualInput, trace: &mut Option<&mut ShapeTrace>) -> Result<Var> {
        let dims = &self.config.visual;
        let source = self.config.source;
        let need_global = source != VisualSource::LocalOnly;
        let need_local = source != VisualSource::GlobalOnly;
        let (g, l) = match input {
            VisualInput::Image(img) => {
                let x = tape.constant(img.tensor().clone());
                record(trace, "image", tape.shape(x));
                let g = if need_global {
                    Some(self.extractors.global_on_tape(tape, &self.store, x, dims)?)
                } else {
                    None
                };
                let l = if need_local {
                    Some(self.extractors.local_on_tape(tape, &self.store, x, dims)?)
                } else {
                    None
                };
                (g, l)
            }
            VisualInput::Features { global, local } => (
                need_global.then(|| tape.constant(global.tensor().clone())),
                need_local.then(|| tape.constant(local.tensor().clone())),
            ),
        };
        if let Some(g) = g {
            record(trace, "global features", tape.shape(g));
        }
        let adapted = match l {
            Some(l) => {
                record(trace, "local features", tape.shape(l));
                let a = adapt_local_on_tape(tape, l, dims.tokens, dims.hidden)?;
                record(trace, "adapter spatial pool", tape.shape(a.pooled_spatial));
                record(trace, "adapter permute", tape.shape(a.permuted));
                record(trace, "adapter channel pool", tape.shape(a.pooled_channels));
                record(trace, "adapted local features", tape.shape(a.output));
                Some(a.output)
            }
            None => None,
        };
        let v = match (g, adapted) {
            (Some(g), Some(l)) => fuse_on_tape(tape, g, l, self.config.fusion_op)?,
            (Some(g), None) => g,
            (None, Some(l)) => l,
            (None, None) => unreachable!("at least one extractor is always used"),
        };
        record(trace, "visual rows", tape.shape(v));
        Ok(v)
    }

    /// Visual rows computed off-tape.
    pub fn visual_constant(&self, input: &VisualInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.visual_rows(&mut tape, input, &mut None)?;
        Ok(tape.value(v).clone())
    }

    /// Logits `1 × C` for one example.
    pub fn forward(
        &self,
        tape: &mut Tape,
        visual: VisualFeed<'_>,
        question: &TokenizedQuestion,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<Var> {
        self.run(tape, visual, question, training, rng, None)
    }

    /// Like [`forward`](Self::forward), also returning the shape of every stage.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        visual: VisualFeed<'_>,
        question: &TokenizedQuestion,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<(Var, ShapeTrace)> {
        let mut trace = Vec::new();
        let logits = self.run(tape, visual, question, training, rng, Some(&mut trace))?;
        Ok((logits, trace))
    }

    fn run(
        &self,
        tape: &mut Tape,
        visual: VisualFeed<'_>,
        question: &TokenizedQuestion,
        training: bool,
        rng: &mut RngStream,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Var> {
        let v = match visual {
            VisualFeed::Live(input) => self.visual_rows(tape, input, &mut trace)?,
            VisualFeed::Cached(t) => {
                let k = self.config.visual_tokens();
                if t.shape() != [k, self.config.fusion.hidden] {
                    return Err(Error::shape(format!(
                        "cached visual rows {:?}, expected [{k}, {}]",
                        t.shape(),
                        self.config.fusion.hidden
                    )));
                }
                tape.constant(t.clone())
            }
        };
        let q = self.text.encode(tape, &self.store, question)?;
        record(&mut trace, "text embedding", tape.shape(q));
        let q = self.projection.forward(tape, &self.store, q)?;
        record(&mut trace, "projected text", tape.shape(q));
        let mut seq = concat_modalities(tape, &self.store, &self.fusion, v, q, &question.mask)?;
        record(&mut trace, "fused sequence", tape.shape(seq.x));
        let cfg = &self.config.fusion;
        for (i, block) in self.fusion.blocks.iter().enumerate() {
            seq = multiway_block(tape, &self.store, block, &seq, cfg.heads, cfg.block_drop_rate(i), training, rng)?.0;
            record(&mut trace, &format!("block {i}"), tape.shape(seq.x));
        }
        let pooled = pool_cls(tape, &self.store, &self.fusion.pooler, &seq, cfg.cls_row)?;
        record(&mut trace, "pooled", tape.shape(pooled));
        let (logits, hidden) = classify_traced(tape, &self.store, &self.classifier, pooled)?;
        record(&mut trace, "classifier hidden", tape.shape(hidden));
        record(&mut trace, "logits", tape.shape(logits));
        Ok(logits)
    }
}

fn record(trace: &mut Option<&mut ShapeTrace>, name: &str, shape: &[usize]) {
    if let Some(t) = trace {
        t.push((name.to_string(), shape.to_vec()));
    }
}
