//! Multiway Transformer encoder: shared multi-head self-attention with
//! separate feed-forward experts for vision rows and text rows, followed by
//! the classification pooler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{RngStream, Tape, Var};

/// Which row of the encoded sequence feeds the pooler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsRow {
    /// Row 0, the first visual token.
    #[default]
    First,
    /// Row `k`, the text `[CLS]` token.
    TextCls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub expert_ffn_width: usize,
    pub drop_path_rate: f64,
    pub use_position_embeddings: bool,
    pub use_modality_type_embeddings: bool,
    pub cls_row: ClsRow,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            layers: 6,
            heads: 6,
            hidden: 768,
            expert_ffn_width: 3072,
            drop_path_rate: 0.3,
            use_position_embeddings: true,
            use_modality_type_embeddings: true,
            cls_row: ClsRow::First,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.expert_ffn_width == 0 {
            return Err(Error::config("hidden and expert widths must be positive"));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "{} attention heads do not divide hidden width {}",
                self.heads, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::config(format!(
                "drop path rate {} outside [0, 1)",
                self.drop_path_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Drop-path rate of block `i`: linear from 0 at the first block to the
    /// configured rate at the last.
    pub fn block_drop_rate(&self, i: usize) -> f64 {
        if self.layers <= 1 {
            0.0
        } else {
            self.drop_path_rate * i as f64 / (self.layers - 1) as f64
        }
    }
}

/// Vision rows `[0, boundary)` followed by text rows, with a key mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSequence {
    pub x: Var,
    pub boundary: usize,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Expert {
    fn register(store: &mut ParamStore, rng: &RngStream, name: &str, hidden: usize, width: usize) -> Self {
        Expert {
            norm: LayerNorm::register(store, &format!("{name}.norm"), hidden),
            fc1: Linear::register(store, rng, &format!("{name}.fc1"), hidden, width),
            fc2: Linear::register(store, rng, &format!("{name}.fc2"), width, hidden),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, store, x)?;
        let h = self.fc1.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, store, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiwayBlockParams {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    /// Key projection weight, `h × h`. A key bias would shift every score
    /// of a query equally and cancel in the softmax, so there is none.
    pub key: ParamId,
    pub value: Linear,
    pub output: Linear,
    pub vision: Expert,
    pub language: Expert,
}

impl MultiwayBlockParams {
    pub fn register(store: &mut ParamStore, rng: &RngStream, name: &str, cfg: &FusionConfig) -> Self {
        let h = cfg.hidden;
        MultiwayBlockParams {
            attn_norm: LayerNorm::register(store, &format!("{name}.attn.norm"), h),
            query: Linear::register(store, rng, &format!("{name}.attn.query"), h, h),
            key: store.add_normal(rng, &format!("{name}.attn.key.weight"), &[h, h], 1.0 / (h as f64).sqrt()),
            value: Linear::register(store, rng, &format!("{name}.attn.value"), h, h),
            output: Linear::register(store, rng, &format!("{name}.attn.output"), h, h),
            vision: Expert::register(store, rng, &format!("{name}.vision_expert"), h, cfg.expert_ffn_width),
            language: Expert::register(store, rng, &format!("{name}.language_expert"), h, cfg.expert_ffn_width),
        }
    }
}

/// Intermediates of one block, exposed for inspection.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    /// Per-head `n × n` attention weights.
    pub attention_weights: Vec<Var>,
    /// Value projection of the normalized input.
    pub values: Var,
    /// Heads concatenated, before the output projection.
    pub context: Var,
    /// Attention sublayer output before the residual.
    pub attention: Var,
    /// Expert sublayer output before the residual.
    pub experts: Var,
    pub output: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooler {
    pub norm: LayerNorm,
    pub dense: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiwayParams {
    pub positions: Option<ParamId>,
    pub types: Option<ParamId>,
    pub max_len: usize,
    pub blocks: Vec<MultiwayBlockParams>,
    pub pooler: Pooler,
}

impl MultiwayParams {
    /// Registers the encoder for sequences of at most `max_len` rows.
    pub fn register(store: &mut ParamStore, rng: &RngStream, cfg: &FusionConfig, max_len: usize) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let positions = cfg
            .use_position_embeddings
            .then(|| store.add_normal(rng, "fusion.position", &[max_len, h], 0.02));
        let types = cfg
            .use_modality_type_embeddings
            .then(|| store.add_normal(rng, "fusion.modality_type", &[2, h], 0.02));
        let blocks = (0..cfg.layers)
            .map(|i| MultiwayBlockParams::register(store, rng, &format!("fusion.block{i}"), cfg))
            .collect();
        let pooler = Pooler {
            norm: LayerNorm::register(store, "fusion.pooler.norm", h),
            dense: Linear::register(store, rng, "fusion.pooler.dense", h, h),
        };
        Ok(MultiwayParams {
            positions,
            types,
            max_len,
            blocks,
            pooler,
        })
    }
}

/// Stacks vision rows over text rows and adds the optional position and
/// modality-type embeddings.
pub fn concat_modalities(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MultiwayParams,
    v: Var,
    q: Var,
    q_mask: &[bool],
) -> Result<FusedSequence> {
    let (vs, qs) = (tape.shape(v).to_vec(), tape.shape(q).to_vec());
    if vs.len() != 2 || qs.len() != 2 || vs[1] != qs[1] {
        return Err(Error::shape(format!("cannot stack vision {vs:?} over text {qs:?}")));
    }
    if q_mask.len() != qs[0] {
        return Err(Error::shape(format!(
            "text mask of length {} for {} rows",
            q_mask.len(),
            qs[0]
        )));
    }
    let (k, n) = (vs[0], vs[0] + qs[0]);
    let mut x = tape.concat(&[v, q], 0)?;
    if let Some(id) = p.positions {
        if n > p.max_len {
            return Err(Error::shape(format!(
                "sequence of {n} rows exceeds the {} learned positions",
                p.max_len
            )));
        }
        let table = tape.param(store, id);
        let pos = tape.slice(table, 0, 0, n)?;
        x = tape.add(x, pos)?;
    }
    if let Some(id) = p.types {
        let table = tape.param(store, id);
        let ids: Vec<usize> = (0..n).map(|i| usize::from(i >= k)).collect();
        let types = tape.embedding(table, &ids)?;
        x = tape.add(x, types)?;
    }
    let mut mask = vec![true; k];
    mask.extend_from_slice(q_mask);
    Ok(FusedSequence { x, boundary: k, mask })
}

/// Multi-head self-attention; masked keys get zero weight.
fn self_attention(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MultiwayBlockParams,
    h: Var,
    mask: &[bool],
    heads: usize,
) -> Result<(Vec<Var>, Var, Var, Var)> {
    let hidden = tape.shape(h)[1];
    let d = hidden / heads;
    let q = p.query.forward(tape, store, h)?;
    let wk = tape.param(store, p.key);
    let k = tape.matmul(h, wk)?;
    let v = p.value.forward(tape, store, h)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = Vec::with_capacity(heads);
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let qh = tape.slice(q, 1, i * d, (i + 1) * d)?;
        let kh = tape.slice(k, 1, i * d, (i + 1) * d)?;
        let vh = tape.slice(v, 1, i * d, (i + 1) * d)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let a = tape.masked_softmax(scores, mask)?;
        outs.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let context = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let out = p.output.forward(tape, store, context)?;
    Ok((weights, v, context, out))
}

/// One pre-norm Multiway block.
pub fn multiway_block(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MultiwayBlockParams,
    f: &FusedSequence,
    heads: usize,
    drop_rate: f64,
    training: bool,
    rng: &mut RngStream,
) -> Result<(FusedSequence, BlockTrace)> {
    let n = tape.shape(f.x)[0];
    if f.boundary == 0 || f.boundary >= n {
        return Err(Error::argument(format!(
            "modality boundary {} outside (0, {n})",
            f.boundary
        )));
    }
    if f.mask.len() != n {
        return Err(Error::shape(format!("mask of length {} for {n} rows", f.mask.len())));
    }
    let h = p.attn_norm.forward(tape, store, f.x)?;
    let (attention_weights, values, context, attention) = self_attention(tape, store, p, h, &f.mask, heads)?;
    let branch = tape.drop_path(attention, drop_rate, training, rng)?;
    let x = tape.add(f.x, branch)?;

    let xv = tape.slice(x, 0, 0, f.boundary)?;
    let xl = tape.slice(x, 0, f.boundary, n)?;
    let ev = p.vision.forward(tape, store, xv)?;
    let el = p.language.forward(tape, store, xl)?;
    let experts = tape.concat(&[ev, el], 0)?;
    let branch = tape.drop_path(experts, drop_rate, training, rng)?;
    let output = tape.add(x, branch)?;
    Ok((
        FusedSequence {
            x: output,
            boundary: f.boundary,
            mask: f.mask.clone(),
        },
        BlockTrace {
            attention_weights,
            values,
            context,
            attention,
            experts,
            output,
        },
    ))
}

/// Runs every block in order with the per-depth drop-path ramp.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MultiwayParams,
    f: FusedSequence,
    cfg: &FusionConfig,
    training: bool,
    rng: &mut RngStream,
) -> Result<FusedSequence> {
    if p.blocks.len() != cfg.layers {
        return Err(Error::config(format!(
            "{} blocks registered for {} layers",
            p.blocks.len(),
            cfg.layers
        )));
    }
    let mut f = f;
    for (i, b) in p.blocks.iter().enumerate() {
        f = multiway_block(tape, store, b, &f, cfg.heads, cfg.block_drop_rate(i), training, rng)?.0;
    }
    Ok(f)
}

/// `tanh(dense(norm(row)))` of the classification row, `1 × hidden`.
pub fn pool_cls(tape: &mut Tape, store: &ParamStore, pooler: &Pooler, f: &FusedSequence, row: ClsRow) -> Result<Var> {
    let n = tape.shape(f.x)[0];
    if n == 0 {
        return Err(Error::argument("pooling an empty sequence"));
    }
    let r = match row {
        ClsRow::First => 0,
        ClsRow::TextCls => f.boundary,
    };
    let x = tape.slice(f.x, 0, r, r + 1)?;
    let x = pooler.norm.forward(tape, store, x)?;
    let x = pooler.dense.forward(tape, store, x)?;
    tape.tanh(x)
}
