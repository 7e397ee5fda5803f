//! Frozen visual feature extraction, the local-feature adapter and the
//! global/local fusion operator.
//!
//! The two extractors are seeded linear stand-ins for pretrained networks and
//! honor their output contracts only: `tokens × hidden` global features and
//! `channels × grid × grid` local features. Real features can replace them
//! through [`crate::feature_file`].
//!
//! * The global extractor sees the image through a coarse patch grid
//!   (`global_grid`, 1×1 by default, i.e. the whole-image mean colour) and maps
//!   the flattened patch means to every token.
//! * The local extractor mean-pools exact `image/grid` blocks and applies a
//!   per-cell channel map. Each output channel weighs the colour channels with
//!   weights that sum to zero, so the response depends on chroma and not on
//!   overall brightness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{RngStream, Tape, Tensor, Var};

pub const IMAGE_CHANNELS: usize = 3;

/// Spatial and feature sizes of the visual branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualDims {
    pub image_size: usize,
    /// Local feature grid; image blocks are `image_size / patch_grid` pixels wide.
    pub patch_grid: usize,
    /// Patch grid seen by the global extractor.
    pub global_grid: usize,
    /// Rows of the global features and of the adapted local features.
    pub tokens: usize,
    pub local_channels: usize,
    pub hidden: usize,
}

impl VisualDims {
    pub fn paper() -> Self {
        VisualDims {
            image_size: 224,
            patch_grid: 7,
            global_grid: 1,
            tokens: 32,
            local_channels: 2560,
            hidden: 768,
        }
    }

    pub fn tiny() -> Self {
        VisualDims {
            image_size: 28,
            patch_grid: 7,
            global_grid: 1,
            tokens: 8,
            local_channels: 16,
            hidden: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.image_size,
            self.patch_grid,
            self.global_grid,
            self.tokens,
            self.local_channels,
            self.hidden,
        ];
        if sizes.contains(&0) {
            return Err(Error::config("visual dimensions must be positive"));
        }
        if self.image_size % self.patch_grid != 0 || self.image_size % self.global_grid != 0 {
            return Err(Error::config(format!(
                "image size {} is not divisible by the patch grids {} and {}",
                self.image_size, self.patch_grid, self.global_grid
            )));
        }
        Ok(())
    }

    pub fn local_shape(&self) -> [usize; 3] {
        [self.local_channels, self.patch_grid, self.patch_grid]
    }

    pub fn global_shape(&self) -> [usize; 2] {
        [self.tokens, self.hidden]
    }
}

/// A `3 × size × size` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor, size: usize) -> Result<Self> {
        if t.shape() != [IMAGE_CHANNELS, size, size] {
            return Err(Error::shape(format!(
                "image must be [3, {size}, {size}], got {:?}",
                t.shape()
            )));
        }
        if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::data("image values must lie in [0, 1]"));
        }
        Ok(ImageTensor(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// `tokens × hidden` whole-image features.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatures(Tensor);

/// `channels × grid × grid` region features.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatures(Tensor);

impl GlobalFeatures {
    pub fn new(t: Tensor, dims: &VisualDims) -> Result<Self> {
        if t.shape() != dims.global_shape() {
            return Err(Error::shape(format!(
                "global features must be {:?}, got {:?}",
                dims.global_shape(),
                t.shape()
            )));
        }
        Ok(GlobalFeatures(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

impl LocalFeatures {
    pub fn new(t: Tensor, dims: &VisualDims) -> Result<Self> {
        if t.shape() != dims.local_shape() {
            return Err(Error::shape(format!(
                "local features must be {:?}, got {:?}",
                dims.local_shape(),
                t.shape()
            )));
        }
        Ok(LocalFeatures(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// How global and adapted local features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionOp {
    Multiply,
    Add,
    Concatenate,
}

impl FusionOp {
    pub const ALL: [FusionOp; 3] = [FusionOp::Multiply, FusionOp::Add, FusionOp::Concatenate];

    /// Rows of the fused features given `tokens` rows per operand.
    pub fn output_tokens(self, tokens: usize) -> usize {
        match self {
            FusionOp::Multiply | FusionOp::Add => tokens,
            FusionOp::Concatenate => 2 * tokens,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FusionOp::Multiply => "Element-wise Multiplication",
            FusionOp::Add => "Element-wise Addition",
            FusionOp::Concatenate => "Concatenation",
        }
    }
}

/// Parameter handles of the two seeded stub extractors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubExtractorParams {
    pub seed: u64,
    pub global_weight: ParamId,
    pub global_bias: ParamId,
    pub local_weight: ParamId,
    pub local_bias: ParamId,
}

/// Name prefix of every extractor parameter.
pub const EXTRACTOR_PREFIX: &str = "extractor.";

impl StubExtractorParams {
    /// Registers both extractors in `store`, frozen.
    pub fn register(store: &mut ParamStore, seed: u64, dims: &VisualDims) -> Result<Self> {
        dims.validate()?;
        let rng = RngStream::new(seed).split("extractor");
        let g_in = IMAGE_CHANNELS * dims.global_grid * dims.global_grid;
        let g_out = dims.tokens * dims.hidden;
        let global_weight = store.add_normal(&rng, "extractor.global.weight", &[g_in, g_out], 1.0);
        let global_bias = store.add_normal(&rng, "extractor.global.bias", &[g_out], 0.02);

        // Opponent-colour channel map: every column sums to zero.
        let mut r = rng.split("extractor.local.weight");
        let c = dims.local_channels;
        let mut w = vec![0.0; IMAGE_CHANNELS * c];
        for ch in 0..c {
            let a = r.normal();
            let b = r.normal();
            w[ch] = a;
            w[c + ch] = b;
            w[2 * c + ch] = -(a + b);
        }
        let local_weight = store.add(
            "extractor.local.weight",
            Tensor::new(&[IMAGE_CHANNELS, c], w)?,
            false,
        );
        let local_bias = store.add_normal(&rng, "extractor.local.bias", &[c], 0.02);
        store.set_trainable_prefix(EXTRACTOR_PREFIX, false);
        Ok(StubExtractorParams {
            seed,
            global_weight,
            global_bias,
            local_weight,
            local_bias,
        })
    }

    /// Global features on the tape; differentiable when the extractor is trainable.
    pub fn global_on_tape(&self, tape: &mut Tape, store: &ParamStore, img: Var, dims: &VisualDims) -> Result<Var> {
        check_image_var(tape, img, dims)?;
        let g = dims.global_grid;
        let means = tape.adaptive_avg_pool(img, &[g, g])?;
        let flat = tape.reshape(means, &[1, IMAGE_CHANNELS * g * g])?;
        let w = tape.param(store, self.global_weight);
        let b = tape.param(store, self.global_bias);
        let y = tape.linear(flat, w, b)?;
        tape.reshape(y, &[dims.tokens, dims.hidden])
    }

    /// Local features on the tape; differentiable when the extractor is trainable.
    pub fn local_on_tape(&self, tape: &mut Tape, store: &ParamStore, img: Var, dims: &VisualDims) -> Result<Var> {
        check_image_var(tape, img, dims)?;
        let g = dims.patch_grid;
        let means = tape.adaptive_avg_pool(img, &[g, g])?;
        let cells = tape.reshape(means, &[IMAGE_CHANNELS, g * g])?;
        let cells = tape.transpose(cells)?;
        let w = tape.param(store, self.local_weight);
        let b = tape.param(store, self.local_bias);
        let y = tape.linear(cells, w, b)?;
        let y = tape.transpose(y)?;
        tape.reshape(y, &[dims.local_channels, g, g])
    }
}

fn check_image_var(tape: &Tape, img: Var, dims: &VisualDims) -> Result<()> {
    let s = dims.image_size;
    if tape.shape(img) != [IMAGE_CHANNELS, s, s] {
        return Err(Error::shape(format!(
            "image must be [3, {s}, {s}], got {:?}",
            tape.shape(img)
        )));
    }
    Ok(())
}

/// Detached global features of `img`.
pub fn extract_global_stub(
    img: &ImageTensor,
    p: &StubExtractorParams,
    store: &ParamStore,
    dims: &VisualDims,
) -> Result<GlobalFeatures> {
    let mut tape = Tape::new();
    let x = tape.constant(img.tensor().clone());
    let y = p.global_on_tape(&mut tape, store, x, dims)?;
    GlobalFeatures::new(tape.value(y).clone(), dims)
}

/// Detached local features of `img`.
pub fn extract_local_stub(
    img: &ImageTensor,
    p: &StubExtractorParams,
    store: &ParamStore,
    dims: &VisualDims,
) -> Result<LocalFeatures> {
    let mut tape = Tape::new();
    let x = tape.constant(img.tensor().clone());
    let y = p.local_on_tape(&mut tape, store, x, dims)?;
    LocalFeatures::new(tape.value(y).clone(), dims)
}

/// Every intermediate of the local adapter chain.
#[derive(Debug, Clone, Copy)]
pub struct AdapterTrace {
    /// `channels × 1 × tokens`
    pub pooled_spatial: Var,
    /// `tokens × 1 × channels`
    pub permuted: Var,
    /// `tokens × 1 × hidden`
    pub pooled_channels: Var,
    /// `tokens × hidden`
    pub output: Var,
}

/// Pool the spatial grid to `1 × tokens`, swap channels and tokens, pool the
/// channels to `hidden`, then flatten to `tokens × hidden`.
pub fn adapt_local_on_tape(tape: &mut Tape, v: Var, tokens: usize, hidden: usize) -> Result<AdapterTrace> {
    if tape.shape(v).len() != 3 {
        return Err(Error::shape(format!(
            "local features must be channels × grid × grid, got {:?}",
            tape.shape(v)
        )));
    }
    let pooled_spatial = tape.adaptive_avg_pool(v, &[1, tokens])?;
    let permuted = tape.permute(pooled_spatial, &[2, 1, 0])?;
    let pooled_channels = tape.adaptive_avg_pool(permuted, &[1, hidden])?;
    let output = tape.flatten(pooled_channels, 0)?;
    Ok(AdapterTrace {
        pooled_spatial,
        permuted,
        pooled_channels,
        output,
    })
}

/// Detached adapter output for a local feature map of the given dims.
pub fn adapt_local(v: &LocalFeatures, dims: &VisualDims) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(v.tensor().clone());
    let trace = adapt_local_on_tape(&mut tape, x, dims.tokens, dims.hidden)?;
    Ok(tape.value(trace.output).clone())
}

/// Combines global and adapted local features. Concatenation puts the global rows first.
pub fn fuse_on_tape(tape: &mut Tape, global: Var, local: Var, op: FusionOp) -> Result<Var> {
    let (gs, ls) = (tape.shape(global), tape.shape(local));
    if gs != ls || gs.len() != 2 {
        return Err(Error::shape(format!("fuse of {gs:?} and {ls:?}")));
    }
    match op {
        FusionOp::Multiply => tape.mul(global, local),
        FusionOp::Add => tape.add(global, local),
        FusionOp::Concatenate => tape.concat(&[global, local], 0),
    }
}

pub fn fuse(global: &Tensor, local: &Tensor, op: FusionOp) -> Result<Tensor> {
    let mut tape = Tape::new();
    let g = tape.constant(global.clone());
    let l = tape.constant(local.clone());
    let y = fuse_on_tape(&mut tape, g, l, op)?;
    Ok(tape.value(y).clone())
}

/// Five-number summary plus mean of a tensor's elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SparsityStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Exact order statistics over `values`.
///
/// Quartiles follow the median-exclusive midpoint rule: the median is the
/// middle element (or the mean of the two middle ones), and q1/q3 are the
/// medians of the halves below and above it, leaving out the middle element
/// when the count is odd.
pub fn sparsity_stats_of(values: &[f64]) -> Result<SparsityStats> {
    if values.is_empty() {
        return Err(Error::argument("sparsity statistics of an empty tensor"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = median_sorted(&v);
    let (q1, q3) = if n == 1 {
        (v[0], v[0])
    } else {
        let half = n / 2;
        (median_sorted(&v[..half]), median_sorted(&v[n - half..]))
    };
    Ok(SparsityStats {
        mean: v.iter().sum::<f64>() / n as f64,
        min: v[0],
        q1,
        median,
        q3,
        max: v[n - 1],
    })
}

pub fn sparsity_stats(t: &Tensor) -> Result<SparsityStats> {
    sparsity_stats_of(t.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(dims: VisualDims) -> (ParamStore, StubExtractorParams) {
        let mut store = ParamStore::new();
        let p = StubExtractorParams::register(&mut store, 11, &dims).unwrap();
        (store, p)
    }

    fn random_image(seed: u64, size: usize) -> ImageTensor {
        let mut rng = RngStream::new(seed);
        let n = 3 * size * size;
        let t = Tensor::new(&[3, size, size], (0..n).map(|_| rng.uniform()).collect()).unwrap();
        ImageTensor::new(t, size).unwrap()
    }

    #[test]
    fn image_shape_is_enforced() {
        assert!(ImageTensor::new(Tensor::zeros(&[3, 224, 224]), 224).is_ok());
        assert!(matches!(
            ImageTensor::new(Tensor::zeros(&[3, 224, 223]), 224),
            Err(Error::Shape(_))
        ));
        assert!(ImageTensor::new(Tensor::full(&[3, 28, 28], 1.5), 28).is_err());
    }

    #[test]
    fn global_stub_contract() {
        let dims = VisualDims::tiny();
        let (store, p) = setup(dims);
        let img = random_image(1, 28);
        let a = extract_global_stub(&img, &p, &store, &dims).unwrap();
        let b = extract_global_stub(&img, &p, &store, &dims).unwrap();
        assert!(a.tensor().bitwise_eq(b.tensor()));
        assert_eq!(a.tensor().shape(), &[8, 24]);

        let zero = ImageTensor::new(Tensor::zeros(&[3, 28, 28]), 28).unwrap();
        let z = extract_global_stub(&zero, &p, &store, &dims).unwrap();
        assert_eq!(z.tensor().data(), store.value(p.global_bias).data());

        let other = random_image(2, 28);
        let c = extract_global_stub(&other, &p, &store, &dims).unwrap();
        assert!(!a.tensor().bitwise_eq(c.tensor()));
    }

    #[test]
    fn global_stub_paper_shape() {
        let dims = VisualDims::paper();
        let (store, p) = setup(dims);
        let img = random_image(3, 224);
        let g = extract_global_stub(&img, &p, &store, &dims).unwrap();
        assert_eq!(g.tensor().shape(), &[32, 768]);
        let l = extract_local_stub(&img, &p, &store, &dims).unwrap();
        assert_eq!(l.tensor().shape(), &[2560, 7, 7]);
    }

    #[test]
    fn wrong_image_shape_is_a_shape_error() {
        let dims = VisualDims::tiny();
        let (store, p) = setup(dims);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 27, 27]));
        assert!(matches!(
            p.global_on_tape(&mut tape, &store, x, &dims),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            p.local_on_tape(&mut tape, &store, x, &dims),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn local_stub_on_constant_image_applies_channel_map() {
        let dims = VisualDims::tiny();
        let (store, p) = setup(dims);
        let c = 0.4;
        let img = ImageTensor::new(Tensor::full(&[3, 28, 28], c), 28).unwrap();
        let l = extract_local_stub(&img, &p, &store, &dims).unwrap();
        let w = store.value(p.local_weight);
        let b = store.value(p.local_bias);
        for ch in 0..dims.local_channels {
            let expected = (0..3).map(|k| w.at(&[k, ch]) * c).sum::<f64>() + b.data()[ch];
            for i in 0..7 {
                for j in 0..7 {
                    assert!((l.tensor().at(&[ch, i, j]) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn local_stub_is_blind_to_brightness() {
        let dims = VisualDims::tiny();
        let (store, p) = setup(dims);
        let dark = ImageTensor::new(Tensor::full(&[3, 28, 28], 0.2), 28).unwrap();
        let light = ImageTensor::new(Tensor::full(&[3, 28, 28], 0.7), 28).unwrap();
        let a = extract_local_stub(&dark, &p, &store, &dims).unwrap();
        let b = extract_local_stub(&light, &p, &store, &dims).unwrap();
        assert!(a.tensor().max_abs_diff(b.tensor()) < 1e-12);
    }

    #[test]
    fn one_block_change_touches_one_cell() {
        let dims = VisualDims::tiny();
        let (store, p) = setup(dims);
        let base = random_image(5, 28);
        let mut changed = base.tensor().clone();
        let (bi, bj) = (2, 5);
        for ch in 0..3 {
            for y in bi * 4..bi * 4 + 4 {
                for x in bj * 4..bj * 4 + 4 {
                    let off = changed.offset(&[ch, y, x]);
                    changed.data_mut()[off] = if ch == 0 { 0.9 } else { 0.1 };
                }
            }
        }
        let changed = ImageTensor::new(changed, 28).unwrap();
        let a = extract_local_stub(&base, &p, &store, &dims).unwrap();
        let b = extract_local_stub(&changed, &p, &store, &dims).unwrap();
        for ch in 0..dims.local_channels {
            for i in 0..7 {
                for j in 0..7 {
                    let d = (a.tensor().at(&[ch, i, j]) - b.tensor().at(&[ch, i, j])).abs();
                    if (i, j) == (bi, bj) {
                        continue;
                    }
                    assert_eq!(d, 0.0, "cell ({i},{j}) changed");
                }
            }
        }
        assert!(a.tensor().max_abs_diff(b.tensor()) > 1e-6);
    }

    #[test]
    fn adapter_paper_shapes() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::full(&[2560, 7, 7], 0.3));
        let tr = adapt_local_on_tape(&mut tape, v, 32, 768).unwrap();
        assert_eq!(tape.shape(tr.pooled_spatial), &[2560, 1, 32]);
        assert_eq!(tape.shape(tr.permuted), &[32, 1, 2560]);
        assert_eq!(tape.shape(tr.pooled_channels), &[32, 1, 768]);
        assert_eq!(tape.shape(tr.output), &[32, 768]);
        assert!(tape.value(tr.output).data().iter().all(|&x| (x - 0.3).abs() < 1e-15));

        let bad = tape.constant(Tensor::zeros(&[2560, 49]));
        assert!(matches!(adapt_local_on_tape(&mut tape, bad, 32, 768), Err(Error::Shape(_))));
    }

    /// Straight-line oracle for the adapter: explicit index arithmetic, no tape.
    fn adapter_oracle(x: &Tensor, tokens: usize, hidden: usize) -> Vec<f64> {
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let bin = |i: usize, n: usize, m: usize| {
            let s = (i * n) / m;
            let e = ((i + 1) * n + m - 1) / m;
            (s, e)
        };
        // step 1: pool h→1 and w→tokens, indexed [ch][t]
        let mut step1 = vec![vec![0.0; tokens]; c];
        for (ch, row) in step1.iter_mut().enumerate() {
            for (t, out) in row.iter_mut().enumerate() {
                let (cs, ce) = bin(t, w, tokens);
                let mut acc = 0.0;
                for y in 0..h {
                    for xx in cs..ce {
                        acc += x.at(&[ch, y, xx]);
                    }
                }
                *out = acc / (h * (ce - cs)) as f64;
            }
        }
        // steps 2–4: permute to [t][ch], pool channels to hidden, flatten row-major
        let mut out = Vec::with_capacity(tokens * hidden);
        for t in 0..tokens {
            for k in 0..hidden {
                let (s, e) = bin(k, c, hidden);
                let acc: f64 = (s..e).map(|ch| step1[ch][t]).sum();
                out.push(acc / (e - s) as f64);
            }
        }
        out
    }

    #[test]
    fn adapter_matches_straight_line_oracle() {
        for (seed, (c, tokens, hidden)) in [(16, 8, 24), (50, 32, 20), (7, 3, 7)].into_iter().enumerate() {
            let mut rng = RngStream::new(seed as u64);
            let x = Tensor::new(&[c, 7, 7], (0..c * 49).map(|_| rng.normal()).collect()).unwrap();
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let tr = adapt_local_on_tape(&mut tape, v, tokens, hidden).unwrap();
            let expected = adapter_oracle(&x, tokens, hidden);
            for (a, b) in tape.value(tr.output).data().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adapter_is_linear() {
        let dims = VisualDims::tiny();
        let mut rng = RngStream::new(99);
        let n = 16 * 49;
        let x = Tensor::new(&[16, 7, 7], (0..n).map(|_| rng.normal()).collect()).unwrap();
        let y = Tensor::new(&[16, 7, 7], (0..n).map(|_| rng.normal()).collect()).unwrap();
        let (alpha, beta) = (0.7, -2.3);
        let combo = Tensor::new(
            &[16, 7, 7],
            x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect(),
        )
        .unwrap();
        let f = |t: &Tensor| adapt_local(&LocalFeatures::new(t.clone(), &dims).unwrap(), &dims).unwrap();
        let (fx, fy, fc) = (f(&x), f(&y), f(&combo));
        for i in 0..fc.len() {
            let lin = alpha * fx.data()[i] + beta * fy.data()[i];
            assert!((fc.data()[i] - lin).abs() < 1e-9);
        }
    }

    #[test]
    fn fuse_examples() {
        let mut rng = RngStream::new(4);
        let g = Tensor::new(&[32, 768], (0..32 * 768).map(|_| rng.normal()).collect()).unwrap();
        let l = Tensor::new(&[32, 768], (0..32 * 768).map(|_| rng.normal()).collect()).unwrap();
        let c = fuse(&g, &l, FusionOp::Concatenate).unwrap();
        assert_eq!(c.shape(), &[64, 768]);
        assert_eq!(c.row(0), g.row(0));
        assert_eq!(c.row(32), l.row(0));
        assert_eq!(fuse(&g, &l, FusionOp::Add).unwrap().shape(), &[32, 768]);
        assert_eq!(fuse(&g, &l, FusionOp::Multiply).unwrap().shape(), &[32, 768]);

        let zero = Tensor::zeros(&[32, 768]);
        assert!(fuse(&g, &zero, FusionOp::Multiply).unwrap().data().iter().all(|&v| v == 0.0));
        let neg = g.map(|v| -v);
        assert!(fuse(&g, &neg, FusionOp::Add).unwrap().data().iter().all(|&v| v == 0.0));

        assert!(matches!(
            fuse(&g, &Tensor::zeros(&[31, 768]), FusionOp::Add),
            Err(Error::Shape(_))
        ));
        for op in FusionOp::ALL {
            assert_eq!(fuse(&g, &l, op).unwrap().shape()[0], op.output_tokens(32));
        }
    }

    #[test]
    fn sparsity_stats_examples() {
        let s = sparsity_stats(&Tensor::full(&[3, 3], 2.5)).unwrap();
        assert_eq!((s.mean, s.min, s.q1, s.median, s.q3, s.max), (2.5, 2.5, 2.5, 2.5, 2.5, 2.5));
        assert_eq!(s.iqr(), 0.0);

        let s = sparsity_stats(&Tensor::vector(&[4.0, 1.0, 3.0, 2.0])).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.5, 2.5, 3.5));

        let s = sparsity_stats(&Tensor::vector(&[5.0, 1.0, 3.0, 2.0, 4.0])).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.5, 3.0, 4.5));

        assert!(matches!(sparsity_stats_of(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn multiply_shrinks_bounded_operands() {
        let mut rng = RngStream::new(8);
        let a = Tensor::new(&[4, 6], (0..24).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let b = Tensor::new(&[4, 6], (0..24).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let m = fuse(&a, &b, FusionOp::Multiply).unwrap();
        for i in 0..24 {
            let v = m.data()[i].abs();
            assert!(v <= a.data()[i].abs() && v <= b.data()[i].abs());
        }
    }
}
