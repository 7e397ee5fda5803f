//! Differentiable operations recorded on the tape.

use super::kernels::{self, axis_view};
use super::tape::{Op, Tape, Var};
use super::{BinaryOp, RngStream, Tensor};
use crate::error::{Error, Result};

impl Tape {
    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(t, Op::MatMul { a, b }, &[a, b]))
    }

    pub fn map_binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "{op:?} of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.push(t, Op::Binary { a, b, op }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.map_binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.map_binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.map_binary(a, b, BinaryOp::Mul)
    }

    /// Adds a length-`c` bias to every row of a `…×c` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tb.len();
        if tb.rank() != 1 || tx.shape().last() != Some(&c) {
            return Err(Error::shape(format!(
                "bias {:?} does not broadcast over {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (d, b) in row.iter_mut().zip(tb.data()) {
                *d += b;
            }
        }
        let t = Tensor::new(tx.shape(), data)?;
        Ok(self.push(t, Op::AddRow { x, bias }, &[x, bias]))
    }

    /// `x · w + b` for a `rows×in` input, `in×out` weight and `out` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(|v| v * factor);
        Ok(self.push(t, Op::Scale { x, factor }, &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::argument("concat of zero tensors"))?;
        for p in parts {
            self.check(*p)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::argument(format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat along axis {axis}: {base:?} vs {s:?}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_view(&base, axis);
        let mut shape = base;
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let n = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Indices `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::argument(format!(
                "slice [{start}, {end}) along axis {axis} of {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_view(&shape, axis);
        let len = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&src[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::argument(format!(
                "{axes:?} is not a permutation of the axes of {shape:?}"
            )));
        }
        let sources = kernels::permute_sources(&shape, axes);
        let src = self.value(x).data();
        let data = sources.iter().map(|&s| src[s]).collect();
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, Op::Permute { x, sources }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }

    /// Collapses every axis except `keep_axis` into one, giving `d_keep × rest`.
    /// The remaining axes keep their row-major order.
    pub fn flatten(&mut self, x: Var, keep_axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || keep_axis >= shape.len() {
            return Err(Error::argument(format!(
                "flatten keeping axis {keep_axis} of {shape:?}"
            )));
        }
        let keep = shape[keep_axis];
        let rest = shape.iter().product::<usize>() / keep.max(1);
        let moved = if keep_axis == 0 {
            x
        } else {
            let mut axes = vec![keep_axis];
            axes.extend((0..shape.len()).filter(|&a| a != keep_axis));
            self.permute(x, &axes)?
        };
        self.reshape(moved, &[keep, rest])
    }

    /// Adaptive average pooling of a single axis to length `size`.
    pub fn adaptive_avg_pool_axis(&mut self, x: Var, axis: usize, size: usize) -> Result<Var> {
        self.check(x)?;
        if size == 0 {
            return Err(Error::argument("adaptive pool target size must be positive"));
        }
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::argument(format!("cannot pool axis {axis} of {shape:?}")));
        }
        let bins = kernels::adaptive_bins(shape[axis], size);
        let data = kernels::pool_axis_forward(self.value(x).data(), axis_view(&shape, axis), &bins);
        let mut out_shape = shape;
        out_shape[axis] = size;
        let t = Tensor::new(&out_shape, data)?;
        Ok(self.push(t, Op::Pool { x, axis, bins }, &[x]))
    }

    /// Adaptive average pooling over the trailing axes, one target size per axis.
    ///
    /// Each output cell averages the product of its per-axis bins; see
    /// [`kernels::adaptive_bins`] for the bin rule.
    pub fn adaptive_avg_pool(&mut self, x: Var, sizes: &[usize]) -> Result<Var> {
        self.check(x)?;
        let rank = self.shape(x).len();
        if sizes.len() > rank {
            return Err(Error::argument(format!(
                "{} pool sizes for a rank-{rank} tensor",
                sizes.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::argument("adaptive pool target size must be positive"));
        }
        let mut out = x;
        for (i, &size) in sizes.iter().enumerate() {
            let axis = rank - sizes.len() + i;
            if self.shape(out)[axis] != size {
                out = self.adaptive_avg_pool_axis(out, axis, size)?;
            }
        }
        Ok(out)
    }

    /// Softmax along `axis`, shifted by the maximum for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::argument(format!("softmax axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = axis_view(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |t: usize| (o * n + t) * inner + j;
                let max = (0..n).map(|t| src[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for t in 0..n {
                    let e = (src[at(t)] - max).exp();
                    data[at(t)] = e;
                    z += e;
                }
                for t in 0..n {
                    data[at(t)] /= z;
                }
            }
        }
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Row softmax over the last axis where keys with `key_mask[j] == false`
    /// get exactly zero weight (as if their logits were −∞).
    pub fn masked_softmax(&mut self, x: Var, key_mask: &[bool]) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::argument("softmax of a scalar"))?;
        if key_mask.len() != n {
            return Err(Error::shape(format!(
                "mask of length {} for rows of length {n}",
                key_mask.len()
            )));
        }
        if !key_mask.iter().any(|&m| m) {
            return Err(Error::argument("every key is masked"));
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        for (row, out) in src.chunks(n).zip(data.chunks_mut(n)) {
            let max = row
                .iter()
                .zip(key_mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ((o, v), &m) in out.iter_mut().zip(row).zip(key_mask) {
                if m {
                    *o = (v - max).exp();
                    z += *o;
                }
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let t = Tensor::new(&shape, data)?;
        let axis = shape.len() - 1;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(kernels::gelu);
        Ok(self.push(t, Op::Gelu { x }, &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).map(f64::tanh);
        Ok(self.push(t, Op::Tanh { x }, &[x]))
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::argument("layer norm of a scalar"))?;
        let (gs, bs) = (self.shape(gamma), self.shape(beta));
        if gs != [d] || bs != [d] {
            return Err(Error::shape(format!(
                "layer norm over width {d} with gamma {gs:?} and beta {bs:?}"
            )));
        }
        let (src, gam, bet) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rows = src.len() / d.max(1);
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(src.len());
        for row in src.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for ((v, g), b) in row.iter().zip(gam).zip(bet) {
                let h = (v - mean) * r;
                xhat.push(h);
                data.push(h * g + b);
            }
        }
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Gathers rows of a `V×d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape(format!("embedding table must be rank 2, got {shape:?}")));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Index(format!("token id {bad} outside a table of {v} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(&[ids.len(), d], data)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// `−log softmax(logits)[target]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.check(logits)?;
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(Error::Index(format!(
                "target class {target} outside {} logits",
                z.len()
            )));
        }
        let (argmax, max) = z
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        // log-sum-exp split as ln(1 + rest) so tiny losses keep full precision
        let rest: f64 = z
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != argmax)
            .map(|(_, v)| (v - max).exp())
            .sum();
        let lse = rest.ln_1p();
        let loss = lse - (z[target] - max);
        let denom = 1.0 + rest;
        let probs = z.iter().map(|v| (v - max).exp() / denom).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of several scalars.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::argument("sum of zero terms"));
        }
        let mut flat = Vec::with_capacity(terms.len());
        for &t in terms {
            self.check(t)?;
            if self.value(t).len() != 1 {
                return Err(Error::shape(format!("add_all term of shape {:?}", self.shape(t))));
            }
            flat.push(self.reshape(t, &[1])?);
        }
        let stacked = self.concat(&flat, 0)?;
        self.sum(stacked)
    }

    /// Stochastic depth on a residual branch output.
    ///
    /// In training the whole branch is kept with probability `1 − rate` and
    /// rescaled by `1/(1 − rate)`, or zeroed. Evaluation mode and `rate == 0`
    /// return `x` itself.
    pub fn drop_path(&mut self, x: Var, rate: f64, training: bool, rng: &mut RngStream) -> Result<Var> {
        self.check(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::argument(format!("drop path rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = rng.bernoulli(1.0 - rate);
        let factor = if keep { 1.0 / (1.0 - rate) } else { 0.0 };
        self.scale(x, factor)
    }
}
