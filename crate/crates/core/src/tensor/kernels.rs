//! Raw slice kernels shared by the forward and backward passes.

/// Bin `i` of an adaptive pool from length `n` to length `m` covers input
/// indices `[floor(i*n/m), ceil((i+1)*n/m))`. Windows overlap when `m > n`.
pub fn adaptive_bins(n: usize, m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .map(|i| (i * n / m, ((i + 1) * n).div_ceil(m)))
        .collect()
}

/// `out[m×n] += a[m×k] · b[k×n]`.
pub fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · bᵀ` where `b` is `k×n`.
pub(crate) fn matmul_nt_into(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub(crate) fn matmul_tn_into(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn pool_axis_forward(
    x: &[f64],
    (outer, n, inner): (usize, usize, usize),
    bins: &[(usize, usize)],
) -> Vec<f64> {
    let m = bins.len();
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        for (i, &(s, e)) in bins.iter().enumerate() {
            let w = (e - s) as f64;
            let dst = &mut out[(o * m + i) * inner..(o * m + i + 1) * inner];
            for t in s..e {
                let src = &x[(o * n + t) * inner..(o * n + t + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += v;
                }
            }
            for d in dst.iter_mut() {
                *d /= w;
            }
        }
    }
    out
}

pub(crate) fn pool_axis_backward(
    g: &[f64],
    gx: &mut [f64],
    (outer, n, inner): (usize, usize, usize),
    bins: &[(usize, usize)],
) {
    let m = bins.len();
    for o in 0..outer {
        for (i, &(s, e)) in bins.iter().enumerate() {
            let w = (e - s) as f64;
            let src = &g[(o * m + i) * inner..(o * m + i + 1) * inner];
            for t in s..e {
                let dst = &mut gx[(o * n + t) * inner..(o * n + t + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += v / w;
                }
            }
        }
    }
}

/// For each output position of a permutation, the offset of its source element.
pub(crate) fn permute_sources(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut sources = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        sources.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    sources
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_partition_when_divisible() {
        assert_eq!(adaptive_bins(4, 2), vec![(0, 2), (2, 4)]);
        assert_eq!(adaptive_bins(224, 7)[1], (32, 64));
    }

    #[test]
    fn bins_overlap_when_upsampling() {
        let bins = adaptive_bins(7, 32);
        assert_eq!(bins.len(), 32);
        assert_eq!(bins[0], (0, 1));
        assert_eq!(bins[4], (0, 2));
        assert_eq!(bins[31], (6, 7));
        assert!(bins.iter().all(|&(s, e)| s < e && e <= 7));
    }

    #[test]
    fn permute_sources_transpose() {
        // 2×3 transposed: out[j][i] = in[i][j]
        assert_eq!(permute_sources(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
    }
}
