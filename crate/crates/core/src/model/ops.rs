//! Row-major dense kernels and their backward passes.
//!
//! Linear weights are stored `[out][in]`, so `y = x W^T + b`.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    // Eight independent accumulators let the compiler vectorize.
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut sum = T::zero();
    for i in chunks * 8..a.len() {
        sum = sum + a[i] * b[i];
    }
    acc.iter().fold(sum, |s, &v| s + v)
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

pub(crate) fn linear_forward<T: Real>(
    x: &[T],
    rows: usize,
    in_dim: usize,
    weight: &[T],
    bias: &[T],
    out_dim: usize,
) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * in_dim);
    debug_assert_eq!(weight.len(), out_dim * in_dim);
    let mut y = vec![T::zero(); rows * out_dim];
    for (xr, yr) in x.chunks_exact(in_dim).zip(y.chunks_exact_mut(out_dim)) {
        for (o, yo) in yr.iter_mut().enumerate() {
            *yo = dot(xr, &weight[o * in_dim..(o + 1) * in_dim]) + bias[o];
        }
    }
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `want_dx` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Real>(
    dy: &[T],
    x: &[T],
    rows: usize,
    in_dim: usize,
    weight: &[T],
    out_dim: usize,
    dweight: &mut [T],
    dbias: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    for (dyr, xr) in dy.chunks_exact(out_dim).zip(x.chunks_exact(in_dim)) {
        for (o, &g) in dyr.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            dbias[o] = dbias[o] + g;
            axpy(g, xr, &mut dweight[o * in_dim..(o + 1) * in_dim]);
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); rows * in_dim];
    for (dyr, dxr) in dy.chunks_exact(out_dim).zip(dx.chunks_exact_mut(in_dim)) {
        for (o, &g) in dyr.iter().enumerate() {
            if g != T::zero() {
                axpy(g, &weight[o * in_dim..(o + 1) * in_dim], dxr);
            }
        }
    }
    Some(dx)
}

pub(crate) struct LayerNormCache<T> {
    pub normalized: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &[T],
    dim: usize,
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, LayerNormCache<T>) {
    let rows = x.len() / dim;
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_dim = T::one() / T::from_usize(dim);
    let mut y = vec![T::zero(); x.len()];
    let mut normalized = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().copied().sum::<T>() * inv_dim;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_dim;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for i in 0..dim {
            let n = (xr[i] - mean) * rs;
            normalized[r * dim + i] = n;
            y[r * dim + i] = n * gamma[i] + beta[i];
        }
    }
    (y, LayerNormCache { normalized, rstd })
}

pub(crate) fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LayerNormCache<T>,
    dim: usize,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let inv_dim = T::one() / T::from_usize(dim);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dn = vec![T::zero(); dim];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let nr = &cache.normalized[r * dim..(r + 1) * dim];
        let mut mean_dn = T::zero();
        let mut mean_dn_n = T::zero();
        for i in 0..dim {
            dgamma[i] = dgamma[i] + dyr[i] * nr[i];
            dbeta[i] = dbeta[i] + dyr[i];
            dn[i] = dyr[i] * gamma[i];
            mean_dn = mean_dn + dn[i];
            mean_dn_n = mean_dn_n + dn[i] * nr[i];
        }
        mean_dn = mean_dn * inv_dim;
        mean_dn_n = mean_dn_n * inv_dim;
        let dxr = &mut dx[r * dim..(r + 1) * dim];
        for i in 0..dim {
            dxr[i] = rs * (dn[i] - mean_dn - nr[i] * mean_dn_n);
        }
    }
    dx
}

/// Exact GELU, `0.5 x (1 + erf(x / sqrt 2))`.
pub(crate) fn gelu_forward<T: Real>(x: &[T]) -> Vec<T> {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    x.iter()
        .map(|&v| half * v * (T::one() + (v * inv_sqrt2).erf()))
        .collect()
}

pub(crate) fn gelu_backward<T: Real>(dy: &[T], x: &[T]) -> Vec<T> {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
    dy.iter()
        .zip(x)
        .map(|(&g, &v)| {
            let cdf = half * (T::one() + (v * inv_sqrt2).erf());
            let pdf = inv_sqrt_2pi * (-half * v * v).exp();
            g * (cdf + v * pdf)
        })
        .collect()
}

/// Token groups that attend among themselves. A row may belong to several
/// groups; its context vector is then the mean over its memberships.
pub(crate) struct AttentionGroups {
    pub groups: Vec<Vec<usize>>,
    pub membership: Vec<usize>,
}

impl AttentionGroups {
    pub fn new(groups: Vec<Vec<usize>>, rows: usize) -> Self {
        let mut membership = vec![0usize; rows];
        for g in &groups {
            for &r in g {
                membership[r] += 1;
            }
        }
        Self { groups, membership }
    }
}

/// Softmax probabilities per group, laid out `[head][query][key]`.
pub(crate) type GroupProbs<T> = Vec<Vec<T>>;

/// Scaled dot-product attention over `qkv` rows (`[q | k | v]`, each `dim`
/// wide, heads contiguous inside each third).
pub(crate) fn attention_forward<T: Real>(
    qkv: &[T],
    rows: usize,
    dim: usize,
    heads: usize,
    groups: &AttentionGroups,
) -> (Vec<T>, GroupProbs<T>) {
    let hd = dim / heads;
    let stride = 3 * dim;
    let scale = T::one() / T::from_usize(hd).sqrt();
    let mut ctx = vec![T::zero(); rows * dim];
    let mut probs = Vec::with_capacity(groups.groups.len());
    let mut scores = Vec::new();
    for g in &groups.groups {
        let len = g.len();
        let mut p = vec![T::zero(); heads * len * len];
        for h in 0..heads {
            for (qi, &rq) in g.iter().enumerate() {
                let q = &qkv[rq * stride + h * hd..rq * stride + (h + 1) * hd];
                scores.clear();
                let mut max = T::neg_infinity();
                for &rk in g {
                    let k = &qkv[rk * stride + dim + h * hd..rk * stride + dim + (h + 1) * hd];
                    let s = dot(q, k) * scale;
                    max = max.max(s);
                    scores.push(s);
                }
                let mut denom = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom = denom + *s;
                }
                let inv = T::one() / denom;
                let prow = &mut p[(h * len + qi) * len..(h * len + qi + 1) * len];
                let weight = inv / T::from_usize(groups.membership[rq]);
                let out = &mut ctx[rq * dim + h * hd..rq * dim + (h + 1) * hd];
                for (ki, &rk) in g.iter().enumerate() {
                    prow[ki] = scores[ki] * inv;
                    let v =
                        &qkv[rk * stride + 2 * dim + h * hd..rk * stride + 2 * dim + (h + 1) * hd];
                    axpy(scores[ki] * weight, v, out);
                }
            }
        }
        probs.push(p);
    }
    (ctx, probs)
}

pub(crate) fn attention_backward<T: Real>(
    dctx: &[T],
    qkv: &[T],
    probs: &GroupProbs<T>,
    rows: usize,
    dim: usize,
    heads: usize,
    groups: &AttentionGroups,
) -> Vec<T> {
    let hd = dim / heads;
    let stride = 3 * dim;
    let scale = T::one() / T::from_usize(hd).sqrt();
    let mut dqkv = vec![T::zero(); rows * stride];
    let mut dp = Vec::new();
    let mut dout = vec![T::zero(); hd];
    for (g, p) in groups.groups.iter().zip(probs) {
        let len = g.len();
        for h in 0..heads {
            for (qi, &rq) in g.iter().enumerate() {
                let share = T::one() / T::from_usize(groups.membership[rq]);
                for (d, &v) in dout
                    .iter_mut()
                    .zip(&dctx[rq * dim + h * hd..rq * dim + (h + 1) * hd])
                {
                    *d = v * share;
                }
                let prow = &p[(h * len + qi) * len..(h * len + qi + 1) * len];
                dp.clear();
                let mut weighted = T::zero();
                for (ki, &rk) in g.iter().enumerate() {
                    let vo = rk * stride + 2 * dim + h * hd;
                    let dpv = dot(&dout, &qkv[vo..vo + hd]);
                    weighted = weighted + prow[ki] * dpv;
                    dp.push(dpv);
                    axpy(prow[ki], &dout, &mut dqkv[vo..vo + hd]);
                }
                let qo = rq * stride + h * hd;
                for (ki, &rk) in g.iter().enumerate() {
                    let ds = prow[ki] * (dp[ki] - weighted) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    let ko = rk * stride + dim + h * hd;
                    // dq += ds k, dk += ds q; index split avoids aliasing.
                    for d in 0..hd {
                        let kd = qkv[ko + d];
                        let qd = qkv[qo + d];
                        dqkv[qo + d] = dqkv[qo + d] + ds * kd;
                        dqkv[ko + d] = dqkv[ko + d] + ds * qd;
                    }
                }
            }
        }
    }
    dqkv
}
