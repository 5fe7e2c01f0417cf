//! Attention rollout over divided space-time blocks.
//!
//! Each attention sublayer contributes a token-mixing matrix
//! `0.5 * A + 0.5 * I` (rows renormalized), where `A` is the head-averaged
//! attention of that sublayer on the full token set. A token that attends in
//! several groups (the class token in spatial attention) takes the mean of
//! its rows; a token outside every group keeps an identity row. Only the
//! class-token row of the product is needed, so it is propagated as a row
//! vector from the last sublayer down to the embedding.

use alloc::vec;
use alloc::vec::Vec;

use super::network::BlockAttention;
use super::{attention_maps, shape_mismatch, Clip, ModelConfig, ModelError, ParameterSet};
use crate::real::Real;

/// Per-frame relevance over the patch grid; each frame sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub num_frames: usize,
    pub grid_height: usize,
    pub grid_width: usize,
    pub values: Vec<f64>,
}

impl RelevanceMap {
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.grid_height * self.grid_width;
        &self.values[t * n..(t + 1) * n]
    }
}

fn apply_sublayer<T: Real>(
    v: &[f64],
    groups: &[Vec<usize>],
    probs: &[Vec<T>],
    heads: usize,
) -> Vec<f64> {
    let tokens = v.len();
    let mut membership = vec![0usize; tokens];
    for g in groups {
        for &r in g {
            membership[r] += 1;
        }
    }
    let inv_heads = 1.0 / heads as f64;
    let averaged = |p: &[T], len: usize, i: usize, j: usize| -> f64 {
        (0..heads)
            .map(|h| p[(h * len + i) * len + j].as_f64())
            .sum::<f64>()
            * inv_heads
    };

    let mut row_sum: Vec<f64> = membership
        .iter()
        .map(|&m| if m == 0 { 1.0 } else { 0.5 })
        .collect();
    for (g, p) in groups.iter().zip(probs) {
        let len = g.len();
        for (i, &r) in g.iter().enumerate() {
            let share = 0.5 / membership[r] as f64;
            row_sum[r] += share * (0..len).map(|j| averaged(p, len, i, j)).sum::<f64>();
        }
    }

    let mut out = vec![0.0; tokens];
    for r in 0..tokens {
        let self_weight = if membership[r] == 0 { 1.0 } else { 0.5 };
        out[r] += v[r] * self_weight / row_sum[r];
    }
    for (g, p) in groups.iter().zip(probs) {
        let len = g.len();
        for (i, &r) in g.iter().enumerate() {
            if v[r] == 0.0 {
                continue;
            }
            let c = v[r] / row_sum[r] * 0.5 / membership[r] as f64;
            for (j, &col) in g.iter().enumerate() {
                out[col] += c * averaged(p, len, i, j);
            }
        }
    }
    out
}

/// Token groups on the full `(N_f*N + 1)` token index set.
pub(crate) fn token_groups(config: &ModelConfig) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = config.patches_per_frame();
    let nf = config.num_frames;
    let temporal = (0..n)
        .map(|s| (0..nf).map(|t| 1 + t * n + s).collect())
        .collect();
    let spatial = (0..nf)
        .map(|t| {
            core::iter::once(0)
                .chain((0..n).map(|s| 1 + t * n + s))
                .collect()
        })
        .collect();
    (temporal, spatial)
}

/// Rollout from precomputed attention probabilities.
pub fn rollout_from_attention<T: Real>(
    attention: &[BlockAttention<T>],
    config: &ModelConfig,
) -> Result<RelevanceMap, ModelError> {
    config.validate()?;
    let n = config.patches_per_frame();
    let nf = config.num_frames;
    for (i, b) in attention.iter().enumerate() {
        if b.temporal.len() != n || b.spatial.len() != nf {
            return Err(shape_mismatch(
                alloc::format!("{n} temporal and {nf} spatial groups"),
                alloc::format!(
                    "block {i}: {} temporal, {} spatial",
                    b.temporal.len(),
                    b.spatial.len()
                ),
            ));
        }
    }
    let (temporal, spatial) = token_groups(config);
    let mut v = vec![0.0; config.num_tokens()];
    v[0] = 1.0;
    for block in attention.iter().rev() {
        v = apply_sublayer(&v, &spatial, &block.spatial, config.num_heads);
        v = apply_sublayer(&v, &temporal, &block.temporal, config.num_heads);
    }
    let mut values = Vec::with_capacity(nf * n);
    for t in 0..nf {
        let frame = &v[1 + t * n..1 + (t + 1) * n];
        let total: f64 = frame.iter().sum();
        if total > 0.0 {
            values.extend(frame.iter().map(|x| x / total));
        } else {
            values.extend(core::iter::repeat_n(1.0 / n as f64, n));
        }
    }
    Ok(RelevanceMap {
        num_frames: nf,
        grid_height: config.grid_height(),
        grid_width: config.grid_width(),
        values,
    })
}

/// Class-token relevance of every patch, per frame.
pub fn attention_rollout<T: Real>(
    clip: &Clip<T>,
    params: &ParameterSet<T>,
    config: &ModelConfig,
) -> Result<RelevanceMap, ModelError> {
    let attention = attention_maps(clip, params, config)?;
    rollout_from_attention(&attention, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_attention_gives_uniform_map() {
        let c = ModelConfig {
            height: 32,
            width: 48,
            num_frames: 3,
            ..ModelConfig::tiny()
        };
        // Zero query/key weights make every attention row uniform.
        let mut p = ParameterSet::<f64>::init(&c, 1).unwrap();
        for b in p.blocks.iter_mut() {
            b.temporal_qkv_weight.data.iter_mut().for_each(|v| *v = 0.0);
            b.spatial_qkv_weight.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let data: Vec<f64> = (0..3 * c.frame_len())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let clip = Clip::from_dense(&data, 3, 3, 32, 48).unwrap();
        let map = attention_rollout(&clip, &p, &c).unwrap();
        let n = c.patches_per_frame();
        for v in &map.values {
            assert!((v - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_attention() {
        let c = ModelConfig::tiny();
        let bad = BlockAttention::<f64> {
            temporal: Vec::new(),
            spatial: Vec::new(),
        };
        assert!(rollout_from_attention(&[bad], &c).is_err());
    }
}
