use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::ops::{
    attention_backward, attention_forward, gelu_backward, gelu_forward, layer_norm_backward,
    layer_norm_forward, linear_backward, linear_forward, AttentionGroups, GroupProbs,
    LayerNormCache,
};
use super::{
    shape_mismatch, ActivationSite, BlockParams, Clip, ModelConfig, ModelError, ParameterSet,
};
use crate::real::Real;

/// Network output: per clip, per frame pair, six normalized motion
/// components.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBatchOutput<T> {
    pub batch: usize,
    pub pairs: usize,
    pub values: Vec<T>,
}

impl<T: Real> PoseBatchOutput<T> {
    pub fn clip(&self, b: usize) -> &[T] {
        let k = self.pairs * super::MOTION_DIM;
        &self.values[b * k..(b + 1) * k]
    }

    pub fn motion(&self, b: usize, pair: usize) -> &[T] {
        let start = (b * self.pairs + pair) * super::MOTION_DIM;
        &self.values[start..start + super::MOTION_DIM]
    }
}

/// Head-wise attention probabilities of one block, laid out `[head][query][key]`
/// per group.
///
/// Temporal group `s` holds tokens `1 + t*N + s` for `t = 0..num_frames`.
/// Spatial group `t` holds the class token followed by `1 + t*N + s` for
/// `s = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAttention<T> {
    pub temporal: Vec<Vec<T>>,
    pub spatial: Vec<Vec<T>>,
}

pub(crate) struct TokenLayout {
    temporal: AttentionGroups,
    spatial: AttentionGroups,
}

impl TokenLayout {
    pub(crate) fn new(config: &ModelConfig) -> Self {
        let n = config.patches_per_frame();
        let nf = config.num_frames;
        // Temporal groups index the patch rows only; the class token has no
        // frame and stays out of temporal attention.
        let temporal = (0..n)
            .map(|s| (0..nf).map(|t| t * n + s).collect())
            .collect();
        let spatial = (0..nf)
            .map(|t| {
                let mut g = Vec::with_capacity(n + 1);
                g.push(0);
                g.extend((0..n).map(|s| 1 + t * n + s));
                g
            })
            .collect();
        Self {
            temporal: AttentionGroups::new(temporal, nf * n),
            spatial: AttentionGroups::new(spatial, nf * n + 1),
        }
    }
}

/// Row `t*N + s` is the flattened `(c, i, j)` patch at spatial index `s` of
/// frame `t`; spatial indices run row-major over the patch grid.
pub fn patchify<T: Real>(clip: &Clip<T>, config: &ModelConfig) -> Result<Vec<T>, ModelError> {
    config.validate()?;
    clip.check_config(config)?;
    let (p, gw) = (config.patch_size, config.grid_width());
    let (h, w) = (config.height, config.width);
    let n = config.patches_per_frame();
    let pd = config.patch_dim();
    let mut out = vec![T::zero(); config.num_frames * n * pd];
    for t in 0..config.num_frames {
        let frame = clip.frame(t);
        for s in 0..n {
            let (gy, gx) = (s / gw, s % gw);
            let row = &mut out[(t * n + s) * pd..(t * n + s + 1) * pd];
            for c in 0..config.channels {
                for i in 0..p {
                    let src = c * h * w + (gy * p + i) * w + gx * p;
                    row[c * p * p + i * p..c * p * p + (i + 1) * p]
                        .copy_from_slice(&frame[src..src + p]);
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(patches: &[T], config: &ModelConfig) -> Result<Clip<T>, ModelError> {
    config.validate()?;
    let (p, gw) = (config.patch_size, config.grid_width());
    let (h, w) = (config.height, config.width);
    let n = config.patches_per_frame();
    let pd = config.patch_dim();
    if patches.len() != config.num_frames * n * pd {
        return Err(shape_mismatch(
            format!("{} x {}", config.num_frames * n, pd),
            format!("{} values", patches.len()),
        ));
    }
    let mut frames = Vec::with_capacity(config.num_frames);
    for t in 0..config.num_frames {
        let mut frame = vec![T::zero(); config.frame_len()];
        for s in 0..n {
            let (gy, gx) = (s / gw, s % gw);
            let row = &patches[(t * n + s) * pd..(t * n + s + 1) * pd];
            for c in 0..config.channels {
                for i in 0..p {
                    let dst = c * h * w + (gy * p + i) * w + gx * p;
                    frame[dst..dst + p]
                        .copy_from_slice(&row[c * p * p + i * p..c * p * p + (i + 1) * p]);
                }
            }
        }
        frames.push(Arc::from(frame));
    }
    Clip::new(frames, config.channels, h, w)
}

/// Token 0 is the class token plus `pos_embed[0]`; token `1 + t*N + s` is the
/// projected patch plus `pos_embed[1 + s]` and `time_embed[t]`.
pub fn embed<T: Real>(
    patches: &[T],
    params: &ParameterSet<T>,
    config: &ModelConfig,
) -> Result<Vec<T>, ModelError> {
    let n = config.patches_per_frame();
    let rows = config.num_frames * n;
    let pd = config.patch_dim();
    if patches.len() != rows * pd {
        return Err(shape_mismatch(
            format!("{rows} x {pd} patch matrix"),
            format!("{} values", patches.len()),
        ));
    }
    params.check_config(config)?;
    let e = config.embed_dim;
    let proj = linear_forward(
        patches,
        rows,
        pd,
        &params.patch_weight.data,
        &params.patch_bias.data,
        e,
    );
    let mut tokens = vec![T::zero(); (rows + 1) * e];
    let pos = &params.pos_embed.data;
    let time = &params.time_embed.data;
    for i in 0..e {
        tokens[i] = params.cls_token.data[i] + pos[i];
    }
    for t in 0..config.num_frames {
        for s in 0..n {
            let r = 1 + t * n + s;
            for i in 0..e {
                tokens[r * e + i] =
                    proj[(t * n + s) * e + i] + pos[(1 + s) * e + i] + time[t * e + i];
            }
        }
    }
    Ok(tokens)
}

struct BlockCache<T> {
    t_norm: LayerNormCache<T>,
    t_normed: Vec<T>,
    t_qkv: Vec<T>,
    t_probs: GroupProbs<T>,
    t_ctx: Vec<T>,
    a_t: Vec<T>,
    s_norm: LayerNormCache<T>,
    s_normed: Vec<T>,
    s_qkv: Vec<T>,
    s_probs: GroupProbs<T>,
    s_ctx: Vec<T>,
    m_norm: LayerNormCache<T>,
    m_normed: Vec<T>,
    m_pre: Vec<T>,
    m_act: Vec<T>,
}

fn block_forward<T: Real>(
    z: &[T],
    bp: &BlockParams<T>,
    config: &ModelConfig,
    layout: &TokenLayout,
) -> (Vec<T>, BlockCache<T>) {
    let e = config.embed_dim;
    let heads = config.num_heads;
    let hidden = config.mlp_hidden_dim();
    let np = config.num_frames * config.patches_per_frame();
    let nt = np + 1;

    // a_t = MHSA_time(LN(z)) + z over patch tokens.
    let zp = &z[e..];
    let (t_normed, t_norm) = layer_norm_forward(
        zp,
        e,
        &bp.temporal_norm_weight.data,
        &bp.temporal_norm_bias.data,
    );
    let t_qkv = linear_forward(
        &t_normed,
        np,
        e,
        &bp.temporal_qkv_weight.data,
        &bp.temporal_qkv_bias.data,
        3 * e,
    );
    let (t_ctx, t_probs) = attention_forward(&t_qkv, np, e, heads, &layout.temporal);
    let mut a_t = linear_forward(
        &t_ctx,
        np,
        e,
        &bp.temporal_proj_weight.data,
        &bp.temporal_proj_bias.data,
        e,
    );
    for (a, &x) in a_t.iter_mut().zip(zp) {
        *a = *a + x;
    }

    // a_tFC = FC(a_t), no residual.
    let a_fc = linear_forward(
        &a_t,
        np,
        e,
        &bp.temporal_fc_weight.data,
        &bp.temporal_fc_bias.data,
        e,
    );

    // a_s = MHSA_space(LN(a_tFC)) + a_tFC, class token rejoins here.
    let mut xs = Vec::with_capacity(nt * e);
    xs.extend_from_slice(&z[..e]);
    xs.extend_from_slice(&a_fc);
    let (s_normed, s_norm) = layer_norm_forward(
        &xs,
        e,
        &bp.spatial_norm_weight.data,
        &bp.spatial_norm_bias.data,
    );
    let s_qkv = linear_forward(
        &s_normed,
        nt,
        e,
        &bp.spatial_qkv_weight.data,
        &bp.spatial_qkv_bias.data,
        3 * e,
    );
    let (s_ctx, s_probs) = attention_forward(&s_qkv, nt, e, heads, &layout.spatial);
    let mut a_s = linear_forward(
        &s_ctx,
        nt,
        e,
        &bp.spatial_proj_weight.data,
        &bp.spatial_proj_bias.data,
        e,
    );
    for (a, &x) in a_s.iter_mut().zip(&xs) {
        *a = *a + x;
    }

    // z' = MLP(LN(a_s)) + a_s.
    let (m_normed, m_norm) =
        layer_norm_forward(&a_s, e, &bp.mlp_norm_weight.data, &bp.mlp_norm_bias.data);
    let m_pre = linear_forward(
        &m_normed,
        nt,
        e,
        &bp.mlp_fc1_weight.data,
        &bp.mlp_fc1_bias.data,
        hidden,
    );
    let m_act = gelu_forward(&m_pre);
    let mut out = linear_forward(
        &m_act,
        nt,
        hidden,
        &bp.mlp_fc2_weight.data,
        &bp.mlp_fc2_bias.data,
        e,
    );
    for (o, &x) in out.iter_mut().zip(&a_s) {
        *o = *o + x;
    }

    let cache = BlockCache {
        t_norm,
        t_normed,
        t_qkv,
        t_probs,
        t_ctx,
        a_t,
        s_norm,
        s_normed,
        s_qkv,
        s_probs,
        s_ctx,
        m_norm,
        m_normed,
        m_pre,
        m_act,
    };
    (out, cache)
}

fn block_backward<T: Real>(
    dout: &[T],
    cache: &BlockCache<T>,
    bp: &BlockParams<T>,
    grad: &mut BlockParams<T>,
    config: &ModelConfig,
    layout: &TokenLayout,
) -> Vec<T> {
    let e = config.embed_dim;
    let heads = config.num_heads;
    let hidden = config.mlp_hidden_dim();
    let np = config.num_frames * config.patches_per_frame();
    let nt = np + 1;

    // MLP sublayer.
    let d_act = linear_backward(
        dout,
        &cache.m_act,
        nt,
        hidden,
        &bp.mlp_fc2_weight.data,
        e,
        &mut grad.mlp_fc2_weight.data,
        &mut grad.mlp_fc2_bias.data,
        true,
    )
    .unwrap();
    let d_pre = gelu_backward(&d_act, &cache.m_pre);
    let d_mnormed = linear_backward(
        &d_pre,
        &cache.m_normed,
        nt,
        e,
        &bp.mlp_fc1_weight.data,
        hidden,
        &mut grad.mlp_fc1_weight.data,
        &mut grad.mlp_fc1_bias.data,
        true,
    )
    .unwrap();
    let mut d_as = layer_norm_backward(
        &d_mnormed,
        &cache.m_norm,
        e,
        &bp.mlp_norm_weight.data,
        &mut grad.mlp_norm_weight.data,
        &mut grad.mlp_norm_bias.data,
    );
    for (d, &g) in d_as.iter_mut().zip(dout) {
        *d = *d + g;
    }

    // Spatial sublayer.
    let d_sctx = linear_backward(
        &d_as,
        &cache.s_ctx,
        nt,
        e,
        &bp.spatial_proj_weight.data,
        e,
        &mut grad.spatial_proj_weight.data,
        &mut grad.spatial_proj_bias.data,
        true,
    )
    .unwrap();
    let d_sqkv = attention_backward(
        &d_sctx,
        &cache.s_qkv,
        &cache.s_probs,
        nt,
        e,
        heads,
        &layout.spatial,
    );
    let d_snormed = linear_backward(
        &d_sqkv,
        &cache.s_normed,
        nt,
        e,
        &bp.spatial_qkv_weight.data,
        3 * e,
        &mut grad.spatial_qkv_weight.data,
        &mut grad.spatial_qkv_bias.data,
        true,
    )
    .unwrap();
    let mut d_xs = layer_norm_backward(
        &d_snormed,
        &cache.s_norm,
        e,
        &bp.spatial_norm_weight.data,
        &mut grad.spatial_norm_weight.data,
        &mut grad.spatial_norm_bias.data,
    );
    for (d, &g) in d_xs.iter_mut().zip(&d_as) {
        *d = *d + g;
    }

    // Temporal FC.
    let d_at = linear_backward(
        &d_xs[e..],
        &cache.a_t,
        np,
        e,
        &bp.temporal_fc_weight.data,
        e,
        &mut grad.temporal_fc_weight.data,
        &mut grad.temporal_fc_bias.data,
        true,
    )
    .unwrap();

    // Temporal sublayer.
    let d_tctx = linear_backward(
        &d_at,
        &cache.t_ctx,
        np,
        e,
        &bp.temporal_proj_weight.data,
        e,
        &mut grad.temporal_proj_weight.data,
        &mut grad.temporal_proj_bias.data,
        true,
    )
    .unwrap();
    let d_tqkv = attention_backward(
        &d_tctx,
        &cache.t_qkv,
        &cache.t_probs,
        np,
        e,
        heads,
        &layout.temporal,
    );
    let d_tnormed = linear_backward(
        &d_tqkv,
        &cache.t_normed,
        np,
        e,
        &bp.temporal_qkv_weight.data,
        3 * e,
        &mut grad.temporal_qkv_weight.data,
        &mut grad.temporal_qkv_bias.data,
        true,
    )
    .unwrap();
    let d_zp = layer_norm_backward(
        &d_tnormed,
        &cache.t_norm,
        e,
        &bp.temporal_norm_weight.data,
        &mut grad.temporal_norm_weight.data,
        &mut grad.temporal_norm_bias.data,
    );

    let mut dz = Vec::with_capacity(nt * e);
    dz.extend_from_slice(&d_xs[..e]);
    dz.extend(d_zp.iter().zip(&d_at).map(|(&a, &b)| a + b));
    dz
}

/// One divided space-time encoder block on a `(N_f*N + 1) x E` token array.
pub fn encoder_block<T: Real>(
    tokens: &[T],
    block: &BlockParams<T>,
    config: &ModelConfig,
) -> Result<Vec<T>, ModelError> {
    config.validate()?;
    let expected = config.num_tokens() * config.embed_dim;
    if tokens.len() != expected {
        return Err(shape_mismatch(
            format!("{} x {}", config.num_tokens(), config.embed_dim),
            format!("{} values", tokens.len()),
        ));
    }
    let layout = TokenLayout::new(config);
    Ok(block_forward(tokens, block, config, &layout).0)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Keep {
    Output,
    Attention,
    Everything,
}

struct ClipTrace<T> {
    patches: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    attention: Vec<BlockAttention<T>>,
    final_norm: Option<LayerNormCache<T>>,
    cls_normed: Vec<T>,
    output: Vec<T>,
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn run_clip<T: Real>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    layout: &TokenLayout,
    clip: &Clip<T>,
    keep: Keep,
) -> Result<ClipTrace<T>, ModelError> {
    let patches = patchify(clip, config)?;
    let mut tokens = embed(&patches, params, config)?;
    if !all_finite(&tokens) {
        return Err(ModelError::NonFiniteActivation {
            site: ActivationSite::Embedding,
        });
    }
    let mut blocks = Vec::new();
    let mut attention = Vec::new();
    for (i, bp) in params.blocks.iter().enumerate() {
        let (next, cache) = block_forward(&tokens, bp, config, layout);
        if !all_finite(&next) {
            return Err(ModelError::NonFiniteActivation {
                site: ActivationSite::Block(i),
            });
        }
        tokens = next;
        match keep {
            Keep::Everything => blocks.push(cache),
            Keep::Attention => attention.push(BlockAttention {
                temporal: cache.t_probs,
                spatial: cache.s_probs,
            }),
            Keep::Output => {}
        }
    }
    let e = config.embed_dim;
    let (cls_normed, norm) = layer_norm_forward(
        &tokens[..e],
        e,
        &params.norm_weight.data,
        &params.norm_bias.data,
    );
    let output = linear_forward(
        &cls_normed,
        1,
        e,
        &params.head_weight.data,
        &params.head_bias.data,
        config.output_dim(),
    );
    if !all_finite(&output) {
        return Err(ModelError::NonFiniteActivation {
            site: ActivationSite::Head,
        });
    }
    let keep_all = keep == Keep::Everything;
    Ok(ClipTrace {
        patches: if keep_all { patches } else { Vec::new() },
        blocks,
        attention,
        final_norm: keep_all.then_some(norm),
        cls_normed,
        output,
    })
}

fn backward_clip<T: Real>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    layout: &TokenLayout,
    trace: &ClipTrace<T>,
    dy: &[T],
    grad: &mut ParameterSet<T>,
) {
    let e = config.embed_dim;
    let n = config.patches_per_frame();
    let nt = config.num_tokens();
    let d_cls_normed = linear_backward(
        dy,
        &trace.cls_normed,
        1,
        e,
        &params.head_weight.data,
        config.output_dim(),
        &mut grad.head_weight.data,
        &mut grad.head_bias.data,
        true,
    )
    .unwrap();
    let d_cls = layer_norm_backward(
        &d_cls_normed,
        trace.final_norm.as_ref().expect("trace kept for backward"),
        e,
        &params.norm_weight.data,
        &mut grad.norm_weight.data,
        &mut grad.norm_bias.data,
    );
    let mut dtokens = vec![T::zero(); nt * e];
    dtokens[..e].copy_from_slice(&d_cls);
    for (i, cache) in trace.blocks.iter().enumerate().rev() {
        dtokens = block_backward(
            &dtokens,
            cache,
            &params.blocks[i],
            &mut grad.blocks[i],
            config,
            layout,
        );
    }

    for (i, &d) in dtokens[..e].iter().enumerate() {
        grad.cls_token.data[i] = grad.cls_token.data[i] + d;
        grad.pos_embed.data[i] = grad.pos_embed.data[i] + d;
    }
    for t in 0..config.num_frames {
        for s in 0..n {
            let r = 1 + t * n + s;
            for i in 0..e {
                let g = dtokens[r * e + i];
                grad.pos_embed.data[(1 + s) * e + i] = grad.pos_embed.data[(1 + s) * e + i] + g;
                grad.time_embed.data[t * e + i] = grad.time_embed.data[t * e + i] + g;
            }
        }
    }
    linear_backward(
        &dtokens[e..],
        &trace.patches,
        config.num_frames * n,
        config.patch_dim(),
        &params.patch_weight.data,
        e,
        &mut grad.patch_weight.data,
        &mut grad.patch_bias.data,
        false,
    );
}

/// Runs the network on a batch of clips.
pub fn forward<T: Real>(
    clips: &[Clip<T>],
    params: &ParameterSet<T>,
    config: &ModelConfig,
) -> Result<PoseBatchOutput<T>, ModelError> {
    config.validate()?;
    params.check_config(config)?;
    let layout = TokenLayout::new(config);
    let mut values = Vec::with_capacity(clips.len() * config.output_dim());
    for clip in clips {
        let trace = run_clip(params, config, &layout, clip, Keep::Output)?;
        values.extend_from_slice(&trace.output);
    }
    Ok(PoseBatchOutput {
        batch: clips.len(),
        pairs: config.num_pairs(),
        values,
    })
}

/// Per-block attention probabilities for one clip.
pub fn attention_maps<T: Real>(
    clip: &Clip<T>,
    params: &ParameterSet<T>,
    config: &ModelConfig,
) -> Result<Vec<BlockAttention<T>>, ModelError> {
    config.validate()?;
    params.check_config(config)?;
    let layout = TokenLayout::new(config);
    Ok(run_clip(params, config, &layout, clip, Keep::Attention)?.attention)
}

/// Batch MSE loss and its gradient with respect to every parameter.
///
/// `targets` holds `clips.len() * (N_f - 1) * 6` normalized values in the
/// output layout.
pub fn loss_and_gradients<T: Real>(
    clips: &[Clip<T>],
    targets: &[T],
    params: &ParameterSet<T>,
    config: &ModelConfig,
) -> Result<(T, ParameterSet<T>), ModelError> {
    if clips.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    config.validate()?;
    params.check_config(config)?;
    let k = config.output_dim();
    if targets.len() != clips.len() * k {
        return Err(shape_mismatch(
            format!("{} target values", clips.len() * k),
            format!("{}", targets.len()),
        ));
    }
    let layout = TokenLayout::new(config);
    let mut grad = params.zeros_like();
    let scale = T::one() / T::from_usize(clips.len() * k);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    for (clip, target) in clips.iter().zip(targets.chunks_exact(k)) {
        let trace = run_clip(params, config, &layout, clip, Keep::Everything)?;
        let dy: Vec<T> = trace
            .output
            .iter()
            .zip(target)
            .map(|(&y, &t)| {
                let d = y - t;
                loss = loss + d * d * scale;
                two * d * scale
            })
            .collect();
        backward_clip(params, config, &layout, &trace, &dy, &mut grad);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(config: &ModelConfig, seed: u64) -> Clip<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..config.num_frames * config.frame_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Clip::from_dense(
            &data,
            config.num_frames,
            config.channels,
            config.height,
            config.width,
        )
        .unwrap()
    }

    #[test]
    fn patch_counts() {
        let c = ModelConfig::standard(2);
        assert_eq!(c.patches_per_frame(), 480);
        let tiny = ModelConfig {
            height: 16,
            width: 16,
            ..ModelConfig::tiny()
        };
        let clip = random_clip(&tiny, 0);
        let patches = patchify(&clip, &tiny).unwrap();
        assert_eq!(patches.len(), 2 * 3 * 256);
    }

    #[test]
    fn patch_reassembly_is_exact() {
        let c = ModelConfig {
            height: 32,
            width: 48,
            num_frames: 3,
            ..ModelConfig::tiny()
        };
        let clip = random_clip(&c, 1);
        let back = unpatchify(&patchify(&clip, &c).unwrap(), &c).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn patch_rows_follow_layout() {
        let c = ModelConfig {
            height: 32,
            width: 48,
            ..ModelConfig::tiny()
        };
        let clip = random_clip(&c, 2);
        let patches = patchify(&clip, &c).unwrap();
        let pd = c.patch_dim();
        // Frame 1, spatial index 4 = grid row 1, column 1; channel 2, pixel (3, 5).
        let row = c.patches_per_frame() + 4;
        let value = patches[row * pd + 2 * 256 + 3 * 16 + 5];
        let frame = clip.frame(1);
        assert_eq!(value, frame[2 * 32 * 48 + (16 + 3) * 48 + 16 + 5]);
    }

    #[test]
    fn wrong_clip_shape_is_rejected() {
        let c = ModelConfig::tiny();
        let other = ModelConfig {
            width: 48,
            ..c.clone()
        };
        let clip = random_clip(&other, 3);
        assert!(matches!(
            patchify(&clip, &c),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_embedding_leaves_only_class_token() {
        let c = ModelConfig::tiny();
        let mut p = ParameterSet::<f64>::zeros(&c).unwrap();
        p.cls_token
            .data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64 + 1.0);
        let patches = vec![0.0; c.num_frames * c.patches_per_frame() * c.patch_dim()];
        let tokens = embed(&patches, &p, &c).unwrap();
        let e = c.embed_dim;
        assert_eq!(&tokens[..e], &p.cls_token.data[..]);
        assert!(tokens[e..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_patch_selects_weight_column() {
        let c = ModelConfig::tiny();
        let mut p = ParameterSet::<f64>::init(&c, 4).unwrap();
        p.patch_bias.data.iter_mut().for_each(|v| *v = 0.5);
        let (n, pd, e) = (c.patches_per_frame(), c.patch_dim(), c.embed_dim);
        let mut patches = vec![0.0; c.num_frames * n * pd];
        let (t, s, col) = (1, 2, 37);
        patches[(t * n + s) * pd + col] = 1.0;
        let tokens = embed(&patches, &p, &c).unwrap();
        let r = 1 + t * n + s;
        for i in 0..e {
            let expected = p.patch_weight.data[i * pd + col]
                + 0.5
                + p.pos_embed.data[(1 + s) * e + i]
                + p.time_embed.data[t * e + i];
            assert!((tokens[r * e + i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let c = ModelConfig::tiny();
        let mut p = ParameterSet::<f64>::init(&c, 5).unwrap();
        p.head_weight.data.iter_mut().for_each(|v| *v = 0.0);
        let out = forward(&[random_clip(&c, 6), random_clip(&c, 7)], &p, &c).unwrap();
        assert_eq!(out.batch, 2);
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_for_four_frames() {
        let c = ModelConfig {
            num_frames: 4,
            ..ModelConfig::tiny()
        };
        let p = ParameterSet::<f32>::init(&c, 8).unwrap();
        let clips: Vec<_> = (0..3).map(|i| random_clip(&c, i).cast::<f32>()).collect();
        let out = forward(&clips, &p, &c).unwrap();
        assert_eq!((out.batch, out.pairs, out.values.len()), (3, 3, 3 * 3 * 6));
        assert_eq!(out.motion(2, 1).len(), 6);
    }

    #[test]
    fn forward_is_deterministic() {
        let c = ModelConfig::tiny();
        let p = ParameterSet::<f32>::init(&c, 9).unwrap();
        let clip = random_clip(&c, 10).cast::<f32>();
        let a = forward(core::slice::from_ref(&clip), &p, &c).unwrap();
        let b = forward(core::slice::from_ref(&clip), &p, &c).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let c = ModelConfig::tiny();
        let p = ParameterSet::<f64>::init(&c, 11).unwrap();
        let mut data = random_clip(&c, 12).to_dense();
        data[5] = f64::NAN;
        let clip = Clip::from_dense(&data, 2, 3, 32, 32).unwrap();
        assert_eq!(
            forward(&[clip], &p, &c),
            Err(ModelError::NonFiniteActivation {
                site: ActivationSite::Embedding
            })
        );
    }

    #[test]
    fn block_preserves_shape_on_minimal_grid() {
        let c = ModelConfig {
            height: 16,
            width: 16,
            ..ModelConfig::tiny()
        };
        let p = ParameterSet::<f64>::init(&c, 13).unwrap();
        let tokens: Vec<f64> = (0..c.num_tokens() * c.embed_dim)
            .map(|i| (i as f64).sin())
            .collect();
        assert_eq!(c.num_tokens(), 3);
        let out = encoder_block(&tokens, &p.blocks[0], &c).unwrap();
        assert_eq!(out.len(), tokens.len());
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(encoder_block(&tokens[1..], &p.blocks[0], &c).is_err());
    }
}
