use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shape_mismatch, ModelConfig, ModelError};
use crate::real::Real;

const INIT_STD: f64 = 0.02;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, ModelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_mismatch(
                format!("{shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

macro_rules! tensor_fields {
    ($name:ident { $($field:ident => $label:literal),* $(,)? }) => {
        impl<T: Real> $name<T> {
            fn push_refs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
                $(out.push((format!("{prefix}{}", $label), &self.$field));)*
            }

            fn push_muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
                $(out.push((format!("{prefix}{}", $label), &mut self.$field));)*
            }

            fn cast<U: Real>(&self) -> $name<U> {
                $name { $($field: self.$field.cast()),* }
            }
        }
    };
}

/// Weights of one divided space-time encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub temporal_norm_weight: Tensor<T>,
    pub temporal_norm_bias: Tensor<T>,
    pub temporal_qkv_weight: Tensor<T>,
    pub temporal_qkv_bias: Tensor<T>,
    pub temporal_proj_weight: Tensor<T>,
    pub temporal_proj_bias: Tensor<T>,
    pub temporal_fc_weight: Tensor<T>,
    pub temporal_fc_bias: Tensor<T>,
    pub spatial_norm_weight: Tensor<T>,
    pub spatial_norm_bias: Tensor<T>,
    pub spatial_qkv_weight: Tensor<T>,
    pub spatial_qkv_bias: Tensor<T>,
    pub spatial_proj_weight: Tensor<T>,
    pub spatial_proj_bias: Tensor<T>,
    pub mlp_norm_weight: Tensor<T>,
    pub mlp_norm_bias: Tensor<T>,
    pub mlp_fc1_weight: Tensor<T>,
    pub mlp_fc1_bias: Tensor<T>,
    pub mlp_fc2_weight: Tensor<T>,
    pub mlp_fc2_bias: Tensor<T>,
}

tensor_fields!(BlockParams {
    temporal_norm_weight => "temporal_norm.weight",
    temporal_norm_bias => "temporal_norm.bias",
    temporal_qkv_weight => "temporal_attn.qkv.weight",
    temporal_qkv_bias => "temporal_attn.qkv.bias",
    temporal_proj_weight => "temporal_attn.proj.weight",
    temporal_proj_bias => "temporal_attn.proj.bias",
    temporal_fc_weight => "temporal_fc.weight",
    temporal_fc_bias => "temporal_fc.bias",
    spatial_norm_weight => "spatial_norm.weight",
    spatial_norm_bias => "spatial_norm.bias",
    spatial_qkv_weight => "spatial_attn.qkv.weight",
    spatial_qkv_bias => "spatial_attn.qkv.bias",
    spatial_proj_weight => "spatial_attn.proj.weight",
    spatial_proj_bias => "spatial_attn.proj.bias",
    mlp_norm_weight => "mlp_norm.weight",
    mlp_norm_bias => "mlp_norm.bias",
    mlp_fc1_weight => "mlp.fc1.weight",
    mlp_fc1_bias => "mlp.fc1.bias",
    mlp_fc2_weight => "mlp.fc2.weight",
    mlp_fc2_bias => "mlp.fc2.bias",
});

impl<T: Real> BlockParams<T> {
    fn zeros(config: &ModelConfig) -> Self {
        let e = config.embed_dim;
        let h = config.mlp_hidden_dim();
        let z = |s: &[usize]| Tensor::zeros(s);
        Self {
            temporal_norm_weight: Tensor::filled(&[e], T::one()),
            temporal_norm_bias: z(&[e]),
            temporal_qkv_weight: z(&[3 * e, e]),
            temporal_qkv_bias: z(&[3 * e]),
            temporal_proj_weight: z(&[e, e]),
            temporal_proj_bias: z(&[e]),
            temporal_fc_weight: z(&[e, e]),
            temporal_fc_bias: z(&[e]),
            spatial_norm_weight: Tensor::filled(&[e], T::one()),
            spatial_norm_bias: z(&[e]),
            spatial_qkv_weight: z(&[3 * e, e]),
            spatial_qkv_bias: z(&[3 * e]),
            spatial_proj_weight: z(&[e, e]),
            spatial_proj_bias: z(&[e]),
            mlp_norm_weight: Tensor::filled(&[e], T::one()),
            mlp_norm_bias: z(&[e]),
            mlp_fc1_weight: z(&[h, e]),
            mlp_fc1_bias: z(&[h]),
            mlp_fc2_weight: z(&[e, h]),
            mlp_fc2_bias: z(&[e]),
        }
    }
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub patch_weight: Tensor<T>,
    pub patch_bias: Tensor<T>,
    pub cls_token: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub time_embed: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub norm_weight: Tensor<T>,
    pub norm_bias: Tensor<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// Closed-form scalar count for a configuration.
pub fn param_count(config: &ModelConfig) -> usize {
    let e = config.embed_dim;
    let hidden = config.mlp_hidden_dim();
    let n = config.patches_per_frame();
    let patch = (config.patch_dim() + 1) * e;
    let embeddings = e + (n + 1) * e + config.num_frames * e;
    let norms = 3 * 2 * e;
    let attention = 2 * (3 * e * e + 3 * e + e * e + e);
    let temporal_fc = e * e + e;
    let mlp = hidden * e + hidden + e * hidden + e;
    let per_block = norms + attention + temporal_fc + mlp;
    let head = (e + 1) * config.output_dim();
    patch + embeddings + config.depth * per_block + 2 * e + head
}

impl<T: Real> ParameterSet<T> {
    /// Unit layer-norm gains, everything else zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let e = config.embed_dim;
        Ok(Self {
            patch_weight: Tensor::zeros(&[e, config.patch_dim()]),
            patch_bias: Tensor::zeros(&[e]),
            cls_token: Tensor::zeros(&[e]),
            pos_embed: Tensor::zeros(&[config.patches_per_frame() + 1, e]),
            time_embed: Tensor::zeros(&[config.num_frames, e]),
            blocks: (0..config.depth)
                .map(|_| BlockParams::zeros(config))
                .collect(),
            norm_weight: Tensor::filled(&[e], T::one()),
            norm_bias: Tensor::zeros(&[e]),
            head_weight: Tensor::zeros(&[config.output_dim(), e]),
            head_bias: Tensor::zeros(&[config.output_dim()]),
        })
    }

    /// Truncated-normal (std 0.02, cut at two standard deviations) weights
    /// and embeddings, zero biases, unit layer-norm gains. The temporal FC map
    /// starts as the identity so the untrained block passes the temporal
    /// branch through unchanged.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data.iter_mut() {
                *v = T::from_f64(truncated_normal(&mut rng) * INIT_STD);
            }
        };
        fill(&mut p.patch_weight);
        fill(&mut p.cls_token);
        fill(&mut p.pos_embed);
        fill(&mut p.time_embed);
        for b in p.blocks.iter_mut() {
            fill(&mut b.temporal_qkv_weight);
            fill(&mut b.temporal_proj_weight);
            fill(&mut b.spatial_qkv_weight);
            fill(&mut b.spatial_proj_weight);
            fill(&mut b.mlp_fc1_weight);
            fill(&mut b.mlp_fc2_weight);
            let e = config.embed_dim;
            for i in 0..e {
                b.temporal_fc_weight.data[i * e + i] = T::one();
            }
        }
        fill(&mut p.head_weight);
        Ok(p)
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            (String::from("patch_embed.weight"), &self.patch_weight),
            (String::from("patch_embed.bias"), &self.patch_bias),
            (String::from("cls_token"), &self.cls_token),
            (String::from("pos_embed"), &self.pos_embed),
            (String::from("time_embed"), &self.time_embed),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            b.push_refs(&format!("blocks.{i}."), &mut out);
        }
        out.push((String::from("norm.weight"), &self.norm_weight));
        out.push((String::from("norm.bias"), &self.norm_bias));
        out.push((String::from("head.weight"), &self.head_weight));
        out.push((String::from("head.bias"), &self.head_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            (String::from("patch_embed.weight"), &mut self.patch_weight),
            (String::from("patch_embed.bias"), &mut self.patch_bias),
            (String::from("cls_token"), &mut self.cls_token),
            (String::from("pos_embed"), &mut self.pos_embed),
            (String::from("time_embed"), &mut self.time_embed),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.push_muts(&format!("blocks.{i}."), &mut out);
        }
        out.push((String::from("norm.weight"), &mut self.norm_weight));
        out.push((String::from("norm.bias"), &mut self.norm_bias));
        out.push((String::from("head.weight"), &mut self.head_weight));
        out.push((String::from("head.bias"), &mut self.head_bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        let mut out = ParameterSet {
            patch_weight: self.patch_weight.cast(),
            patch_bias: self.patch_bias.cast(),
            cls_token: self.cls_token.cast(),
            pos_embed: self.pos_embed.cast(),
            time_embed: self.time_embed.cast(),
            blocks: Vec::new(),
            norm_weight: self.norm_weight.cast(),
            norm_bias: self.norm_bias.cast(),
            head_weight: self.head_weight.cast(),
            head_bias: self.head_bias.cast(),
        };
        out.blocks = self.blocks.iter().map(|b| b.cast()).collect();
        out
    }

    /// Checks every tensor against the shapes implied by `config`.
    pub fn check_config(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let reference = ParameterSet::<T>::zeros(config)?;
        let ours = self.named_tensors();
        let theirs = reference.named_tensors();
        if ours.len() != theirs.len() {
            return Err(shape_mismatch(
                format!("{} tensors", theirs.len()),
                format!("{} tensors", ours.len()),
            ));
        }
        for ((name, t), (_, r)) in ours.iter().zip(&theirs) {
            if t.shape != r.shape || t.data.len() != r.data.len() {
                return Err(shape_mismatch(
                    format!("{name} {:?}", r.shape),
                    format!("{:?}", t.shape),
                ));
            }
        }
        Ok(())
    }
}

/// Standard normal restricted to [-2, 2] by rejection.
fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_published_totals() {
        assert_eq!(param_count(&ModelConfig::standard(2)), 30_657_414);
        assert_eq!(param_count(&ModelConfig::standard(3)), 30_660_108);
        assert_eq!(param_count(&ModelConfig::standard(4)), 30_662_802);
    }

    #[test]
    fn instantiated_tiny_matches_closed_form() {
        let c = ModelConfig::tiny();
        let p = ParameterSet::<f64>::init(&c, 0).unwrap();
        assert_eq!(p.num_scalars(), param_count(&c));
        p.check_config(&c).unwrap();
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = ModelConfig::tiny();
        let a = ParameterSet::<f32>::init(&c, 9).unwrap();
        let b = ParameterSet::<f32>::init(&c, 9).unwrap();
        let other = ParameterSet::<f32>::init(&c, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert!(a.patch_weight.data.iter().all(|v| v.abs() <= 0.04 + 1e-7));
        assert!(a.head_bias.data.iter().all(|&v| v == 0.0));
        let fc = &a.blocks[0].temporal_fc_weight.data;
        assert_eq!(fc[0], 1.0);
        assert_eq!(fc[1], 0.0);
    }

    #[test]
    fn names_are_unique() {
        let c = ModelConfig {
            depth: 3,
            ..ModelConfig::tiny()
        };
        let p = ParameterSet::<f32>::zeros(&c).unwrap();
        let mut names: Vec<_> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
        assert_eq!(total, 5 + 3 * 20 + 4);
    }

    #[test]
    fn cast_round_trip() {
        let c = ModelConfig::tiny();
        let p = ParameterSet::<f32>::init(&c, 1).unwrap();
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
