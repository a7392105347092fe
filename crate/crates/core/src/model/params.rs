use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{HatConfig, StackConfig, BYTE_VOCAB};
use crate::tensor::{Scalar, Tensor};

/// Projection weights of one attention call, stored `[in, out]` so `y = x·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnParams<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub o: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub gate: Tensor<T>,
    pub up: Tensor<T>,
    pub down: Tensor<T>,
}

/// Pre-norm self-attention + SwiGLU block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub attn_norm: Tensor<T>,
    pub attn: AttnParams<T>,
    pub mlp_norm: Tensor<T>,
    pub mlp: MlpParams<T>,
}

/// Decoder cross-attention onto one backbone row.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossParams<T> {
    pub pre_norm: Tensor<T>,
    pub kv_norm: Tensor<T>,
    pub attn: AttnParams<T>,
    pub post_norm: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams<T> {
    pub cross: CrossParams<T>,
    pub block: BlockParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub byte_embed: Tensor<T>,
    pub layers: Vec<BlockParams<T>>,
}

/// Learned-query pooling from byte states to word embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectorParams<T> {
    pub query: Tensor<T>,
    pub attn: AttnParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams<T> {
    /// Word-level begin-of-sequence vector at backbone position 0.
    pub bos: Tensor<T>,
    pub layers: Vec<BlockParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    pub layers: Vec<DecoderLayerParams<T>>,
    pub final_norm: Tensor<T>,
    pub lm_head: Tensor<T>,
}

/// Every learnable tensor of a HAT model. A zero-filled `ParamSet` doubles as
/// the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub config: HatConfig,
    pub encoder: EncoderParams<T>,
    pub connector: ConnectorParams<T>,
    pub backbone: BackboneParams<T>,
    pub decoder: DecoderParams<T>,
}

/// Training groups used by freezing and learning-rate multipliers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    Connector,
    Backbone,
    Decoder,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Encoder,
        ParamGroup::Connector,
        ParamGroup::Backbone,
        ParamGroup::Decoder,
        ParamGroup::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Connector => "connector",
            ParamGroup::Backbone => "backbone",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Head => "head",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }

    /// Group of a named tensor. Cross-attention blocks in the decoder and the
    /// backbone BOS vector are connector parameters: they are new relative to
    /// a pretrained backbone.
    pub fn of(name: &str) -> Self {
        if name.starts_with("encoder.") {
            ParamGroup::Encoder
        } else if name.starts_with("connector.") || name == "backbone.bos" || name.contains(".cross.") {
            ParamGroup::Connector
        } else if name.starts_with("backbone.") {
            ParamGroup::Backbone
        } else if name == "decoder.lm_head" {
            ParamGroup::Head
        } else {
            ParamGroup::Decoder
        }
    }
}

/// Whether decoupled weight decay applies: 2-D weights except the byte
/// embedding. Norms and the BOS/query vectors are 1-D.
pub fn decays(name: &str, t_shape: &[usize]) -> bool {
    t_shape.len() == 2 && t_shape[0] > 1 && name != "encoder.byte_embed"
}

struct Builder<'a, T> {
    rng: Option<&'a mut ChaCha8Rng>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Builder<'_, T> {
    fn weight(&mut self, shape: [usize; 2], scale: f64) -> Tensor<T> {
        match self.rng.as_deref_mut() {
            None => Tensor::zeros(&shape),
            Some(rng) => {
                let std = 0.02 * scale;
                let normal = Normal::new(0.0, std).expect("valid std");
                let n = shape[0] * shape[1];
                let mut data = Vec::with_capacity(n);
                while data.len() < n {
                    let x: f64 = normal.sample(rng);
                    if x.abs() <= 2.0 * std {
                        data.push(T::of(x));
                    }
                }
                Tensor::new(shape.to_vec(), data).expect("shape")
            }
        }
    }

    fn norm(&mut self, d: usize) -> Tensor<T> {
        if self.rng.is_some() {
            Tensor::ones(&[d])
        } else {
            Tensor::zeros(&[d])
        }
    }

    fn attn(&mut self, h_in: usize, h_kv_in: usize, q: usize, kv: usize, out_scale: f64) -> AttnParams<T> {
        AttnParams {
            q: self.weight([h_in, q], 1.0),
            k: self.weight([h_kv_in, kv], 1.0),
            v: self.weight([h_kv_in, kv], 1.0),
            o: self.weight([q, h_in], out_scale),
        }
    }

    fn block(&mut self, s: &StackConfig) -> BlockParams<T> {
        let out_scale = 1.0 / (2.0 * s.n_layers as f64).sqrt();
        let inter = s.intermediate();
        BlockParams {
            attn_norm: self.norm(s.hidden),
            attn: self.attn(s.hidden, s.hidden, s.q_dim(), s.kv_dim(), out_scale),
            mlp_norm: self.norm(s.hidden),
            mlp: MlpParams {
                gate: self.weight([s.hidden, inter], 1.0),
                up: self.weight([s.hidden, inter], 1.0),
                down: self.weight([inter, s.hidden], out_scale),
            },
        }
    }

    fn build(&mut self, c: &HatConfig) -> ParamSet<T> {
        let (he, hb, hd) = (c.encoder.hidden, c.backbone.hidden, c.decoder.hidden);
        let ch = c.connector.cross_hidden;
        let encoder = EncoderParams {
            byte_embed: self.weight([BYTE_VOCAB, he], 1.0),
            layers: (0..c.encoder.n_layers).map(|_| self.block(&c.encoder)).collect(),
        };
        let query = self.weight([1, ch], 1.0);
        let connector = ConnectorParams {
            query: Tensor::new(vec![ch], query.into_data()).expect("shape"),
            attn: AttnParams {
                q: self.weight([ch, ch], 1.0),
                k: self.weight([he, ch], 1.0),
                v: self.weight([he, ch], 1.0),
                o: self.weight([ch, ch], 1.0),
            },
        };
        let bos = self.weight([1, hb], 1.0);
        let backbone = BackboneParams {
            bos: Tensor::new(vec![hb], bos.into_data()).expect("shape"),
            layers: (0..c.backbone.n_layers).map(|_| self.block(&c.backbone)).collect(),
        };
        let out_scale = 1.0 / (2.0 * c.decoder.n_layers as f64).sqrt();
        let layers = (0..c.decoder.n_layers)
            .map(|_| DecoderLayerParams {
                cross: CrossParams {
                    pre_norm: self.norm(hd),
                    kv_norm: self.norm(hb),
                    attn: AttnParams {
                        q: self.weight([hd, hd], 1.0),
                        k: self.weight([hb, hd], 1.0),
                        v: self.weight([hb, hd], 1.0),
                        o: self.weight([hd, hd], out_scale),
                    },
                    post_norm: self.norm(hd),
                },
                block: self.block(&c.decoder),
            })
            .collect();
        let decoder = DecoderParams {
            layers,
            final_norm: self.norm(hd),
            lm_head: self.weight([hd, BYTE_VOCAB], 1.0),
        };
        ParamSet {
            config: c.clone(),
            encoder,
            connector,
            backbone,
            decoder,
        }
    }
}

/// Seeded initialization: truncated normal (±2σ, σ = 0.02), output and down
/// projections scaled by `1/sqrt(2·n_layers)`, norms at one.
pub fn init_params<T: Scalar>(config: &HatConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Builder {
        rng: Some(&mut rng),
        _t: std::marker::PhantomData,
    }
    .build(config)
}

fn push_attn<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, a: &'a AttnParams<T>) {
    out.push((format!("{p}.q"), &a.q));
    out.push((format!("{p}.k"), &a.k));
    out.push((format!("{p}.v"), &a.v));
    out.push((format!("{p}.o"), &a.o));
}

fn push_block<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, p: &str, b: &'a BlockParams<T>) {
    out.push((format!("{p}.attn_norm"), &b.attn_norm));
    push_attn(out, &format!("{p}.attn"), &b.attn);
    out.push((format!("{p}.mlp_norm"), &b.mlp_norm));
    out.push((format!("{p}.mlp.gate"), &b.mlp.gate));
    out.push((format!("{p}.mlp.up"), &b.mlp.up));
    out.push((format!("{p}.mlp.down"), &b.mlp.down));
}

fn push_attn_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, p: &str, a: &'a mut AttnParams<T>) {
    out.push((format!("{p}.q"), &mut a.q));
    out.push((format!("{p}.k"), &mut a.k));
    out.push((format!("{p}.v"), &mut a.v));
    out.push((format!("{p}.o"), &mut a.o));
}

fn push_block_mut<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, p: &str, b: &'a mut BlockParams<T>) {
    out.push((format!("{p}.attn_norm"), &mut b.attn_norm));
    push_attn_mut(out, &format!("{p}.attn"), &mut b.attn);
    out.push((format!("{p}.mlp_norm"), &mut b.mlp_norm));
    out.push((format!("{p}.mlp.gate"), &mut b.mlp.gate));
    out.push((format!("{p}.mlp.up"), &mut b.mlp.up));
    out.push((format!("{p}.mlp.down"), &mut b.mlp.down));
}

impl<T: Scalar> ParamSet<T> {
    /// Same shapes, all zeros (a gradient buffer).
    pub fn zeros(config: &HatConfig) -> Self {
        Builder {
            rng: None,
            _t: std::marker::PhantomData,
        }
        .build(config)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// All tensors with their canonical names, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("encoder.byte_embed".to_string(), &self.encoder.byte_embed));
        for (i, b) in self.encoder.layers.iter().enumerate() {
            push_block(&mut out, &format!("encoder.layers.{i}"), b);
        }
        out.push(("connector.query".to_string(), &self.connector.query));
        push_attn(&mut out, "connector.attn", &self.connector.attn);
        out.push(("backbone.bos".to_string(), &self.backbone.bos));
        for (i, b) in self.backbone.layers.iter().enumerate() {
            push_block(&mut out, &format!("backbone.layers.{i}"), b);
        }
        for (i, l) in self.decoder.layers.iter().enumerate() {
            let p = format!("decoder.layers.{i}.cross");
            out.push((format!("{p}.pre_norm"), &l.cross.pre_norm));
            out.push((format!("{p}.kv_norm"), &l.cross.kv_norm));
            push_attn(&mut out, &format!("{p}.attn"), &l.cross.attn);
            out.push((format!("{p}.post_norm"), &l.cross.post_norm));
            push_block(&mut out, &format!("decoder.layers.{i}"), &l.block);
        }
        out.push(("decoder.final_norm".to_string(), &self.decoder.final_norm));
        out.push(("decoder.lm_head".to_string(), &self.decoder.lm_head));
        out
    }

    /// Mutable counterpart of [`ParamSet::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("encoder.byte_embed".to_string(), &mut self.encoder.byte_embed));
        for (i, b) in self.encoder.layers.iter_mut().enumerate() {
            push_block_mut(&mut out, &format!("encoder.layers.{i}"), b);
        }
        out.push(("connector.query".to_string(), &mut self.connector.query));
        push_attn_mut(&mut out, "connector.attn", &mut self.connector.attn);
        out.push(("backbone.bos".to_string(), &mut self.backbone.bos));
        for (i, b) in self.backbone.layers.iter_mut().enumerate() {
            push_block_mut(&mut out, &format!("backbone.layers.{i}"), b);
        }
        for (i, l) in self.decoder.layers.iter_mut().enumerate() {
            let p = format!("decoder.layers.{i}.cross");
            out.push((format!("{p}.pre_norm"), &mut l.cross.pre_norm));
            out.push((format!("{p}.kv_norm"), &mut l.cross.kv_norm));
            push_attn_mut(&mut out, &format!("{p}.attn"), &mut l.cross.attn);
            out.push((format!("{p}.post_norm"), &mut l.cross.post_norm));
            push_block_mut(&mut out, &format!("decoder.layers.{i}"), &mut l.block);
        }
        out.push(("decoder.final_norm".to_string(), &mut self.decoder.final_norm));
        out.push(("decoder.lm_head".to_string(), &mut self.decoder.lm_head));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn convert<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::<U>::zeros(&self.config);
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.convert();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_params_and_norms_are_one() {
        let c = HatConfig::micro();
        let a = init_params::<f32>(&c, 7);
        assert_eq!(a, init_params::<f32>(&c, 7));
        assert_ne!(a, init_params::<f32>(&c, 8));
        for (name, t) in a.tensors() {
            if name.ends_with("norm") {
                assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&x| x.abs() <= 0.04 + 1e-6), "{name}");
            }
        }
    }

    #[test]
    fn names_are_unique_and_grouped() {
        let p = ParamSet::<f32>::zeros(&HatConfig::micro());
        let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let set: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert_eq!(ParamGroup::of("decoder.layers.0.cross.attn.q"), ParamGroup::Connector);
        assert_eq!(ParamGroup::of("backbone.layers.1.mlp.up"), ParamGroup::Backbone);
        assert_eq!(ParamGroup::of("decoder.lm_head"), ParamGroup::Head);
        assert_eq!(ParamGroup::of("decoder.final_norm"), ParamGroup::Decoder);
        for g in ParamGroup::ALL {
            assert!(names.iter().any(|n| ParamGroup::of(n) == g));
        }
    }
}
