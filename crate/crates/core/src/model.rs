//! Model assembly: architecture configuration, named parameter storage,
//! seeded initialization, and binding of stored parameters onto a tape.
//!
//! Parameters live in an insertion-ordered store so that every consumer —
//! initialization, checkpointing, optimizer state, tape binding — walks them
//! in one canonical order. [`Model::bind`] registers each parameter as a
//! leaf on a fresh tape in storage order, which makes leaf node ids
//! `0..P−1` coincide with parameter indices; training code relies on that
//! alignment to map gradient tensors back onto parameters positionally.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionView};
use crate::encoder::{EncoderConfig, EncoderIds, EncoderKind, GruCellIds};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Decoder state size `n′`; also the attention dimensionality.
    pub decoder_hidden: usize,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, attention: AttentionConfig, vocab_size: usize) -> Self {
        ModelConfig {
            encoder,
            attention,
            vocab_size,
            embed_dim: 64,
            decoder_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} cannot hold the four reserved tokens",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.decoder_hidden == 0 {
            return Err(Error::InvalidConfig(
                "embed_dim and decoder_hidden must be ≥ 1".into(),
            ));
        }
        self.encoder.validate(self.decoder_hidden)?;
        self.attention.validate()
    }

    /// Attention space size `A`.
    pub fn attention_dim(&self) -> usize {
        self.decoder_hidden
    }

    /// Whether the decoder start state needs a linear resize: recurrent
    /// encoders hand over their final forward hidden state, which only fits
    /// when the sizes agree.
    pub fn needs_init_projection(&self) -> bool {
        match self.encoder.kind {
            EncoderKind::Mlp => false,
            _ => self.encoder.hidden_dim != self.decoder_hidden,
        }
    }

    /// Whether the decoder start state is a learned free parameter. The
    /// frame-wise encoder has no sequence summary to hand over, and starting
    /// from the zero vector would freeze recurrent attention at step one: the
    /// position logit is bilinear in the state, so at zero both its value and
    /// its parameter gradients vanish, leaving the first window unteachable.
    pub fn needs_learned_start(&self) -> bool {
        matches!(self.encoder.kind, EncoderKind::Mlp)
    }

    /// Width of the output projection input `[y_{t−1}; h_t; C_t]`.
    pub fn output_input_dim(&self) -> usize {
        self.embed_dim + self.decoder_hidden + self.encoder.output_dim()
    }
}

/// Insertion-ordered named tensor collection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidState(format!(
                "parameter {name:?} registered twice"
            )));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::InvalidState(format!("no parameter named {name:?}")))
    }

    /// Replace a parameter's values; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::InvalidState(format!("no parameter named {name:?}")))?;
        if self.entries[i].1.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                lhs: self.entries[i].1.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.entries[i].1 = value;
        Ok(())
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }
}

/// Node ids of every parameter after binding onto one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    /// `[V, E]` embedding table.
    pub emb: NodeId,
    pub encoder: EncoderIds,
    pub attention: AttentionView,
    /// Decoder GRU cell; its input is the previous word's embedding.
    pub dec: GruCellIds,
    /// `[n′, n]` start-state resize, present only when sizes differ.
    pub init_proj: Option<NodeId>,
    /// `[n′]` learned start state, present only for frame-wise encoders.
    pub h0: Option<NodeId>,
    /// `[V, E + n′ + d_s]` output projection and `[V]` bias.
    pub out_w: NodeId,
    pub out_b: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Uniform draw in `±1/√fan_in` for every entry.
fn init_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
        .expect("shape/data lengths agree by construction")
}

fn register_gru_cell(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input: usize,
    n: usize,
) -> Result<()> {
    for gate in ["z", "r", "h"] {
        params.insert(format!("{prefix}.w_{gate}"), init_tensor(rng, vec![n, input], input))?;
        params.insert(format!("{prefix}.u_{gate}"), init_tensor(rng, vec![n, n], n))?;
        params.insert(format!("{prefix}.b_{gate}"), init_tensor(rng, vec![n], n))?;
    }
    Ok(())
}

impl Model {
    /// Seeded initialization. Matrices draw uniformly in `±1/√(columns)`,
    /// vectors in `±1/√(length)`. Registration order is fixed: embedding,
    /// encoder, attention, decoder cell, start state (projection or learned
    /// vector), output.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let v = config.vocab_size;
        let e = config.embed_dim;
        let n_dec = config.decoder_hidden;
        let a = config.attention_dim();
        let d_s = config.encoder.output_dim();

        params.insert("emb.table", init_tensor(&mut rng, vec![v, e], e))?;

        match config.encoder.kind {
            EncoderKind::Gru => {
                register_gru_cell(
                    &mut params,
                    &mut rng,
                    "enc.fwd",
                    config.encoder.input_dim,
                    config.encoder.hidden_dim,
                )?;
            }
            EncoderKind::BiGru => {
                for dir in ["fwd", "bwd"] {
                    register_gru_cell(
                        &mut params,
                        &mut rng,
                        &format!("enc.{dir}"),
                        config.encoder.input_dim,
                        config.encoder.hidden_dim,
                    )?;
                }
            }
            EncoderKind::Mlp => {
                let mut prev = config.encoder.input_dim;
                for (i, &d) in config.encoder.mlp_dims.iter().enumerate() {
                    params.insert(format!("enc.mlp.{i}.w"), init_tensor(&mut rng, vec![d, prev], prev))?;
                    params.insert(format!("enc.mlp.{i}.b"), init_tensor(&mut rng, vec![d], d))?;
                    prev = d;
                }
            }
        }

        params.insert("attn.w_a", init_tensor(&mut rng, vec![a, n_dec], n_dec))?;
        params.insert("attn.u_a", init_tensor(&mut rng, vec![a, d_s], d_s))?;
        params.insert("attn.v_a", init_tensor(&mut rng, vec![a], a))?;
        if config.attention.kind.is_local() {
            params.insert("attn.w_p", init_tensor(&mut rng, vec![a, n_dec], n_dec))?;
            params.insert("attn.v_p", init_tensor(&mut rng, vec![a], a))?;
        }

        register_gru_cell(&mut params, &mut rng, "dec", e, n_dec)?;

        if config.needs_init_projection() {
            let n_enc = config.encoder.hidden_dim;
            params.insert("dec.init.w", init_tensor(&mut rng, vec![n_dec, n_enc], n_enc))?;
        }
        if config.needs_learned_start() {
            params.insert("dec.h0", init_tensor(&mut rng, vec![n_dec], n_dec))?;
        }

        let out_in = config.output_input_dim();
        params.insert("out.w", init_tensor(&mut rng, vec![v, out_in], out_in))?;
        params.insert("out.b", init_tensor(&mut rng, vec![v], v))?;

        Ok(Model { config, params })
    }

    pub fn param_tensor_count(&self) -> usize {
        self.params.len()
    }

    pub fn scalar_param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Register every parameter as a tape leaf, in storage order, and hand
    /// back typed views. On a fresh tape the leaf ids are `0..P−1` and equal
    /// each parameter's storage index.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        let mut ids = Vec::with_capacity(self.params.len());
        for (_, tensor) in self.params.iter() {
            ids.push(tape.leaf(tensor.clone()));
        }
        let mut cursor = 0usize;
        let mut next = || {
            let id = ids[cursor];
            cursor += 1;
            id
        };

        let emb = next();

        let take_cell = |next: &mut dyn FnMut() -> NodeId| GruCellIds {
            w_z: next(),
            u_z: next(),
            b_z: next(),
            w_r: next(),
            u_r: next(),
            b_r: next(),
            w_h: next(),
            u_h: next(),
            b_h: next(),
        };

        let encoder = match self.config.encoder.kind {
            EncoderKind::Gru => EncoderIds::Gru {
                fwd: take_cell(&mut next),
            },
            EncoderKind::BiGru => EncoderIds::BiGru {
                fwd: take_cell(&mut next),
                bwd: take_cell(&mut next),
            },
            EncoderKind::Mlp => {
                let mut layers = Vec::with_capacity(self.config.encoder.mlp_dims.len());
                for _ in 0..self.config.encoder.mlp_dims.len() {
                    let w = next();
                    let b = next();
                    layers.push((w, b));
                }
                EncoderIds::Mlp { layers }
            }
        };

        let w_a = next();
        let u_a = next();
        let v_a = next();
        let (w_p, v_p) = if self.config.attention.kind.is_local() {
            (Some(next()), Some(next()))
        } else {
            (None, None)
        };
        let attention = AttentionView { w_a, u_a, v_a, w_p, v_p };

        let dec = take_cell(&mut next);

        let init_proj = if self.config.needs_init_projection() {
            Some(next())
        } else {
            None
        };
        let h0 = if self.config.needs_learned_start() {
            Some(next())
        } else {
            None
        };

        let out_w = next();
        let out_b = next();
        debug_assert_eq!(cursor, ids.len(), "every parameter consumed exactly once");

        Ok(BoundModel {
            emb,
            encoder,
            attention,
            dec,
            init_proj,
            h0,
            out_w,
            out_b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::encoder::gru_cell_param_count;

    fn small_config(kind: EncoderKind, attn: AttentionKind) -> ModelConfig {
        let encoder = match kind {
            EncoderKind::Gru => EncoderConfig::gru(7, 5),
            EncoderKind::BiGru => EncoderConfig::bigru(7, 5),
            EncoderKind::Mlp => EncoderConfig::mlp(7, vec![6, 4]),
        };
        ModelConfig {
            encoder,
            attention: AttentionConfig::new(attn),
            vocab_size: 9,
            embed_dim: 3,
            decoder_hidden: 4,
        }
    }

    fn expected_scalars(cfg: &ModelConfig) -> usize {
        let v = cfg.vocab_size;
        let e = cfg.embed_dim;
        let n = cfg.decoder_hidden;
        let a = cfg.attention_dim();
        let d_s = cfg.encoder.output_dim();
        let mut total = v * e + cfg.encoder.param_count();
        total += a * n + a * d_s + a; // alignment energies
        if cfg.attention.kind.is_local() {
            total += a * n + a; // position predictor
        }
        total += gru_cell_param_count(e, n);
        if cfg.needs_init_projection() {
            total += n * cfg.encoder.hidden_dim;
        }
        if cfg.needs_learned_start() {
            total += n;
        }
        total += v * (e + n + d_s) + v;
        total
    }

    #[test]
    fn scalar_counts_match_closed_forms_for_all_architectures() {
        for enc in [EncoderKind::Gru, EncoderKind::BiGru, EncoderKind::Mlp] {
            for attn in [AttentionKind::Soft, AttentionKind::Local, AttentionKind::LocalRecurrent] {
                let cfg = small_config(enc, attn);
                let model = Model::init(cfg.clone(), 1).unwrap();
                assert_eq!(
                    model.scalar_param_count(),
                    expected_scalars(&cfg),
                    "{enc:?}/{attn:?}"
                );
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = small_config(EncoderKind::Gru, AttentionKind::LocalRecurrent);
        let a = Model::init(cfg.clone(), 7).unwrap();
        let b = Model::init(cfg.clone(), 7).unwrap();
        assert_eq!(a.params, b.params);
        let c = Model::init(cfg, 8).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let cfg = small_config(EncoderKind::BiGru, AttentionKind::Soft);
        let model = Model::init(cfg, 3).unwrap();
        for (name, t) in model.params.iter() {
            let fan_in = if t.shape().len() == 2 { t.shape()[1] } else { t.len() };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for &x in t.data() {
                assert!(x.abs() < bound, "{name}: |{x}| ≥ {bound}");
            }
        }
    }

    #[test]
    fn binding_aligns_leaf_ids_with_storage_order() {
        let cfg = small_config(EncoderKind::Mlp, AttentionKind::LocalRecurrent);
        let model = Model::init(cfg, 5).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape).unwrap();
        // Fresh tape: parameter i lives at node id i.
        for i in 0..model.params.len() {
            assert_eq!(tape.value(i).data(), model.params.tensor_at(i).data());
        }
        assert_eq!(bound.emb, 0);
        let p = model.params.len();
        assert_eq!(bound.out_b, p - 1);
        assert_eq!(bound.out_w, p - 2);
        assert!(bound.attention.w_p.is_some());
        assert!(bound.init_proj.is_none());
        assert!(bound.h0.is_some(), "mlp decoder starts from a learned state");
    }

    #[test]
    fn learned_start_state_appears_only_without_an_encoder_summary() {
        let cfg = small_config(EncoderKind::Mlp, AttentionKind::Soft);
        let model = Model::init(cfg, 4).unwrap();
        assert_eq!(model.params.get("dec.h0").unwrap().shape(), &[4]);

        let cfg = small_config(EncoderKind::Gru, AttentionKind::Soft);
        let model = Model::init(cfg, 4).unwrap();
        assert!(model.params.get("dec.h0").is_err());
    }

    #[test]
    fn init_projection_appears_only_on_size_mismatch() {
        let mut cfg = small_config(EncoderKind::Gru, AttentionKind::Soft);
        assert_eq!(cfg.encoder.hidden_dim, 5);
        assert_eq!(cfg.decoder_hidden, 4);
        assert!(cfg.needs_init_projection());
        let model = Model::init(cfg.clone(), 2).unwrap();
        assert!(model.params.get("dec.init.w").is_ok());
        assert_eq!(model.params.get("dec.init.w").unwrap().shape(), &[4, 5]);

        cfg.decoder_hidden = 5;
        assert!(!cfg.needs_init_projection());
        let model = Model::init(cfg, 2).unwrap();
        assert!(model.params.get("dec.init.w").is_err());
    }

    #[test]
    fn validate_rejects_inconsistent_configs() {
        let mut cfg = small_config(EncoderKind::Mlp, AttentionKind::Soft);
        cfg.encoder.mlp_dims = vec![6, 3]; // ≠ decoder_hidden 4
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(EncoderKind::Gru, AttentionKind::Soft);
        cfg.vocab_size = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(EncoderKind::Gru, AttentionKind::LocalRecurrent);
        cfg.attention.overlap_alpha = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_store_rejects_duplicates_and_shape_changes() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(store.insert("w", Tensor::vector(vec![3.0])).is_err());
        assert!(store.set("w", Tensor::vector(vec![9.0])).is_err());
        store.set("w", Tensor::vector(vec![5.0, 6.0])).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[5.0, 6.0]);
        assert!(store.get("missing").is_err());
        assert_eq!(store.scalar_count(), 2);
    }

    #[test]
    fn config_serde_roundtrips() {
        let cfg = small_config(EncoderKind::BiGru, AttentionKind::LocalRecurrent);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
