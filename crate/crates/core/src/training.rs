//! Cross-entropy training with teacher forcing, Adam, gradient clipping,
//! and bit-exact text checkpoints.
//!
//! Determinism contract: a fixed seed fixes parameter initialization (done
//! by the caller via [`crate::model::Model::init`]), sample order, and every
//! teacher-forcing draw, so two runs produce bitwise-identical loss curves
//! and final parameters. The training stream is seeded with a constant
//! offset from the user seed so that init and schedule never share draws.
//!
//! Batches build one graph per sample and average the per-sample gradients
//! arithmetically (fixed order), which matches padded-and-masked batching
//! exactly while keeping every sample at its true length.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, SOS_ID};
use crate::decoder::DecodeSession;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{NodeId, Tape, Tensor};

/// Offset between the user seed and the schedule stream, so that parameter
/// init (which uses the seed directly) and shuffling/forcing draws are
/// decoupled but both reproducible from one number.
const SCHEDULE_SEED_OFFSET: u64 = 0x9E3779B97F4A7C15;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Probability of feeding the ground-truth token instead of the model's
    /// own argmax at each step.
    pub teacher_forcing_ratio: f64,
    /// One forcing draw per sequence instead of per step.
    pub per_sequence_forcing: bool,
    /// Length-normalization exponent of the per-sample loss.
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Maximum global gradient norm; larger gradients are rescaled onto it.
    pub grad_clip: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 1e-3,
            teacher_forcing_ratio: 0.5,
            per_sequence_forcing: false,
            beta: 1.0,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.teacher_forcing_ratio) {
            return Err(Error::InvalidConfig(format!(
                "teacher forcing ratio {} must lie in [0,1]",
                self.teacher_forcing_ratio
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "loss exponent {} must be non-negative",
                self.beta
            )));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning rate must be ≥ 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and epochs must be ≥ 1".into(),
            ));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::InvalidConfig("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// One prepared training pair: a motion tensor and the target token ids
/// (caption words followed by the end token, never the start token).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub motion: Tensor,
    pub targets: Vec<usize>,
}

/// `−(1/|y|^β) Σ_k log P(y_k)` from per-step log-probability nodes.
pub fn sequence_loss(
    tape: &mut Tape,
    step_log_probs: &[NodeId],
    targets: &[usize],
    beta: f64,
) -> Result<NodeId> {
    if step_log_probs.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction steps vs {} targets",
            step_log_probs.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "sequence loss needs at least one target".into(),
        ));
    }
    let mut total: Option<NodeId> = None;
    for (&lp, &target) in step_log_probs.iter().zip(targets) {
        let picked = tape.pick(lp, target)?;
        total = Some(match total {
            None => picked,
            Some(acc) => tape.add(acc, picked)?,
        });
    }
    let scale = -1.0 / (targets.len() as f64).powf(beta);
    Ok(tape.scale(total.expect("non-empty targets"), scale))
}

/// Adam moments, aligned positionally with the model's parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(model: &Model) -> AdamState {
        let zeros: Vec<Tensor> = model
            .params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update of every parameter.
    pub fn step(&mut self, model: &mut Model, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..grads.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = model.params.tensor_at_mut(i).data_mut();
            if g.len() != w.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam step",
                    lhs: vec![w.len()],
                    rhs: vec![g.len()],
                });
            }
            for k in 0..g.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Rescale gradients in place onto the `max_norm` ball. The scale factor is
/// a single positive number, so direction is preserved exactly.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &x in g.data() {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// Loss and per-parameter gradients of one teacher-forced sample.
fn sample_pass(
    model: &Model,
    sample: &TrainSample,
    cfg: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor>)> {
    let mut session = DecodeSession::start(model, &sample.motion)?;
    let mut h = session.h0;
    let mut p_prev: Option<NodeId> = None;
    let mut prev = SOS_ID;
    let sequence_forced = cfg.per_sequence_forcing && rng.random_bool(cfg.teacher_forcing_ratio);
    let mut lp_nodes = Vec::with_capacity(sample.targets.len());
    for (k, &target) in sample.targets.iter().enumerate() {
        let step = session.step(&model.config, h, p_prev, prev)?;
        lp_nodes.push(step.log_probs);
        h = step.h;
        p_prev = step.attention.position.or(p_prev);
        let forced = if cfg.per_sequence_forcing {
            sequence_forced
        } else {
            rng.random_bool(cfg.teacher_forcing_ratio)
        };
        prev = if forced {
            target
        } else {
            let lp = session.tape.value(step.log_probs).data();
            let mut best = 0usize;
            for (i, &x) in lp.iter().enumerate().skip(1) {
                if x > lp[best] {
                    best = i;
                }
            }
            best
        };
        let _ = k;
    }
    let loss = sequence_loss(&mut session.tape, &lp_nodes, &sample.targets, cfg.beta)?;
    let loss_value = session.tape.value(loss).item();
    let grads = session.tape.backward(loss)?;
    let p = model.params.len();
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let g = grads
            .get(i)
            .ok_or_else(|| Error::InvalidState(format!("parameter {i} missing a gradient")))?;
        out.push(g.clone());
    }
    Ok((loss_value, out))
}

/// Per-epoch mean sample losses, in epoch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Seeded training loop: shuffle, batch, average per-sample gradients,
/// clip, Adam-update. Same seed, same data, same config → bitwise-identical
/// parameters and loss curve.
pub fn train(model: &mut Model, data: &[TrainSample], cfg: &TrainingConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one sample".into()));
    }
    for (i, s) in data.iter().enumerate() {
        if s.targets.is_empty() {
            return Err(Error::InvalidArgument(format!("sample {i} has no targets")));
        }
        if let Some(&bad) = s.targets.iter().find(|&&t| t >= model.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} target id {bad} outside vocabulary of size {}",
                model.config.vocab_size
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(SCHEDULE_SEED_OFFSET));
    let mut adam = AdamState::new(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch_grads: Option<Vec<Tensor>> = None;
            for &idx in chunk {
                let (loss, grads) = sample_pass(model, &data[idx], cfg, &mut rng)?;
                loss_sum += loss;
                batch_grads = Some(match batch_grads {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                        acc
                    }
                });
            }
            let mut grads = batch_grads.expect("chunks are non-empty");
            let inv = 1.0 / chunk.len() as f64;
            for g in grads.iter_mut() {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(model, &grads, cfg.learning_rate)?;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }
    Ok(TrainReport { epoch_losses })
}

// --- Checkpointing ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    /// Row-major values, each formatted to 17 significant digits so that
    /// parsing reproduces the exact bits.
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingConfig>,
    vocabulary: Vocabulary,
    params: Vec<ParamRecord>,
}

/// Write a self-describing text checkpoint (configs, vocabulary, and every
/// parameter at full precision).
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    vocabulary: &Vocabulary,
    training: Option<&TrainingConfig>,
) -> Result<()> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        training: training.cloned(),
        vocabulary: vocabulary.clone(),
        params: model
            .params
            .iter()
            .map(|(name, t)| ParamRecord {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|x| format!("{x:.16e}")).collect(),
            })
            .collect(),
    };
    let body = serde_json::to_string(&file)
        .map_err(|e| Error::InvalidState(format!("checkpoint serialization failed: {e}")))?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Load a checkpoint; the parameter layout must match what the stored
/// configuration would initialize.
pub fn load_checkpoint(path: &Path) -> Result<(Model, Vocabulary, Option<TrainingConfig>)> {
    let mut body = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut body))
        .map_err(|e| Error::io(path, e))?;
    let loc = || path.display().to_string();

    // Check the version before insisting on the full schema, so version
    // drift reports as such rather than as a parse error.
    let probe: serde_json::Value = serde_json::from_str(&body).map_err(|e| Error::Parse {
        location: loc(),
        reason: e.to_string(),
    })?;
    let found = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse {
            location: loc(),
            reason: "missing format_version".into(),
        })? as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found,
            supported: CHECKPOINT_VERSION,
        });
    }

    let file: CheckpointFile = serde_json::from_str(&body).map_err(|e| Error::Parse {
        location: loc(),
        reason: e.to_string(),
    })?;
    file.model.validate()?;

    // The skeleton defines the canonical parameter order and shapes.
    let mut model = Model::init(file.model.clone(), 0)?;
    if file.params.len() != model.params.len() {
        return Err(Error::Parse {
            location: loc(),
            reason: format!(
                "checkpoint has {} parameters, configuration defines {}",
                file.params.len(),
                model.params.len()
            ),
        });
    }
    for (i, rec) in file.params.iter().enumerate() {
        if model.params.name_at(i) != rec.name {
            return Err(Error::Parse {
                location: loc(),
                reason: format!(
                    "parameter {i} is {:?}, expected {:?}",
                    rec.name,
                    model.params.name_at(i)
                ),
            });
        }
        let expected: usize = rec.shape.iter().product();
        if rec.values.len() != expected {
            return Err(Error::Parse {
                location: loc(),
                reason: format!(
                    "parameter {:?} holds {} values for shape {:?}",
                    rec.name,
                    rec.values.len(),
                    rec.shape
                ),
            });
        }
        let mut data = Vec::with_capacity(rec.values.len());
        for v in &rec.values {
            data.push(v.parse::<f64>().map_err(|e| Error::Parse {
                location: loc(),
                reason: format!("parameter {:?}: bad number {v:?}: {e}", rec.name),
            })?);
        }
        let tensor = Tensor::new(rec.shape.clone(), data)?;
        model.params.set(&rec.name, tensor)?;
    }
    Ok((model, file.vocabulary, file.training))
}
