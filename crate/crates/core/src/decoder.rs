//! Sequence generation: one decode step (embed previous word, attend with
//! the pre-update state, advance the GRU, project `[y_{t−1}; h_t; C_t]` to
//! vocabulary logits), plus greedy decoding and length-normalized beam
//! search.
//!
//! Attention always consumes `h_{t−1}`, the decoder state *before* the GRU
//! update of the current step. The decoder starts from a learned free vector
//! when the encoder is frame-wise (it produces no sequence summary) and from
//! the forward recurrence's final hidden state otherwise, resized by a
//! learned projection when encoder and decoder widths differ.

use crate::attention::{attend, precompute_keys, AlignmentTrace, AttentionMap, AttentionStep};
use crate::data::{EOS_ID, SOS_ID};
use crate::encoder::{encode, gru_cell_step, EncodedMotion};
use crate::error::{Error, Result};
use crate::model::{BoundModel, Model, ModelConfig};
use crate::tensor::{NodeId, Tape, Tensor};

pub const DEFAULT_MAX_LEN: usize = 30;
/// Exponent of the beam-search length normalization `score / len^γ`.
pub const DEFAULT_LENGTH_NORM: f64 = 0.7;

/// Everything one decode step leaves on the tape.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: NodeId,
    /// `log_softmax(logits)`, shape `[V]`.
    pub log_probs: NodeId,
    /// Advanced decoder state `h_t`.
    pub h: NodeId,
    pub attention: AttentionStep,
}

/// One generated hypothesis with its alignment byproducts.
#[derive(Debug, Clone)]
pub struct GenerationResult {
    /// Emitted ids, ending with the end token or cut at the length cap.
    pub tokens: Vec<usize>,
    /// Log-probability of each emitted token.
    pub log_probs: Vec<f64>,
    /// Sum of `log_probs`.
    pub score: f64,
    /// `score / tokens.len()^length_norm`; the ranking key.
    pub normalized_score: f64,
    pub attention: AttentionMap,
    pub trace: AlignmentTrace,
}

/// Decoder start state: a learned vector without a recurrent summary,
/// otherwise the forward final hidden state, resized when the widths differ.
pub fn initial_state(tape: &mut Tape, bound: &BoundModel, enc: &EncodedMotion) -> Result<NodeId> {
    match enc.final_forward {
        None => bound.h0.ok_or_else(|| {
            Error::InvalidConfig("frame-wise encoder bound without a start-state parameter".into())
        }),
        Some(h) => match bound.init_proj {
            Some(proj) => tape.matmul(proj, h),
            None => Ok(h),
        },
    }
}

/// Advance the decoder by one token.
pub fn decode_step(
    tape: &mut Tape,
    cfg: &ModelConfig,
    bound: &BoundModel,
    enc: &EncodedMotion,
    keys: NodeId,
    h_prev: NodeId,
    p_prev: Option<NodeId>,
    prev_token: usize,
) -> Result<StepOutput> {
    if prev_token >= cfg.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "token id {} outside vocabulary of size {}",
            prev_token, cfg.vocab_size
        )));
    }
    let emb = tape.row(bound.emb, prev_token)?;
    let attention = attend(
        tape,
        &cfg.attention,
        &bound.attention,
        keys,
        enc.states,
        h_prev,
        p_prev,
        enc.t_x,
    )?;
    let h = gru_cell_step(tape, emb, h_prev, &bound.dec)?;
    let cat = tape.concat(&[emb, h, attention.context])?;
    let lin = tape.matmul(bound.out_w, cat)?;
    let logits = tape.add(lin, bound.out_b)?;
    let log_probs = tape.log_softmax(logits)?;
    Ok(StepOutput {
        logits,
        log_probs,
        h,
        attention,
    })
}

/// A model bound to one tape together with one encoded motion — the shared
/// setup behind greedy decoding, beam search, and the training loop.
pub struct DecodeSession {
    pub tape: Tape,
    pub bound: BoundModel,
    pub enc: EncodedMotion,
    pub keys: NodeId,
    pub h0: NodeId,
}

impl DecodeSession {
    /// Bind the model (parameter leaves first, so their node ids equal their
    /// storage indices), load the motion, encode it, and precompute the
    /// attention keys.
    pub fn start(model: &Model, motion: &Tensor) -> Result<DecodeSession> {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let m = tape.leaf(motion.clone());
        let enc = encode(&mut tape, m, &model.config.encoder, &bound.encoder)?;
        let keys = precompute_keys(&mut tape, bound.attention.u_a, enc.states)?;
        let h0 = initial_state(&mut tape, &bound, &enc)?;
        Ok(DecodeSession {
            tape,
            bound,
            enc,
            keys,
            h0,
        })
    }

    pub fn step(
        &mut self,
        cfg: &ModelConfig,
        h_prev: NodeId,
        p_prev: Option<NodeId>,
        prev_token: usize,
    ) -> Result<StepOutput> {
        decode_step(
            &mut self.tape,
            cfg,
            &self.bound,
            &self.enc,
            self.keys,
            h_prev,
            p_prev,
            prev_token,
        )
    }
}

fn argmax_lowest_id(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    best
}

struct RowRecord {
    row: Vec<f64>,
    raw_row: Vec<f64>,
    position: Option<f64>,
    segment: Option<crate::segmentation::SegmentInterval>,
}

fn record_rows(tape: &Tape, step: &StepOutput) -> RowRecord {
    RowRecord {
        row: tape.value(step.attention.weights).data().to_vec(),
        raw_row: tape.value(step.attention.raw_weights).data().to_vec(),
        position: step.attention.position_value,
        segment: step.attention.segment.clone(),
    }
}

fn assemble(tokens: Vec<usize>, log_probs: Vec<f64>, rows: Vec<RowRecord>, length_norm: f64) -> GenerationResult {
    let score: f64 = log_probs.iter().sum();
    let normalized_score = score / (tokens.len() as f64).powf(length_norm);
    let mut map = AttentionMap {
        rows: Vec::with_capacity(rows.len()),
        raw_rows: Vec::with_capacity(rows.len()),
    };
    let mut trace = AlignmentTrace {
        positions: Vec::new(),
        segments: Vec::new(),
    };
    for r in rows {
        map.rows.push(r.row);
        map.raw_rows.push(r.raw_row);
        if let (Some(p), Some(s)) = (r.position, r.segment) {
            trace.positions.push(p);
            trace.segments.push(s);
        }
    }
    GenerationResult {
        tokens,
        log_probs,
        score,
        normalized_score,
        attention: map,
        trace,
    }
}

/// Pick the highest-probability word each step (ties to the lowest id),
/// starting from the start token and stopping at the end token or the cap.
pub fn greedy_decode(model: &Model, motion: &Tensor, max_len: usize) -> Result<GenerationResult> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut session = DecodeSession::start(model, motion)?;
    let mut h = session.h0;
    let mut p_prev: Option<NodeId> = None;
    let mut prev = SOS_ID;
    let mut tokens = Vec::new();
    let mut lps = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..max_len {
        let step = session.step(&model.config, h, p_prev, prev)?;
        let lp = session.tape.value(step.log_probs).data().to_vec();
        let token = argmax_lowest_id(&lp);
        tokens.push(token);
        lps.push(lp[token]);
        rows.push(record_rows(&session.tape, &step));
        h = step.h;
        p_prev = step.attention.position.or(p_prev);
        prev = token;
        if token == EOS_ID {
            break;
        }
    }
    Ok(assemble(tokens, lps, rows, DEFAULT_LENGTH_NORM))
}

struct Hypothesis {
    tokens: Vec<usize>,
    log_probs: Vec<f64>,
    score: f64,
    h: NodeId,
    p_prev: Option<NodeId>,
    rows: Vec<usize>, // indices into the shared row-record arena
    done: bool,
}

impl Hypothesis {
    fn normalized(&self, length_norm: f64) -> f64 {
        if self.tokens.is_empty() {
            f64::NEG_INFINITY
        } else {
            self.score / (self.tokens.len() as f64).powf(length_norm)
        }
    }
}

/// Standard beam search over token log-prob sums; hypotheses are ranked and
/// returned by normalized score `score / len^length_norm`, non-increasing.
/// Each result carries its own attention rows and alignment trace.
pub fn beam_decode(
    model: &Model,
    motion: &Tensor,
    beam_size: usize,
    max_len: usize,
    length_norm: f64,
) -> Result<Vec<GenerationResult>> {
    if beam_size == 0 {
        return Err(Error::InvalidArgument("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut session = DecodeSession::start(model, motion)?;
    let v = model.config.vocab_size;
    let mut arena: Vec<RowRecord> = Vec::new();

    let root = Hypothesis {
        tokens: Vec::new(),
        log_probs: Vec::new(),
        score: 0.0,
        h: session.h0,
        p_prev: None,
        rows: Vec::new(),
        done: false,
    };
    let mut pool = vec![root];

    for depth in 0..max_len {
        if pool.iter().all(|h| h.done) {
            break;
        }
        let mut next_pool: Vec<Hypothesis> = Vec::new();
        for hyp in pool {
            if hyp.done {
                next_pool.push(hyp);
                continue;
            }
            let prev = if depth == 0 { SOS_ID } else { *hyp.tokens.last().unwrap() };
            let step = session.step(&model.config, hyp.h, hyp.p_prev, prev)?;
            let lp = session.tape.value(step.log_probs).data().to_vec();
            let row_idx = arena.len();
            arena.push(record_rows(&session.tape, &step));

            // Rank the extensions; ties prefer the lower word id so that
            // beam size 1 reproduces greedy decoding exactly.
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| {
                lp[b].partial_cmp(&lp[a]).unwrap().then(a.cmp(&b))
            });
            for &token in order.iter().take(beam_size) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                let mut log_probs = hyp.log_probs.clone();
                log_probs.push(lp[token]);
                let mut rows = hyp.rows.clone();
                rows.push(row_idx);
                next_pool.push(Hypothesis {
                    score: hyp.score + lp[token],
                    done: token == EOS_ID || tokens.len() == max_len,
                    tokens,
                    log_probs,
                    h: step.h,
                    p_prev: step.attention.position.or(hyp.p_prev),
                    rows,
                });
            }
        }
        next_pool.sort_by(|a, b| {
            b.normalized(length_norm)
                .partial_cmp(&a.normalized(length_norm))
                .unwrap()
        });
        next_pool.truncate(beam_size);
        pool = next_pool;
    }

    pool.sort_by(|a, b| {
        b.normalized(length_norm)
            .partial_cmp(&a.normalized(length_norm))
            .unwrap()
    });
    Ok(pool
        .into_iter()
        .map(|hyp| {
            let rows = hyp
                .rows
                .iter()
                .map(|&i| RowRecord {
                    row: arena[i].row.clone(),
                    raw_row: arena[i].raw_row.clone(),
                    position: arena[i].position,
                    segment: arena[i].segment.clone(),
                })
                .collect();
            assemble(hyp.tokens, hyp.log_probs, rows, length_norm)
        })
        .collect())
}
