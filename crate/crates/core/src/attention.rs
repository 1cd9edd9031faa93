//! Alignment between decoder steps and motion frames: global softmax
//! attention plus two local variants that predict a frame position and
//! reweight with a Gaussian window around it.
//!
//! The recurrent local variant advances its position monotonically: each
//! step moves at least `ε = (1−α)·2D` frames forward, where `D` is the
//! window half-width and `α` the configured overlap. At `α = 0` consecutive
//! windows are provably disjoint, which is what turns an attention trace
//! into a motion segmentation. The previous position enters the forward
//! step raw (so the `+ε` guarantee is structural) and is clamped to
//! `T_x − 1` only inside the remaining-room factor, which keeps that factor
//! non-negative after the position passes the end of the motion.
//!
//! Positions are real-valued; integer windows use round-half-up. A window
//! pushed wholly past the motion clips to an empty segment, and with
//! masking on the context vector then collapses to zero — downstream code
//! treats that as "this step looks at nothing", not as an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{round_half_up, SegmentInterval};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Soft,
    Local,
    LocalRecurrent,
}

impl AttentionKind {
    pub fn parse(name: &str) -> Result<AttentionKind> {
        match name {
            "soft" => Ok(AttentionKind::Soft),
            "local" => Ok(AttentionKind::Local),
            "local_recurrent" | "local-recurrent" => Ok(AttentionKind::LocalRecurrent),
            other => Err(Error::InvalidConfig(format!(
                "unknown attention kind {other:?}; expected soft, local, or local-recurrent"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttentionKind::Soft => "soft",
            AttentionKind::Local => "local",
            AttentionKind::LocalRecurrent => "local_recurrent",
        }
    }

    /// True for the variants that predict a position and apply a window.
    pub fn is_local(&self) -> bool {
        !matches!(self, AttentionKind::Soft)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    /// Window half-width `D`.
    pub window: usize,
    /// Gaussian standard deviation; `None` selects `D/2`.
    pub radius: Option<f64>,
    /// Window overlap `α ∈ [0,1]`; the minimum step is `ε = (1−α)·2D`.
    pub overlap_alpha: f64,
    /// Zero weights outside the window instead of merely down-weighting.
    pub mask: bool,
    /// Truncate the window at the position: `⟦p−D, p⟦` instead of `⟦p−D, p+D⟦`.
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(kind: AttentionKind) -> Self {
        AttentionConfig {
            kind,
            window: 5,
            radius: None,
            overlap_alpha: 0.0,
            mask: false,
            causal: false,
        }
    }

    pub fn soft() -> Self {
        Self::new(AttentionKind::Soft)
    }

    pub fn local() -> Self {
        Self::new(AttentionKind::Local)
    }

    pub fn local_recurrent() -> Self {
        Self::new(AttentionKind::LocalRecurrent)
    }

    /// Minimum forward step of the recurrent position.
    pub fn epsilon(&self) -> f64 {
        (1.0 - self.overlap_alpha) * 2.0 * self.window as f64
    }

    pub fn radius_value(&self) -> f64 {
        self.radius.unwrap_or(self.window as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_local() {
            if self.window == 0 {
                return Err(Error::InvalidConfig(
                    "window half-width must be at least 1".into(),
                ));
            }
            if self.radius_value() <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "window radius {} must be positive",
                    self.radius_value()
                )));
            }
            if !(0.0..=1.0).contains(&self.overlap_alpha) {
                return Err(Error::InvalidConfig(format!(
                    "overlap {} must lie in [0,1]",
                    self.overlap_alpha
                )));
            }
        }
        Ok(())
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig::soft()
    }
}

/// Node ids of the attention parameters inside one tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionView {
    /// `[A, n′]`, applied to the decoder state.
    pub w_a: NodeId,
    /// `[A, d_s]`, applied to each encoder state.
    pub u_a: NodeId,
    /// `[A]`, the energy read-out.
    pub v_a: NodeId,
    /// `[A, n′]`, position predictor (local modes only).
    pub w_p: Option<NodeId>,
    /// `[A]`, position read-out (local modes only).
    pub v_p: Option<NodeId>,
}

/// `U_a · s_j` for every frame, computed once per motion: `[T_x, A]`.
pub fn precompute_keys(tape: &mut Tape, u_a: NodeId, states: NodeId) -> Result<NodeId> {
    let ut = tape.transpose(u_a)?;
    tape.matmul(states, ut)
}

/// Energies `e_j = v_aᵀ tanh(W_a h_prev + U_a s_j)` as a `[T_x]` vector.
pub fn attention_energies(
    tape: &mut Tape,
    w_a: NodeId,
    v_a: NodeId,
    keys: NodeId,
    h_prev: NodeId,
) -> Result<NodeId> {
    let wh = tape.matmul(w_a, h_prev)?;
    let pre = tape.add_row_vec(keys, wh)?;
    let act = tape.tanh(pre);
    tape.matmul(act, v_a)
}

/// Softmax over all frames.
pub fn soft_weights(tape: &mut Tape, energies: NodeId) -> Result<NodeId> {
    tape.softmax(energies)
}

/// Predicted position `p = T_x · σ(v_pᵀ tanh(W_p h_prev))`, in `[0, T_x]`.
pub fn local_position(
    tape: &mut Tape,
    w_p: NodeId,
    v_p: NodeId,
    h_prev: NodeId,
    t_x: usize,
) -> Result<NodeId> {
    let wh = tape.matmul(w_p, h_prev)?;
    let act = tape.tanh(wh);
    let logit = tape.matmul(v_p, act)?;
    let sig = tape.sigmoid(logit);
    Ok(tape.scale(sig, t_x as f64))
}

/// One recurrent-position step:
/// `p_t = p_prev + ε + (T_x−1 − min(p_prev, T_x−1)) · σ(v_pᵀ W_p h_prev)`.
pub fn recurrent_position(
    tape: &mut Tape,
    w_p: NodeId,
    v_p: NodeId,
    h_prev: NodeId,
    p_prev: NodeId,
    t_x: usize,
    epsilon: f64,
) -> Result<NodeId> {
    let wh = tape.matmul(w_p, h_prev)?;
    let logit = tape.matmul(v_p, wh)?;
    let sig = tape.sigmoid(logit);
    let end = (t_x - 1) as f64;
    let clamped = tape.clamp_max(p_prev, end);
    let neg = tape.scale(clamped, -1.0);
    let room = tape.add_const(neg, end);
    let gain = tape.mul(room, sig)?;
    let shifted = tape.add_const(p_prev, epsilon);
    tape.add(shifted, gain)
}

/// Value-level twin of [`recurrent_position`] for oracles and property
/// tests: the position update as a pure function of the sigmoid output.
pub fn recurrent_position_value(p_prev: f64, sigma: f64, t_x: usize, epsilon: f64) -> f64 {
    let end = (t_x - 1) as f64;
    p_prev + epsilon + (end - p_prev.min(end)) * sigma
}

/// Integer window around a real position: `⟦round(p)−D, round(p)+D⟦`
/// clipped to `⟦0, T_x⟦` (the causal variant ends at `round(p)` instead).
pub fn window_segment(p_t: f64, d: usize, t_x: usize, causal: bool) -> SegmentInterval {
    let center = round_half_up(p_t);
    let d = d as i64;
    let lo = (center - d).max(0).min(t_x as i64) as usize;
    let hi_raw = if causal { center } else { center + d };
    let hi = hi_raw.max(lo as i64).min(t_x as i64) as usize;
    SegmentInterval {
        start: lo,
        end: hi.max(lo),
    }
}

/// Reweight a softmax row by `exp(−(j−p_t)²/(2r²))`, differentiably in
/// `p_t`; with `mask` set, weights outside `segment` become exactly zero.
pub fn gaussian_window(
    tape: &mut Tape,
    raw: NodeId,
    p_t: NodeId,
    segment: &SegmentInterval,
    radius: f64,
    mask: bool,
) -> Result<NodeId> {
    let t_x = tape.value(raw).len();
    let positions = tape.leaf(Tensor::vector((0..t_x).map(|j| j as f64).collect()));
    let diff = tape.sub(positions, p_t)?;
    let sq = tape.mul(diff, diff)?;
    let scaled = tape.scale(sq, -1.0 / (2.0 * radius * radius));
    let factor = tape.exp(scaled);
    let windowed = tape.mul(raw, factor)?;
    if !mask {
        return Ok(windowed);
    }
    let gate: Vec<f64> = (0..t_x)
        .map(|j| if segment.contains(j as i64) { 1.0 } else { 0.0 })
        .collect();
    let gate = tape.leaf(Tensor::vector(gate));
    tape.mul(windowed, gate)
}

/// `C = Σ_j a_j s_j`, a `[d_s]` vector.
pub fn context_vector(tape: &mut Tape, weights: NodeId, states: NodeId) -> Result<NodeId> {
    tape.matmul(weights, states)
}

/// Everything one attention application produces.
#[derive(Debug, Clone)]
pub struct AttentionStep {
    /// Weights the context vector was built from (post-window in local modes).
    pub weights: NodeId,
    /// Softmax weights before any windowing; equals `weights` in soft mode.
    pub raw_weights: NodeId,
    pub context: NodeId,
    /// Position node, local modes only; feed it back as `p_prev`.
    pub position: Option<NodeId>,
    pub position_value: Option<f64>,
    pub segment: Option<SegmentInterval>,
}

/// One full attention application for the configured mode.
///
/// `keys` is the per-motion precomputation from [`precompute_keys`];
/// `p_prev` is the previous step's position node (recurrent mode only —
/// pass `None` at the first step, which starts from position 0).
pub fn attend(
    tape: &mut Tape,
    cfg: &AttentionConfig,
    view: &AttentionView,
    keys: NodeId,
    states: NodeId,
    h_prev: NodeId,
    p_prev: Option<NodeId>,
    t_x: usize,
) -> Result<AttentionStep> {
    let energies = attention_energies(tape, view.w_a, view.v_a, keys, h_prev)?;
    let raw = soft_weights(tape, energies)?;
    if cfg.kind == AttentionKind::Soft {
        let context = context_vector(tape, raw, states)?;
        return Ok(AttentionStep {
            weights: raw,
            raw_weights: raw,
            context,
            position: None,
            position_value: None,
            segment: None,
        });
    }

    let (w_p, v_p) = match (view.w_p, view.v_p) {
        (Some(w), Some(v)) => (w, v),
        _ => {
            return Err(Error::InvalidState(format!(
                "{} attention requires position parameters",
                cfg.kind.name()
            )))
        }
    };
    let p_t = match cfg.kind {
        AttentionKind::Local => local_position(tape, w_p, v_p, h_prev, t_x)?,
        AttentionKind::LocalRecurrent => {
            let prev = match p_prev {
                Some(node) => node,
                None => tape.scalar(0.0),
            };
            recurrent_position(tape, w_p, v_p, h_prev, prev, t_x, cfg.epsilon())?
        }
        AttentionKind::Soft => unreachable!(),
    };
    let p_value = tape.value(p_t).item();
    let segment = window_segment(p_value, cfg.window, t_x, cfg.causal);
    let weights = gaussian_window(tape, raw, p_t, &segment, cfg.radius_value(), cfg.mask)?;
    let context = context_vector(tape, weights, states)?;
    Ok(AttentionStep {
        weights,
        raw_weights: raw,
        context,
        position: Some(p_t),
        position_value: Some(p_value),
        segment: Some(segment),
    })
}

/// Evaluated attention weights collected over a generated sequence.
/// `rows` are the weights the decoder consumed; `raw_rows` the pre-window
/// softmax rows (identical in soft mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub rows: Vec<Vec<f64>>,
    pub raw_rows: Vec<Vec<f64>>,
}

/// Positions and windows of a generated sequence; empty in soft mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrace {
    pub positions: Vec<f64>,
    pub segments: Vec<SegmentInterval>,
}

impl AlignmentTrace {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
