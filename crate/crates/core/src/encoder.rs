//! Motion encoders: unidirectional GRU, bidirectional GRU, and per-frame MLP.
//!
//! All three consume a motion matrix of shape `[T_x, input_dim]` and produce
//! one state row per frame. The recurrent encoders additionally expose their
//! final forward hidden state, which seeds the decoder; the MLP is a
//! frame-local map with no summary state.
//!
//! Parameter counts follow closed forms kept alongside the configs:
//! a GRU direction holds `3·(n·input + n·n + n)` values (three gates, each
//! with an input matrix, a recurrence matrix and a bias), and an MLP stack
//! holds `Σ_i d_i·d_{i−1} + d_i` with `d_{−1} = input_dim`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

/// Which encoder architecture to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Gru,
    BiGru,
    Mlp,
}

/// Shape-level description of an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Width of one motion frame (21 joints × xyz = 63 by default).
    pub input_dim: usize,
    /// Recurrent state size per direction; unused by the MLP.
    pub hidden_dim: usize,
    /// Layer widths for the MLP encoder, outermost first. The final width is
    /// the encoder output size and must equal the decoder hidden size.
    pub mlp_dims: Vec<usize>,
}

impl EncoderConfig {
    pub fn gru(input_dim: usize, hidden_dim: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::Gru,
            input_dim,
            hidden_dim,
            mlp_dims: Vec::new(),
        }
    }

    pub fn bigru(input_dim: usize, hidden_dim: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::BiGru,
            input_dim,
            hidden_dim,
            mlp_dims: Vec::new(),
        }
    }

    pub fn mlp(input_dim: usize, dims: Vec<usize>) -> Self {
        EncoderConfig {
            kind: EncoderKind::Mlp,
            input_dim,
            hidden_dim: 0,
            mlp_dims: dims,
        }
    }

    /// 2 for the bidirectional GRU, 1 otherwise.
    pub fn direction_multiplier(&self) -> usize {
        match self.kind {
            EncoderKind::BiGru => 2,
            _ => 1,
        }
    }

    /// Width of one encoder state row.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            EncoderKind::Gru => self.hidden_dim,
            EncoderKind::BiGru => 2 * self.hidden_dim,
            EncoderKind::Mlp => *self.mlp_dims.last().unwrap_or(&0),
        }
    }

    /// Check internal consistency and the coupling to the decoder size: the
    /// MLP's last layer width doubles as the decoder hidden size.
    pub fn validate(&self, decoder_hidden: usize) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("encoder input_dim must be ≥ 1".into()));
        }
        match self.kind {
            EncoderKind::Gru | EncoderKind::BiGru => {
                if self.hidden_dim == 0 {
                    return Err(Error::InvalidConfig(
                        "recurrent encoder hidden_dim must be ≥ 1".into(),
                    ));
                }
            }
            EncoderKind::Mlp => {
                if self.mlp_dims.is_empty() || self.mlp_dims.contains(&0) {
                    return Err(Error::InvalidConfig(
                        "mlp encoder needs at least one nonzero layer width".into(),
                    ));
                }
                let last = *self.mlp_dims.last().unwrap();
                if last != decoder_hidden {
                    return Err(Error::InvalidConfig(format!(
                        "mlp final width {} must equal decoder hidden size {}",
                        last, decoder_hidden
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters, from the closed forms in the
    /// module docs.
    pub fn param_count(&self) -> usize {
        match self.kind {
            EncoderKind::Gru => gru_cell_param_count(self.input_dim, self.hidden_dim),
            EncoderKind::BiGru => 2 * gru_cell_param_count(self.input_dim, self.hidden_dim),
            EncoderKind::Mlp => {
                let mut prev = self.input_dim;
                let mut total = 0;
                for &d in &self.mlp_dims {
                    total += d * prev + d;
                    prev = d;
                }
                total
            }
        }
    }
}

/// `3·(n·input + n·n + n)`: three gates, each an input matrix, a recurrence
/// matrix and a bias.
pub fn gru_cell_param_count(input: usize, n: usize) -> usize {
    3 * (n * input + n * n + n)
}

/// Tape handles for one GRU direction's nine parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct GruCellIds {
    pub w_z: NodeId,
    pub u_z: NodeId,
    pub b_z: NodeId,
    pub w_r: NodeId,
    pub u_r: NodeId,
    pub b_r: NodeId,
    pub w_h: NodeId,
    pub u_h: NodeId,
    pub b_h: NodeId,
}

/// Tape handles for one encoder's parameters.
#[derive(Debug, Clone)]
pub enum EncoderIds {
    Gru { fwd: GruCellIds },
    BiGru { fwd: GruCellIds, bwd: GruCellIds },
    /// `(weight [d_i, d_{i−1}], bias [d_i])` per layer, outermost first.
    Mlp { layers: Vec<(NodeId, NodeId)> },
}

/// Per-frame encoder states plus the recurrent summary, all tape-resident.
#[derive(Debug, Clone, Copy)]
pub struct EncodedMotion {
    /// `[T_x, output_dim]` matrix of per-frame states.
    pub states: NodeId,
    /// Final hidden state of the forward recurrence; `None` for the MLP.
    pub final_forward: Option<NodeId>,
    pub t_x: usize,
}

/// One GRU update with the gating convention
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r⊙h) + b_h)`, `h′ = (1−z)⊙h̃ + z⊙h`.
///
/// With all-zero weights and biases this reduces to `h′ = 0.5·h`.
pub fn gru_cell_step(
    tape: &mut Tape,
    x: NodeId,
    h_prev: NodeId,
    cell: &GruCellIds,
) -> Result<NodeId> {
    check_gate(tape, "gru_cell_step: W_z x", cell.w_z, x)?;
    check_gate(tape, "gru_cell_step: U_z h", cell.u_z, h_prev)?;
    check_gate(tape, "gru_cell_step: W_r x", cell.w_r, x)?;
    check_gate(tape, "gru_cell_step: U_r h", cell.u_r, h_prev)?;
    check_gate(tape, "gru_cell_step: W_h x", cell.w_h, x)?;
    check_gate(tape, "gru_cell_step: U_h h", cell.u_h, h_prev)?;

    let z = gate(tape, cell.w_z, x, cell.u_z, h_prev, cell.b_z)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, cell.w_r, x, cell.u_r, h_prev, cell.b_r)?;
    let r = tape.sigmoid(r);

    let rh = tape.mul(r, h_prev)?;
    let cand = gate(tape, cell.w_h, x, cell.u_h, rh, cell.b_h)?;
    let cand = tape.tanh(cand);

    let keep = tape.mul(z, h_prev)?;
    let inv_z = tape.one_minus(z);
    let update = tape.mul(inv_z, cand)?;
    tape.add(update, keep)
}

fn gate(
    tape: &mut Tape,
    w: NodeId,
    x: NodeId,
    u: NodeId,
    h: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let s = tape.add(wx, uh)?;
    tape.add(s, b)
}

fn check_gate(tape: &Tape, which: &'static str, w: NodeId, x: NodeId) -> Result<()> {
    let tw = tape.value(w);
    let tx = tape.value(x);
    if tw.shape().len() != 2 || tw.shape()[1] != tx.len() {
        return Err(Error::ShapeMismatch {
            op: which,
            lhs: tw.shape().to_vec(),
            rhs: tx.shape().to_vec(),
        });
    }
    Ok(())
}

/// Run the configured encoder over a `[T_x, input_dim]` motion node.
pub fn encode(
    tape: &mut Tape,
    motion: NodeId,
    cfg: &EncoderConfig,
    params: &EncoderIds,
) -> Result<EncodedMotion> {
    let shape = tape.value(motion).shape().to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::InvalidArgument(format!(
            "encode expects a non-empty [frames, width] motion, got shape {:?}",
            shape
        )));
    }
    if shape[1] != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "encode: motion width vs input_dim",
            lhs: shape,
            rhs: vec![cfg.input_dim],
        });
    }
    let t_x = shape[0];

    match (params, cfg.kind) {
        (EncoderIds::Gru { fwd }, EncoderKind::Gru) => {
            let hs = run_direction(tape, motion, t_x, fwd, false, cfg.hidden_dim)?;
            let final_forward = *hs.last().expect("t_x >= 1");
            let states = tape.stack(&hs)?;
            Ok(EncodedMotion {
                states,
                final_forward: Some(final_forward),
                t_x,
            })
        }
        (EncoderIds::BiGru { fwd, bwd }, EncoderKind::BiGru) => {
            let hf = run_direction(tape, motion, t_x, fwd, false, cfg.hidden_dim)?;
            let hb = run_direction(tape, motion, t_x, bwd, true, cfg.hidden_dim)?;
            let final_forward = *hf.last().expect("t_x >= 1");
            let mut rows = Vec::with_capacity(t_x);
            for j in 0..t_x {
                rows.push(tape.concat(&[hf[j], hb[j]])?);
            }
            let states = tape.stack(&rows)?;
            Ok(EncodedMotion {
                states,
                final_forward: Some(final_forward),
                t_x,
            })
        }
        (EncoderIds::Mlp { layers }, EncoderKind::Mlp) => {
            let mut cur = motion;
            for &(w, b) in layers {
                let wt = tape.transpose(w)?;
                let prod = tape.matmul(cur, wt)?;
                let biased = tape.add_row_vec(prod, b)?;
                cur = tape.tanh(biased);
            }
            Ok(EncodedMotion {
                states: cur,
                final_forward: None,
                t_x,
            })
        }
        _ => Err(Error::InvalidConfig(
            "encoder parameters do not match the configured kind".into(),
        )),
    }
}

/// Hidden state per frame for one recurrence direction, in frame order.
fn run_direction(
    tape: &mut Tape,
    motion: NodeId,
    t_x: usize,
    cell: &GruCellIds,
    reverse: bool,
    hidden: usize,
) -> Result<Vec<NodeId>> {
    let mut h = tape.leaf(crate::tensor::Tensor::zeros(&[hidden]));
    let mut out = vec![0; t_x];
    let order: Vec<usize> = if reverse {
        (0..t_x).rev().collect()
    } else {
        (0..t_x).collect()
    };
    for j in order {
        let x = tape.row(motion, j)?;
        h = gru_cell_step(tape, x, h, cell)?;
        out[j] = h;
    }
    Ok(out)
}
