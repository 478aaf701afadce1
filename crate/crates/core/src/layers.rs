//! Layer primitives built from tape ops: dense projection, LSTM cell,
//! bidirectional recurrence.
//!
//! Parameter naming is flat and hierarchical, e.g. `trunk.0.fwd.wx_i`.
//! Registration and forward construction use the same name scheme, so a
//! layer is fully described by its prefix and dimensions.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const GATES: [&str; 4] = ["i", "f", "g", "o"];
pub const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
}

/// Register `{prefix}.w` (din×dout) and `{prefix}.b` (1×dout).
pub fn register_dense(store: &mut ParamStore, prefix: &str, din: usize, dout: usize) {
    store.insert(format!("{prefix}.w"), Tensor::zeros(din, dout));
    store.insert(format!("{prefix}.b"), Tensor::zeros(1, dout));
}

/// Affine map applied per row, with optional squashing.
pub fn dense_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    input: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let h = tape.matmul(input, w)?;
    let h = tape.add_bias(h, b)?;
    Ok(match activation {
        Activation::Linear => h,
        Activation::Tanh => tape.tanh(h),
    })
}

/// One direction's LSTM parameters: per gate, input-to-hidden weights,
/// hidden-to-hidden weights, and a bias.
#[derive(Clone, Copy, Debug)]
pub struct LstmDims {
    pub input: usize,
    pub hidden: usize,
}

/// Register both directions of a bidirectional LSTM layer under `prefix`.
pub fn register_blstm(store: &mut ParamStore, prefix: &str, dims: LstmDims) {
    for dir in DIRECTIONS {
        register_lstm_direction(store, &format!("{prefix}.{dir}"), dims);
    }
}

pub fn register_lstm_direction(store: &mut ParamStore, prefix: &str, dims: LstmDims) {
    for gate in GATES {
        store.insert(
            format!("{prefix}.wx_{gate}"),
            Tensor::zeros(dims.input, dims.hidden),
        );
        store.insert(
            format!("{prefix}.wh_{gate}"),
            Tensor::zeros(dims.hidden, dims.hidden),
        );
        store.insert(format!("{prefix}.b_{gate}"), Tensor::zeros(1, dims.hidden));
    }
}

/// Parameter nodes for one direction, loaded onto a tape once per pass.
pub struct LstmGateNodes {
    wx: [NodeId; 4],
    wh: [NodeId; 4],
    b: [NodeId; 4],
    hidden: usize,
}

pub fn load_lstm_direction(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
) -> Result<LstmGateNodes> {
    let mut wx = [0; 4];
    let mut wh = [0; 4];
    let mut b = [0; 4];
    for (k, gate) in GATES.iter().enumerate() {
        wx[k] = tape.param(store, &format!("{prefix}.wx_{gate}"))?;
        wh[k] = tape.param(store, &format!("{prefix}.wh_{gate}"))?;
        b[k] = tape.param(store, &format!("{prefix}.b_{gate}"))?;
    }
    let hidden = tape.value(b[0]).cols();
    Ok(LstmGateNodes { wx, wh, b, hidden })
}

/// Standard gated update: sigmoid input/forget/output gates, tanh
/// candidate and output squashing, no peepholes.
pub fn lstm_cell_step(
    tape: &mut Tape,
    gates: &LstmGateNodes,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let mut pre = [0; 4];
    for k in 0..4 {
        let xi = tape.matmul(x_t, gates.wx[k])?;
        let hi = tape.matmul(h_prev, gates.wh[k])?;
        let s = tape.add(xi, hi)?;
        pre[k] = tape.add(s, gates.b[k])?;
    }
    let i = tape.sigmoid(pre[0]);
    let f = tape.sigmoid(pre[1]);
    let g = tape.tanh(pre[2]);
    let o = tape.sigmoid(pre[3]);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c_t = tape.add(fc, ig)?;
    let tc = tape.tanh(c_t);
    let h_t = tape.mul(o, tc)?;
    Ok((h_t, c_t))
}

fn scan_direction(
    tape: &mut Tape,
    gates: &LstmGateNodes,
    input: NodeId,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let frames = tape.value(input).rows();
    let mut h = tape.input(Tensor::zeros(1, gates.hidden));
    let mut c = tape.input(Tensor::zeros(1, gates.hidden));
    let mut out = vec![0; frames];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for t in order {
        let x_t = tape.row(input, t)?;
        let (h_t, c_t) = lstm_cell_step(tape, gates, x_t, h, c)?;
        out[t] = h_t;
        h = h_t;
        c = c_t;
    }
    Ok(out)
}

/// Bidirectional LSTM over a T×Din input; output row t is the
/// concatenation [forward h_t ; backward h_t], shape T×2H.
pub fn blstm_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    input: NodeId,
) -> Result<NodeId> {
    if tape.value(input).rows() == 0 {
        return Err(Error::InvalidInput("blstm over empty sequence".into()));
    }
    let fwd_gates = load_lstm_direction(tape, store, &format!("{prefix}.fwd"))?;
    let bwd_gates = load_lstm_direction(tape, store, &format!("{prefix}.bwd"))?;
    let fwd = scan_direction(tape, &fwd_gates, input, false)?;
    let bwd = scan_direction(tape, &bwd_gates, input, true)?;
    let rows: Vec<NodeId> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat_cols(f, b))
        .collect::<Result<_>>()?;
    tape.stack_rows(rows)
}
