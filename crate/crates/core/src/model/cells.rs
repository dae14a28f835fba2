//! Recurrent cell steps, expressed as graph operations so gradients flow
//! through the unrolled sequence.
//!
//! The LSTM keeps its four gates in one combined weight matrix of width
//! `4 * hidden`, column blocks ordered input, forget, candidate, output.

use crate::numerics::{Graph, Var};

/// Graph handles for one LSTM cell's parameters: `wx [in, 4H]`,
/// `wh [H, 4H]`, `b [4H]`.
#[derive(Clone, Copy)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// Graph handles for one vanilla RNN cell: `wx [in, H]`, `wh [H, H]`,
/// `b [H]`.
#[derive(Clone, Copy)]
pub struct RnnVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// Hidden state carried between steps; `c` is present for LSTM cells.
#[derive(Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

/// One LSTM step: gates from `x wx + h wh + b`, then
/// `c' = f*c + i*g`, `h' = o * tanh(c')`.
pub fn lstm_step(g: &mut Graph, p: &LstmVars, x: Var, h: Var, c: Var, hidden: usize) -> (Var, Var) {
    let zx = g.matmul(x, p.wx);
    let zh = g.matmul(h, p.wh);
    let z = g.add(zx, zh);
    let z = g.add_row(z, p.b);
    let i_gate = g.slice_cols(z, 0, hidden);
    let f_gate = g.slice_cols(z, hidden, 2 * hidden);
    let g_cand = g.slice_cols(z, 2 * hidden, 3 * hidden);
    let o_gate = g.slice_cols(z, 3 * hidden, 4 * hidden);
    let i_gate = g.sigmoid(i_gate);
    let f_gate = g.sigmoid(f_gate);
    let g_cand = g.tanh(g_cand);
    let o_gate = g.sigmoid(o_gate);
    let keep = g.mul(f_gate, c);
    let write = g.mul(i_gate, g_cand);
    let c_next = g.add(keep, write);
    let c_act = g.tanh(c_next);
    let h_next = g.mul(o_gate, c_act);
    (h_next, c_next)
}

/// One vanilla RNN step: `h' = tanh(x wx + h wh + b)`.
pub fn rnn_step(g: &mut Graph, p: &RnnVars, x: Var, h: Var) -> Var {
    let zx = g.matmul(x, p.wx);
    let zh = g.matmul(h, p.wh);
    let z = g.add(zx, zh);
    let z = g.add_row(z, p.b);
    g.tanh(z)
}
