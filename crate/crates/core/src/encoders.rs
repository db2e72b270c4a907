//! Bidirectional LSTM sequence encoders.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::xavier_uniform;

const GATES: [&str; 4] = ["i", "f", "o", "c"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CELL: usize = 3;

/// One direction of an LSTM. Gate order is input, forget, output, candidate.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

impl LstmParams {
    pub fn bind(bindings: &Bindings, prefix: &str) -> Result<Self> {
        let get = |kind: &str, g: usize| bindings.var(&format!("{prefix}.{kind}_{}", GATES[g]));
        Ok(Self {
            w: [get("w", 0)?, get("w", 1)?, get("w", 2)?, get("w", 3)?],
            u: [get("u", 0)?, get("u", 1)?, get("u", 2)?, get("u", 3)?],
            b: [get("b", 0)?, get("b", 1)?, get("b", 2)?, get("b", 3)?],
        })
    }

    /// Xavier-uniform weights, zero biases except a forget bias of 1.
    pub fn init(params: &mut ParamSet, prefix: &str, d_in: usize, d_h: usize, rng: &mut ChaCha8Rng) {
        for (g, name) in GATES.iter().enumerate() {
            params.insert(format!("{prefix}.w_{name}"), xavier_uniform(rng, d_in, d_h));
            params.insert(format!("{prefix}.u_{name}"), xavier_uniform(rng, d_h, d_h));
            let bias = if g == FORGET { 1.0 } else { 0.0 };
            params.insert(format!("{prefix}.b_{name}"), Tensor::full(&[d_h], bias));
        }
    }

    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.value(self.u[0]).cols()
    }
}

/// Adds the recurrent term to precomputed input projections `x W + b`.
fn cell_from_projected(
    tape: &mut Tape,
    projected: [Var; 4],
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var)> {
    let mut pre = [h_prev; 4];
    for g in 0..4 {
        let hu = tape.matmul(h_prev, p.u[g])?;
        pre[g] = tape.add(projected[g], hu)?;
    }
    let i = tape.sigmoid(pre[INPUT]);
    let f = tape.sigmoid(pre[FORGET]);
    let o = tape.sigmoid(pre[OUTPUT]);
    let g = tape.tanh(pre[CELL]);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on a `1 × d_in` row with `1 × d_h` states.
pub fn lstm_cell(tape: &mut Tape, x_t: Var, h_prev: Var, c_prev: Var, p: &LstmParams) -> Result<(Var, Var)> {
    let d_h = p.hidden(tape);
    for state in [h_prev, c_prev] {
        if tape.value(state).dims2()? != (1, d_h) {
            return Err(Error::dim("lstm_cell", tape.value(state).shape(), &[1, d_h]));
        }
    }
    let mut projected = [x_t; 4];
    for (slot, (w, b)) in projected.iter_mut().zip(p.w.iter().zip(&p.b)) {
        let xw = tape.matmul(x_t, *w)?;
        *slot = tape.add_row_bias(xw, *b)?;
    }
    cell_from_projected(tape, projected, h_prev, c_prev, p)
}

fn run_direction(tape: &mut Tape, x: Var, p: &LstmParams, reverse: bool) -> Result<Vec<Var>> {
    let n = tape.value(x).rows();
    let d_h = p.hidden(tape);
    // Input projections for all steps at once, sliced per step.
    let mut projected_all = [x; 4];
    for (slot, (w, b)) in projected_all.iter_mut().zip(p.w.iter().zip(&p.b)) {
        let xw = tape.matmul(x, *w)?;
        *slot = tape.add_row_bias(xw, *b)?;
    }
    let mut h = tape.constant(Tensor::zeros(&[1, d_h]));
    let mut c = tape.constant(Tensor::zeros(&[1, d_h]));
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let mut projected = [x; 4];
        for (slot, all) in projected.iter_mut().zip(projected_all) {
            *slot = tape.slice_rows(all, t, 1)?;
        }
        (h, c) = cell_from_projected(tape, projected, h, c, p)?;
        states[t] = h;
    }
    Ok(states)
}

/// Encodes `n × d_in` into `n × 2d_h`; row `t` is the forward state at `t`
/// followed by the backward state at `t`. Initial states are zero.
pub fn bilstm(tape: &mut Tape, x: Var, fwd: &LstmParams, bwd: &LstmParams) -> Result<Var> {
    let (n, d_in) = tape.value(x).dims2()?;
    if n == 0 {
        return Err(Error::Contract("bilstm over an empty sequence".into()));
    }
    for p in [fwd, bwd] {
        let w_rows = tape.value(p.w[0]).rows();
        if w_rows != d_in {
            return Err(Error::dim("bilstm", tape.value(x).shape(), tape.value(p.w[0]).shape()));
        }
    }
    let forward = run_direction(tape, x, fwd, false)?;
    let backward = run_direction(tape, x, bwd, true)?;
    let f = tape.concat_rows(&forward)?;
    let b = tape.concat_rows(&backward)?;
    tape.concat_cols(&[f, b])
}
