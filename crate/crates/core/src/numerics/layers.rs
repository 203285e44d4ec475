use super::{NumericsError, Tape, Var};

/// Tape handles of one LSTM layer's parameters.
///
/// `wx: [in, 4h]`, `wh: [h, 4h]`, `b: [4h]`; gate blocks are ordered
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// One canonical LSTM update. `x: [batch, in]`, `h`, `c: [batch, hidden]`.
/// Returns the new `(h, c)`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var), NumericsError> {
    let hidden = tape.value(h).shape().get(1).copied().unwrap_or(0);
    if tape.value(c).shape() != tape.value(h).shape() || tape.value(w.b).shape() != [4 * hidden] {
        return Err(NumericsError::shape("lstm_cell", tape.value(h).shape(), tape.value(c).shape()));
    }
    let xs = tape.dense(x, w.wx, w.b).map_err(|e| e.rename("lstm_cell"))?;
    let hs = tape.matmul(h, w.wh).map_err(|e| e.rename("lstm_cell"))?;
    let gates = tape.add(xs, hs).map_err(|e| e.rename("lstm_cell"))?;
    let block = |tape: &mut Tape, k: usize| tape.slice(gates, 1, k * hidden, hidden);
    let i = block(tape, 0)?;
    let f = block(tape, 1)?;
    let g = block(tape, 2)?;
    let o = block(tape, 3)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}
