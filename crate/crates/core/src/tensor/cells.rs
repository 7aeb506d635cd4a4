//! Recurrent cells. Gate order along the channel axis is input, forget,
//! output, candidate.

use super::{Graph, Scalar, Var};
use crate::error::{Error, Result};

impl<T: Scalar> Graph<T> {
    fn gates(&mut self, pre: Var, hidden: usize, c: Var) -> Result<(Var, Var)> {
        let i = self.narrow(pre, 1, 0, hidden)?;
        let f = self.narrow(pre, 1, hidden, hidden)?;
        let o = self.narrow(pre, 1, 2 * hidden, hidden)?;
        let g = self.narrow(pre, 1, 3 * hidden, hidden)?;
        let i = self.sigmoid(i);
        let f = self.sigmoid(f);
        let o = self.sigmoid(o);
        let g = self.tanh(g);
        let keep = self.mul(f, c)?;
        let write = self.mul(i, g)?;
        let c_next = self.add(keep, write)?;
        let squashed = self.tanh(c_next);
        let h_next = self.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Convolutional LSTM step. `kernel` is `4H x (Cx + H) x k x k` applied
    /// with same-padding to the channel concatenation `[x, h]`.
    pub fn conv_lstm_step(&mut self, x: Var, h: Var, c: Var, kernel: Var, bias: Var) -> Result<(Var, Var)> {
        let (xs, hs, cs) = (self.shape(x).to_vec(), self.shape(h).to_vec(), self.shape(c).to_vec());
        if xs.len() != 4 || hs != cs || hs.len() != 4 || xs[0] != hs[0] || xs[2..] != hs[2..] {
            return Err(Error::InvalidShape(format!(
                "conv_lstm_step input {xs:?}, hidden {hs:?}, cell {cs:?}"
            )));
        }
        let ks = self.shape(kernel).to_vec();
        let hidden = hs[1];
        if ks.len() != 4 || ks[0] != 4 * hidden || ks[2] != ks[3] || ks[2] % 2 == 0 {
            return Err(Error::InvalidShape(format!(
                "conv_lstm_step kernel {ks:?} for hidden size {hidden}"
            )));
        }
        let joined = self.concat(&[x, h], 1)?;
        let pre = self.conv2d(joined, kernel, bias, 1, ks[2] / 2)?;
        self.gates(pre, hidden, c)
    }

    /// Dense LSTM step. `weight` is `(m + H) x 4H`.
    pub fn lstm_step(&mut self, x: Var, h: Var, c: Var, weight: Var, bias: Var) -> Result<(Var, Var)> {
        let (xs, hs, cs) = (self.shape(x).to_vec(), self.shape(h).to_vec(), self.shape(c).to_vec());
        if xs.len() != 2 || hs != cs || hs.len() != 2 || xs[0] != hs[0] {
            return Err(Error::InvalidShape(format!(
                "lstm_step input {xs:?}, hidden {hs:?}, cell {cs:?}"
            )));
        }
        let hidden = hs[1];
        let ws = self.shape(weight).to_vec();
        if ws != [xs[1] + hidden, 4 * hidden] {
            return Err(Error::InvalidShape(format!(
                "lstm_step weight {ws:?} for input {xs:?} and hidden size {hidden}"
            )));
        }
        let joined = self.concat(&[x, h], 1)?;
        let pre = self.dense(joined, weight, bias)?;
        self.gates(pre, hidden, c)
    }
}
