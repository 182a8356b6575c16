//! Standard LSTM cell: gates i/f/o with sigmoid, candidate with tanh,
//! `c_t = f*c + i*g`, `h_t = o*tanh(c_t)`. Each gate keeps its own input
//! weights, recurrent weights, and bias.

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) const INIT_RANGE: f64 = 0.08;

/// Parameter handles for one LSTM cell.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_i: ParamId,
    u_i: ParamId,
    b_i: ParamId,
    w_f: ParamId,
    u_f: ParamId,
    b_f: ParamId,
    w_g: ParamId,
    u_g: ParamId,
    b_g: ParamId,
    w_o: ParamId,
    u_o: ParamId,
    b_o: ParamId,
}

impl LstmCell {
    /// Register the twelve gate parameters under `prefix`. Weights start
    /// uniform in [-0.08, 0.08]; the forget-gate bias starts at 1.0.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> LstmCell {
        let mut weight = |name: &str, rows: usize| {
            store.register(
                format!("{prefix}.{name}"),
                Tensor::uniform(vec![rows, hidden_dim], -INIT_RANGE, INIT_RANGE, rng),
            )
        };
        let w_i = weight("w_i", input_dim);
        let u_i = weight("u_i", hidden_dim);
        let w_f = weight("w_f", input_dim);
        let u_f = weight("u_f", hidden_dim);
        let w_g = weight("w_g", input_dim);
        let u_g = weight("u_g", hidden_dim);
        let w_o = weight("w_o", input_dim);
        let u_o = weight("u_o", hidden_dim);
        let mut bias = |name: &str, fill: Option<f64>| {
            let t = match fill {
                Some(v) => {
                    Tensor::new(vec![1, hidden_dim], vec![v; hidden_dim]).expect("bias shape")
                }
                None => Tensor::uniform(vec![1, hidden_dim], -INIT_RANGE, INIT_RANGE, rng),
            };
            store.register(format!("{prefix}.{name}"), t)
        };
        let b_i = bias("b_i", None);
        let b_f = bias("b_f", Some(1.0));
        let b_g = bias("b_g", None);
        let b_o = bias("b_o", None);
        LstmCell {
            input_dim,
            hidden_dim,
            w_i,
            u_i,
            b_i,
            w_f,
            u_f,
            b_f,
            w_g,
            u_g,
            b_g,
            w_o,
            u_o,
            b_o,
        }
    }

    /// Bind the cell's parameters to a tape once per sequence; the returned
    /// bundle is what actually runs steps.
    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmWeights {
        LstmWeights {
            hidden_dim: self.hidden_dim,
            w_i: tape.param(store, self.w_i),
            u_i: tape.param(store, self.u_i),
            b_i: tape.param(store, self.b_i),
            w_f: tape.param(store, self.w_f),
            u_f: tape.param(store, self.u_f),
            b_f: tape.param(store, self.b_f),
            w_g: tape.param(store, self.w_g),
            u_g: tape.param(store, self.u_g),
            b_g: tape.param(store, self.b_g),
            w_o: tape.param(store, self.w_o),
            u_o: tape.param(store, self.u_o),
            b_o: tape.param(store, self.b_o),
        }
    }

    pub fn zero_state(&self) -> (Tensor, Tensor) {
        (
            Tensor::zeros(vec![1, self.hidden_dim]),
            Tensor::zeros(vec![1, self.hidden_dim]),
        )
    }
}

/// Tape-bound LSTM parameters.
pub struct LstmWeights {
    pub hidden_dim: usize,
    w_i: Tensor,
    u_i: Tensor,
    b_i: Tensor,
    w_f: Tensor,
    u_f: Tensor,
    b_f: Tensor,
    w_g: Tensor,
    u_g: Tensor,
    b_g: Tensor,
    w_o: Tensor,
    u_o: Tensor,
    b_o: Tensor,
}

impl LstmWeights {
    /// One recurrence step: `x` is `[1 x input_dim]`, `h`/`c` are
    /// `[1 x hidden_dim]`. Returns the new `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let gate = |tape: &mut Tape, w: &Tensor, u: &Tensor, b: &Tensor| -> Result<Tensor> {
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(h, u)?;
            let s = tape.add(&xw, &hu)?;
            tape.add(&s, b)
        };
        let i_pre = gate(tape, &self.w_i, &self.u_i, &self.b_i)?;
        let i = tape.sigmoid(&i_pre);
        let f_pre = gate(tape, &self.w_f, &self.u_f, &self.b_f)?;
        let f = tape.sigmoid(&f_pre);
        let g_pre = gate(tape, &self.w_g, &self.u_g, &self.b_g)?;
        let g = tape.tanh(&g_pre);
        let o_pre = gate(tape, &self.w_o, &self.u_o, &self.b_o)?;
        let o = tape.sigmoid(&o_pre);

        let fc = tape.mul(&f, c)?;
        let ig = tape.mul(&i, &g)?;
        let c_new = tape.add(&fc, &ig)?;
        let c_act = tape.tanh(&c_new);
        let h_new = tape.mul(&o, &c_act)?;
        Ok((h_new, c_new))
    }
}

pub(crate) fn uniform_init(
    store: &mut ParamStore,
    name: String,
    shape: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> ParamId {
    store.register(name, Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, rng))
}

/// Draw from a categorical distribution given probabilities summing to ~1.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with lowest-index tie-break.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
