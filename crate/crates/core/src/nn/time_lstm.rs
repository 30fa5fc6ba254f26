//! Recurrent state encoder over irregularly spaced event windows.
//!
//! Each step consumes a feature vector plus the elapsed time (in days) since
//! the previous event. The elapsed time drives a dedicated gate that scales
//! the candidate write into the cell, and also feeds the output gate, so the
//! encoding of two identical event sequences differs when their spacing
//! differs.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::{flatten_arrays, unflatten_arrays, uniform_init};
use crate::error::{Error, Result};

/// Activation used for the cell candidate and the cell output read-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmActivation {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
pub struct TimeLstmParams {
    input_dim: usize,
    state_dim: usize,
    activation: LstmActivation,
    // time gate: sigma(delta * w_g + b_g), nested inside the write gate
    w_g: Array2<f64>,
    b_g: Array2<f64>,
    w_xg: Array2<f64>,
    // forget / input gates
    w_xf: Array2<f64>,
    w_sf: Array2<f64>,
    b_f: Array2<f64>,
    w_xi: Array2<f64>,
    w_si: Array2<f64>,
    b_i: Array2<f64>,
    // cell candidate
    w_xq: Array2<f64>,
    w_sq: Array2<f64>,
    b_q: Array2<f64>,
    // output gate; w_o scales delta, w_qo gates elementwise on the cell
    w_xo: Array2<f64>,
    w_o: Array2<f64>,
    w_so: Array2<f64>,
    w_qo: Array2<f64>,
    b_o: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TimeLstmVars {
    w_g: Var,
    b_g: Var,
    w_xg: Var,
    w_xf: Var,
    w_sf: Var,
    b_f: Var,
    w_xi: Var,
    w_si: Var,
    b_i: Var,
    w_xq: Var,
    w_sq: Var,
    b_q: Var,
    w_xo: Var,
    w_o: Var,
    w_so: Var,
    w_qo: Var,
    b_o: Var,
}

impl TimeLstmVars {
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.w_g, self.b_g, self.w_xg, self.w_xf, self.w_sf, self.b_f, self.w_xi, self.w_si,
            self.b_i, self.w_xq, self.w_sq, self.b_q, self.w_xo, self.w_o, self.w_so, self.w_qo,
            self.b_o,
        ]
    }
}

impl TimeLstmParams {
    pub fn new(
        input_dim: usize,
        state_dim: usize,
        activation: LstmActivation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input_dim == 0 || state_dim == 0 {
            return Err(Error::Domain("encoder dimensions must be positive".into()));
        }
        let dx = input_dim;
        let ds = state_dim;
        Ok(Self {
            input_dim,
            state_dim,
            activation,
            w_g: uniform_init(1, ds, 1, rng),
            b_g: Array2::zeros((1, ds)),
            w_xg: uniform_init(dx, ds, dx, rng),
            w_xf: uniform_init(dx, ds, dx, rng),
            w_sf: uniform_init(ds, ds, ds, rng),
            b_f: Array2::zeros((1, ds)),
            w_xi: uniform_init(dx, ds, dx, rng),
            w_si: uniform_init(ds, ds, ds, rng),
            b_i: Array2::zeros((1, ds)),
            w_xq: uniform_init(dx, ds, dx, rng),
            w_sq: uniform_init(ds, ds, ds, rng),
            b_q: Array2::zeros((1, ds)),
            w_xo: uniform_init(dx, ds, dx, rng),
            w_o: uniform_init(1, ds, 1, rng),
            w_so: uniform_init(ds, ds, ds, rng),
            w_qo: uniform_init(1, ds, 1, rng),
            b_o: Array2::zeros((1, ds)),
        })
    }

    /// All-zero parameters; useful for closed-form checks.
    pub fn zeros(input_dim: usize, state_dim: usize, activation: LstmActivation) -> Self {
        let dx = input_dim;
        let ds = state_dim;
        Self {
            input_dim,
            state_dim,
            activation,
            w_g: Array2::zeros((1, ds)),
            b_g: Array2::zeros((1, ds)),
            w_xg: Array2::zeros((dx, ds)),
            w_xf: Array2::zeros((dx, ds)),
            w_sf: Array2::zeros((ds, ds)),
            b_f: Array2::zeros((1, ds)),
            w_xi: Array2::zeros((dx, ds)),
            w_si: Array2::zeros((ds, ds)),
            b_i: Array2::zeros((1, ds)),
            w_xq: Array2::zeros((dx, ds)),
            w_sq: Array2::zeros((ds, ds)),
            b_q: Array2::zeros((1, ds)),
            w_xo: Array2::zeros((dx, ds)),
            w_o: Array2::zeros((1, ds)),
            w_so: Array2::zeros((ds, ds)),
            w_qo: Array2::zeros((1, ds)),
            b_o: Array2::zeros((1, ds)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn build(&self, tape: &mut Tape) -> TimeLstmVars {
        TimeLstmVars {
            w_g: tape.leaf(self.w_g.clone()),
            b_g: tape.leaf(self.b_g.clone()),
            w_xg: tape.leaf(self.w_xg.clone()),
            w_xf: tape.leaf(self.w_xf.clone()),
            w_sf: tape.leaf(self.w_sf.clone()),
            b_f: tape.leaf(self.b_f.clone()),
            w_xi: tape.leaf(self.w_xi.clone()),
            w_si: tape.leaf(self.w_si.clone()),
            b_i: tape.leaf(self.b_i.clone()),
            w_xq: tape.leaf(self.w_xq.clone()),
            w_sq: tape.leaf(self.w_sq.clone()),
            b_q: tape.leaf(self.b_q.clone()),
            w_xo: tape.leaf(self.w_xo.clone()),
            w_o: tape.leaf(self.w_o.clone()),
            w_so: tape.leaf(self.w_so.clone()),
            w_qo: tape.leaf(self.w_qo.clone()),
            b_o: tape.leaf(self.b_o.clone()),
        }
    }

    fn act(&self, tape: &mut Tape, v: Var) -> Var {
        match self.activation {
            LstmActivation::Sigmoid => tape.sigmoid(v),
            LstmActivation::Tanh => tape.tanh(v),
        }
    }

    /// Builds the tape graph encoding one window. `xs[k]` is the feature row
    /// of step k, `deltas[k]` the gap (days) to the event before it. Returns
    /// the final hidden state (1 x state_dim).
    pub fn encode(
        &self,
        tape: &mut Tape,
        vars: &TimeLstmVars,
        xs: &[&[f64]],
        deltas: &[f64],
    ) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Domain("encode needs at least one step".into()));
        }
        if xs.len() != deltas.len() {
            return Err(Error::Domain(format!(
                "got {} feature rows but {} deltas",
                xs.len(),
                deltas.len()
            )));
        }
        let mut s = tape.leaf(Array2::zeros((1, self.state_dim)));
        let mut q = tape.leaf(Array2::zeros((1, self.state_dim)));
        for (x_row, &delta) in xs.iter().zip(deltas) {
            if x_row.len() != self.input_dim {
                return Err(Error::Domain(format!(
                    "feature row has dim {}, encoder expects {}",
                    x_row.len(),
                    self.input_dim
                )));
            }
            if !delta.is_finite() || delta < 0.0 {
                return Err(Error::Domain(format!("invalid time gap {delta}")));
            }
            let x = tape.leaf_row(x_row);
            let d = tape.leaf_scalar(delta);

            let dg = tape.matmul(d, vars.w_g)?;
            let dg = tape.add(dg, vars.b_g)?;
            let inner = tape.sigmoid(dg);
            let xg = tape.matmul(x, vars.w_xg)?;
            let g_pre = tape.add(xg, inner)?;
            let g = tape.sigmoid(g_pre);

            let f_pre = {
                let a = tape.matmul(x, vars.w_xf)?;
                let b = tape.matmul(s, vars.w_sf)?;
                let ab = tape.add(a, b)?;
                tape.add(ab, vars.b_f)?
            };
            let f = tape.sigmoid(f_pre);

            let i_pre = {
                let a = tape.matmul(x, vars.w_xi)?;
                let b = tape.matmul(s, vars.w_si)?;
                let ab = tape.add(a, b)?;
                tape.add(ab, vars.b_i)?
            };
            let i = tape.sigmoid(i_pre);

            let cand_pre = {
                let a = tape.matmul(x, vars.w_xq)?;
                let b = tape.matmul(s, vars.w_sq)?;
                let ab = tape.add(a, b)?;
                tape.add(ab, vars.b_q)?
            };
            let cand = self.act(tape, cand_pre);

            let keep = tape.mul(f, q)?;
            let ig = tape.mul(i, g)?;
            let write = tape.mul(ig, cand)?;
            q = tape.add(keep, write)?;

            let o_pre = {
                let a = tape.matmul(x, vars.w_xo)?;
                let b = tape.matmul(d, vars.w_o)?;
                let c = tape.matmul(s, vars.w_so)?;
                let e = tape.mul(q, vars.w_qo)?;
                let ab = tape.add(a, b)?;
                let abc = tape.add(ab, c)?;
                let abce = tape.add(abc, e)?;
                tape.add(abce, vars.b_o)?
            };
            let o = tape.sigmoid(o_pre);

            let read = self.act(tape, q);
            s = tape.mul(o, read)?;
        }
        Ok(s)
    }

    /// Value-only encoding through a throwaway tape.
    pub fn encode_value(&self, xs: &[&[f64]], deltas: &[f64]) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let vars = self.build(&mut tape);
        let out = self.encode(&mut tape, &vars, xs, deltas)?;
        Ok(tape.value(out).row(0).to_owned())
    }

    fn array_refs(&self) -> Vec<&Array2<f64>> {
        vec![
            &self.w_g, &self.b_g, &self.w_xg, &self.w_xf, &self.w_sf, &self.b_f, &self.w_xi,
            &self.w_si, &self.b_i, &self.w_xq, &self.w_sq, &self.b_q, &self.w_xo, &self.w_o,
            &self.w_so, &self.w_qo, &self.b_o,
        ]
    }

    fn array_refs_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.w_g,
            &mut self.b_g,
            &mut self.w_xg,
            &mut self.w_xf,
            &mut self.w_sf,
            &mut self.b_f,
            &mut self.w_xi,
            &mut self.w_si,
            &mut self.b_i,
            &mut self.w_xq,
            &mut self.w_sq,
            &mut self.b_q,
            &mut self.w_xo,
            &mut self.w_o,
            &mut self.w_so,
            &mut self.w_qo,
            &mut self.b_o,
        ]
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten_arrays(&self.array_refs())
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        unflatten_arrays(&mut self.array_refs_mut(), flat)
    }

    pub fn flat_len(&self) -> usize {
        self.array_refs().iter().map(|a| a.len()).sum()
    }
}
