//! Transformer encoder with gated residual paths.
//!
//! Layout per layer: layer-norm, multi-head causal self-attention with a
//! learned relative-position bias, GRU-style gate; layer-norm, two-layer
//! feed-forward, second gate. Gate biases start at 2.0 so a fresh stack is
//! close to an identity map over the input projection, which keeps early
//! training stable.

use ndarray::Array2;
use rand::Rng;

use super::tape::{Tape, Var};
use super::{flatten_arrays, unflatten_arrays, uniform_init};
use crate::error::{Error, Result};

const GATE_BIAS_INIT: f64 = 2.0;
const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
struct GruGate {
    w_r: Array2<f64>,
    u_r: Array2<f64>,
    w_z: Array2<f64>,
    u_z: Array2<f64>,
    w_h: Array2<f64>,
    u_h: Array2<f64>,
    /// 1 x dim, subtracted inside the update gate.
    bg: Array2<f64>,
}

#[derive(Debug, Clone)]
struct GruGateVars {
    w_r: Var,
    u_r: Var,
    w_z: Var,
    u_z: Var,
    w_h: Var,
    u_h: Var,
    bg: Var,
}

impl GruGate {
    fn new(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_r: uniform_init(dim, dim, dim, rng),
            u_r: uniform_init(dim, dim, dim, rng),
            w_z: uniform_init(dim, dim, dim, rng),
            u_z: uniform_init(dim, dim, dim, rng),
            w_h: uniform_init(dim, dim, dim, rng),
            u_h: uniform_init(dim, dim, dim, rng),
            bg: Array2::from_elem((1, dim), GATE_BIAS_INIT),
        }
    }

    fn build(&self, tape: &mut Tape) -> GruGateVars {
        GruGateVars {
            w_r: tape.leaf(self.w_r.clone()),
            u_r: tape.leaf(self.u_r.clone()),
            w_z: tape.leaf(self.w_z.clone()),
            u_z: tape.leaf(self.u_z.clone()),
            w_h: tape.leaf(self.w_h.clone()),
            u_h: tape.leaf(self.u_h.clone()),
            bg: tape.leaf(self.bg.clone()),
        }
    }

    /// out = (1 - z) * x + z * h where z = sigma(y W_z + x U_z - bg),
    /// r = sigma(y W_r + x U_r), h = tanh(y W_h + (r * x) U_h).
    fn apply(tape: &mut Tape, vars: &GruGateVars, x: Var, y: Var) -> Result<Var> {
        let r_pre = {
            let a = tape.matmul(y, vars.w_r)?;
            let b = tape.matmul(x, vars.u_r)?;
            tape.add(a, b)?
        };
        let r = tape.sigmoid(r_pre);

        let neg_bg = tape.scale(vars.bg, -1.0);
        let z_pre = {
            let a = tape.matmul(y, vars.w_z)?;
            let b = tape.matmul(x, vars.u_z)?;
            let ab = tape.add(a, b)?;
            tape.add_row(ab, neg_bg)?
        };
        let z = tape.sigmoid(z_pre);

        let h_pre = {
            let a = tape.matmul(y, vars.w_h)?;
            let rx = tape.mul(r, x)?;
            let b = tape.matmul(rx, vars.u_h)?;
            tape.add(a, b)?
        };
        let h = tape.tanh(h_pre);

        let d = tape.sub(h, x)?;
        let zd = tape.mul(z, d)?;
        tape.add(x, zd)
    }

    fn array_refs(&self) -> Vec<&Array2<f64>> {
        vec![&self.w_r, &self.u_r, &self.w_z, &self.u_z, &self.w_h, &self.u_h, &self.bg]
    }

    fn array_refs_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.w_r,
            &mut self.u_r,
            &mut self.w_z,
            &mut self.u_z,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.bg,
        ]
    }

    fn vars_all(vars: &GruGateVars) -> Vec<Var> {
        vec![vars.w_r, vars.u_r, vars.w_z, vars.u_z, vars.w_h, vars.u_h, vars.bg]
    }
}

#[derive(Debug, Clone)]
struct AttnHead {
    w_q: Array2<f64>,
    w_k: Array2<f64>,
    w_v: Array2<f64>,
    /// 1 x max_len relative-position bias values, index = query - key.
    rel: Array2<f64>,
}

#[derive(Debug, Clone)]
struct AttnHeadVars {
    w_q: Var,
    w_k: Var,
    w_v: Var,
    rel: Var,
}

#[derive(Debug, Clone)]
struct GtrxlLayer {
    ln1_gain: Array2<f64>,
    ln1_bias: Array2<f64>,
    heads: Vec<AttnHead>,
    w_o: Array2<f64>,
    b_o: Array2<f64>,
    gate1: GruGate,
    ln2_gain: Array2<f64>,
    ln2_bias: Array2<f64>,
    w_f1: Array2<f64>,
    b_f1: Array2<f64>,
    w_f2: Array2<f64>,
    b_f2: Array2<f64>,
    gate2: GruGate,
}

#[derive(Debug, Clone)]
struct GtrxlLayerVars {
    ln1_gain: Var,
    ln1_bias: Var,
    heads: Vec<AttnHeadVars>,
    w_o: Var,
    b_o: Var,
    gate1: GruGateVars,
    ln2_gain: Var,
    ln2_bias: Var,
    w_f1: Var,
    b_f1: Var,
    w_f2: Var,
    b_f2: Var,
    gate2: GruGateVars,
}

#[derive(Debug, Clone)]
pub struct GtrxlParams {
    state_dim: usize,
    model_dim: usize,
    head_dim: usize,
    max_len: usize,
    w_in: Array2<f64>,
    b_in: Array2<f64>,
    layers: Vec<GtrxlLayer>,
}

#[derive(Debug, Clone)]
pub struct GtrxlVars {
    w_in: Var,
    b_in: Var,
    layers: Vec<GtrxlLayerVars>,
}

impl GtrxlVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.w_in, self.b_in];
        for l in &self.layers {
            out.push(l.ln1_gain);
            out.push(l.ln1_bias);
            for h in &l.heads {
                out.push(h.w_q);
                out.push(h.w_k);
                out.push(h.w_v);
                out.push(h.rel);
            }
            out.push(l.w_o);
            out.push(l.b_o);
            out.extend(GruGate::vars_all(&l.gate1));
            out.push(l.ln2_gain);
            out.push(l.ln2_bias);
            out.push(l.w_f1);
            out.push(l.b_f1);
            out.push(l.w_f2);
            out.push(l.b_f2);
            out.extend(GruGate::vars_all(&l.gate2));
        }
        out
    }
}

impl GtrxlParams {
    /// `max_len` bounds the batch rows the block can attend over.
    pub fn new(
        state_dim: usize,
        model_dim: usize,
        layers: usize,
        heads: usize,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if state_dim == 0 || model_dim == 0 || layers == 0 || heads == 0 || max_len == 0 {
            return Err(Error::Domain("transformer dimensions must be positive".into()));
        }
        if model_dim % heads != 0 {
            return Err(Error::Domain(format!(
                "model dim {model_dim} not divisible by {heads} heads"
            )));
        }
        let head_dim = model_dim / heads;
        let dff = 2 * model_dim;
        let w_in = uniform_init(state_dim, model_dim, state_dim, rng);
        let mut built = Vec::with_capacity(layers);
        for _ in 0..layers {
            built.push(GtrxlLayer {
                ln1_gain: Array2::ones((1, model_dim)),
                ln1_bias: Array2::zeros((1, model_dim)),
                heads: (0..heads)
                    .map(|_| AttnHead {
                        w_q: uniform_init(model_dim, head_dim, model_dim, rng),
                        w_k: uniform_init(model_dim, head_dim, model_dim, rng),
                        w_v: uniform_init(model_dim, head_dim, model_dim, rng),
                        rel: uniform_init(1, max_len, max_len, rng),
                    })
                    .collect(),
                w_o: uniform_init(model_dim, model_dim, model_dim, rng),
                b_o: Array2::zeros((1, model_dim)),
                gate1: GruGate::new(model_dim, rng),
                ln2_gain: Array2::ones((1, model_dim)),
                ln2_bias: Array2::zeros((1, model_dim)),
                w_f1: uniform_init(model_dim, dff, model_dim, rng),
                b_f1: Array2::zeros((1, dff)),
                w_f2: uniform_init(dff, model_dim, dff, rng),
                b_f2: Array2::zeros((1, model_dim)),
                gate2: GruGate::new(model_dim, rng),
            });
        }
        Ok(Self {
            state_dim,
            model_dim,
            head_dim,
            max_len,
            w_in,
            b_in: Array2::zeros((1, model_dim)),
            layers: built,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Forces every gate shut (update gate ~0) so the stack reduces to the
    /// input projection. Test hook for the residual wiring.
    pub fn close_gates(&mut self, bias: f64) {
        for l in &mut self.layers {
            l.gate1.bg.fill(bias);
            l.gate2.bg.fill(bias);
        }
    }

    pub fn build(&self, tape: &mut Tape) -> GtrxlVars {
        GtrxlVars {
            w_in: tape.leaf(self.w_in.clone()),
            b_in: tape.leaf(self.b_in.clone()),
            layers: self
                .layers
                .iter()
                .map(|l| GtrxlLayerVars {
                    ln1_gain: tape.leaf(l.ln1_gain.clone()),
                    ln1_bias: tape.leaf(l.ln1_bias.clone()),
                    heads: l
                        .heads
                        .iter()
                        .map(|h| AttnHeadVars {
                            w_q: tape.leaf(h.w_q.clone()),
                            w_k: tape.leaf(h.w_k.clone()),
                            w_v: tape.leaf(h.w_v.clone()),
                            rel: tape.leaf(h.rel.clone()),
                        })
                        .collect(),
                    w_o: tape.leaf(l.w_o.clone()),
                    b_o: tape.leaf(l.b_o.clone()),
                    gate1: l.gate1.build(tape),
                    ln2_gain: tape.leaf(l.ln2_gain.clone()),
                    ln2_bias: tape.leaf(l.ln2_bias.clone()),
                    w_f1: tape.leaf(l.w_f1.clone()),
                    b_f1: tape.leaf(l.b_f1.clone()),
                    w_f2: tape.leaf(l.w_f2.clone()),
                    b_f2: tape.leaf(l.b_f2.clone()),
                    gate2: l.gate2.build(tape),
                })
                .collect(),
        }
    }

    /// Encodes a batch of states (rows) into embeddings of the same row
    /// count. Attention is causal over row order.
    pub fn apply(&self, tape: &mut Tape, vars: &GtrxlVars, states: Var) -> Result<Var> {
        let n = tape.value(states).nrows();
        if n == 0 {
            return Err(Error::Domain("transformer input has no rows".into()));
        }
        if n > self.max_len {
            return Err(Error::Domain(format!(
                "batch of {n} rows exceeds configured max length {}",
                self.max_len
            )));
        }
        if tape.value(states).ncols() != self.state_dim {
            return Err(Error::Domain(format!(
                "state dim {} does not match transformer input dim {}",
                tape.value(states).ncols(),
                self.state_dim
            )));
        }
        let mask = Array2::from_shape_fn((n, n), |(i, j)| j <= i);
        let scale = 1.0 / (self.head_dim as f64).sqrt();

        let proj = tape.matmul(states, vars.w_in)?;
        let mut x = tape.add_row(proj, vars.b_in)?;

        for lv in &vars.layers {
            let normed = tape.layer_norm_rows(x, LN_EPS);
            let normed = tape.mul_row(normed, lv.ln1_gain)?;
            let a_in = tape.add_row(normed, lv.ln1_bias)?;

            let mut ctx: Option<Var> = None;
            for hv in &lv.heads {
                let q = tape.matmul(a_in, hv.w_q)?;
                let k = tape.matmul(a_in, hv.w_k)?;
                let v = tape.matmul(a_in, hv.w_v)?;
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt)?;
                let scores = tape.scale(scores, scale);
                let bias = tape.rel_bias(hv.rel, n)?;
                let scores = tape.add(scores, bias)?;
                let attn = tape.masked_softmax_rows(scores, mask.clone())?;
                let head_out = tape.matmul(attn, v)?;
                ctx = Some(match ctx {
                    None => head_out,
                    Some(c) => tape.concat_cols(c, head_out)?,
                });
            }
            let ctx = ctx.expect("at least one head");
            let o = tape.matmul(ctx, lv.w_o)?;
            let o = tape.add_row(o, lv.b_o)?;
            let o = tape.relu(o);
            x = GruGate::apply(tape, &lv.gate1, x, o)?;

            let normed = tape.layer_norm_rows(x, LN_EPS);
            let normed = tape.mul_row(normed, lv.ln2_gain)?;
            let f_in = tape.add_row(normed, lv.ln2_bias)?;
            let h1 = tape.matmul(f_in, lv.w_f1)?;
            let h1 = tape.add_row(h1, lv.b_f1)?;
            let h1 = tape.relu(h1);
            let h2 = tape.matmul(h1, lv.w_f2)?;
            let h2 = tape.add_row(h2, lv.b_f2)?;
            let h2 = tape.relu(h2);
            x = GruGate::apply(tape, &lv.gate2, x, h2)?;
        }
        Ok(x)
    }

    /// Value-only pass through a throwaway tape.
    pub fn forward(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.build(&mut tape);
        let sv = tape.leaf(states.clone());
        let out = self.apply(&mut tape, &vars, sv)?;
        Ok(tape.value(out).clone())
    }

    fn array_refs(&self) -> Vec<&Array2<f64>> {
        let mut out: Vec<&Array2<f64>> = vec![&self.w_in, &self.b_in];
        for l in &self.layers {
            out.push(&l.ln1_gain);
            out.push(&l.ln1_bias);
            for h in &l.heads {
                out.push(&h.w_q);
                out.push(&h.w_k);
                out.push(&h.w_v);
                out.push(&h.rel);
            }
            out.push(&l.w_o);
            out.push(&l.b_o);
            out.extend(l.gate1.array_refs());
            out.push(&l.ln2_gain);
            out.push(&l.ln2_bias);
            out.push(&l.w_f1);
            out.push(&l.b_f1);
            out.push(&l.w_f2);
            out.push(&l.b_f2);
            out.extend(l.gate2.array_refs());
        }
        out
    }

    fn array_refs_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = vec![&mut self.w_in, &mut self.b_in];
        for l in &mut self.layers {
            out.push(&mut l.ln1_gain);
            out.push(&mut l.ln1_bias);
            for h in &mut l.heads {
                out.push(&mut h.w_q);
                out.push(&mut h.w_k);
                out.push(&mut h.w_v);
                out.push(&mut h.rel);
            }
            out.push(&mut l.w_o);
            out.push(&mut l.b_o);
            out.extend(l.gate1.array_refs_mut());
            out.push(&mut l.ln2_gain);
            out.push(&mut l.ln2_bias);
            out.push(&mut l.w_f1);
            out.push(&mut l.b_f1);
            out.push(&mut l.w_f2);
            out.push(&mut l.b_f2);
            out.extend(l.gate2.array_refs_mut());
        }
        out
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
