//! Fully-connected stacks with a per-layer activation.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::{flatten_arrays, unflatten_arrays, uniform_init};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    /// Row-wise softmax; only meaningful on an output layer.
    Softmax,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    /// in_dim x out_dim.
    weight: Array2<f64>,
    /// 1 x out_dim, broadcast over rows.
    bias: Array2<f64>,
    activation: Activation,
}

/// A stack of affine layers. Input is a batch matrix (rows = samples).
#[derive(Debug, Clone)]
pub struct DenseParams {
    layers: Vec<DenseLayer>,
}

/// Tape handles for one [`DenseParams`] instance, in canonical flat order
/// (per layer: weight then bias).
#[derive(Debug, Clone)]
pub struct DenseVars {
    layers: Vec<(Var, Var)>,
}

impl DenseVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (w, b) in &self.layers {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

impl DenseParams {
    /// `dims` lists layer widths input-first, e.g. `[8, 64, 1]` builds two
    /// layers. One activation per layer.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Domain("dense stack needs at least one layer".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Domain(format!(
                "expected {} activations for {} layers, got {}",
                dims.len() - 1,
                dims.len() - 1,
                activations.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Domain("dense layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, act) in activations.iter().enumerate() {
            layers.push(DenseLayer {
                weight: uniform_init(dims[i], dims[i + 1], dims[i], rng),
                bias: Array2::zeros((1, dims[i + 1])),
                activation: *act,
            });
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn build(&self, tape: &mut Tape) -> DenseVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        DenseVars { layers }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &DenseVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (layer, (w, b)) in self.layers.iter().zip(&vars.layers) {
            let pre = tape.matmul(h, *w)?;
            let pre = tape.add_row(pre, *b)?;
            h = match layer.activation {
                Activation::Identity => pre,
                Activation::Sigmoid => tape.sigmoid(pre),
                Activation::Tanh => tape.tanh(pre),
                Activation::Relu => tape.relu(pre),
                Activation::Softplus => tape.softplus(pre),
                Activation::Softmax => tape.softmax_rows(pre),
            };
        }
        Ok(h)
    }

    /// Value-only forward for a batch matrix; runs the same tape path as
    /// training.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = self.build(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = self.apply(&mut tape, &vars, xv)?;
        Ok(tape.value(out).clone())
    }

    fn array_refs(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    fn array_refs_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
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
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}
