//! Trainable building blocks: dense layers, the time-gap LSTM encoder, the
//! gated transformer encoder, and the finite-difference gradient harness.
//!
//! Everything is fp64 and deterministic given the seed that initialized the
//! parameters. Forward passes always run on a [`tape::Tape`] so that value
//! evaluation and gradient evaluation share one code path.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod gtrxl;
pub mod tape;
pub mod time_lstm;

pub use adam::AdamState;
pub use dense::{Activation, DenseParams, DenseVars};
pub use gradcheck::{grad_check, GradCheckReport};
pub use gtrxl::{GtrxlParams, GtrxlVars};
pub use tape::{Gradients, Tape, Var};
pub use time_lstm::{LstmActivation, TimeLstmParams, TimeLstmVars};

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

pub(crate) fn flatten_arrays(arrays: &[&Array2<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(arrays.iter().map(|a| a.len()).sum());
    for a in arrays {
        out.extend(a.iter().copied());
    }
    out
}

pub(crate) fn unflatten_arrays(arrays: &mut [&mut Array2<f64>], flat: &[f64]) -> Result<()> {
    let want: usize = arrays.iter().map(|a| a.len()).sum();
    if flat.len() != want {
        return Err(Error::Domain(format!(
            "flat parameter length {} does not match expected {want}",
            flat.len()
        )));
    }
    let mut offset = 0;
    for a in arrays.iter_mut() {
        let len = a.len();
        for (dst, src) in a.iter_mut().zip(&flat[offset..offset + len]) {
            *dst = *src;
        }
        offset += len;
    }
    Ok(())
}
