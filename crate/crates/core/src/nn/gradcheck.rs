//! Central-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub worst_coordinate: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Probes `probe_count` random coordinates of `x0` (all of them when the
/// vector is short) and compares `analytic` against the central difference
/// (f(x+h) - f(x-h)) / 2h. Relative error per coordinate is
/// |a - n| / max(|a| + |n|, 1e-8).
pub fn grad_check(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    analytic: &[f64],
    probe_count: usize,
    step: f64,
    tolerance: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport> {
    if x0.is_empty() {
        return Err(Error::Domain("gradient check needs at least one parameter".into()));
    }
    if analytic.len() != x0.len() {
        return Err(Error::Domain(format!(
            "analytic gradient has {} entries, parameters have {}",
            analytic.len(),
            x0.len()
        )));
    }
    if !(step > 0.0) || !(tolerance > 0.0) {
        return Err(Error::Domain("step and tolerance must be positive".into()));
    }
    let base = f(x0)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss at base point is {base}")));
    }

    let mut coords: Vec<usize> = (0..x0.len()).collect();
    if probe_count < coords.len() {
        coords.shuffle(rng);
        coords.truncate(probe_count);
        coords.sort_unstable();
    }

    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    let mut worst = coords[0];
    let mut x = x0.to_vec();
    for &c in &coords {
        let orig = x[c];
        x[c] = orig + step;
        let up = f(&x)?;
        x[c] = orig - step;
        let down = f(&x)?;
        x[c] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss while probing coordinate {c}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[c];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        sum_rel += rel;
        if rel > max_rel {
            max_rel = rel;
            worst = c;
        }
    }
    let mean_rel = sum_rel / coords.len() as f64;
    Ok(GradCheckReport {
        probes: coords.len(),
        max_rel_err: max_rel,
        mean_rel_err: mean_rel,
        worst_coordinate: worst,
        tolerance,
        pass: max_rel < tolerance,
    })
}
