//! Adam optimizer over flat fp64 parameter vectors.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Data("optimizer moment vectors differ in length".into()));
        }
        Ok(Self { m, v, t })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update step in place. Rejects non-finite gradients before touching
    /// the parameters or the accumulators, so a failed step leaves everything
    /// unchanged.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Domain(format!(
                "optimizer state of length {} used with {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} at coordinate {i}",
                grads[i]
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grads[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matches_scalar_trace() {
        // independent elementwise recomputation of three steps
        let grads = [0.5, -1.25, 2.0];
        let lr = 0.05;
        let mut p = vec![0.3];
        let mut state = AdamState::new(1);

        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expect = 0.3f64;
        for (k, &g) in grads.iter().enumerate() {
            state.step(&mut p, &[g], lr).unwrap();
            let t = (k + 1) as i32;
            m = BETA1 * m + (1.0 - BETA1) * g;
            v = BETA2 * v + (1.0 - BETA2) * g * g;
            let m_hat = m / (1.0 - BETA1.powi(t));
            let v_hat = v / (1.0 - BETA2.powi(t));
            expect -= lr * m_hat / (v_hat.sqrt() + EPS);
            assert_abs_diff_eq!(p[0], expect, epsilon = 1e-15);
        }
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_lr_for_unit_gradient() {
        // with constant gradient the bias-corrected moments are exactly 1
        let mut p = vec![0.0, 10.0];
        let mut state = AdamState::new(2);
        state.step(&mut p, &[1.0, 1.0], 0.1).unwrap();
        assert_abs_diff_eq!(p[0], -0.1 / (1.0 + EPS), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 10.0 - 0.1 / (1.0 + EPS), epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut state = AdamState::new(3);
        state.step(&mut p, &[0.0, 0.0, 0.0], 0.01).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut p = vec![1.0, 2.0];
        let mut state = AdamState::new(2);
        state.step(&mut p, &[0.1, 0.2], 0.01).unwrap();
        let before_p = p.clone();
        let before_state = state.clone();
        let err = state.step(&mut p, &[f64::NAN, 0.0], 0.01).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p, before_p);
        assert_eq!(state, before_state);
    }

    #[test]
    fn rejects_length_mismatch_and_bad_lr() {
        let mut p = vec![0.0];
        let mut state = AdamState::new(2);
        assert!(state.step(&mut p, &[0.0], 0.01).is_err());
        let mut p2 = vec![0.0, 0.0];
        assert!(state.step(&mut p2, &[0.0, 0.0], 0.0).is_err());
        assert!(state.step(&mut p2, &[0.0, 0.0], f64::NAN).is_err());
    }
}
