//! ε-greedy action selection over the shared actor's slot probabilities.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::DenseParams;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the actor on a state and picks a slot: with probability `epsilon` a
/// uniform slot, otherwise the argmax. Returns the index together with the
/// full probability vector (the off-policy estimator needs it).
///
/// Consumes one rng draw for the explore decision and, only when exploring,
/// a second draw for the slot.
pub fn select_action(
    state: &[f64],
    actor: &DenseParams,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<(usize, Vec<f64>)> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if state.len() != actor.input_dim() {
        return Err(Error::Domain(format!(
            "state dim {} does not match actor input {}",
            state.len(),
            actor.input_dim()
        )));
    }
    let row = Array2::from_shape_vec((1, state.len()), state.to_vec())
        .expect("shape matches by construction");
    let out = actor.forward(&row)?;
    let probs: Vec<f64> = out.row(0).to_vec();
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric(format!(
            "actor output is not a probability vector (sum {sum})"
        )));
    }
    let index = if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..probs.len())
    } else {
        argmax(&probs)
    };
    Ok((index, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actor_with_logits(logits: &[f64]) -> DenseParams {
        // identity input weights are impossible in general, so use a 1-input
        // layer whose weights reproduce the logits for state [1.0]
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = DenseParams::new(&[1, logits.len()], &[Activation::Softmax], &mut rng).unwrap();
        let mut flat = vec![0.0; p.flat_len()];
        flat[..logits.len()].copy_from_slice(logits);
        p.set_flat(&flat).unwrap();
        p
    }

    #[test]
    fn greedy_picks_unique_max_every_time() {
        let actor = actor_with_logits(&[0.0, 0.1, 0.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (a, _) = select_action(&[1.0], &actor, 0.0, &mut rng).unwrap();
            assert_eq!(a, 3);
        }
    }

    #[test]
    fn zero_logits_give_uniform_probabilities() {
        let actor = actor_with_logits(&[0.0; 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, probs) = select_action(&[1.0], &actor, 0.0, &mut rng).unwrap();
        for p in probs {
            assert_abs_diff_eq!(p, 1.0 / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn logit_shift_leaves_probabilities_unchanged() {
        let base = [0.3, -1.2, 0.8, 0.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 7.5).collect();
        let a1 = actor_with_logits(&base);
        let a2 = actor_with_logits(&shifted);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (i1, p1) = select_action(&[1.0], &a1, 0.0, &mut rng).unwrap();
        let (i2, p2) = select_action(&[1.0], &a2, 0.0, &mut rng).unwrap();
        assert_eq!(i1, i2);
        for (x, y) in p1.iter().zip(&p2) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn full_exploration_is_uniform_by_chi_squared() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let d_a = 8;
        let actor = actor_with_logits(&[0.0, 0.2, 0.4, 0.1, -0.3, 0.0, 0.9, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 10_000;
        let mut counts = vec![0usize; d_a];
        for _ in 0..draws {
            let (a, _) = select_action(&[1.0], &actor, 1.0, &mut rng).unwrap();
            counts[a] += 1;
        }
        let expected = draws as f64 / d_a as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let crit = ChiSquared::new((d_a - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} exceeds critical {crit}");
    }

    #[test]
    fn non_greedy_fraction_matches_epsilon() {
        // exploring picks a non-argmax slot eps * (d_a - 1) / d_a of the time
        let d_a = 4;
        let actor = actor_with_logits(&[0.0, 0.0, 3.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 10_000;
        let mut non_greedy = 0usize;
        for _ in 0..draws {
            let (a, _) = select_action(&[1.0], &actor, 0.1, &mut rng).unwrap();
            if a != 2 {
                non_greedy += 1;
            }
        }
        let frac = non_greedy as f64 / draws as f64;
        let expected = 0.1 * (d_a as f64 - 1.0) / d_a as f64;
        assert!((frac - expected).abs() < 0.01, "fraction {frac}, expected {expected}");
    }

    #[test]
    fn rejects_invalid_epsilon_and_state() {
        let actor = actor_with_logits(&[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(select_action(&[1.0], &actor, -0.1, &mut rng).is_err());
        assert!(select_action(&[1.0], &actor, 1.5, &mut rng).is_err());
        assert!(select_action(&[1.0, 2.0], &actor, 0.1, &mut rng).is_err());
    }
}
