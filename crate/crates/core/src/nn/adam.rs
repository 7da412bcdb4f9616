//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place. A non-finite gradient aborts
/// the step without touching parameters or moments.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::dimension(
            "adam_step",
            state.first_moment.len(),
            format!("params {} / grads {}", params.len(), grads.len()),
        ));
    }
    if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at parameter {pos}; step aborted"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        let v = &mut state.second_moment[i];
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Scalar reference implementation, kept independent of adam_step.
    fn reference_step(
        t: u64,
        m: &mut f64,
        v: &mut f64,
        param: &mut f64,
        g: f64,
        lr: f64,
    ) {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / (1.0 - b1.powi(t as i32));
        let v_hat = *v / (1.0 - b2.powi(t as i32));
        *param -= lr * m_hat / (v_hat.sqrt() + eps);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        let mut state = AdamState::new(1, 0.001);
        let mut params = [1.0];
        adam_step(&mut state, &mut params, &[2.0]).unwrap();
        assert!((params[0] - 0.999).abs() < 1e-6, "got {}", params[0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_with_zero_moments_leaves_param_unchanged() {
        let mut state = AdamState::new(1, 0.001);
        let mut params = [3.5];
        adam_step(&mut state, &mut params, &[0.0]).unwrap();
        assert_eq!(params[0], 3.5);
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let mut state = AdamState::new(1, 0.01);
        let mut params = [0.7];
        let (mut m, mut v, mut p) = (0.0, 0.0, 0.7);
        let grads = [1.0, 1.0, -0.3, 0.8, 1.0];
        for (i, &g) in grads.iter().enumerate() {
            adam_step(&mut state, &mut params, &[g]).unwrap();
            reference_step(i as u64 + 1, &mut m, &mut v, &mut p, g, 0.01);
            assert!((params[0] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut state = AdamState::new(1, 0.001);
        let mut params = [1.0];
        let mut prev = params[0];
        for _ in 0..10 {
            adam_step(&mut state, &mut params, &[1.0]).unwrap();
            assert!(params[0] < prev);
            prev = params[0];
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut state = AdamState::new(2, 0.001);
        let mut params = [1.0, 2.0];
        let err = adam_step(&mut state, &mut params, &[0.1, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(params, [1.0, 2.0]);
        assert_eq!(state.step, 0);
    }
}
