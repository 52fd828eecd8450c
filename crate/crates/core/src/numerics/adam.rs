use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::param::{GradVector, ParamVector};
use crate::error::{Error, Result};

/// Hyper-parameters of the Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates carried between Adam updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(len: usize, config: AdamConfig) -> Result<Self> {
        let ok = config.learning_rate > 0.0
            && config.beta1 > 0.0
            && config.beta1 < 1.0
            && config.beta2 > 0.0
            && config.beta2 < 1.0
            && config.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidArgument("Adam requires lr > 0, betas in (0,1) and eps > 0"));
        }
        Ok(Self { first_moment: vec![0.0; len], second_moment: vec![0.0; len], step_count: 0, config })
    }
}

/// One bias-corrected Adam update applied in place.
pub fn optimizer_step(params: &mut ParamVector, grad: &GradVector, state: &mut OptimizerState) -> Result<()> {
    let n = params.len();
    for len in [grad.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, actual: len });
        }
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    state.step_count += 1;
    let t = state.step_count as f64;
    let correction1 = 1.0 - beta1.powf(t);
    let correction2 = 1.0 - beta2.powf(t);

    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for ((p, &g), (m, v)) in params.values.iter_mut().zip(&grad.values).zip(moments) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::param::Layout;
    use alloc::sync::Arc;

    fn scalar_params(v: f64) -> ParamVector {
        let mut layout = Layout::new();
        layout.push("x", 1, true);
        ParamVector::from_values(Arc::new(layout), vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = scalar_params(0.75);
        let g = GradVector::zeros_like(&p);
        let mut state = OptimizerState::new(1, AdamConfig::default()).unwrap();
        for _ in 0..5 {
            optimizer_step(&mut p, &g, &mut state).unwrap();
        }
        assert_eq!(p.values[0], 0.75);
        assert_eq!(state.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for &g0 in &[3.0, -0.02, 1e-3] {
            let mut p = scalar_params(1.0);
            let mut g = GradVector::zeros_like(&p);
            g.values[0] = g0;
            let mut state = OptimizerState::new(1, AdamConfig::default()).unwrap();
            optimizer_step(&mut p, &g, &mut state).unwrap();
            let expected = 1.0 - 1e-3 * g0 / (g0.abs() + 1e-8);
            assert!((p.values[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p.values[0]).abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_params(1.0);
        let g = GradVector::zeros_like(&p);
        let mut state = OptimizerState::new(2, AdamConfig::default()).unwrap();
        assert!(matches!(optimizer_step(&mut p, &g, &mut state), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut p = scalar_params(0.0);
        let mut g = GradVector::zeros_like(&p);
        let mut state = OptimizerState::new(1, AdamConfig::default()).unwrap();
        for i in 0..50 {
            g.values[0] = if i % 2 == 0 { -1.5 } else { 0.3 };
            optimizer_step(&mut p, &g, &mut state).unwrap();
            assert!(state.second_moment[0] >= 0.0);
        }
    }
}
