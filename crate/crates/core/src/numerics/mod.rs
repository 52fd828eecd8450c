//! Parameter storage, reverse-mode building blocks and the Adam update.

mod adam;
pub mod ops;
mod param;

pub use adam::{optimizer_step, AdamConfig, OptimizerState};
pub use ops::Activation;
pub use param::{GradVector, Layout, ParamVector, Segment};

use alloc::string::String;

use crate::error::{Error, Result};

/// A scalar loss whose gradient is coded explicitly.
pub trait Objective {
    /// Evaluates the loss at `params` and writes its gradient into `grad`
    /// (which arrives zeroed).
    fn value_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn value_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        self(params, grad)
    }
}

/// Evaluates `objective` and its gradient, rejecting non-finite results.
pub fn compute_gradient<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<(f64, GradVector)> {
    let mut grad = GradVector::zeros_like(params);
    let loss = objective.value_and_grad(&params.values, &mut grad.values);
    if !loss.is_finite() {
        return Err(Error::NonFinite { segment: String::from("loss"), index: 0 });
    }
    grad.check_finite()?;
    Ok((loss, grad))
}
