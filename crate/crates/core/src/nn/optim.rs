//! Optimizers: Adam with bias correction, and plain SGD.

use crate::error::{CoreError, Result};
use crate::nn::params::ModelParams;
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates mirroring the parameter shapes, plus the
/// step counter. One training loop owns a state at a time.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub eta: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &ModelParams<T>, eta: f64) -> Self {
        Self {
            m: shape.zeros_like(),
            v: shape.zeros_like(),
            t: 0,
            beta1: T::from_f64(ADAM_BETA1),
            beta2: T::from_f64(ADAM_BETA2),
            eps: T::from_f64(ADAM_EPS),
            eta: T::from_f64(eta),
        }
    }

    /// In-place Adam update; increments the step counter.
    pub fn step(&mut self, params: &mut ModelParams<T>, grad: &ModelParams<T>) -> Result<()> {
        if !params.same_shape(grad) || !params.same_shape(&self.m) {
            return Err(CoreError::DimMismatch("adam step shapes disagree".into()));
        }
        if !grad.is_finite() {
            return Err(CoreError::NonFinite("gradient".into()));
        }
        self.t += 1;
        let one = T::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let corr1 = one - b1.powi(self.t as i32);
        let corr2 = one - b2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_params_mut()
            .zip(grad.iter_params())
            .zip(self.m.iter_params_mut())
            .zip(self.v.iter_params_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - self.eta * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional Adam update: returns the new parameters and state, leaving
/// the inputs untouched.
pub fn adam_step<T: Scalar>(
    params: &ModelParams<T>,
    grad: &ModelParams<T>,
    state: &AdamState<T>,
) -> Result<(ModelParams<T>, AdamState<T>)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grad)?;
    Ok((p, s))
}

/// In-place SGD update: `theta -= eta * grad`.
pub fn sgd_step_in_place<T: Scalar>(
    params: &mut ModelParams<T>,
    grad: &ModelParams<T>,
    eta: f64,
) -> Result<()> {
    if !params.same_shape(grad) {
        return Err(CoreError::DimMismatch("sgd step shapes disagree".into()));
    }
    if !grad.is_finite() {
        return Err(CoreError::NonFinite("gradient".into()));
    }
    let eta = T::from_f64(eta);
    for (p, g) in params.iter_params_mut().zip(grad.iter_params()) {
        *p = *p - eta * g;
    }
    Ok(())
}

/// Functional SGD update.
pub fn sgd_step<T: Scalar>(
    params: &ModelParams<T>,
    grad: &ModelParams<T>,
    eta: f64,
) -> Result<ModelParams<T>> {
    let mut p = params.clone();
    sgd_step_in_place(&mut p, grad, eta)?;
    Ok(p)
}
