use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{GradStore, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// First and second moment estimates, congruent with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<S> {
    pub first: Vec<S>,
    pub second: Vec<S>,
}

impl<S: Scalar> Moments<S> {
    pub fn zeros(len: usize) -> Self {
        Self {
            first: vec![S::zero(); len],
            second: vec![S::zero(); len],
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &GradStore<S>,
    moments: &mut Moments<S>,
    hp: &AdamConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return invalid("adam step counter starts at 1");
    }
    if !params.is_congruent(grads)
        || moments.first.len() != params.len()
        || moments.second.len() != params.len()
    {
        return invalid("optimizer state is not congruent with parameters");
    }
    let (b1, b2) = (S::lit(hp.beta1), S::lit(hp.beta2));
    let one = S::one();
    let c1 = one - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = one - b2.powi(t.min(i32::MAX as u64) as i32);
    let lr = S::lit(hp.lr);
    let eps = S::lit(hp.eps_hat);
    let m = moments.first.iter_mut();
    let v = moments.second.iter_mut();
    for (((p, &g), m), v) in params.as_mut_slice().iter_mut().zip(grads.as_slice()).zip(m).zip(v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
