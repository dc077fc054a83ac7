//! Bias-corrected Adam over flat parameter slices, one moment pair per
//! tensor.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Learning rate and moment decays; defaults are lr 1e-3, betas 0.9/0.999,
/// eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Scalar> Default for AdamConfig<S> {
    fn default() -> Self {
        Self {
            lr: cast(1e-3),
            beta1: cast(0.9),
            beta2: cast(0.999),
            eps: cast(1e-8),
        }
    }
}

impl<S: Scalar> AdamConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: S| x >= S::zero() && x < S::one();
        if !(self.lr > S::zero()) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > S::zero()) {
            return Err(Error::InvalidConfig(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moments per tensor plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(tensor_lens: &[usize]) -> Self {
        Self {
            m: tensor_lens.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![S::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update across all tensors. Gradients must be finite; parameter
/// layout must match the state exactly.
pub fn adam_step<S: Scalar>(
    params: &mut [&mut [S]],
    grads: &[&[S]],
    state: &mut AdamState<S>,
    cfg: &AdamConfig<S>,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam tensors: {} params, {} grads, {} states",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam tensor lengths: {} params, {} grads, {} state",
                p.len(),
                g.len(),
                m.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "adam gradient".into(),
            });
        }
    }
    state.step += 1;
    let t = cast::<S>(state.step as f64);
    let bc1 = S::one() - cfg.beta1.powf(t);
    let bc2 = S::one() - cfg.beta2.powf(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(&mut state.v))
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (S::one() - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (S::one() - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
