use crate::error::{Error, Result};
use crate::numerics::tensor::DenseTensor;

/// Adam moment estimates, one pair of buffers per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<DenseTensor>,
    v: Vec<DenseTensor>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    /// Fresh state with the canonical constants β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self::with_constants(shapes, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(shapes: &[&[usize]], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|s| DenseTensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| DenseTensor::zeros(s)).collect(),
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. `names` is used only for error
/// reporting; a non-finite gradient aborts before any parameter is touched.
pub fn adam_step(
    names: &[&str],
    params: &mut [&mut DenseTensor],
    grads: &[DenseTensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "adam_step",
            msg: format!("learning rate must be positive, got {lr}"),
        });
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument {
            op: "adam_step",
            msg: format!(
                "parameter/gradient/state arity mismatch: {}/{}/{}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: params[i].shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                param: names.get(i).unwrap_or(&"<unnamed>").to_string(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        let p = params[i].as_mut_slice();
        for ((m, v), (p, &g)) in m
            .iter_mut()
            .zip(v.iter_mut())
            .zip(p.iter_mut().zip(g.as_slice()))
        {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
