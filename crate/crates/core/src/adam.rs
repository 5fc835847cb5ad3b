//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelGrads, ModelParams};
use crate::tensor::Tensor;

/// Per-parameter moment accumulators plus step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    /// Fresh state with zero moments mirroring the parameter shapes.
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place; increments the step counter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut OptimizerState,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    {
        let param_tensors = params.tensors();
        if param_tensors.len() != grad_tensors.len()
            || param_tensors
                .iter()
                .zip(&grad_tensors)
                .any(|(p, g)| p.shape() != g.shape())
        {
            return Err(Error::Dim(
                "gradient shapes do not mirror parameters".into(),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (idx, param) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[idx].values();
        let m = state.m[idx].values_mut();
        let v = state.v[idx].values_mut();
        for (((p, &gi), mi), vi) in param.values_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetShape;

    fn toy_params(seed: u64) -> ModelParams {
        let shape = NetShape {
            d_x: 3,
            enc_hidden: 4,
            d_z: 2,
            clf_hidden: 3,
            k_s: 2,
        };
        ModelParams::init(shape, 0.1, seed).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = toy_params(1);
        let before = params.flatten();
        let grads = ModelGrads::zeros_for(&params);
        let mut state = OptimizerState::new(&params, 1e-4);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params.flatten(), before);
        assert_eq!(state.step_count(), 1);
    }

    // After one step from fresh state, m̂ = g and v̂ = g², so the update is
    // lr·g/(|g| + ε) ≈ lr·sign(g).
    #[test]
    fn first_step_magnitude_is_learning_rate() {
        let mut params = toy_params(2);
        let before = params.flatten();
        let mut grads = ModelGrads::zeros_for(&params);
        grads.enc1.w.values_mut()[0] = 0.37;
        grads.clf2.b.values_mut()[1] = -2.4;
        let lr = 1e-4;
        let mut state = OptimizerState::new(&params, lr);
        adam_step(&mut params, &grads, &mut state).unwrap();
        let after = params.flatten();
        let mut changed = 0;
        for (i, (a, b)) in after.iter().zip(&before).enumerate() {
            let delta = a - b;
            if delta != 0.0 {
                changed += 1;
                let grad_sign = if i == after.len() - 1 { -1.0 } else { 1.0 };
                assert!(
                    (delta + grad_sign * lr).abs() < lr * 1e-3,
                    "coordinate {i}: step {delta} not ≈ lr"
                );
            }
        }
        assert_eq!(changed, 2);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut params = toy_params(3);
            let mut state = OptimizerState::new(&params, 1e-3);
            for step in 0..5 {
                let mut grads = ModelGrads::zeros_for(&params);
                for (i, t) in grads.tensors_mut().into_iter().enumerate() {
                    for (j, v) in t.values_mut().iter_mut().enumerate() {
                        *v = ((step + i + j) as f64 * 0.31).sin();
                    }
                }
                adam_step(&mut params, &grads, &mut state).unwrap();
            }
            params.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = toy_params(4);
        let other = toy_params(5);
        let mut grads = ModelGrads::zeros_for(&other);
        grads.enc1.w = Tensor::zeros(vec![2, 2]);
        let mut state = OptimizerState::new(&params, 1e-4);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut state),
            Err(Error::Dim(_))
        ));
    }
}
