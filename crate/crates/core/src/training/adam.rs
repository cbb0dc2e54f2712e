use super::TrainError;
use crate::model::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient
/// entry is non-finite.
pub fn adam_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<(), TrainError> {
    let grads = grads.tensors();
    {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        let same = grads.len() == shapes.len()
            && state.first.len() == shapes.len()
            && grads
                .iter()
                .zip(&shapes)
                .zip(&state.first)
                .all(|(((_, g), &n), m)| g.len() == n && m.len() == n);
        if !same {
            return Err(TrainError::Shape(
                "gradients, parameters and optimizer state differ in layout".into(),
            ));
        }
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::NonFiniteGradient(name.to_string()));
    }

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);
    for (ti, (_, theta)) in params.tensors_mut().into_iter().enumerate() {
        let g = grads[ti].1;
        let m = &mut state.first[ti];
        let v = &mut state.second[ti];
        for i in 0..theta.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            theta[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
