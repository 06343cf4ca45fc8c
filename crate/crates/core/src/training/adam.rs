use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First and second moments plus a step counter per parameter.
///
/// Counters are per parameter: a parameter that receives no gradient in a
/// step keeps its moments and counter untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { v: zeros.clone(), m: zeros, steps: vec![0; params.len()] }
    }

    fn check(&self, params: &ParamStore) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() || self.steps.len() != params.len() {
            return Err(Error::shape("adam", format!("state for {} params, model has {}", self.m.len(), params.len())));
        }
        for ((_, p), (m, v)) in params.iter().zip(self.m.iter().zip(&self.v)) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::shape("adam", format!("moment shape mismatch for `{}`", p.name)));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over every trainable parameter that holds a
/// gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    state.check(params)?;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let p = params.get(id);
        let Some(grad) = p.grad.clone() else { continue };
        if !p.trainable {
            continue;
        }
        let i = id.0;
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let theta = params.value_mut(id);
        for (((th, mi), vi), &g) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *th -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f64, grad: Option<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(theta).unwrap()).unwrap();
        if let Some(g) = grad {
            let mut tape = crate::autodiff::Tape::new();
            let w = tape.param(&s, id);
            let c = tape.constant(Tensor::scalar(g).unwrap());
            let y = tape.mul(w, c).unwrap();
            tape.backward(y).unwrap();
            s.accumulate_grads(&tape);
        }
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = single(1.0, Some(2.0));
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + ε).
        let expected = 1.0 - 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((s.by_name("w").unwrap().value.item() - expected).abs() < 1e-15);
        assert!((s.by_name("w").unwrap().value.item() - 0.999).abs() < 1e-9);
        assert_eq!(st.steps, vec![1]);
    }

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut s = single(0.7, Some(0.0));
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.item(), 0.7);
    }

    #[test]
    fn missing_gradient_leaves_state_untouched() {
        let mut s = single(0.7, None);
        let mut st = AdamState::new(&s);
        let before = st.clone();
        adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(st, before);
        assert_eq!(s.by_name("w").unwrap().value.item(), 0.7);
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let mut s = single(0.7, Some(1.0));
        let mut st = AdamState::new(&ParamStore::new());
        assert!(adam_step(&mut s, &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn identical_gradients_give_identical_trajectories() {
        let run = || {
            let mut s = single(0.3, Some(-0.4));
            let mut st = AdamState::new(&s);
            for _ in 0..5 {
                adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
            }
            s.by_name("w").unwrap().value.item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
