//! Adam with bias correction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -7.0, 1e-3];
        let mut s = AdamState::new(3, 0.01);
        adam_step(&mut p, &g, &mut s).unwrap();
        for (i, (&after, before)) in p.iter().zip([1.0, -2.0, 0.5]).enumerate() {
            let expect = before - 0.01 * g[i].signum() * g[i].abs() / (g[i].abs() + 1e-8);
            assert!((after - expect).abs() < 1e-15);
            assert!(((before - after).abs() - 0.01).abs() < 0.01 * 1e-5);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2, 0.1);
        adam_step(&mut p, &[1.0, 1.0], &mut s).unwrap();
        let snap = p.clone();
        let (m, v) = (s.m.clone(), s.v.clone());
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        // moments decay; the update is driven by the decayed first moment
        assert_eq!(s.m[0], 0.9 * m[0]);
        assert_eq!(s.v[0], 0.999 * v[0]);
        let mut q = vec![3.0];
        let mut fresh = AdamState::new(1, 0.1);
        adam_step(&mut q, &[0.0], &mut fresh).unwrap();
        assert_eq!(q, vec![3.0]);
        assert_ne!(p, snap);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.1; 5];
            let mut s = AdamState::new(5, 1e-3);
            for k in 0..10 {
                let g: Vec<f64> = (0..5).map(|i| ((i + k) as f64).sin()).collect();
                adam_step(&mut p, &g, &mut s).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
