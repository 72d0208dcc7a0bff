//! Adam with bias correction, holding per-parameter moment estimates.

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Moment estimates for one parameter group. The group's shapes are
/// fixed at construction; every step must pass the same shapes back.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> AdamState {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a parameter group, in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::arg("adam_step", format!("lr must be positive, got {}", lr)));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, state holds {}",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (k, p) in params.iter().enumerate() {
        if p.shape() != grads[k].shape() || p.shape() != state.first_moment[k].shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "param {} is {:?}, grad {:?}, moment {:?}",
                    k,
                    p.shape(),
                    grads[k].shape(),
                    state.first_moment[k].shape()
                ),
            ));
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - state.beta1.powf(t);
    let bias2 = 1.0 - state.beta2.powf(t);

    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.first_moment[k].data_mut();
        let v = state.second_moment[k].data_mut();
        let out = p.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            out[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let before = p.detach();
        let mut state = AdamState::new(&[&p]);
        let g = Tensor::zeros(2, 2);
        adam_step(&mut [&mut p], &[g], &mut state, 0.05).unwrap();
        assert!(p.bits_eq(&before));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With zero moments, bias correction cancels and the update is
        // -lr * g / (|g| + eps') which is within epsilon of -lr * sign(g).
        let mut p = Tensor::from_vec(1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let mut state = AdamState::new(&[&p]);
        let g = Tensor::from_vec(1, 3, vec![0.7, -1.3, 4.0]).unwrap();
        adam_step(&mut [&mut p], &[g.detach()], &mut state, 0.01).unwrap();
        for (moved, grad) in p.data().iter().zip(g.data()) {
            assert!((moved + 0.01 * grad.signum()).abs() < 1e-6, "moved {}", moved);
        }
    }

    #[test]
    fn constant_gradient_descends_a_quadratic() {
        // f(x) = (x - 3)^2 from x = 0; each step must strictly reduce f.
        let mut x = Tensor::from_vec(1, 1, vec![0.0]).unwrap();
        let mut state = AdamState::new(&[&x]);
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut last = f(x.scalar());
        for _ in 0..2 {
            let g = Tensor::from_vec(1, 1, vec![2.0 * (x.scalar() - 3.0)]).unwrap();
            adam_step(&mut [&mut x], &[g], &mut state, 0.1).unwrap();
            let now = f(x.scalar());
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn shape_drift_is_rejected() {
        let mut p = Tensor::zeros(2, 2);
        let mut state = AdamState::new(&[&p]);
        let g = Tensor::zeros(3, 2);
        let err = adam_step(&mut [&mut p], &[g], &mut state, 0.1).unwrap_err();
        assert!(err.to_string().contains("adam_step"));
    }
}
