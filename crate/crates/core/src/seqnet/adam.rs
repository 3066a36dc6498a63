use serde::{Deserialize, Serialize};

use super::params::NetworkParams;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moment accumulators for one parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn for_params(params: &NetworkParams) -> Self {
        Self::new(params.len())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::shape(format!(
                "adam: {} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if !(lr > 0.0) {
            return Err(Error::arg(format!("learning rate must be positive, got {lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: f64) -> Result<()> {
        if !params.same_shape(grads) {
            return Err(Error::shape("gradient store does not match parameters"));
        }
        self.update(params.as_mut_slice(), grads.as_slice(), lr)
    }
}

/// Rescales all gradient stores jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut NetworkParams], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.as_slice().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::NetworkConfig;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let c = NetworkConfig::new(1, 1).with_size(2, 1);
        let mut p = NetworkParams::init(c, 1);
        let before = p.clone();
        let mut s = AdamState::for_params(&p);
        s.step(&mut p, &NetworkParams::zeros(c), 5e-4).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for &g in &[0.3, -2.0, 1e-3] {
            let mut p = [1.0];
            let mut s = AdamState::new(1);
            s.update(&mut p, &[g], 5e-4).unwrap();
            let expected = 1.0 - 5e-4 * g / (g.abs() + ADAM_EPSILON);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p[0]) - 5e-4 * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut p = vec![0.5, -0.25, 2.0];
            let mut s = AdamState::new(3);
            for k in 0..5 {
                let g: Vec<f64> = p.iter().map(|x| x * (k as f64 + 1.0)).collect();
                s.update(&mut p, &g, 1e-2).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = AdamState::new(2);
        assert!(matches!(s.update(&mut [0.0; 3], &[0.0; 3], 1e-3), Err(Error::Shape(_))));
        let a = NetworkParams::zeros(NetworkConfig::new(1, 1).with_size(2, 1));
        let b = NetworkParams::zeros(NetworkConfig::new(2, 1).with_size(2, 1));
        let mut s = AdamState::for_params(&a);
        assert!(s.step(&mut a.clone(), &b, 1e-3).is_err());
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let c = NetworkConfig::new(1, 1).with_size(1, 1);
        let mut a = NetworkParams::zeros(c);
        let mut b = NetworkParams::zeros(c);
        a.fill(3.0);
        b.fill(4.0);
        let n = a.len() as f64;
        let before = clip_global_norm(&mut [&mut a, &mut b], 5.0);
        assert!((before - (25.0 * n).sqrt()).abs() < 1e-9);
        let after: f64 = a.as_slice().iter().chain(b.as_slice()).map(|v| v * v).sum();
        assert!((after.sqrt() - 5.0).abs() < 1e-9);
    }
}
