//! Adam with bias-corrected moments.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math::sqrt;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: step count and one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Moment buffers are allocated on the first step to match `params`.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            bail!(Contract, "optimizer state does not match the parameter set");
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad().map(<[f64]>::to_vec) else { continue };
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                data[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps);
            }
        }
        Ok(())
    }
}

/// One Adam update of a single tensor from an explicit gradient.
pub fn adam_step(param: &mut Tensor, grad: &[f64], state: &mut Adam) -> Result<()> {
    if grad.len() != param.len() {
        bail!(Contract, "gradient length {} for parameter of length {}", grad.len(), param.len());
    }
    param.zero_grad();
    param.accumulate_grad(grad)?;
    state.step(&mut [param])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut s = Adam::new(AdamConfig::default());
        adam_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut p = Tensor::new(&[3], vec![0.0; 3]).unwrap();
        let mut s = Adam::new(AdamConfig::default());
        let g = [0.3, -4.0, 1e-3];
        adam_step(&mut p, &g, &mut s).unwrap();
        for (x, g) in p.data().iter().zip(&g) {
            assert_eq!(x.signum(), -g.signum());
            assert!((x.abs() - 1e-3).abs() < 1e-5);
        }
    }

    #[test]
    fn descends_quadratic() {
        let mut p = Tensor::new(&[1], vec![1.0]).unwrap();
        let mut s = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        let mut last = 1.0f64;
        for _ in 0..10 {
            let g = 2.0 * p.data()[0];
            adam_step(&mut p, &[g], &mut s).unwrap();
            assert!(p.data()[0].abs() < last);
            last = p.data()[0].abs();
        }
    }

    #[test]
    fn mismatched_state() {
        let mut p = Tensor::new(&[2], vec![0.0; 2]).unwrap();
        let mut s = Adam::new(AdamConfig::default());
        adam_step(&mut p, &[1.0, 1.0], &mut s).unwrap();
        let mut q = Tensor::new(&[3], vec![0.0; 3]).unwrap();
        assert!(adam_step(&mut q, &[1.0; 3], &mut s).is_err());
        assert!(adam_step(&mut p, &[1.0; 3], &mut s).is_err());
    }
}
