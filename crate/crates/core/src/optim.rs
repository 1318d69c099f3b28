//! Adam with `f32` state, so a checkpoint captures the optimizer exactly.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::params::ParamStore;

pub const DEFAULT_LR: f64 = 3e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let m: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, v: m.clone(), m }
    }

    /// One update from gradients given in store order. Non-finite gradients
    /// are rejected before any state changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(shape_err!("{} gradient buffers for {} parameters", grads.len(), params.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if !g.is_empty() && g.len() != p.numel() {
                return Err(shape_err!("gradient for {} has {} values, expected {}", p.name, g.len(), p.numel()));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(alloc::format!("non-finite gradient for {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.is_empty() {
                continue;
            }
            for i in 0..g.len() {
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g[i];
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g[i] * g[i];
                m[i] = mi as f32;
                v[i] = vi as f32;
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                let upd = self.lr * mhat / (math::sqrt(vhat) + self.eps);
                p.data[i] = (p.data[i] as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_descends_monotonically() {
        let mut ps = ParamStore::new();
        ps.add("w", &[1], vec![1.0]).unwrap();
        let mut opt = Adam::new(&ps, DEFAULT_LR);
        let mut prev = 1.0f32;
        for _ in 0..100 {
            let w = ps.iter().next().unwrap().data[0] as f64;
            opt.step(&mut ps, &[vec![2.0 * w]]).unwrap();
            let now = ps.iter().next().unwrap().data[0];
            assert!(now.abs() < prev.abs(), "{now} !< {prev}");
            prev = now;
        }
        // Adam moves roughly lr per step on a consistent gradient sign
        assert!((prev - (1.0 - 100.0 * 3e-4) as f32).abs() < 1e-3);
    }

    #[test]
    fn rejects_nan_without_touching_state() {
        let mut ps = ParamStore::new();
        ps.add("w", &[2], vec![1.0, 2.0]).unwrap();
        let mut opt = Adam::new(&ps, DEFAULT_LR);
        let before = ps.clone();
        assert!(opt.step(&mut ps, &[vec![f64::NAN, 1.0]]).is_err());
        assert_eq!(ps, before);
        assert_eq!(opt.step, 0);
    }
}
