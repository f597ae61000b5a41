use alloc::vec;
use alloc::vec::Vec;

use super::ParamRange;

/// Adaptive-moment gradient descent over a flat parameter vector.
///
/// Only the ranges passed to [`Adam::step`] are touched; every other
/// parameter keeps its exact bit pattern.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], trainable: &[ParamRange]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for r in trainable {
            for i in r.offset..r.end() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i] / bc1;
                let vh = self.v[i] / bc2;
                params[i] -= self.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_and_respects_frozen_ranges() {
        let mut p = vec![3.0, -2.0, 7.0];
        let mut opt = Adam::new(3, 0.05);
        let train = [ParamRange { offset: 0, len: 2 }];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g, &train);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
        assert_eq!(p[2].to_bits(), 7.0f64.to_bits());
    }
}
