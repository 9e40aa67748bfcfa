//! Adam optimizer over named parameter sets.

use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment state, congruent with the parameters it updates.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` along `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        debug_assert!(params.congruent(grads));
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .map(|(_, t)| t)
            .zip(grads.iter().map(|(_, t)| t))
            .zip(self.m.iter_mut().map(|(_, t)| t))
            .zip(self.v.iter_mut().map(|(_, t)| t))
        {
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}
