use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are stored per parameter in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != self.m[i].len() || g.shape() != p.shape() {
                return Err(Error::shape(format!(
                    "adam parameter {i}: param {:?}, grad {:?}, moments {}",
                    p.shape(),
                    g.shape(),
                    self.m[i].len()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
