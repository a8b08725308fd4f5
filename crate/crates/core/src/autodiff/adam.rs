use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam optimizer state for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[&Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::from_parts(p.rows(), p.cols(), vec![0.0; p.len()]))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if grads.len() < params.len() {
            return Err(Error::MissingGradient(grads.len()));
        }
        if params.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params but state tracks {}", params.len(), self.m.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter {i}: {} values, gradient {}", p.len(), g.len()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (pv, gv) = (p.values_mut(), g.values());
            let (mv, vv) = (m.values_mut(), v.values_mut());
            for j in 0..pv.len() {
                mv[j] = self.beta1 * mv[j] + (1.0 - self.beta1) * gv[j];
                vv[j] = self.beta2 * vv[j] + (1.0 - self.beta2) * gv[j] * gv[j];
                let mhat = mv[j] / bc1;
                let vhat = vv[j] / bc2;
                pv[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
