use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension affine standardization of model inputs `(s, a)` and
/// targets `(delta_s, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

fn moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

pub(crate) fn model_input(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + a.len());
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    x
}

pub(crate) fn model_target(t: &Transition) -> Vec<f64> {
    let mut y: Vec<f64> = t.s_next.iter().zip(&t.s).map(|(n, o)| n - o).collect();
    y.push(t.r);
    y
}

impl Normalizer {
    pub fn fit<'a>(transitions: impl IntoIterator<Item = &'a Transition>) -> Result<Self> {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for t in transitions {
            xs.push(model_input(&t.s, &t.a));
            ys.push(model_target(t));
        }
        if xs.is_empty() {
            return Err(Error::Dataset("cannot fit a normalizer to no data".into()));
        }
        let (in_mean, in_std) = moments(&xs);
        let (out_mean, out_std) = moments(&ys);
        Ok(Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        })
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.in_mean.iter().zip(&self.in_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_target(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.out_mean.iter().zip(&self.out_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_target(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.out_mean.iter().zip(&self.out_std))
            .map(|(&v, (&m, &s))| m + s * v)
            .collect()
    }
}
