use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tape::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First and second moment accumulators, aligned with a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamMoments {
    pub fn zeros(params: &ParameterSet) -> Self {
        AdamMoments {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_update(
    params: &mut ParameterSet,
    grads: &[Mat],
    moments: &mut AdamMoments,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if step == 0 {
        return Err(Error::invalid("Adam steps count from 1"));
    }
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for (i, p) in params.params.iter_mut().enumerate() {
        let g = &grads[i];
        if g.raw_dim() != p.value.raw_dim() {
            return Err(Error::Shape(format!("gradient shape for {}", p.name)));
        }
        let m = &mut moments.m[i];
        let v = &mut moments.v[i];
        ndarray::Zip::from(&mut p.value)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|w, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * mh / (vh.sqrt() + cfg.eps);
            });
    }
    Ok(())
}
