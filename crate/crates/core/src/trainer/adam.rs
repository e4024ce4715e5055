use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{HireError, Result};
use crate::numcore::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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

/// Moment buffers and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }

    /// One bias-corrected update from the accumulated gradients, which are
    /// zeroed afterwards. A non-finite gradient aborts before any parameter
    /// changes and names the parameter.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        for (name, t) in store.iter() {
            if let Some(g) = t.grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(HireError::NonFinite(format!(
                        "gradient of {name} at index {i} is {}",
                        g[i]
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, t) in store.iter_mut() {
            let n = t.len();
            let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let dtype = t.dtype();
            let data = t.data_mut();
            for i in 0..n {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                data[i] = dtype.round(data[i] - update);
            }
            t.zero_grad();
        }
        Ok(())
    }
}

/// Global L2 norm over every gradient slot.
pub fn grad_norm(store: &ParamStore) -> f64 {
    store
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in store.iter_mut() {
            if let Some(g) = t.take_grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * s).collect();
                t.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
    norm
}

/// `base · rate^floor(epoch / every)`.
pub fn lr_schedule(base: f64, rate: f64, every: usize, epoch: usize) -> f64 {
    if every == 0 {
        return base;
    }
    base * rate.powi((epoch / every) as i32)
}
