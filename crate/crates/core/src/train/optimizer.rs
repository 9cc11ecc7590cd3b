use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tensor};

/// Adaptive-moment optimizer with decoupled weight decay and linear warmup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
    /// Fraction of all steps spent ramping the learning rate up from 0.
    pub warmup_frac: Real,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 0.0,
            warmup_frac: 0.02,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && (0.0..=1.0).contains(&self.warmup_frac);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimConfig,
    pub step: u64,
    pub warmup_steps: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    /// Moments shaped like every parameter in `store`. `total_steps` sets the
    /// warmup length.
    pub fn new(store: &ParamStore, config: OptimConfig, total_steps: u64) -> Result<Self> {
        config.validate()?;
        let zeros = || -> Vec<Tensor> {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Ok(OptimizerState {
            config,
            step: 0,
            warmup_steps: ((total_steps as Real * config.warmup_frac).ceil() as u64).max(1),
            m: zeros(),
            v: zeros(),
        })
    }

    /// Learning rate applied at the next step.
    pub fn current_lr(&self) -> Real {
        let ramp = ((self.step + 1) as Real / self.warmup_steps as Real).min(1.0);
        self.config.lr * ramp
    }

    /// Applies one update from the `grad` buffers of trainable parameters.
    pub fn apply(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Precondition(
                "optimizer state does not match the parameter store".into(),
            ));
        }
        let lr = self.current_lr();
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, (_, p)) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m)
                .zip(v)
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let update = (*mi / bias1) / ((*vi / bias2).sqrt() + c.eps);
                *w -= lr * (update + c.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_ramps_linearly() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0), true).unwrap();
        let cfg = OptimConfig {
            lr: 1.0,
            warmup_frac: 0.1,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&store, cfg, 40).unwrap();
        assert_eq!(opt.warmup_steps, 4);
        let mut seen = Vec::new();
        for _ in 0..6 {
            seen.push(opt.current_lr());
            opt.apply(&mut store).unwrap();
        }
        assert_eq!(seen, [0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::from_vec(1, 2, vec![3.0, -2.0]).unwrap(), true)
            .unwrap();
        let mut opt = OptimizerState::new(
            &store,
            OptimConfig {
                lr: 0.05,
                ..Default::default()
            },
            500,
        )
        .unwrap();
        for _ in 0..500 {
            let p = store.get_mut("w").unwrap();
            p.grad = p.value.map(|w| 2.0 * w);
            opt.apply(&mut store).unwrap();
        }
        assert!(store
            .value("w")
            .unwrap()
            .data()
            .iter()
            .all(|w| w.abs() < 1e-2));
    }

    #[test]
    fn zero_gradient_and_zero_value_stay_put() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(2, 2), true).unwrap();
        let cfg = OptimConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = OptimizerState::new(&store, cfg, 10).unwrap();
        opt.apply(&mut store).unwrap();
        assert!(store.value("w").unwrap().data().iter().all(|&w| w == 0.0));
    }
}
