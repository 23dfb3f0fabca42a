use std::collections::BTreeMap;

use crate::numerics::Tensor;
use crate::params::ParamStore;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily per
/// parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left alone.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<(), TrainError> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(TrainError::Config(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient {
                    step: self.step + 1,
                    param: name.clone(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(x: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::vector(x.to_vec()));
        s
    }

    fn grads(g: &[f64]) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::vector(g.to_vec()))])
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = store(&[0.0, 1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &grads(&[1.0, 1.0, -1.0])).unwrap();
        let got = p.get("x").unwrap().data();
        let expected = [-1e-3, 1.0 - 1e-3, -2.0 + 1e-3];
        for (a, b) in got.iter().zip(expected) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store(&[0.5, -0.5]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &grads(&[0.0, 0.0])).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut p = store(&[1.0]);
        let mut opt = Adam::new(AdamConfig::default());
        let mut last = 1.0;
        for _ in 0..3 {
            let x = p.get("x").unwrap().data()[0];
            opt.step(&mut p, &grads(&[2.0 * x])).unwrap();
            let x = p.get("x").unwrap().data()[0];
            assert!(x * x < last);
            last = x * x;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_name_and_step() {
        let mut p = store(&[1.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut p, &grads(&[1.0])).unwrap();
        let err = opt.step(&mut p, &grads(&[f64::NAN])).unwrap_err();
        match err {
            TrainError::NonFiniteGradient { step, param } => {
                assert_eq!(step, 2);
                assert_eq!(param, "x");
            }
            other => panic!("{other}"),
        }
        assert_eq!(opt.steps(), 1);
    }
}
