use super::dense::DenseMatrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: DenseMatrix,
    pub v: DenseMatrix,
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let moments = store
            .iter()
            .map(|t| Moments {
                m: DenseMatrix::zeros(t.value.rows(), t.value.cols()),
                v: DenseMatrix::zeros(t.value.rows(), t.value.cols()),
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.moments.len() != store.len() {
            return Err(Error::LengthMismatch(self.moments.len(), store.len()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            weight_decay,
            betas: (b1, b2),
            eps,
        } = self.config;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (t, mom) in store.iter_mut().zip(&mut self.moments) {
            let value = t.value.data_mut();
            let grad = t.grad.data();
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * weight_decay * value[i];
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", DenseMatrix::filled(1, 1, value)).unwrap();
        s.get_mut(id).grad.fill(grad);
        s
    }

    fn value(s: &ParamStore) -> f64 {
        s.iter().next().unwrap().value.data()[0]
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut s = scalar_store(1.5, 0.0);
        let mut adam = Adam::new(
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &s,
        );
        adam.step(&mut s).unwrap();
        assert_eq!(value(&s), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let mut s = scalar_store(1.0, 1.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &s,
        );
        adam.step(&mut s).unwrap();
        assert!((value(&s) - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_scales_value() {
        let mut s = scalar_store(2.0, 0.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                weight_decay: 0.01,
                ..AdamConfig::default()
            },
            &s,
        );
        adam.step(&mut s).unwrap();
        assert!((value(&s) - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }
}
