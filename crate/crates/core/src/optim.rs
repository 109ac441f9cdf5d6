//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!(
                "Adam epsilon must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// One trainable tensor handed to [`AdamState::step`].
pub struct ParamSlot<'a> {
    pub name: String,
    pub value: &'a mut Matrix,
    pub grad: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// Zeroed moment buffers for parameters of the given shapes.
    pub fn new(shapes: &[(usize, usize)], config: AdamConfig) -> Result<Self> {
        config.validate()?;
        if shapes.is_empty() {
            return Err(Error::Config("Adam needs at least one parameter".into()));
        }
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Ok(Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    /// Applies one update to every slot. Nothing is modified if any gradient
    /// is non-finite or mis-shaped.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        if slots.len() != self.m.len() {
            return Err(Error::Config(format!(
                "Adam was initialized for {} parameters, got {}",
                self.m.len(),
                slots.len()
            )));
        }
        for (slot, m) in slots.iter().zip(&self.m) {
            if slot.value.shape() != m.shape() || slot.grad.shape() != m.shape() {
                return Err(Error::shape("adam_step", slot.grad.shape(), m.shape()));
            }
            if slot.grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(slot.name.clone()));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.t as i32;
        let m_correction = 1.0 - beta1.powi(t);
        let v_correction = 1.0 - beta2.powi(t);

        for ((slot, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let params = slot.value.data_mut();
            let moments = m.data_mut().iter_mut().zip(v.data_mut());
            for ((p, (m, v)), &g) in params.iter_mut().zip(moments).zip(slot.grad.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / m_correction;
                let v_hat = *v / v_correction;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("adam_step"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded_init, Init, RngState};
    use proptest::prelude::*;

    fn step_one(state: &mut AdamState, value: &mut Matrix, grad: &Matrix) -> Result<()> {
        state.step(&mut [ParamSlot {
            name: "w".into(),
            value,
            grad,
        }])
    }

    #[test]
    fn init_zeroes_moments() {
        let s = AdamState::new(&[(41, 512), (1, 512)], AdamConfig::default()).unwrap();
        assert_eq!(s.step_count(), 0);
        assert_eq!(s.first_moments()[0].shape(), (41, 512));
        assert!(s
            .first_moments()
            .iter()
            .chain(s.second_moments())
            .all(|m| m.sum() == 0.0));
        assert_eq!(
            s,
            AdamState::new(&[(41, 512), (1, 512)], AdamConfig::default()).unwrap()
        );
        assert_eq!(
            *s.config(),
            AdamConfig {
                lr: 0.001,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8
            }
        );
        assert!(AdamState::new(&[], AdamConfig::default()).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(&[(2, 2)], AdamConfig::default()).unwrap();
        let mut w = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let before = w.clone();
        for _ in 0..5 {
            step_one(&mut s, &mut w, &Matrix::zeros(2, 2)).unwrap();
        }
        assert_eq!(w, before);
        assert_eq!(s.step_count(), 5);
    }

    #[test]
    fn first_step_hand_trace() {
        let mut s = AdamState::new(&[(1, 1)], AdamConfig::default()).unwrap();
        let mut w = Matrix::zeros(1, 1);
        step_one(&mut s, &mut w, &Matrix::filled(1, 1, 0.5)).unwrap();
        // m̂ = g and v̂ = g² after bias correction at t = 1
        let expect = -0.001 * 0.5 / (0.5 + 1e-8);
        assert!((w.get(0, 0) - expect).abs() < 1e-15);
        assert!((w.get(0, 0) + 0.001).abs() < 1e-10);
    }

    #[test]
    fn rejects_nan_and_shape_mismatch_without_mutating() {
        let mut s = AdamState::new(&[(1, 2)], AdamConfig::default()).unwrap();
        let mut w = Matrix::zeros(1, 2);
        let mut bad = Matrix::zeros(1, 2);
        bad.data_mut()[1] = f64::NAN;
        let err = step_one(&mut s, &mut w, &bad).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert!(step_one(&mut s, &mut w, &Matrix::zeros(2, 1)).is_err());
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = AdamState::new(&[(1, 1)], AdamConfig::default()).unwrap();
        let mut w = Matrix::filled(1, 1, 5.0);
        let mut reached = None;
        for step in 1..=20_000 {
            let g = w.scale(2.0).unwrap();
            step_one(&mut s, &mut w, &g).unwrap();
            if w.get(0, 0).abs() < 0.1 {
                reached = Some(step);
                break;
            }
        }
        // An independent scalar simulation of the same recurrence.
        let (mut x, mut m, mut v) = (5.0f64, 0.0f64, 0.0f64);
        let mut oracle = None;
        for t in 1..=20_000 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.001 * mh / (vh.sqrt() + 1e-8);
            if x.abs() < 0.1 {
                oracle = Some(t as usize);
                break;
            }
        }
        assert_eq!(reached, oracle);
        // Adam moves at most ~lr per step, so 5 → 0.1 takes ≥ 4900 steps at lr = 0.001.
        assert!(reached.is_some(), "did not converge");
    }

    proptest! {
        #[test]
        fn first_step_bounded_by_lr(g in prop::collection::vec(-100.0f64..100.0, 1..20)) {
            let n = g.len();
            let mut s = AdamState::new(&[(1, n)], AdamConfig::default()).unwrap();
            let mut w = Matrix::zeros(1, n);
            step_one(&mut s, &mut w, &Matrix::row_vector(&g).unwrap()).unwrap();
            for &dw in w.data() {
                prop_assert!(dw.abs() <= 0.001 * (1.0 + 1e-6));
            }
        }

        #[test]
        fn second_moment_non_negative_and_deterministic(seed in any::<u64>(), steps in 1usize..30) {
            let mut rng = RngState::new(seed);
            let grads: Vec<Matrix> = (0..steps).map(|_| seeded_init(3, 2, Init::HeNormal, &mut rng)).collect();
            let run = || {
                let mut s = AdamState::new(&[(3, 2)], AdamConfig::default()).unwrap();
                let mut w = Matrix::filled(3, 2, 0.3);
                for g in &grads {
                    step_one(&mut s, &mut w, g).unwrap();
                }
                (s, w)
            };
            let (s1, w1) = run();
            let (s2, w2) = run();
            prop_assert!(s1.second_moments()[0].data().iter().all(|&v| v >= 0.0));
            prop_assert_eq!(s1.step_count(), steps as u64);
            prop_assert_eq!(w1, w2);
            prop_assert_eq!(s1, s2);
        }
    }
}
