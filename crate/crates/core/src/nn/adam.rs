use crate::error::{Error, Result};

/// One trainable tensor handed to the optimizer for a single step.
pub struct ParamSlot<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Adam with bias correction. Moments are allocated lazily on the first step
/// and must keep the same tensor order and sizes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    /// Apply one update. Fails without touching anything if a gradient is
    /// non-finite or shapes disagree.
    pub fn apply(&mut self, slots: Vec<ParamSlot<'_>>) -> Result<()> {
        for s in &slots {
            if s.value.len() != s.grad.len() {
                return Err(Error::Shape(format!("tensor `{}`: {} values, {} gradients", s.name, s.value.len(), s.grad.len())));
            }
            if s.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { tensor: s.name.clone() });
            }
        }
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != slots.len() || self.first.iter().zip(&slots).any(|(m, s)| m.len() != s.value.len()) {
            return Err(Error::Shape("optimizer state does not match parameter layout".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((slot, m), v) in slots.into_iter().zip(&mut self.first).zip(&mut self.second) {
            for (((p, &g), mi), vi) in slot.value.iter_mut().zip(slot.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot<'a>(value: &'a mut [f64], grad: &'a [f64]) -> Vec<ParamSlot<'a>> {
        vec![ParamSlot { name: "p".into(), value, grad }]
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut adam = AdamState::new(0.1);
        let mut p = [1.0, -2.0];
        adam.apply(slot(&mut p, &[0.5, -0.5])).unwrap();
        let after_first = p;
        let (m0, v0) = (adam.first[0].clone(), adam.second[0].clone());
        // Fresh state, zero gradient: nothing moves.
        let mut fresh = AdamState::new(0.1);
        let mut q = [1.0, -2.0];
        fresh.apply(slot(&mut q, &[0.0, 0.0])).unwrap();
        assert_eq!(q, [1.0, -2.0]);
        adam.apply(slot(&mut p, &[0.0, 0.0])).unwrap();
        for i in 0..2 {
            assert_eq!(adam.first[0][i], 0.9 * m0[i]);
            assert_eq!(adam.second[0][i], 0.999 * v0[i]);
        }
        assert_ne!(p, after_first);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut adam = AdamState::new(5e-4);
        adam.epsilon = 0.0;
        let mut p = [0.0, 0.0, 0.0];
        adam.apply(slot(&mut p, &[3.0, -0.001, 250.0])).unwrap();
        assert!((p[0] + 5e-4).abs() < 1e-15);
        assert!((p[1] - 5e-4).abs() < 1e-15);
        assert!((p[2] + 5e-4).abs() < 1e-15);
    }

    #[test]
    fn three_steps_on_scalar_quadratic() {
        // f(x) = (x - 3)^2, gradient 2(x - 3), from x = 0.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (x - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut adam = AdamState::new(lr);
        let mut p = [0.0];
        for _ in 0..3 {
            let g = [2.0 * (p[0] - 3.0)];
            adam.apply(slot(&mut p, &g)).unwrap();
        }
        assert!((p[0] - x).abs() < 1e-12, "{} vs {x}", p[0]);
        assert_eq!(adam.step, 3);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut adam = AdamState::new(0.1);
        let mut p = [1.0];
        let err = adam.apply(vec![ParamSlot { name: "dec.bias".into(), value: &mut p, grad: &[f64::NAN] }]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref tensor } if tensor == "dec.bias"));
        assert_eq!(p, [1.0]);
        assert_eq!(adam.step, 0);
    }
}
