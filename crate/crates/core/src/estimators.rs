//! Gradient strategies through the Bernoulli code layer.
//!
//! All functions are pure given explicit uniform variates `u` in `(0, 1)^K`;
//! callers own the randomness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::code::BinaryCode;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Which estimator drives the encoder gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorTag {
    Arm,
    StraightThrough,
    GumbelSoftmax,
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorTag::Arm => "arm",
            EstimatorTag::StraightThrough => "st",
            EstimatorTag::GumbelSoftmax => "gs",
        })
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arm" => Ok(EstimatorTag::Arm),
            "st" | "straight-through" => Ok(EstimatorTag::StraightThrough),
            "gs" | "gumbel" | "gumbel-softmax" => Ok(EstimatorTag::GumbelSoftmax),
            other => Err(Error::Validation(format!("unknown estimator `{other}` (expected arm, st or gs)"))),
        }
    }
}

/// A configured estimator, with the Gumbel-Softmax temperature resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Arm,
    StraightThrough,
    GumbelSoftmax { temperature: f64 },
}

impl EstimatorKind {
    pub fn gumbel(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Validation(format!("Gumbel-Softmax temperature must be > 0, got {temperature}")));
        }
        Ok(EstimatorKind::GumbelSoftmax { temperature })
    }

    pub fn tag(&self) -> EstimatorTag {
        match self {
            EstimatorKind::Arm => EstimatorTag::Arm,
            EstimatorKind::StraightThrough => EstimatorTag::StraightThrough,
            EstimatorKind::GumbelSoftmax { .. } => EstimatorTag::GumbelSoftmax,
        }
    }
}

/// `bit_k = 1` iff `u_k < sigmoid(psi_k)`.
pub fn sample_bernoulli(psi: &[f64], u: &[f64]) -> BinaryCode {
    assert_eq!(psi.len(), u.len());
    BinaryCode::from_fn(psi.len(), |k| u[k] < sigmoid(psi[k]))
}

/// Evaluation-time code: `bit_k = 1` iff `psi_k >= 0`.
pub fn threshold_code(psi: &[f64]) -> BinaryCode {
    BinaryCode::from_fn(psi.len(), |k| psi[k] >= 0.0)
}

/// One ARM draw: the two antithetic pseudo-codes, their scores and the
/// resulting gradient estimate.
#[derive(Debug, Clone)]
pub struct ArmSample {
    pub gradient: Vec<f64>,
    /// `1[u > sigmoid(-psi)]`
    pub z_plus: BinaryCode,
    /// `1[u < sigmoid(psi)]`, itself a Bernoulli(sigmoid(psi)) sample.
    pub z_minus: BinaryCode,
    pub score_plus: f64,
    pub score_minus: f64,
}

/// Unbiased single-sample estimate of `d/dpsi E_{z ~ Bern(sigmoid(psi))}[score(z)]`:
/// `(score(1[u > sigmoid(-psi)]) - score(1[u < sigmoid(psi)])) * (u - 1/2)`.
///
/// `score` is evaluated exactly twice and need not be differentiable.
pub fn arm_gradient<F>(mut score: F, psi: &[f64], u: &[f64]) -> Result<ArmSample>
where
    F: FnMut(&BinaryCode) -> Result<f64>,
{
    if psi.len() != u.len() {
        return Err(Error::Shape(format!("{} logits but {} uniforms", psi.len(), u.len())));
    }
    let k = psi.len();
    let z_plus = BinaryCode::from_fn(k, |i| u[i] > sigmoid(-psi[i]));
    let z_minus = BinaryCode::from_fn(k, |i| u[i] < sigmoid(psi[i]));
    let score_plus = score(&z_plus)?;
    let score_minus = score(&z_minus)?;
    if !score_plus.is_finite() || !score_minus.is_finite() {
        return Err(Error::Numeric(format!("ARM score not finite ({score_plus}, {score_minus})")));
    }
    let diff = score_plus - score_minus;
    let gradient = if diff == 0.0 { vec![0.0; k] } else { u.iter().map(|&ui| diff * (ui - 0.5)).collect() };
    Ok(ArmSample { gradient, z_plus, z_minus, score_plus, score_minus })
}

/// A code value fed forward together with the diagonal of its Jacobian with
/// respect to the logits, which is all the pathwise estimators need.
#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    pub value: Vec<f64>,
    pub jacobian: Vec<f64>,
}

impl Relaxation {
    /// Chain an upstream gradient on the code back to the logits.
    pub fn backward(&self, grad_value: &[f64]) -> Vec<f64> {
        grad_value.iter().zip(&self.jacobian).map(|(g, j)| g * j).collect()
    }
}

/// Straight-through: the forward value is the sampled code itself; the
/// backward treats the sampler as the identity on `sigmoid(psi)`, so the
/// logit gradient is `g * sigmoid'(psi)`.
pub fn st_passthrough(psi: &[f64], z: &BinaryCode) -> Relaxation {
    assert_eq!(psi.len(), z.len());
    let value = z.to_f64();
    let jacobian = psi
        .iter()
        .map(|&p| {
            let s = sigmoid(p);
            s * (1.0 - s)
        })
        .collect();
    Relaxation { value, jacobian }
}

/// Binary Gumbel-Softmax with logistic noise `g = ln u - ln(1 - u)`:
/// `h = sigmoid((g + psi) / tau)`, exact pathwise derivative `h (1 - h) / tau`.
pub fn gs_relaxed_sample(psi: &[f64], u: &[f64], temperature: f64) -> Result<Relaxation> {
    if psi.len() != u.len() {
        return Err(Error::Shape(format!("{} logits but {} uniforms", psi.len(), u.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::Validation(format!("temperature must be > 0, got {temperature}")));
    }
    let mut value = Vec::with_capacity(psi.len());
    let mut jacobian = Vec::with_capacity(psi.len());
    for (&p, &ui) in psi.iter().zip(u) {
        let g = logistic_noise(ui);
        let h = sigmoid((g + p) / temperature);
        value.push(h);
        jacobian.push(h * (1.0 - h) / temperature);
    }
    Ok(Relaxation { value, jacobian })
}

pub fn logistic_noise(u: f64) -> f64 {
    u.ln() - (1.0 - u).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{open_uniforms, rng_for};

    #[test]
    fn saturated_logit_always_fires() {
        for u in [1e-9, 0.5, 1.0 - 1e-9] {
            assert!(sample_bernoulli(&[800.0], &[u]).get(0));
            assert!(!sample_bernoulli(&[-800.0], &[u]).get(0));
        }
    }

    #[test]
    fn zero_logit_threshold_half() {
        assert!(sample_bernoulli(&[0.0], &[0.3]).get(0));
        assert!(!sample_bernoulli(&[0.0], &[0.7]).get(0));
    }

    #[test]
    fn bernoulli_rate_matches_sigmoid() {
        let mut rng = rng_for(11, &[]);
        let n = 1_000_000;
        let mut ones = 0u64;
        for _ in 0..(n / 1000) {
            let u = open_uniforms(&mut rng, 1000);
            let psi = vec![0.7; 1000];
            ones += sample_bernoulli(&psi, &u).count_ones() as u64;
        }
        let rate = ones as f64 / n as f64;
        assert!((rate - 0.6682).abs() < 0.002, "{rate}");
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_code(&[-1.0, 0.0, 2.0]).to_bools(), vec![false, true, true]);
        let psi = [-0.3, 1.2, -4.0, 0.01];
        for c in [0.001, 1.0, 7.5] {
            let scaled: Vec<f64> = psi.iter().map(|p| p * c).collect();
            assert_eq!(threshold_code(&scaled), threshold_code(&psi));
        }
    }

    #[test]
    fn threshold_agrees_with_sample_majority() {
        let mut rng = rng_for(12, &[]);
        let psi = [-2.0, -0.3, 0.25, 1.5, 0.21, -0.21];
        let n = 100_000;
        let mut counts = [0u32; 6];
        for _ in 0..n {
            let u = open_uniforms(&mut rng, psi.len());
            let z = sample_bernoulli(&psi, &u);
            for (k, c) in counts.iter_mut().enumerate() {
                *c += z.get(k) as u32;
            }
        }
        let hard = threshold_code(&psi);
        for k in 0..psi.len() {
            if (sigmoid(psi[k]) - 0.5).abs() > 0.05 {
                assert_eq!(hard.get(k), counts[k] * 2 > n, "bit {k}");
            }
        }
    }

    #[test]
    fn arm_constant_score_is_zero() {
        let mut rng = rng_for(13, &[]);
        for _ in 0..100 {
            let u = open_uniforms(&mut rng, 4);
            let s = arm_gradient(|_| Ok(3.5), &[0.1, -2.0, 0.0, 5.0], &u).unwrap();
            assert_eq!(s.gradient, vec![0.0; 4]);
        }
    }

    #[test]
    fn arm_scalar_linear_is_abs_offset() {
        let mut rng = rng_for(14, &[]);
        for _ in 0..100 {
            let u = open_uniforms(&mut rng, 1);
            let s = arm_gradient(|z| Ok(z.get(0) as u8 as f64), &[0.0], &u).unwrap();
            assert!((s.gradient[0] - (u[0] - 0.5).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn arm_evaluates_score_exactly_twice() {
        let mut calls = 0;
        arm_gradient(
            |_| {
                calls += 1;
                Ok(1.0)
            },
            &[0.2, 0.3],
            &[0.4, 0.9],
        )
        .unwrap();
        assert_eq!(calls, 2);
    }

    #[test]
    fn arm_pseudo_codes_differ_only_outside_interval() {
        // Inside the interval between sigmoid(-psi) and sigmoid(psi) both
        // pseudo-codes take the same value; they split only beyond it.
        let mut rng = rng_for(15, &[]);
        for _ in 0..1000 {
            let psi: Vec<f64> = open_uniforms(&mut rng, 8).iter().map(|u| 6.0 * (u - 0.5)).collect();
            let u = open_uniforms(&mut rng, 8);
            let s = arm_gradient(|_| Ok(0.0), &psi, &u).unwrap();
            for k in 0..8 {
                let (a, b) = (sigmoid(-psi[k]), sigmoid(psi[k]));
                let (lo, hi) = (a.min(b), a.max(b));
                let differ = s.z_plus.get(k) != s.z_minus.get(k);
                if u[k] > lo && u[k] < hi {
                    assert!(!differ);
                }
                if u[k] < lo || u[k] > hi {
                    assert!(differ);
                }
            }
        }
    }

    #[test]
    fn arm_rejects_non_finite_scores() {
        let err = arm_gradient(|_| Ok(f64::NAN), &[0.0], &[0.3]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn st_forward_is_code_and_backward_scales() {
        let z = BinaryCode::from_bools(&[true, false, true]);
        let r = st_passthrough(&[0.0, 1.0, -3.0], &z);
        assert_eq!(r.value, vec![1.0, 0.0, 1.0]);
        assert_eq!(r.backward(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        assert_eq!(r.backward(&[2.0, 0.0, 0.0])[0], 0.5);
    }

    #[test]
    fn gs_midpoint_and_unit_temperature() {
        // u = 0.5 gives g = 0, so psi = 0 sits at the midpoint for any tau.
        for tau in [0.1, 1.0, 3.0] {
            let r = gs_relaxed_sample(&[0.0], &[0.5], tau).unwrap();
            assert!((r.value[0] - 0.5).abs() < 1e-15);
        }
        let mut rng = rng_for(16, &[]);
        let u = open_uniforms(&mut rng, 5);
        let psi = [0.3, -1.0, 2.0, 0.0, -0.2];
        let r = gs_relaxed_sample(&psi, &u, 1.0).unwrap();
        for k in 0..5 {
            assert!((r.value[k] - sigmoid(logistic_noise(u[k]) + psi[k])).abs() < 1e-15);
        }
        assert!(gs_relaxed_sample(&psi, &u, 0.0).is_err());
    }

    #[test]
    fn gs_low_temperature_matches_hard_limit() {
        let mut rng = rng_for(17, &[]);
        let draws = 100_000;
        let mut agree = 0;
        for _ in 0..draws {
            let u = open_uniforms(&mut rng, 1);
            let psi = 4.0 * (open_uniforms(&mut rng, 1)[0] - 0.5);
            let h = gs_relaxed_sample(&[psi], &u, 0.1).unwrap().value[0];
            let limit = logistic_noise(u[0]) + psi > 0.0;
            if (h > 0.5) == limit {
                agree += 1;
            }
        }
        assert!(agree as f64 / draws as f64 >= 0.999);
    }

    #[test]
    fn tag_parsing() {
        assert_eq!("ARM".parse::<EstimatorTag>().unwrap(), EstimatorTag::Arm);
        assert_eq!("st".parse::<EstimatorTag>().unwrap(), EstimatorTag::StraightThrough);
        assert_eq!("gs".parse::<EstimatorTag>().unwrap(), EstimatorTag::GumbelSoftmax);
        assert!("rebar".parse::<EstimatorTag>().is_err());
        assert!(EstimatorKind::gumbel(0.0).is_err());
    }
}
