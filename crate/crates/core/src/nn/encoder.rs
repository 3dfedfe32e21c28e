use rand::Rng;

use super::linear::{Linear, LinearGrad};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inference network `input -> hidden... -> K` logits. Hidden layers use
/// ReLU; inverted dropout is applied to the last hidden representation in
/// training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    pub layers: Vec<Linear>,
    pub dropout: f64,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Vec<(u32, f64)>,
    /// ReLU outputs of each hidden layer, before dropout.
    hidden: Vec<Vec<f64>>,
    /// Per-unit dropout multipliers (0 or 1/(1-p)) on the last hidden layer.
    mask: Option<Vec<f64>>,
    output_dim: usize,
}

pub type EncoderGrads = Vec<LinearGrad>;

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], code_bits: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Validation(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(code_bits);
        let layers = dims.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect();
        Ok(MlpEncoder { layers, dropout })
    }

    pub fn from_layers(layers: Vec<Linear>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("encoder needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Validation(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(MlpEncoder { layers, dropout })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Linear::output_dim).collect()
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        self.layers.iter().map(Linear::zero_grad).collect()
    }

    /// Logits `psi` for a sparse input. Dropout is active only in
    /// [`Mode::Train`]; `rng` is not touched otherwise.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[(u32, f64)], mode: Mode, rng: &mut R) -> Result<(Vec<f64>, EncoderCache)> {
        let n = self.layers.len();
        let mut hidden = Vec::with_capacity(n - 1);
        let mut mask = None;
        let mut a = self.layers[0].forward_sparse(x)?;
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            relu(&mut a);
            let mut input = a.clone();
            hidden.push(a);
            if l == n - 1 && mode == Mode::Train && self.dropout > 0.0 {
                let keep = 1.0 / (1.0 - self.dropout);
                let m: Vec<f64> = input.iter().map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { keep }).collect();
                for (v, s) in input.iter_mut().zip(&m) {
                    *v *= s;
                }
                mask = Some(m);
            }
            a = layer.forward(&input)?;
        }
        let cache = EncoderCache { input: x.to_vec(), hidden, mask, output_dim: a.len() };
        Ok((a, cache))
    }

    /// Deterministic evaluation-mode logits.
    pub fn logits(&self, x: &[(u32, f64)]) -> Result<Vec<f64>> {
        let mut a = self.layers[0].forward_sparse(x)?;
        for layer in &self.layers[1..] {
            relu(&mut a);
            a = layer.forward(&a)?;
        }
        Ok(a)
    }

    /// Accumulate `d(grad_psi . psi)/d(phi)` into `grads`.
    pub fn backward(&self, cache: &EncoderCache, grad_psi: &[f64], grads: &mut EncoderGrads) -> Result<()> {
        self.backward_batch(&[cache], &[grad_psi], grads)
    }

    /// Backward for several forward calls at once; equal to calling
    /// [`MlpEncoder::backward`] on each in order.
    pub fn backward_batch(&self, caches: &[&EncoderCache], grad_psis: &[&[f64]], grads: &mut EncoderGrads) -> Result<()> {
        let n = self.layers.len();
        if caches.len() != grad_psis.len() {
            return Err(Error::Shape(format!("{} caches for {} gradients", caches.len(), grad_psis.len())));
        }
        for (cache, g) in caches.iter().zip(grad_psis) {
            if g.len() != self.output_dim() || cache.output_dim != self.output_dim() || cache.hidden.len() != n - 1 {
                return Err(Error::Shape("encoder cache or gradient does not match this network".into()));
            }
        }
        if grads.len() != n {
            return Err(Error::Shape("gradient buffer does not match this network".into()));
        }
        let mut deltas: Vec<Vec<f64>> = grad_psis.iter().map(|g| g.to_vec()).collect();
        for l in (1..n).rev() {
            let last = l == n - 1;
            let inputs: Vec<std::borrow::Cow<'_, [f64]>> = caches
                .iter()
                .map(|c| {
                    let h = &c.hidden[l - 1];
                    match (&c.mask, last) {
                        (Some(m), true) => std::borrow::Cow::Owned(h.iter().zip(m).map(|(v, s)| v * s).collect()),
                        _ => std::borrow::Cow::Borrowed(h.as_slice()),
                    }
                })
                .collect();
            let xs: Vec<&[f64]> = inputs.iter().map(|c| c.as_ref()).collect();
            let dys: Vec<&[f64]> = deltas.iter().map(Vec::as_slice).collect();
            let mut dxs = self.layers[l].backward_batch(&xs, &dys, &mut grads[l]);
            for (dx, c) in dxs.iter_mut().zip(caches) {
                if let (Some(m), true) = (&c.mask, last) {
                    for (d, s) in dx.iter_mut().zip(m) {
                        *d *= s;
                    }
                }
                for (d, &v) in dx.iter_mut().zip(&c.hidden[l - 1]) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            deltas = dxs;
        }
        for (c, delta) in caches.iter().zip(&deltas) {
            self.layers[0].backward_sparse(&c.input, delta, &mut grads[0]);
        }
        Ok(())
    }
}

fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
