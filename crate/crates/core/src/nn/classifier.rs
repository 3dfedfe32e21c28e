use rand::Rng;

use super::matrix::{axpy, dot, log_softmax_in_place, DenseMatrix};
use crate::corpus::LabelId;
use crate::error::{Error, Result};

/// Single linear layer plus softmax over `C` labels, fed by the code.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierGrads {
    pub fn add_assign(&mut self, other: &ClassifierGrads) {
        axpy(1.0, &other.weight, &mut self.weight);
        axpy(1.0, &other.bias, &mut self.bias);
    }
}

impl LinearClassifier {
    pub fn new<R: Rng + ?Sized>(code_bits: usize, classes: usize, rng: &mut R) -> Self {
        LinearClassifier { weight: DenseMatrix::glorot(code_bits, classes, rng), bias: vec![0.0; classes] }
    }

    pub fn zeros(code_bits: usize, classes: usize) -> Self {
        LinearClassifier { weight: DenseMatrix::zeros(code_bits, classes), bias: vec![0.0; classes] }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn zero_grads(&self) -> ClassifierGrads {
        ClassifierGrads { weight: vec![0.0; self.weight.values().len()], bias: vec![0.0; self.bias.len()] }
    }

    fn log_probs(&self, z: &[f64], labels: &[LabelId]) -> Result<Vec<f64>> {
        if z.len() != self.weight.rows() {
            return Err(Error::Shape(format!("code of length {} for classifier with K={}", z.len(), self.weight.rows())));
        }
        if labels.is_empty() {
            return Err(Error::Validation("classifier loss needs at least one label".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.classes()) {
            return Err(Error::InvalidLabel { label: bad, classes: self.classes() });
        }
        let mut logits = self.bias.clone();
        for (k, &zk) in z.iter().enumerate() {
            if zk != 0.0 {
                axpy(zk, self.weight.row(k), &mut logits);
            }
        }
        log_softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Cross entropy `-log softmax(W^T z + c)_y`, averaged over the label set
    /// for multi-label documents.
    pub fn loss(&self, z: &[f64], labels: &[LabelId]) -> Result<f64> {
        let lp = self.log_probs(z, labels)?;
        Ok(-labels.iter().map(|&l| lp[l as usize]).sum::<f64>() / labels.len() as f64)
    }

    /// Accumulate `upstream * d(loss)/d(eta)`; return `upstream * d(loss)/dz`.
    pub fn loss_backward(&self, z: &[f64], labels: &[LabelId], upstream: f64, grads: &mut ClassifierGrads) -> Result<Vec<f64>> {
        let lp = self.log_probs(z, labels)?;
        let mut g: Vec<f64> = lp.iter().map(|l| upstream * l.exp()).collect();
        let share = upstream / labels.len() as f64;
        for &l in labels {
            g[l as usize] -= share;
        }
        axpy(1.0, &g, &mut grads.bias);
        let c = self.classes();
        let mut dz = vec![0.0; z.len()];
        for (k, &zk) in z.iter().enumerate() {
            if zk != 0.0 {
                axpy(zk, &g, &mut grads.weight[k * c..(k + 1) * c]);
            }
            dz[k] = dot(self.weight.row(k), &g);
        }
        Ok(dz)
    }
}
