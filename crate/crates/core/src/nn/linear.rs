use rand::Rng;

use super::matrix::{axpy, dot, DenseMatrix};
use crate::error::{Error, Result};

/// Affine map `y = W^T x + b` with `W` stored input-major (`in x out`), so
/// both sparse inputs and the backward pass walk contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: DenseMatrix::zeros(input, output), bias: vec![0.0; output] }
    }

    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear { weight: DenseMatrix::glorot(input, output, rng), bias: vec![0.0; output] }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn zero_grad(&self) -> LinearGrad {
        LinearGrad { weight: vec![0.0; self.weight.values().len()], bias: vec![0.0; self.bias.len()] }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("input of length {} for layer with {} inputs", x.len(), self.input_dim())));
        }
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.weight.row(i), &mut out);
            }
        }
        Ok(out)
    }

    pub fn forward_sparse(&self, x: &[(u32, f64)]) -> Result<Vec<f64>> {
        let mut out = self.bias.clone();
        for &(i, xi) in x {
            if i as usize >= self.input_dim() {
                return Err(Error::Shape(format!("input index {i} >= input dimension {}", self.input_dim())));
            }
            if xi != 0.0 {
                axpy(xi, self.weight.row(i as usize), &mut out);
            }
        }
        Ok(out)
    }

    /// Accumulate parameter gradients for upstream gradient `dy` at input `x`
    /// and return the gradient with respect to `x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut LinearGrad) -> Vec<f64> {
        let cols = self.output_dim();
        axpy(1.0, dy, &mut grad.bias);
        let mut dx = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, dy, &mut grad.weight[i * cols..(i + 1) * cols]);
            }
            dx[i] = dot(self.weight.row(i), dy);
        }
        dx
    }

    /// [`Linear::backward`] over several examples at once. Walks the weight
    /// matrix once for the whole batch; accumulation order per entry is the
    /// batch order, so results equal sequential single calls.
    pub fn backward_batch(&self, xs: &[&[f64]], dys: &[&[f64]], grad: &mut LinearGrad) -> Vec<Vec<f64>> {
        let cols = self.output_dim();
        for dy in dys {
            axpy(1.0, dy, &mut grad.bias);
        }
        let mut dxs = vec![vec![0.0; self.input_dim()]; xs.len()];
        for i in 0..self.input_dim() {
            let row = self.weight.row(i);
            let grow = &mut grad.weight[i * cols..(i + 1) * cols];
            for (d, (x, dy)) in xs.iter().zip(dys).enumerate() {
                if x[i] != 0.0 {
                    axpy(x[i], dy, grow);
                }
                dxs[d][i] = dot(row, dy);
            }
        }
        dxs
    }

    /// Backward for a sparse input; the input gradient is not needed.
    pub fn backward_sparse(&self, x: &[(u32, f64)], dy: &[f64], grad: &mut LinearGrad) {
        let cols = self.output_dim();
        axpy(1.0, dy, &mut grad.bias);
        for &(i, xi) in x {
            let i = i as usize;
            if xi != 0.0 {
                axpy(xi, dy, &mut grad.weight[i * cols..(i + 1) * cols]);
            }
        }
    }
}

impl LinearGrad {
    pub fn add_assign(&mut self, other: &LinearGrad) {
        axpy(1.0, &other.weight, &mut self.weight);
        axpy(1.0, &other.bias, &mut self.bias);
    }
}
