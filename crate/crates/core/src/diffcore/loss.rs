//! Scalar loss heads applied to a graph's output.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Reduction applied across the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// A differentiable scalar loss over the graph output.
#[derive(Debug, Clone)]
pub enum LossHead {
    /// Cross-entropy over per-row softmax of logits `[n, classes]`,
    /// stabilized by max-subtraction before exponentiation.
    SoftmaxCrossEntropy { labels: Vec<usize>, reduction: Reduction },
    /// Binary cross-entropy on a single logit per row, computed in the
    /// numerically stable logits formulation.
    SigmoidBce { targets: Vec<f32>, reduction: Reduction },
    /// Sum of all output elements.
    Sum,
    /// `0.5 * sum(y^2)`.
    HalfSquaredNorm,
}

impl LossHead {
    pub fn cross_entropy_mean(labels: Vec<usize>) -> Self {
        LossHead::SoftmaxCrossEntropy { labels, reduction: Reduction::Mean }
    }

    /// Per-instance losses summed; gradients of independent instances stay
    /// independent of batch size, which is what attacks want.
    pub fn cross_entropy_sum(labels: Vec<usize>) -> Self {
        LossHead::SoftmaxCrossEntropy { labels, reduction: Reduction::Sum }
    }

    pub fn value(&self, out: &Tensor) -> Result<f64> {
        Ok(self.value_and_grad_impl(out, false)?.0)
    }

    pub fn value_and_grad(&self, out: &Tensor) -> Result<(f64, Vec<f32>)> {
        let (v, g) = self.value_and_grad_impl(out, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn value_and_grad_impl(&self, out: &Tensor, want_grad: bool) -> Result<(f64, Option<Vec<f32>>)> {
        match self {
            LossHead::SoftmaxCrossEntropy { labels, reduction } => {
                softmax_ce(out, labels, *reduction, want_grad)
            }
            LossHead::SigmoidBce { targets, reduction } => {
                sigmoid_bce(out, targets, *reduction, want_grad)
            }
            LossHead::Sum => {
                let value: f64 = out.data().iter().map(|&v| v as f64).sum();
                let grad = want_grad.then(|| vec![1.0f32; out.numel()]);
                Ok((value, grad))
            }
            LossHead::HalfSquaredNorm => {
                let value: f64 = out.data().iter().map(|&v| 0.5 * (v as f64) * (v as f64)).sum();
                let grad = want_grad.then(|| out.data().to_vec());
                Ok((value, grad))
            }
        }
    }
}

fn softmax_ce(
    out: &Tensor,
    labels: &[usize],
    reduction: Reduction,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f32>>)> {
    if out.shape().len() != 2 {
        return Err(Error::shape("softmax_cross_entropy", "[n, classes]", format!("{:?}", out.shape())));
    }
    let (n, c) = (out.shape()[0], out.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{n} labels"),
            format!("{}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidLabel { label: bad, classes: c });
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / n as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0f64;
    let mut grad = want_grad.then(|| vec![0.0f32; n * c]);
    for i in 0..n {
        let row = &out.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &z in row {
            denom += ((z - max) as f64).exp();
        }
        let log_denom = denom.ln() + max as f64;
        total += log_denom - row[labels[i]] as f64;
        if let Some(g) = grad.as_mut() {
            for j in 0..c {
                let p = (((row[j] - max) as f64).exp() / denom) as f64;
                let delta = if j == labels[i] { 1.0 } else { 0.0 };
                g[i * c + j] = ((p - delta) * scale) as f32;
            }
        }
    }
    Ok((total * scale, grad))
}

fn sigmoid_bce(
    out: &Tensor,
    targets: &[f32],
    reduction: Reduction,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f32>>)> {
    let n = out.shape()[0];
    let per_row: usize = out.shape()[1..].iter().product();
    if per_row != 1 {
        return Err(Error::shape("sigmoid_bce", "[n, 1] logits", format!("{:?}", out.shape())));
    }
    if targets.len() != n {
        return Err(Error::shape("sigmoid_bce", format!("{n} targets"), format!("{}", targets.len())));
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / n as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0f64;
    let mut grad = want_grad.then(|| vec![0.0f32; n]);
    for i in 0..n {
        let z = out.data()[i] as f64;
        let y = targets[i] as f64;
        // max(z, 0) - z*y + ln(1 + exp(-|z|))
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        if let Some(g) = grad.as_mut() {
            let p = 1.0 / (1.0 + (-z).exp());
            g[i] = ((p - y) * scale) as f32;
        }
    }
    Ok((total * scale, grad))
}

/// Logistic sigmoid, the probability read-out matching [`LossHead::SigmoidBce`].
pub fn sigmoid(z: f32) -> f32 {
    (1.0 / (1.0 + (-(z as f64)).exp())) as f32
}
