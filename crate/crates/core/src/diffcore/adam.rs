//! Adam parameter updates with bias correction.

use super::graph::{Gradients, Parameter};

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators and the shared timestep.
/// Lazily sized to the parameter registry on the first step.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

/// One Adam update over every parameter that received a gradient.
pub fn adam_step(params: &mut [Parameter], grads: &Gradients, state: &mut AdamState, hyper: &AdamHyper) {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = (1.0 - (hyper.beta1 as f64).powf(t)) as f32;
    let bc2 = (1.0 - (hyper.beta2 as f64).powf(t)) as f32;
    for (idx, p) in params.iter_mut().enumerate() {
        let Some(g) = grads.param(super::graph::ParamId(idx)) else { continue };
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{GraphBuilder, LossHead, Tensor};

    fn one_dense_graph() -> crate::diffcore::Graph {
        let (mut b, input) = GraphBuilder::new(vec![2]);
        let out = b.dense(input, 1, "fc").unwrap();
        let mut g = b.finish(out);
        g.params_mut()[0].tensor.data_mut().copy_from_slice(&[0.5, -0.5]);
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut g = one_dense_graph();
        let before: Vec<f32> = g.params()[0].tensor.data().to_vec();
        let mut state = AdamState::default();
        let x = Tensor::zeros(vec![1, 2]);
        for _ in 0..5 {
            let trace = g.forward(&x).unwrap();
            let (_, grads) = trace.backward(&LossHead::Sum).unwrap();
            drop(trace);
            // zero input -> zero weight gradient; bias gradient is nonzero,
            // so restrict the check to the weight parameter.
            adam_step(g.params_mut(), &grads, &mut state, &AdamHyper::default());
            assert_eq!(g.params()[0].tensor.data(), before.as_slice());
        }
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // constant gradient g: m_hat = g, v_hat = g^2, step = lr * g/(|g|+eps)
        let mut g = one_dense_graph();
        let before: Vec<f32> = g.params()[0].tensor.data().to_vec();
        let mut state = AdamState::default();
        let hyper = AdamHyper::default();
        let x = Tensor::new(vec![1, 2], vec![2.0, -3.0]).unwrap();
        let trace = g.forward(&x).unwrap();
        let (_, grads) = trace.backward(&LossHead::Sum).unwrap();
        drop(trace);
        adam_step(g.params_mut(), &grads, &mut state, &hyper);
        for (after, b) in g.params()[0].tensor.data().iter().zip(&before) {
            let step = (after - b).abs();
            assert!((step - hyper.lr).abs() < hyper.lr * 1e-3, "step {step}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let run = || {
            let mut g = one_dense_graph();
            let mut state = AdamState::default();
            let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
            for _ in 0..20 {
                let trace = g.forward(&x).unwrap();
                let (_, grads) = trace.backward(&LossHead::HalfSquaredNorm).unwrap();
                drop(trace);
                adam_step(g.params_mut(), &grads, &mut state, &AdamHyper::default());
            }
            g.params().iter().flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
