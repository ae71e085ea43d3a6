//! Finite-difference oracle for every differentiable operation.
//!
//! Central differences with step 1e-3 at f32; the numeric derivative is an
//! independent route to the same quantity the backward pass computes
//! analytically. Coordinates whose probe segment crosses a ReLU kink are
//! skipped — the function is not differentiable there and no finite
//! difference is meaningful.

use advdet_core::diffcore::{
    AdamHyper, AdamState, GraphBuilder, LossHead, OpKind, Tensor, adam_step,
};
use advdet_core::seed;
use rand::Rng;

const H: f32 = 1e-3;
const TOL: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, 1)` — relative for large gradients, absolute
/// near zero where f32 forward noise dominates any relative scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Sign pattern of every ReLU input activation; equal patterns at both probe
/// points mean the probe segment stayed inside one linear region.
fn relu_pattern(graph: &advdet_core::diffcore::Graph, input: &Tensor) -> Vec<bool> {
    let trace = graph.forward(input).expect("probe forward");
    let mut pattern = Vec::new();
    for id in graph.node_ids() {
        if matches!(graph.op(id), OpKind::Relu) {
            let src = graph.node_inputs(id)[0];
            pattern.extend(trace.activation(src).data().iter().map(|&v| v > 0.0));
        }
    }
    pattern
}

struct FdOutcome {
    checked: usize,
    skipped: usize,
    max_err: f64,
}

/// Check analytic input and parameter gradients against central differences.
/// `coord_cap` bounds how many coordinates of each tensor are probed.
fn fd_check(
    graph: &mut advdet_core::diffcore::Graph,
    input: &Tensor,
    head: &LossHead,
    coord_cap: usize,
    rng: &mut impl Rng,
) -> FdOutcome {
    let x = input.clone().with_grad();
    let trace = graph.forward(&x).expect("forward");
    let (_, grads) = trace.backward(head).expect("backward");
    let analytic_input = grads.input().expect("input grad").data().to_vec();
    let analytic_params: Vec<Vec<f32>> = (0..graph.params().len())
        .map(|i| {
            grads
                .param(advdet_core::diffcore::ParamId::from_index(i))
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; graph.params()[i].tensor.numel()])
        })
        .collect();
    drop(trace);

    let mut outcome = FdOutcome { checked: 0, skipped: 0, max_err: 0.0 };

    // input coordinates
    let coords = pick_coords(input.numel(), coord_cap, rng);
    for &i in &coords {
        let mut plus = input.clone();
        plus.data_mut()[i] += H;
        let mut minus = input.clone();
        minus.data_mut()[i] -= H;
        if relu_pattern(graph, &plus) != relu_pattern(graph, &minus) {
            outcome.skipped += 1;
            continue;
        }
        let lp = graph.forward(&plus).unwrap().loss(head).unwrap();
        let lm = graph.forward(&minus).unwrap().loss(head).unwrap();
        let fd = (lp - lm) / (2.0 * H as f64);
        let err = rel_err(analytic_input[i] as f64, fd);
        outcome.max_err = outcome.max_err.max(err);
        outcome.checked += 1;
        assert!(
            err < TOL,
            "input coord {i}: analytic {} vs fd {fd}, err {err}",
            analytic_input[i]
        );
    }

    // parameter coordinates
    for p in 0..graph.params().len() {
        let numel = graph.params()[p].tensor.numel();
        let coords = pick_coords(numel, coord_cap, rng);
        for &i in &coords {
            let orig = graph.params()[p].tensor.data()[i];
            graph.params_mut()[p].tensor.data_mut()[i] = orig + H;
            let pattern_plus = relu_pattern(graph, input);
            let lp = graph.forward(input).unwrap().loss(head).unwrap();
            graph.params_mut()[p].tensor.data_mut()[i] = orig - H;
            let pattern_minus = relu_pattern(graph, input);
            let lm = graph.forward(input).unwrap().loss(head).unwrap();
            graph.params_mut()[p].tensor.data_mut()[i] = orig;
            if pattern_plus != pattern_minus {
                outcome.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * H as f64);
            let err = rel_err(analytic_params[p][i] as f64, fd);
            outcome.max_err = outcome.max_err.max(err);
            outcome.checked += 1;
            assert!(
                err < TOL,
                "param {p} coord {i}: analytic {} vs fd {fd}, err {err}",
                analytic_params[p][i]
            );
        }
    }
    outcome
}

fn pick_coords(numel: usize, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if numel <= cap {
        return (0..numel).collect();
    }
    let mut all: Vec<usize> = (0..numel).collect();
    for i in 0..cap {
        let j = rng.random_range(i..numel);
        all.swap(i, j);
    }
    all.truncate(cap);
    all
}

fn random_tensor(shape: Vec<usize>, scale: f32, rng: &mut impl Rng) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| (rng.random::<f32>() * 2.0 - 1.0) * scale).collect();
    Tensor::new(shape, data).unwrap()
}

fn randomize_params(graph: &mut advdet_core::diffcore::Graph, scale: f32, rng: &mut impl Rng) {
    for p in graph.params_mut() {
        for v in p.tensor.data_mut() {
            *v = (rng.random::<f32>() * 2.0 - 1.0) * scale;
        }
    }
}

#[test]
fn dense_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(11, "fd-dense", cfg);
        let d = rng.random_range(1..8);
        let m = rng.random_range(1..6);
        let n = rng.random_range(1..4);
        let (mut b, input) = GraphBuilder::new(vec![d]);
        let out = b.dense(input, m, "fc").unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.8, &mut rng);
        let x = random_tensor(vec![n, d], 0.9, &mut rng);
        let head = LossHead::HalfSquaredNorm;
        let o = fd_check(&mut g, &x, &head, 64, &mut rng);
        assert!(o.checked > 0);
    }
}

#[test]
fn conv2d_gradients_across_strides_and_padding() {
    for cfg in 0..20 {
        let mut rng = seed::stream(12, "fd-conv", cfg);
        let c = rng.random_range(1..4);
        let f = rng.random_range(1..4);
        let hw = rng.random_range(4..8);
        let kernel = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..3);
        let padding = rng.random_range(0..2);
        let (mut b, input) = GraphBuilder::new(vec![c, hw, hw]);
        let out = b.conv2d(input, f, kernel, stride, padding, "c").unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.5, &mut rng);
        let x = random_tensor(vec![2, c, hw, hw], 0.8, &mut rng);
        let o = fd_check(&mut g, &x, &LossHead::HalfSquaredNorm, 48, &mut rng);
        assert!(o.checked > 0);
    }
}

#[test]
fn relu_gradients_away_from_kink() {
    for cfg in 0..20 {
        let mut rng = seed::stream(13, "fd-relu", cfg);
        let d = rng.random_range(2..10);
        let (mut b, input) = GraphBuilder::new(vec![d]);
        let out = b.relu(input);
        let mut g = b.finish(out);
        // keep values at least 5 steps from the kink
        let mut x = random_tensor(vec![2, d], 1.0, &mut rng);
        for v in x.data_mut() {
            if v.abs() < 5.0 * H {
                *v = 0.1 * v.signum() + *v;
            }
        }
        let o = fd_check(&mut g, &x, &LossHead::HalfSquaredNorm, 64, &mut rng);
        assert_eq!(o.skipped, 0);
        assert!(o.checked > 0);
    }
}

#[test]
fn global_avg_pool_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(14, "fd-gap", cfg);
        let c = rng.random_range(1..5);
        let h = rng.random_range(2..6);
        let w = rng.random_range(2..6);
        let (mut b, input) = GraphBuilder::new(vec![c, h, w]);
        let out = b.global_avg_pool(input).unwrap();
        let mut g = b.finish(out);
        let x = random_tensor(vec![2, c, h, w], 1.0, &mut rng);
        fd_check(&mut g, &x, &LossHead::HalfSquaredNorm, 48, &mut rng);
    }
}

#[test]
fn flatten_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(15, "fd-flatten", cfg);
        let c = rng.random_range(1..4);
        let h = rng.random_range(2..5);
        let (mut b, input) = GraphBuilder::new(vec![c, h, h]);
        let flat = b.flatten(input);
        let out = b.dense(flat, 3, "fc").unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.6, &mut rng);
        let x = random_tensor(vec![2, c, h, h], 0.9, &mut rng);
        fd_check(&mut g, &x, &LossHead::HalfSquaredNorm, 48, &mut rng);
    }
}

#[test]
fn residual_add_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(16, "fd-add", cfg);
        let d = rng.random_range(2..8);
        let (mut b, input) = GraphBuilder::new(vec![d]);
        let branch = b.dense(input, d, "fc").unwrap();
        let out = b.add(input, branch).unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.7, &mut rng);
        let x = random_tensor(vec![3, d], 0.9, &mut rng);
        fd_check(&mut g, &x, &LossHead::HalfSquaredNorm, 64, &mut rng);
    }
}

#[test]
fn softmax_cross_entropy_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(17, "fd-ce", cfg);
        let classes = rng.random_range(2..11);
        let n = rng.random_range(1..5);
        let (b, input) = GraphBuilder::new(vec![classes]);
        let mut g = b.finish(input);
        let x = random_tensor(vec![n, classes], 2.0, &mut rng);
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let head = LossHead::cross_entropy_sum(labels);
        fd_check(&mut g, &x, &head, 64, &mut rng);
    }
}

#[test]
fn sigmoid_bce_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(18, "fd-bce", cfg);
        let n = rng.random_range(1..6);
        let (mut b, input) = GraphBuilder::new(vec![3]);
        let out = b.dense(input, 1, "fc").unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.8, &mut rng);
        let x = random_tensor(vec![n, 3], 1.0, &mut rng);
        let targets = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let head = LossHead::SigmoidBce {
            targets,
            reduction: advdet_core::diffcore::Reduction::Mean,
        };
        fd_check(&mut g, &x, &head, 48, &mut rng);
    }
}

/// The composed check: a random conv/residual/dense stack under
/// cross-entropy, the same shape of network the classifiers use.
#[test]
fn three_layer_network_gradients() {
    for cfg in 0..20 {
        let mut rng = seed::stream(19, "fd-net", cfg);
        let classes = 4;
        let (mut b, input) = GraphBuilder::new(vec![2, 6, 6]);
        let c1 = b.conv2d(input, 3, 3, 1, 1, "c1").unwrap();
        let r1 = b.relu(c1);
        let c2 = b.conv2d(r1, 3, 3, 1, 1, "c2").unwrap();
        let s = b.add(r1, c2).unwrap();
        let r2 = b.relu(s);
        let p = b.global_avg_pool(r2).unwrap();
        let out = b.dense(p, classes, "fc").unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.4, &mut rng);
        let x = random_tensor(vec![2, 2, 6, 6], 0.8, &mut rng);
        let labels = (0..2).map(|_| rng.random_range(0..classes)).collect();
        let head = LossHead::cross_entropy_sum(labels);
        let o = fd_check(&mut g, &x, &head, 40, &mut rng);
        // kink skips must stay rare enough that the check has teeth
        assert!(
            o.checked as f64 >= 0.5 * (o.checked + o.skipped) as f64,
            "cfg {cfg}: only {} of {} coords off-kink",
            o.checked,
            o.checked + o.skipped
        );
    }
}

/// Two identical Adam runs from the same state are bitwise identical.
#[test]
fn adam_training_is_deterministic() {
    let run = || {
        let mut rng = seed::stream(23, "adam-det", 0);
        let (mut b, input) = GraphBuilder::new(vec![4]);
        let h = b.dense(input, 8, "fc1").unwrap();
        let r = b.relu(h);
        let out = b.dense(r, 3, "fc2").unwrap();
        let mut g = b.finish(out);
        randomize_params(&mut g, 0.5, &mut rng);
        let x = random_tensor(vec![8, 4], 1.0, &mut rng);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
        let head = LossHead::cross_entropy_mean(labels);
        let mut state = AdamState::default();
        for _ in 0..30 {
            let trace = g.forward(&x).unwrap();
            let (_, grads) = trace.backward(&head).unwrap();
            drop(trace);
            adam_step(g.params_mut(), &grads, &mut state, &AdamHyper::default());
        }
        g.params()
            .iter()
            .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<u32>>()
    };
    assert_eq!(run(), run());
}
