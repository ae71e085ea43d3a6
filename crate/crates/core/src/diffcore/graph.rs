//! Operation graph, forward evaluation, and reverse-mode differentiation.

use super::linalg::{col2im, im2col, matmul, matmul_a_bt, matmul_at_b, Conv2dGeom};
use super::loss::LossHead;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        ParamId(index)
    }
}

/// A named, trainable tensor in the graph's registry. Identity is stable
/// across forward calls: the registry index never changes after creation.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone)]
pub enum OpKind {
    Input,
    /// `y = x @ W + b` with `W: [in, out]`, `b: [out]`.
    Dense { weight: ParamId, bias: ParamId },
    /// Square-kernel convolution with zero padding; `W: [filters, in_c, k, k]`.
    Conv2d { weight: ParamId, bias: ParamId, stride: usize, padding: usize },
    Relu,
    GlobalAvgPool,
    Flatten,
    /// Elementwise residual sum of two equal-shaped nodes.
    Add,
}

#[derive(Debug, Clone)]
struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    /// Per-instance output shape (batch dimension excluded).
    shape: Vec<usize>,
}

/// A topologically ordered DAG of operation records plus the parameter
/// registry. Immutable after construction except during an explicit
/// training step.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Parameter>,
    output: NodeId,
}

/// Incrementally builds a [`Graph`]; shapes are inferred and checked as
/// operations are appended.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Parameter>,
}

impl GraphBuilder {
    /// Start a graph whose input instances have the given shape
    /// (batch dimension excluded).
    pub fn new(input_shape: impl Into<Vec<usize>>) -> (Self, NodeId) {
        let builder = GraphBuilder {
            nodes: vec![Node { op: OpKind::Input, inputs: vec![], shape: input_shape.into() }],
            params: Vec::new(),
        };
        (builder, NodeId(0))
    }

    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn add_param(&mut self, name: String, shape: Vec<usize>) -> ParamId {
        let id = ParamId(self.params.len());
        let mut tensor = Tensor::zeros(shape);
        tensor.set_requires_grad(true);
        self.params.push(Parameter { name, tensor });
        id
    }

    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, shape });
        id
    }

    pub fn dense(&mut self, x: NodeId, out_features: usize, name: &str) -> Result<NodeId> {
        let in_shape = self.node_shape(x).to_vec();
        if in_shape.len() != 1 {
            return Err(Error::shape(
                format!("dense '{name}'"),
                "rank-1 instances (flatten first)",
                format!("{in_shape:?}"),
            ));
        }
        let d = in_shape[0];
        let weight = self.add_param(format!("{name}.w"), vec![d, out_features]);
        let bias = self.add_param(format!("{name}.b"), vec![out_features]);
        Ok(self.push(OpKind::Dense { weight, bias }, vec![x], vec![out_features]))
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        name: &str,
    ) -> Result<NodeId> {
        let in_shape = self.node_shape(x).to_vec();
        if in_shape.len() != 3 {
            return Err(Error::shape(
                format!("conv2d '{name}'"),
                "[channels, height, width] instances",
                format!("{in_shape:?}"),
            ));
        }
        let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::shape(
                format!("conv2d '{name}'"),
                format!("spatial extent >= kernel {kernel}"),
                format!("{h}x{w} with padding {padding}"),
            ));
        }
        let geom = Conv2dGeom { in_channels: c, in_h: h, in_w: w, kernel, stride, padding };
        let weight = self.add_param(format!("{name}.w"), vec![filters, c, kernel, kernel]);
        let bias = self.add_param(format!("{name}.b"), vec![filters]);
        Ok(self.push(
            OpKind::Conv2d { weight, bias, stride, padding },
            vec![x],
            vec![filters, geom.out_h(), geom.out_w()],
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let shape = self.node_shape(x).to_vec();
        self.push(OpKind::Relu, vec![x], shape)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let in_shape = self.node_shape(x).to_vec();
        if in_shape.len() != 3 {
            return Err(Error::shape(
                "global_avg_pool",
                "[channels, height, width] instances",
                format!("{in_shape:?}"),
            ));
        }
        Ok(self.push(OpKind::GlobalAvgPool, vec![x], vec![in_shape[0]]))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let numel: usize = self.node_shape(x).iter().product();
        self.push(OpKind::Flatten, vec![x], vec![numel])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.node_shape(a).to_vec();
        let sb = self.node_shape(b).to_vec();
        if sa != sb {
            return Err(Error::shape("add", format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(self.push(OpKind::Add, vec![a, b], sa))
    }

    pub fn finish(self, output: NodeId) -> Graph {
        Graph { nodes: self.nodes, params: self.params, output }
    }
}

/// Gradient map produced by a backward pass: one entry per parameter
/// (registry order) plus the input gradient when it was requested.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Option<Vec<f32>>>,
    input: Option<Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Add `scale * value` of every parameter passing the name filter to its
    /// gradient; this is how L2 penalties enter an update.
    pub fn add_scaled_params(&mut self, graph: &Graph, scale: f32, filter: impl Fn(&str) -> bool) {
        for (i, p) in graph.params.iter().enumerate() {
            if !filter(&p.name) {
                continue;
            }
            let slot = self.params[i].get_or_insert_with(|| vec![0.0; p.tensor.numel()]);
            for (g, v) in slot.iter_mut().zip(p.tensor.data()) {
                *g += scale * v;
            }
        }
    }

    pub fn input(&self) -> Option<&Tensor> {
        self.input.as_ref()
    }

    pub fn into_input(self) -> Option<Tensor> {
        self.input
    }
}

impl Graph {
    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id.0].op
    }

    pub fn node_inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Per-instance output shape of a node (batch dimension excluded).
    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output.0].shape
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_named(&self, name: &str) -> Option<(ParamId, &Parameter)> {
        self.params
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Write gradient values into the `grad` field of every parameter
    /// tensor. Part of the explicit training step; the graph is otherwise
    /// immutable.
    pub fn store_grads(&mut self, grads: &Gradients) -> Result<()> {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.params[i].as_ref() {
                p.tensor.set_grad(g.clone())?;
            }
        }
        Ok(())
    }

    /// Evaluate the graph on a batch `[n, ...input_shape]`, retaining every
    /// intermediate for a later backward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Trace<'_>> {
        let want = self.input_shape();
        let got = input.shape();
        if got.len() != want.len() + 1 || &got[1..] != want {
            return Err(Error::shape(
                "forward",
                format!("[n, {}]", shape_str(want)),
                format!("[{}]", shape_str(got)),
            ));
        }
        let batch = got[0];
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut saved: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let out = match &node.op {
                OpKind::Input => input.clone(),
                OpKind::Dense { weight, bias } => {
                    let x = &acts[node.inputs[0].0];
                    self.dense_forward(x, *weight, *bias, batch)
                }
                OpKind::Conv2d { weight, bias, stride, padding } => {
                    let x = &acts[node.inputs[0].0];
                    let (out, cols) =
                        self.conv_forward(x, *weight, *bias, *stride, *padding, batch);
                    saved[idx] = Some(cols);
                    out
                }
                OpKind::Relu => {
                    let x = &acts[node.inputs[0].0];
                    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                    Tensor::new(x.shape().to_vec(), data)?
                }
                OpKind::GlobalAvgPool => {
                    let x = &acts[node.inputs[0].0];
                    gap_forward(x, batch)
                }
                OpKind::Flatten => {
                    let x = &acts[node.inputs[0].0];
                    let numel: usize = node.shape.iter().product();
                    x.reshaped(vec![batch, numel])?
                }
                OpKind::Add => {
                    let a = &acts[node.inputs[0].0];
                    let b = &acts[node.inputs[1].0];
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                    Tensor::new(a.shape().to_vec(), data)?
                }
            };
            acts.push(out);
        }
        Ok(Trace { graph: self, batch, acts, saved, input_requires_grad: input.requires_grad() })
    }

    fn dense_forward(&self, x: &Tensor, weight: ParamId, bias: ParamId, batch: usize) -> Tensor {
        let w = &self.params[weight.0].tensor;
        let b = &self.params[bias.0].tensor;
        let (d, m) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0f32; batch * m];
        matmul(x.data(), w.data(), &mut out, batch, d, m, 0.0);
        for row in out.chunks_exact_mut(m) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Tensor::new(vec![batch, m], out).expect("dense output shape")
    }

    fn conv_forward(
        &self,
        x: &Tensor,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        padding: usize,
        batch: usize,
    ) -> (Tensor, Vec<f32>) {
        let w = &self.params[weight.0].tensor;
        let b = &self.params[bias.0].tensor;
        let filters = w.shape()[0];
        let geom = Conv2dGeom {
            in_channels: x.shape()[1],
            in_h: x.shape()[2],
            in_w: x.shape()[3],
            kernel: w.shape()[2],
            stride,
            padding,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let rows = batch * oh * ow;
        let plen = geom.patch_len();
        let mut cols = vec![0.0f32; rows * plen];
        im2col(x.data(), batch, geom, &mut cols);
        // rows x filters = cols [rows, plen] @ W^T with W [filters, plen]
        let mut out_rows = vec![0.0f32; rows * filters];
        matmul_a_bt(&cols, w.data(), &mut out_rows, rows, plen, filters, 0.0);
        // scatter to [n, f, oh, ow] and add bias
        let mut out = vec![0.0f32; batch * filters * oh * ow];
        for img in 0..batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((img * oh + oy) * ow + ox) * filters;
                    for f in 0..filters {
                        out[((img * filters + f) * oh + oy) * ow + ox] =
                            out_rows[row + f] + b.data()[f];
                    }
                }
            }
        }
        (
            Tensor::new(vec![batch, filters, oh, ow], out).expect("conv output shape"),
            cols,
        )
    }
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
}

fn gap_forward(x: &Tensor, batch: usize) -> Tensor {
    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let mut out = vec![0.0f32; batch * c];
    for img in 0..batch {
        for ch in 0..c {
            let base = (img * c + ch) * hw;
            let sum: f64 = x.data()[base..base + hw].iter().map(|&v| v as f64).sum();
            out[img * c + ch] = (sum / hw as f64) as f32;
        }
    }
    Tensor::new(vec![batch, c], out).expect("gap output shape")
}

/// Retained forward pass: per-node activations and saved intermediates.
/// Backward is only reachable through a trace, so gradients can never be
/// requested before the corresponding forward has run.
#[derive(Debug)]
pub struct Trace<'g> {
    graph: &'g Graph,
    batch: usize,
    acts: Vec<Tensor>,
    saved: Vec<Option<Vec<f32>>>,
    input_requires_grad: bool,
}

impl<'g> Trace<'g> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &Tensor {
        &self.acts[self.graph.output.0]
    }

    pub fn activation(&self, node: NodeId) -> &Tensor {
        &self.acts[node.0]
    }

    /// Loss value under the given head, without gradients.
    pub fn loss(&self, head: &LossHead) -> Result<f64> {
        head.value(self.output())
    }

    /// Loss value plus gradients for all parameters (and the input when it
    /// was flagged with `requires_grad`).
    pub fn backward(&self, head: &LossHead) -> Result<(f64, Gradients)> {
        let (value, dout) = head.value_and_grad(self.output())?;
        let grads = self.backprop(&dout, true)?;
        Ok((value, grads))
    }

    /// Backward pass seeded with an explicit gradient on the output node.
    pub fn backward_from(&self, dout: &[f32]) -> Result<Gradients> {
        self.backprop(dout, true)
    }

    /// Input gradient only, skipping all parameter-gradient work. The input
    /// must have been flagged with `requires_grad`.
    pub fn input_gradient_from(&self, dout: &[f32]) -> Result<Tensor> {
        if !self.input_requires_grad {
            return Err(Error::shape(
                "input_gradient_from",
                "an input flagged requires_grad",
                "plain input",
            ));
        }
        let grads = self.backprop(dout, false)?;
        Ok(grads.input.expect("input gradient present"))
    }

    /// Loss value and input gradient only.
    pub fn backward_input_only(&self, head: &LossHead) -> Result<(f64, Tensor)> {
        let (value, dout) = head.value_and_grad(self.output())?;
        Ok((value, self.input_gradient_from(&dout)?))
    }

    fn backprop(&self, dout: &[f32], want_params: bool) -> Result<Gradients> {
        let out = self.output();
        if dout.len() != out.numel() {
            return Err(Error::shape(
                "backward_from",
                format!("{} output gradients", out.numel()),
                format!("{}", dout.len()),
            ));
        }
        let nodes = &self.graph.nodes;
        let mut node_grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        let mut param_grads: Vec<Option<Vec<f32>>> =
            vec![None; self.graph.params.len()];
        node_grads[self.graph.output.0] = Some(dout.to_vec());

        for idx in (0..nodes.len()).rev() {
            let Some(gy) = node_grads[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                OpKind::Input => {
                    // re-store: consumed below when building the result
                    node_grads[idx] = Some(gy);
                }
                OpKind::Dense { weight, bias } => {
                    let x = &self.acts[node.inputs[0].0];
                    let w = &self.graph.params[weight.0].tensor;
                    let (d, m) = (w.shape()[0], w.shape()[1]);
                    if want_params {
                        // dW [d, m] = x^T [d, n] @ gy [n, m]
                        let dw = param_grads[weight.0]
                            .get_or_insert_with(|| vec![0.0; d * m]);
                        matmul_at_b(x.data(), &gy, dw, d, self.batch, m, 1.0);
                        // db [m] = column sums of gy, f64 accumulation
                        let db = param_grads[bias.0].get_or_insert_with(|| vec![0.0; m]);
                        for j in 0..m {
                            let mut acc = 0.0f64;
                            for i in 0..self.batch {
                                acc += gy[i * m + j] as f64;
                            }
                            db[j] += acc as f32;
                        }
                    }
                    // dx [n, d] = gy [n, m] @ W^T
                    let mut dx = vec![0.0f32; self.batch * d];
                    matmul_a_bt(&gy, w.data(), &mut dx, self.batch, m, d, 0.0);
                    accumulate(&mut node_grads[node.inputs[0].0], dx);
                }
                OpKind::Conv2d { weight, bias, stride, padding } => {
                    let x = &self.acts[node.inputs[0].0];
                    let w = &self.graph.params[weight.0].tensor;
                    let filters = w.shape()[0];
                    let geom = Conv2dGeom {
                        in_channels: x.shape()[1],
                        in_h: x.shape()[2],
                        in_w: x.shape()[3],
                        kernel: w.shape()[2],
                        stride: *stride,
                        padding: *padding,
                    };
                    let (oh, ow) = (geom.out_h(), geom.out_w());
                    let rows = self.batch * oh * ow;
                    let plen = geom.patch_len();
                    // gather dout [n, f, oh, ow] -> rows x filters
                    let mut gy_rows = vec![0.0f32; rows * filters];
                    for img in 0..self.batch {
                        for f in 0..filters {
                            let base = ((img * filters + f) * oh) * ow;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    gy_rows[((img * oh + oy) * ow + ox) * filters + f] =
                                        gy[base + oy * ow + ox];
                                }
                            }
                        }
                    }
                    if want_params {
                        let cols = self.saved[idx].as_ref().expect("conv cols saved in forward");
                        // dW [f, plen] = gy_rows^T @ cols
                        let dw = param_grads[weight.0]
                            .get_or_insert_with(|| vec![0.0; filters * plen]);
                        matmul_at_b(&gy_rows, cols, dw, filters, rows, plen, 1.0);
                        // db [f] = sums over rows, f64 accumulation
                        let db = param_grads[bias.0].get_or_insert_with(|| vec![0.0; filters]);
                        for f in 0..filters {
                            let mut acc = 0.0f64;
                            for r in 0..rows {
                                acc += gy_rows[r * filters + f] as f64;
                            }
                            db[f] += acc as f32;
                        }
                    }
                    // dcols = gy_rows @ W, then scatter back to image layout
                    let mut dcols = vec![0.0f32; rows * plen];
                    matmul(&gy_rows, w.data(), &mut dcols, rows, filters, plen, 0.0);
                    let mut dx = vec![0.0f32; x.numel()];
                    col2im(&dcols, self.batch, geom, &mut dx);
                    accumulate(&mut node_grads[node.inputs[0].0], dx);
                }
                OpKind::Relu => {
                    let x = &self.acts[node.inputs[0].0];
                    let dx: Vec<f32> = x
                        .data()
                        .iter()
                        .zip(&gy)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut node_grads[node.inputs[0].0], dx);
                }
                OpKind::GlobalAvgPool => {
                    let x = &self.acts[node.inputs[0].0];
                    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                    let hw = (h * w) as f32;
                    let mut dx = vec![0.0f32; x.numel()];
                    for img in 0..self.batch {
                        for ch in 0..c {
                            let g = gy[img * c + ch] / hw;
                            let base = (img * c + ch) * (h * w);
                            for v in &mut dx[base..base + h * w] {
                                *v = g;
                            }
                        }
                    }
                    accumulate(&mut node_grads[node.inputs[0].0], dx);
                }
                OpKind::Flatten => {
                    accumulate(&mut node_grads[node.inputs[0].0], gy);
                }
                OpKind::Add => {
                    accumulate(&mut node_grads[node.inputs[0].0], gy.clone());
                    accumulate(&mut node_grads[node.inputs[1].0], gy);
                }
            }
        }

        let input = if self.input_requires_grad {
            let g = node_grads[0].take().unwrap_or_else(|| vec![0.0; self.acts[0].numel()]);
            Some(Tensor::new(self.acts[0].shape().to_vec(), g)?)
        } else {
            None
        };
        Ok(Gradients { params: param_grads, input })
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, values: Vec<f32>) {
    match slot {
        None => *slot = Some(values),
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&values) {
                *a += v;
            }
        }
    }
}
