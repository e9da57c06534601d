//! Computation graph: a DAG of layer nodes over the kernels in [`crate::ops`].
//!
//! Nodes are appended in construction order and may only reference earlier
//! nodes, so the node list is always a topological order. A forward pass
//! evaluates the ancestors of the requested nodes; a backward pass walks the
//! same order in reverse, accumulating gradients into every reachable node
//! and collecting them for non-frozen parameters.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Numeric width of the computation. `F32` rounds every op result (and
/// optimizer update) through single precision; storage stays `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub phase: Phase,
    pub precision: Precision,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            phase: Phase::Eval,
            precision: Precision::F64,
        }
    }
}

impl EvalOptions {
    pub fn train() -> Self {
        EvalOptions {
            phase: Phase::Train,
            precision: Precision::F64,
        }
    }
}

/// Role tag for concatenation nodes, used to audit ensemble structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcatRole {
    Feature,
    Hidden,
    Output,
    Plain,
}

#[derive(Debug, Clone)]
pub enum NodeOp {
    /// Externally fed tensor. `needs_grad` opts the input into backward.
    Input {
        label: String,
        needs_grad: bool,
    },
    /// Parameter lookup from the store.
    Param(ParamId),
    Relu,
    Softmax {
        axis: usize,
    },
    /// Inputs: [x, w, b].
    Dense,
    /// Inputs: [x, kernel].
    Conv2d {
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
    Concat {
        axis: usize,
        role: ConcatRole,
    },
    /// Inputs: [predicted, target]; scalar output.
    CrossEntropy,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: NodeOp,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Default)]
enum Aux {
    #[default]
    None,
    Mask(Option<Vec<bool>>),
    Argmax(Vec<usize>),
}

/// Result of a forward pass; values are present for evaluated nodes only.
#[derive(Debug, Clone)]
pub struct Evaluation {
    values: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    phase: Phase,
    precision: Precision,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.values
            .get(id.0)
            .and_then(|v| v.as_ref())
            .ok_or_else(|| Error::State(format!("node {} was not evaluated", id.0)))
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }
}

/// Gradients from one backward pass. Parameter gradients cover exactly the
/// non-frozen parameters reachable from the loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn for_param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.by_param
    }

    pub fn for_node(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Merge parameter gradients from another pass (disjoint key sets).
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.by_param {
            debug_assert!(!self.by_param.contains_key(&id));
            self.by_param.insert(id, g);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    fn push(&mut self, op: NodeOp, inputs: Vec<NodeId>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        for input in &inputs {
            if input.0 >= id.0 {
                return Err(Error::State(format!(
                    "node input {} does not precede node {}",
                    input.0, id.0
                )));
            }
        }
        self.nodes.push(Node { op, inputs });
        Ok(id)
    }

    pub fn input(&mut self, label: impl Into<String>) -> NodeId {
        self.push(
            NodeOp::Input {
                label: label.into(),
                needs_grad: false,
            },
            vec![],
        )
        .expect("no inputs")
    }

    /// Input that participates in backward (used by gradient checks).
    pub fn input_with_grad(&mut self, label: impl Into<String>) -> NodeId {
        self.push(
            NodeOp::Input {
                label: label.into(),
                needs_grad: true,
            },
            vec![],
        )
        .expect("no inputs")
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(NodeOp::Param(id), vec![]).expect("no inputs")
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(NodeOp::Relu, vec![x]).expect("checked")
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> NodeId {
        self.push(NodeOp::Softmax { axis }, vec![x])
            .expect("checked")
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(NodeOp::Dense, vec![x, w, b]).expect("checked")
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        self.push(NodeOp::Conv2d { stride, padding }, vec![x, kernel])
    }

    pub fn maxpool2d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        if window == 0 || stride == 0 {
            return Err(Error::Config(
                "maxpool2d window and stride must be positive".into(),
            ));
        }
        self.push(NodeOp::MaxPool2d { window, stride }, vec![x])
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(NodeOp::Flatten, vec![x]).expect("checked")
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.push(NodeOp::Dropout { rate }, vec![x])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize, role: ConcatRole) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Config("concatenate needs at least one part".into()));
        }
        self.push(NodeOp::Concat { axis, role }, parts.to_vec())
    }

    pub fn cross_entropy(&mut self, predicted: NodeId, target: NodeId) -> NodeId {
        self.push(NodeOp::CrossEntropy, vec![predicted, target])
            .expect("checked")
    }

    /// Indices of every ancestor (inclusive) of `targets`.
    fn ancestor_mask(&self, targets: &[NodeId]) -> Vec<bool> {
        let mut wanted = vec![false; self.nodes.len()];
        for t in targets {
            wanted[t.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if wanted[i] {
                for input in &self.nodes[i].inputs {
                    wanted[input.0] = true;
                }
            }
        }
        wanted
    }

    /// Evaluate the ancestors of `targets`.
    ///
    /// `feeds` supplies input-node tensors; `rng` is consumed by dropout in
    /// train phase and must be provided when the evaluated subgraph contains
    /// a dropout node with a nonzero rate.
    pub fn forward_to(
        &self,
        targets: &[NodeId],
        params: &ParameterStore,
        feeds: &[(NodeId, Tensor)],
        opts: EvalOptions,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Evaluation> {
        for t in targets {
            if t.0 >= self.nodes.len() {
                return Err(Error::State(format!("unknown target node {}", t.0)));
            }
        }
        let wanted = self.ancestor_mask(targets);
        let mut feed_map: BTreeMap<usize, &Tensor> = BTreeMap::new();
        for (id, tensor) in feeds {
            feed_map.insert(id.0, tensor);
        }

        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut aux: Vec<Aux> = vec![Aux::None; self.nodes.len()];

        for (i, node) in self.nodes.iter().enumerate() {
            if !wanted[i] {
                continue;
            }
            let get = |id: &NodeId| values[id.0].as_ref().expect("topological order");
            let mut out = match &node.op {
                NodeOp::Input { label, .. } => match feed_map.get(&i) {
                    Some(t) => (*t).clone(),
                    None => return Err(Error::State(format!("no feed for input node '{label}'"))),
                },
                NodeOp::Param(pid) => params.tensor(*pid)?.clone(),
                NodeOp::Relu => ops::relu_forward(get(&node.inputs[0])),
                NodeOp::Softmax { axis } => ops::softmax_forward(get(&node.inputs[0]), *axis)?,
                NodeOp::Dense => ops::dense_forward(
                    get(&node.inputs[0]),
                    get(&node.inputs[1]),
                    get(&node.inputs[2]),
                )?,
                NodeOp::Conv2d { stride, padding } => ops::conv2d_forward(
                    get(&node.inputs[0]),
                    get(&node.inputs[1]),
                    *stride,
                    *padding,
                )?,
                NodeOp::MaxPool2d { window, stride } => {
                    let (y, argmax) =
                        ops::maxpool2d_forward(get(&node.inputs[0]), *window, *stride)?;
                    aux[i] = Aux::Argmax(argmax);
                    y
                }
                NodeOp::Flatten => ops::flatten_forward(get(&node.inputs[0]))?,
                NodeOp::Dropout { rate } => {
                    let train = opts.phase == Phase::Train;
                    if train && *rate > 0.0 {
                        let rng = rng.as_deref_mut().ok_or_else(|| {
                            Error::State("dropout in train phase needs an rng".into())
                        })?;
                        let (y, mask) =
                            ops::dropout_forward(get(&node.inputs[0]), *rate, true, rng);
                        aux[i] = Aux::Mask(mask);
                        y
                    } else {
                        get(&node.inputs[0]).clone()
                    }
                }
                NodeOp::Concat { axis, .. } => {
                    let parts: Vec<&Tensor> = node.inputs.iter().map(get).collect();
                    ops::concat_forward(&parts, *axis)?
                }
                NodeOp::CrossEntropy => {
                    let row_sum_tol = match opts.precision {
                        Precision::F64 => ops::ROW_SUM_TOL,
                        Precision::F32 => 1e-5,
                    };
                    ops::cross_entropy_forward_with_tol(
                        get(&node.inputs[0]),
                        get(&node.inputs[1]),
                        row_sum_tol,
                    )?
                }
            };
            if opts.precision == Precision::F32 {
                out.quantize_f32();
            }
            if !out.all_finite() {
                return Err(Error::Numeric {
                    epoch: 0,
                    message: format!("node {i} produced non-finite values"),
                });
            }
            values[i] = Some(out);
        }

        Ok(Evaluation {
            values,
            aux,
            phase: opts.phase,
            precision: opts.precision,
        })
    }

    /// Forward pass to a single node; returns its value.
    pub fn forward_value(
        &self,
        target: NodeId,
        params: &ParameterStore,
        feeds: &[(NodeId, Tensor)],
        opts: EvalOptions,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let eval = self.forward_to(&[target], params, feeds, opts, rng)?;
        Ok(eval.value(target)?.clone())
    }

    /// Per-node flags: true where the node (transitively) depends on a
    /// non-frozen parameter or a grad-enabled input.
    fn requires_grad(&self, params: &ParameterStore) -> Vec<bool> {
        let mut req = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            req[i] = match &node.op {
                NodeOp::Input { needs_grad, .. } => *needs_grad,
                NodeOp::Param(pid) => !params.is_frozen(*pid),
                _ => node.inputs.iter().any(|id| req[id.0]),
            };
        }
        req
    }

    /// Reverse-mode pass from a scalar loss node.
    pub fn backward(
        &self,
        params: &ParameterStore,
        eval: &Evaluation,
        loss: NodeId,
    ) -> Result<Gradients> {
        let loss_value = eval.value(loss)?;
        if loss_value.len() != 1 {
            return Err(Error::State(format!(
                "backward start node must be scalar, got shape {:?}",
                loss_value.shape()
            )));
        }
        self.backward_seeded(params, eval, loss, Tensor::scalar(1.0))
    }

    /// Reverse-mode pass seeding `node` with an arbitrary upstream gradient
    /// (same shape as the node's value).
    pub fn backward_seeded(
        &self,
        params: &ParameterStore,
        eval: &Evaluation,
        node: NodeId,
        seed: Tensor,
    ) -> Result<Gradients> {
        if eval.values.len() != self.nodes.len() {
            return Err(Error::State("evaluation does not match this graph".into()));
        }
        let start_value = eval.value(node)?;
        if seed.shape() != start_value.shape() {
            return Err(Error::Dimension(format!(
                "gradient seed shape {:?} does not match node shape {:?}",
                seed.shape(),
                start_value.shape()
            )));
        }

        let req = self.requires_grad(params);
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if req[node.0] {
            node_grads[node.0] = Some(seed);
        }

        let accumulate = |slot: &mut Option<Tensor>, add: Tensor, precision: Precision| {
            match slot {
                None => *slot = Some(add),
                Some(existing) => {
                    for (e, a) in existing.values_mut().iter_mut().zip(add.values()) {
                        *e += a;
                    }
                }
            }
            if precision == Precision::F32 {
                if let Some(t) = slot {
                    t.quantize_f32();
                }
            }
        };

        let precision = eval.precision;
        for i in (0..=node.0).rev() {
            if node_grads[i].is_none() || !req[i] {
                continue;
            }
            let grad_out = node_grads[i].take().expect("checked");
            let graph_node = &self.nodes[i];
            let value_of = |id: &NodeId| eval.value(*id);

            match &graph_node.op {
                NodeOp::Input { .. } | NodeOp::Param(_) => {
                    node_grads[i] = Some(grad_out);
                    continue;
                }
                NodeOp::Relu => {
                    let x = value_of(&graph_node.inputs[0])?;
                    let dx = ops::relu_backward(x, &grad_out);
                    accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                }
                NodeOp::Softmax { axis } => {
                    let y = eval.value(NodeId(i))?;
                    let dx = ops::softmax_backward(y, &grad_out, *axis);
                    accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                }
                NodeOp::Dense => {
                    let x = value_of(&graph_node.inputs[0])?;
                    let w = value_of(&graph_node.inputs[1])?;
                    let (dx, dw, db) = ops::dense_backward(x, w, &grad_out);
                    if req[graph_node.inputs[0].0] {
                        accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                    }
                    if req[graph_node.inputs[1].0] {
                        accumulate(&mut node_grads[graph_node.inputs[1].0], dw, precision);
                    }
                    if req[graph_node.inputs[2].0] {
                        accumulate(&mut node_grads[graph_node.inputs[2].0], db, precision);
                    }
                }
                NodeOp::Conv2d { stride, padding } => {
                    let x = value_of(&graph_node.inputs[0])?;
                    let k = value_of(&graph_node.inputs[1])?;
                    let (dx, dk) = ops::conv2d_backward(x, k, &grad_out, *stride, *padding);
                    if req[graph_node.inputs[0].0] {
                        accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                    }
                    if req[graph_node.inputs[1].0] {
                        accumulate(&mut node_grads[graph_node.inputs[1].0], dk, precision);
                    }
                }
                NodeOp::MaxPool2d { .. } => {
                    let x = value_of(&graph_node.inputs[0])?;
                    let argmax = match &eval.aux[i] {
                        Aux::Argmax(a) => a,
                        _ => return Err(Error::State("maxpool aux missing".into())),
                    };
                    let dx = ops::maxpool2d_backward(x.shape(), argmax, &grad_out);
                    accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                }
                NodeOp::Flatten => {
                    let x = value_of(&graph_node.inputs[0])?;
                    let dx = ops::flatten_backward(x.shape(), &grad_out);
                    accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                }
                NodeOp::Dropout { rate } => {
                    let mask = match &eval.aux[i] {
                        Aux::Mask(m) => m.as_deref(),
                        _ => None,
                    };
                    let dx = ops::dropout_backward(&grad_out, *rate, mask);
                    accumulate(&mut node_grads[graph_node.inputs[0].0], dx, precision);
                }
                NodeOp::Concat { axis, .. } => {
                    let shapes: Vec<Vec<usize>> = graph_node
                        .inputs
                        .iter()
                        .map(|id| eval.value(*id).map(|t| t.shape().to_vec()))
                        .collect::<Result<_>>()?;
                    let parts = ops::concat_backward(&shapes, &grad_out, *axis);
                    for (input, part) in graph_node.inputs.iter().zip(parts) {
                        if req[input.0] {
                            accumulate(&mut node_grads[input.0], part, precision);
                        }
                    }
                }
                NodeOp::CrossEntropy => {
                    let predicted = value_of(&graph_node.inputs[0])?;
                    let target = value_of(&graph_node.inputs[1])?;
                    let g = grad_out.item()?;
                    let dp = ops::cross_entropy_backward(predicted, target, g);
                    if req[graph_node.inputs[0].0] {
                        accumulate(&mut node_grads[graph_node.inputs[0].0], dp, precision);
                    }
                    // No gradient to the target.
                }
            }
        }

        let mut by_param = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeOp::Param(pid) = &node.op {
                if !params.is_frozen(*pid) {
                    if let Some(g) = node_grads[i].take() {
                        by_param.insert(*pid, g);
                    }
                }
            }
        }

        Ok(Gradients {
            by_param,
            by_node: node_grads,
        })
    }
}
