//! Central finite-difference verification of every layer gradient.
//!
//! For each op kind we build a tiny graph over grad-enabled inputs, seed the
//! output with a fixed random weighting, and compare the analytic input
//! gradients against (f(x+h) - f(x-h)) / 2h element by element. Relative
//! error is measured as |a - n| / max(1, |a|, |n|).
//!
//! Cross-entropy is checked through a softmax front end: its precondition
//! (probability rows) makes direct perturbation of its input ill-posed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{ConcatRole, EvalOptions, Graph, NodeId, Phase, Precision};
use crate::params::ParameterStore;
use crate::rng::{seeded, stream, streams};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Default tolerance for kinked / pooled ops.
pub const TOL_COARSE: f64 = 1e-4;
/// Tolerance for the smooth linear-algebra ops.
pub const TOL_FINE: f64 = 1e-6;

pub const OP_KINDS: [&str; 9] = [
    "dense",
    "conv2d",
    "maxpool2d",
    "flatten",
    "relu",
    "dropout",
    "softmax",
    "concatenate",
    "cross_entropy",
];

#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

struct Instance {
    graph: Graph,
    feeds: Vec<(NodeId, Tensor)>,
    checked: Vec<NodeId>,
    output: NodeId,
    /// Dropout instances re-seed this rng before every forward pass so the
    /// mask is a fixed (differentiable) linear map.
    dropout_seed: Option<u64>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape")
}

/// Values bounded away from zero, so ReLU kinks stay > FD_STEP away.
fn uniform_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * rng.random_range(0.1..1.5)
        })
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape")
}

/// Pairwise-distinct values (gaps >= 0.06), so pooling argmaxes are stable
/// under the FD perturbation.
fn distinct_values(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    ranks.shuffle(rng);
    let values = ranks
        .iter()
        .map(|&r| r as f64 * 0.1 - 0.05 * n as f64 + rng.random_range(-0.02..0.02))
        .collect();
    Tensor::new(shape.to_vec(), values).expect("shape")
}

fn one_hot_rows(rng: &mut ChaCha8Rng, batch: usize, k: usize) -> Tensor {
    let mut values = vec![0.0; batch * k];
    for row in 0..batch {
        let c = rng.random_range(0..k);
        values[row * k + c] = 1.0;
    }
    Tensor::new(vec![batch, k], values).expect("shape")
}

fn build_instance(op: &str, rng: &mut ChaCha8Rng, index: usize) -> Instance {
    let mut g = Graph::new();
    match op {
        "relu" => {
            let x = g.input_with_grad("x");
            let shape = [2, 3 + index % 3];
            let y = g.relu(x);
            Instance {
                graph: g,
                feeds: vec![(x, uniform_off_zero(rng, &shape))],
                checked: vec![x],
                output: y,
                dropout_seed: None,
            }
        }
        "softmax" => {
            let x = g.input_with_grad("x");
            let axis = index % 2;
            let y = g.softmax(x, axis);
            let shape = [2 + index % 2, 3 + index % 3];
            Instance {
                graph: g,
                feeds: vec![(x, uniform(rng, &shape, -2.0, 2.0))],
                checked: vec![x],
                output: y,
                dropout_seed: None,
            }
        }
        "dense" => {
            let (b, d_in, d_out) = (2 + index % 3, 3 + index % 3, 2 + index % 3);
            let x = g.input_with_grad("x");
            let w = g.input_with_grad("w");
            let bias = g.input_with_grad("b");
            let y = g.dense(x, w, bias);
            Instance {
                graph: g,
                feeds: vec![
                    (x, uniform(rng, &[b, d_in], -1.0, 1.0)),
                    (w, uniform(rng, &[d_in, d_out], -1.0, 1.0)),
                    (bias, uniform(rng, &[d_out], -1.0, 1.0)),
                ],
                checked: vec![x, w, bias],
                output: y,
                dropout_seed: None,
            }
        }
        "conv2d" => {
            let x = g.input_with_grad("x");
            let k = g.input_with_grad("k");
            let stride = 1 + index % 2;
            let padding = index % 2;
            let y = g.conv2d(x, k, stride, padding).expect("valid attrs");
            Instance {
                graph: g,
                feeds: vec![
                    (x, uniform(rng, &[2, 2, 5, 5], -1.0, 1.0)),
                    (k, uniform(rng, &[3, 2, 3, 3], -1.0, 1.0)),
                ],
                checked: vec![x, k],
                output: y,
                dropout_seed: None,
            }
        }
        "maxpool2d" => {
            let x = g.input_with_grad("x");
            let stride = 1 + index % 2;
            let y = g.maxpool2d(x, 2, stride).expect("valid attrs");
            let h = 4 + index % 2;
            Instance {
                graph: g,
                feeds: vec![(x, distinct_values(rng, &[2, 2, h, 4]))],
                checked: vec![x],
                output: y,
                dropout_seed: None,
            }
        }
        "flatten" => {
            let x = g.input_with_grad("x");
            let y = g.flatten(x);
            Instance {
                graph: g,
                feeds: vec![(x, uniform(rng, &[2, 2, 3, 3], -1.0, 1.0))],
                checked: vec![x],
                output: y,
                dropout_seed: None,
            }
        }
        "dropout" => {
            let x = g.input_with_grad("x");
            let y = g.dropout(x, 0.5).expect("valid rate");
            Instance {
                graph: g,
                feeds: vec![(x, uniform(rng, &[2, 6], -1.0, 1.0))],
                checked: vec![x],
                output: y,
                dropout_seed: Some(rng.random()),
            }
        }
        "concatenate" => {
            let a = g.input_with_grad("a");
            let b = g.input_with_grad("b");
            let axis = index % 2;
            let y = g.concat(&[a, b], axis, ConcatRole::Plain).expect("parts");
            let (sa, sb) = if axis == 1 {
                ([2, 3], [2, 4])
            } else {
                ([3, 3], [2, 3])
            };
            Instance {
                graph: g,
                feeds: vec![
                    (a, uniform(rng, &sa, -1.0, 1.0)),
                    (b, uniform(rng, &sb, -1.0, 1.0)),
                ],
                checked: vec![a, b],
                output: y,
                dropout_seed: None,
            }
        }
        "cross_entropy" => {
            let logits = g.input_with_grad("logits");
            let target = g.input("target");
            let p = g.softmax(logits, 1);
            let loss = g.cross_entropy(p, target);
            let (batch, k) = (3 + index % 2, 2 + index % 3);
            Instance {
                graph: g,
                feeds: vec![
                    (logits, uniform(rng, &[batch, k], -2.0, 2.0)),
                    (target, one_hot_rows(rng, batch, k)),
                ],
                checked: vec![logits],
                output: loss,
                dropout_seed: None,
            }
        }
        other => panic!("unknown op kind {other}"),
    }
}

fn forward_weighted(inst: &Instance, feeds: &[(NodeId, Tensor)], weights: &Tensor) -> Result<f64> {
    let params = ParameterStore::new();
    let opts = EvalOptions {
        phase: if inst.dropout_seed.is_some() {
            Phase::Train
        } else {
            Phase::Eval
        },
        precision: Precision::F64,
    };
    let mut rng = inst.dropout_seed.map(seeded);
    let y = inst
        .graph
        .forward_value(inst.output, &params, feeds, opts, rng.as_mut())?;
    Ok(y.values()
        .iter()
        .zip(weights.values())
        .map(|(a, b)| a * b)
        .sum())
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

/// Max relative error over all checked inputs of one instance.
fn check_instance(inst: &Instance, rng: &mut ChaCha8Rng, corrupt: bool) -> Result<f64> {
    let params = ParameterStore::new();
    let opts = EvalOptions {
        phase: if inst.dropout_seed.is_some() {
            Phase::Train
        } else {
            Phase::Eval
        },
        precision: Precision::F64,
    };
    let mut drop_rng = inst.dropout_seed.map(seeded);
    let eval = inst.graph.forward_to(
        &[inst.output],
        &params,
        &inst.feeds,
        opts,
        drop_rng.as_mut(),
    )?;
    let out_shape = eval.value(inst.output)?.shape().to_vec();
    let weights = uniform(rng, &out_shape, -1.0, 1.0);
    let grads = inst
        .graph
        .backward_seeded(&params, &eval, inst.output, weights.clone())?;

    let mut max_err: f64 = 0.0;
    let mut first = corrupt;
    for &input in &inst.checked {
        let analytic = grads.for_node(input).cloned().unwrap_or_else(|| {
            Tensor::zeros(
                inst.feeds
                    .iter()
                    .find(|(n, _)| *n == input)
                    .unwrap()
                    .1
                    .shape(),
            )
        });
        let feed_idx = inst
            .feeds
            .iter()
            .position(|(n, _)| *n == input)
            .expect("checked inputs are fed");
        for elem in 0..inst.feeds[feed_idx].1.len() {
            let mut plus = inst.feeds.clone();
            plus[feed_idx].1.values_mut()[elem] += FD_STEP;
            let mut minus = inst.feeds.clone();
            minus[feed_idx].1.values_mut()[elem] -= FD_STEP;
            let numeric = (forward_weighted(inst, &plus, &weights)?
                - forward_weighted(inst, &minus, &weights)?)
                / (2.0 * FD_STEP);
            let mut a = analytic.values()[elem];
            if first {
                // Deliberate corruption hook for the negative-control path.
                a += 0.5;
                first = false;
            }
            max_err = max_err.max(rel_err(a, numeric));
        }
    }
    Ok(max_err)
}

pub fn tolerance_for(op: &str) -> f64 {
    match op {
        "dense" | "concatenate" | "cross_entropy" => TOL_FINE,
        _ => TOL_COARSE,
    }
}

pub fn check_op(op: &str, seed: u64, instances: usize, corrupt: bool) -> Result<OpReport> {
    let mut rng = stream(seed, streams::GRADCHECK);
    let mut max_err: f64 = 0.0;
    for index in 0..instances {
        let inst = build_instance(op, &mut rng, index);
        max_err = max_err.max(check_instance(&inst, &mut rng, corrupt && index == 0)?);
    }
    Ok(OpReport {
        op: op.to_string(),
        instances,
        max_rel_err: max_err,
        tolerance: tolerance_for(op),
    })
}

/// Run the whole suite. `corrupt` names an op whose analytic gradient is
/// deliberately perturbed (negative control for the verification gate).
pub fn check_all(seed: u64, instances: usize, corrupt: Option<&str>) -> Result<Vec<OpReport>> {
    OP_KINDS
        .iter()
        .map(|op| check_op(op, seed, instances, corrupt == Some(*op)))
        .collect()
}
