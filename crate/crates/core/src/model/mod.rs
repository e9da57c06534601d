//! Classifier models: frozen extractors plus a trainable head graph.
//!
//! An [`Extractor`] turns a batch of samples into a `(batch, dim)` feature
//! tensor. It is frozen by construction: either a seeded toy convolutional
//! backbone whose parameters never receive gradients, or a lookup into an
//! externally computed [`FeatureTable`]. The trainable part of every model
//! lives in a [`HeadGraph`] whose inputs are the member feature tensors.

pub mod builder;
pub mod ensemble;
pub mod serialize;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureTable, ImageRecord};
use crate::error::{Error, Result};
use crate::graph::{ConcatRole, EvalOptions, Graph, NodeId, NodeOp};
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

pub use builder::{build_single_model, build_toy_backbone, wrap_feature_table, ToyConvConfig};
pub use ensemble::{
    build_ensemble, build_fco, build_ffc, build_ffco, build_fo, CombineSignal, EnsembleSpec,
    GroupingTree, Topology,
};

/// Classifier head layout: `fc_depth` hidden dense layers (ReLU + dropout
/// each), then a dense softmax output with `num_classes` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub fc_width: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    #[serde(default = "default_fc_depth")]
    pub fc_depth: usize,
}

fn default_fc_depth() -> usize {
    1
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            fc_width: 128,
            dropout_rate: 0.5,
            num_classes: 2,
            fc_depth: 1,
        }
    }
}

/// Upper bound on the hidden width (head specs may come from untrusted
/// model documents).
pub const MAX_FC_WIDTH: usize = 1 << 16;
/// Upper bound on the class count.
pub const MAX_CLASSES: usize = 4096;
/// Upper bound on the scalars of any single dense layer.
pub const MAX_DENSE_SCALARS: usize = 1 << 26;

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fc_width < 1 {
            return Err(Error::Config(format!(
                "fc_width must be at least 1, got {}",
                self.fc_width
            )));
        }
        if self.fc_width > MAX_FC_WIDTH {
            return Err(Error::Config(format!(
                "fc_width {} exceeds the limit {MAX_FC_WIDTH}",
                self.fc_width
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > MAX_CLASSES {
            return Err(Error::Config(format!(
                "num_classes {} exceeds the limit {MAX_CLASSES}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(1..=8).contains(&self.fc_depth) {
            return Err(Error::Config(format!(
                "fc_depth {} outside 1..=8",
                self.fc_depth
            )));
        }
        Ok(())
    }
}

/// Reject dense layers whose weight matrix would exceed the allocation cap.
pub(crate) fn check_dense_size(name: &str, d_in: usize, d_out: usize) -> Result<()> {
    match d_in.checked_mul(d_out) {
        Some(n) if n <= MAX_DENSE_SCALARS => Ok(()),
        _ => Err(Error::Config(format!(
            "dense layer '{name}' ({d_in} x {d_out}) exceeds {MAX_DENSE_SCALARS} scalars"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExtractorSource {
    ToyConv {
        channels: Vec<usize>,
        kernel: usize,
        pool: usize,
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        seed: u64,
    },
    FeatureTable {
        backbone_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub id: String,
    pub source: ExtractorSource,
    pub output_dim: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub(crate) enum ExtractorKind {
    Conv {
        graph: Graph,
        params: ParameterStore,
        input: NodeId,
        output: NodeId,
    },
    Table(Arc<FeatureTable>),
}

/// A finalized, frozen feature extractor.
#[derive(Debug, Clone)]
pub struct Extractor {
    pub spec: ExtractorSpec,
    pub(crate) kind: ExtractorKind,
}

impl Extractor {
    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    /// Parameter store of a convolutional backbone (None for table lookups).
    pub fn params(&self) -> Option<&ParameterStore> {
        match &self.kind {
            ExtractorKind::Conv { params, .. } => Some(params),
            ExtractorKind::Table(_) => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<&mut ParameterStore> {
        match &mut self.kind {
            ExtractorKind::Conv { params, .. } => Some(params),
            ExtractorKind::Table(_) => None,
        }
    }

    /// Feature batch `(len(records), output_dim)` for the given samples.
    pub fn features(&self, records: &[&ImageRecord]) -> Result<Tensor> {
        match &self.kind {
            ExtractorKind::Conv {
                graph,
                params,
                input,
                output,
            } => {
                let (c, h, w) = match &self.spec.source {
                    ExtractorSource::ToyConv {
                        in_channels,
                        in_height,
                        in_width,
                        ..
                    } => (*in_channels, *in_height, *in_width),
                    _ => unreachable!("conv extractor has conv source"),
                };
                let batch = records.len();
                let mut values = Vec::with_capacity(batch * c * h * w);
                for r in records {
                    let px = r.pixels()?;
                    if px.shape() != [c, h, w] {
                        return Err(Error::Dimension(format!(
                            "sample '{}' has shape {:?}, extractor '{}' expects {:?}",
                            r.id,
                            px.shape(),
                            self.spec.id,
                            [c, h, w]
                        )));
                    }
                    values.extend_from_slice(px.values());
                }
                let x = Tensor::new(vec![batch, c, h, w], values)?;
                let y = graph.forward_value(
                    *output,
                    params,
                    &[(*input, x)],
                    EvalOptions::default(),
                    None,
                )?;
                let dim: usize = y.shape()[1..].iter().product();
                y.reshape(&[batch, dim])
            }
            ExtractorKind::Table(table) => {
                let mut values = Vec::with_capacity(records.len() * table.dim);
                for r in records {
                    let row = table.row(&r.id).ok_or_else(|| {
                        Error::Lookup(format!(
                            "sample '{}' not present in feature table '{}'",
                            r.id, table.backbone_id
                        ))
                    })?;
                    values.extend(row.iter().map(|&v| v as f64));
                }
                Tensor::new(vec![records.len(), table.dim], values)
            }
        }
    }
}

/// Concatenation-node counts by ensemble level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcatCensus {
    pub feature: usize,
    pub hidden: usize,
    pub output: usize,
}

/// The trainable portion of a model: a graph from member-feature inputs to
/// a softmax output plus a cross-entropy loss node.
#[derive(Debug, Clone)]
pub struct HeadGraph {
    pub graph: Graph,
    pub params: ParameterStore,
    /// One input node per member, in member order.
    pub feature_inputs: Vec<NodeId>,
    /// One-hot target input.
    pub target: NodeId,
    /// Final softmax output.
    pub output: NodeId,
    /// Cross-entropy of the final output.
    pub loss: NodeId,
    /// Per-branch softmax outputs (empty for topologies without branch heads).
    pub branch_outputs: Vec<NodeId>,
    /// Cross-entropy per branch output, parallel to `branch_outputs`.
    pub branch_losses: Vec<NodeId>,
    /// Parameters of the branch stacks (trained in stage one of staged mode).
    pub branch_params: Vec<ParamId>,
    /// Parameters after the branch outputs (the final combiner).
    pub combiner_params: Vec<ParamId>,
}

impl HeadGraph {
    pub fn census(&self) -> ConcatCensus {
        let mut census = ConcatCensus::default();
        for (_, node) in self.graph.nodes() {
            if let NodeOp::Concat { role, .. } = &node.op {
                match role {
                    ConcatRole::Feature => census.feature += 1,
                    ConcatRole::Hidden => census.hidden += 1,
                    ConcatRole::Output => census.output += 1,
                    ConcatRole::Plain => {}
                }
            }
        }
        census
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    Single,
    Ensemble(EnsembleSpec),
}

/// A complete classifier: frozen members plus a trainable head.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub members: Vec<Extractor>,
    pub head: HeadGraph,
    pub head_spec: HeadSpec,
    pub kind: ModelKind,
    /// Seed used for parameter initialization (kept for serialization).
    pub seed: u64,
}

impl Model {
    pub fn num_classes(&self) -> usize {
        self.head_spec.num_classes
    }

    /// Exact count of non-frozen scalar parameters.
    pub fn trainable_params(&self) -> usize {
        let member_scalars: usize = self
            .members
            .iter()
            .filter_map(|m| m.params())
            .map(|p| p.trainable_scalars())
            .sum();
        member_scalars + self.head.params.trainable_scalars()
    }

    /// Scalar count over every parameter, frozen included.
    pub fn total_params(&self) -> usize {
        let member_scalars: usize = self
            .members
            .iter()
            .filter_map(|m| m.params())
            .map(|p| p.total_scalars())
            .sum();
        member_scalars + self.head.params.total_scalars()
    }

    pub fn census(&self) -> ConcatCensus {
        self.head.census()
    }

    /// Member feature tensors for a batch of records, in member order.
    pub fn member_features(&self, records: &[&ImageRecord]) -> Result<Vec<Tensor>> {
        self.members.iter().map(|m| m.features(records)).collect()
    }

    /// Class distribution `(batch, k)` from precomputed member features.
    pub fn predict_from_features(
        &self,
        features: &[Tensor],
        opts: EvalOptions,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let feeds = self.feature_feeds(features)?;
        self.head
            .graph
            .forward_value(self.head.output, &self.head.params, &feeds, opts, rng)
    }

    pub(crate) fn feature_feeds(&self, features: &[Tensor]) -> Result<Vec<(NodeId, Tensor)>> {
        if features.len() != self.members.len() {
            return Err(Error::Dimension(format!(
                "model '{}' has {} members but {} feature tensors were supplied",
                self.name,
                self.members.len(),
                features.len()
            )));
        }
        Ok(self
            .head
            .feature_inputs
            .iter()
            .zip(features)
            .map(|(&node, t)| (node, t.clone()))
            .collect())
    }

    /// Assert that no member parameter can receive a gradient.
    pub fn assert_members_frozen(&self) -> Result<()> {
        for m in &self.members {
            if !m.spec.frozen {
                return Err(Error::State(format!(
                    "extractor '{}' is not frozen",
                    m.spec.id
                )));
            }
            if let Some(params) = m.params() {
                for (id, entry) in params.iter() {
                    if !entry.frozen {
                        return Err(Error::State(format!(
                            "extractor '{}' parameter {} ('{}') is not frozen",
                            m.spec.id, id.0, entry.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
