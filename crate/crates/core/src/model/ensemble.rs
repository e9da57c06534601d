//! The four multi-level ensemble topologies.
//!
//! Members are frozen extractors; branches combine them by concatenation at
//! up to three levels:
//!
//! * feature level — raw extractor features of a group are concatenated and
//!   feed one branch FC stack;
//! * fully-connected (hidden) level — FC activations across a group are
//!   concatenated;
//! * output level — per-branch class distributions are concatenated and feed
//!   a final trainable dense + softmax.
//!
//! FFC = feature + hidden, FO = feature + output, FCO = hidden + output,
//! FFCO = all three.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConcatRole, Graph, NodeId};
use crate::params::{ParamId, ParameterStore};
use crate::rng::{stream, streams};

use super::{Extractor, HeadGraph, HeadSpec, Model, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Ffc,
    Fco,
    Fo,
    Ffco,
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Ffc => "ffc",
            Topology::Fco => "fco",
            Topology::Fo => "fo",
            Topology::Ffco => "ffco",
        }
    }

    pub fn levels(&self) -> u8 {
        match self {
            Topology::Ffco => 3,
            _ => 2,
        }
    }
}

/// What branch output layers feed into an output-level concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineSignal {
    /// Post-softmax class distributions (matches the per-branch output layers).
    #[default]
    Probabilities,
    /// Pre-softmax activations of the branch output layer.
    HiddenActivations,
}

/// Upper bound on ensemble members (specs may come from untrusted model
/// documents).
pub const MAX_MEMBERS: usize = 64;

/// How members fold into branches.
///
/// `feature_groups` partitions member indices; for three-level topologies
/// `fc_groups` partitions the feature-group indices in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingTree {
    pub members: Vec<String>,
    pub feature_groups: Vec<Vec<usize>>,
    #[serde(default)]
    pub fc_groups: Vec<Vec<usize>>,
    pub levels: u8,
}

impl GroupingTree {
    /// Default assignment: members sorted by id, grouped consecutively in
    /// pairs; for three levels, feature groups pair up the same way.
    pub fn default_pairs(member_ids: &[String], levels: u8) -> Result<Self> {
        let mut members = member_ids.to_vec();
        members.sort();
        if members.len() < 2 || !members.len().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "default pair grouping needs an even member count of at least 2, got {}",
                members.len()
            )));
        }
        let feature_groups: Vec<Vec<usize>> = (0..members.len() / 2)
            .map(|g| vec![2 * g, 2 * g + 1])
            .collect();
        let fc_groups = if levels == 3 {
            if !feature_groups.len().is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "a 3-level tree needs an even number of feature groups, got {} \
                     ({} members make {} pairs)",
                    feature_groups.len(),
                    members.len(),
                    feature_groups.len()
                )));
            }
            (0..feature_groups.len() / 2)
                .map(|g| vec![2 * g, 2 * g + 1])
                .collect()
        } else {
            Vec::new()
        };
        let tree = GroupingTree {
            members,
            feature_groups,
            fc_groups,
            levels,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.levels, 2 | 3) {
            return Err(Error::Config(format!(
                "grouping levels must be 2 or 3, got {}",
                self.levels
            )));
        }
        if self.members.len() > MAX_MEMBERS {
            return Err(Error::Config(format!(
                "{} members exceed the limit {MAX_MEMBERS}",
                self.members.len()
            )));
        }
        let n = self.members.len();
        let mut seen = vec![false; n];
        for (gi, group) in self.feature_groups.iter().enumerate() {
            if group.len() < 2 {
                return Err(Error::Config(format!(
                    "feature group {gi} has {} member(s); concatenating levels need at least 2",
                    group.len()
                )));
            }
            for &m in group {
                if m >= n {
                    return Err(Error::Config(format!(
                        "feature group {gi} references member index {m} out of {n}"
                    )));
                }
                if seen[m] {
                    return Err(Error::Config(format!(
                        "member index {m} appears in more than one feature group"
                    )));
                }
                seen[m] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Config(
                "feature groups do not cover every member".into(),
            ));
        }
        if self.levels == 3 {
            if self.fc_groups.is_empty() {
                return Err(Error::Config(
                    "a 3-level tree needs fc_groups over the feature groups".into(),
                ));
            }
            let g = self.feature_groups.len();
            let mut seen = vec![false; g];
            for (fi, fc_group) in self.fc_groups.iter().enumerate() {
                if fc_group.is_empty() {
                    return Err(Error::Config(format!("fc group {fi} is empty")));
                }
                for &b in fc_group {
                    if b >= g {
                        return Err(Error::Config(format!(
                            "fc group {fi} references feature group {b} out of {g}"
                        )));
                    }
                    if seen[b] {
                        return Err(Error::Config(format!(
                            "feature group {b} appears in more than one fc group"
                        )));
                    }
                    seen[b] = true;
                }
            }
            if seen.iter().any(|&s| !s) {
                return Err(Error::Config(
                    "fc groups do not cover every feature group".into(),
                ));
            }
        } else if !self.fc_groups.is_empty() {
            return Err(Error::Config(
                "fc_groups are only meaningful for a 3-level tree".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub topology: Topology,
    pub grouping: GroupingTree,
    pub head: HeadSpec,
    #[serde(default)]
    pub combine_signal: CombineSignal,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.grouping.validate()?;
        let expected_levels = self.topology.levels();
        if self.grouping.levels != expected_levels {
            return Err(Error::Config(format!(
                "topology {} needs a {}-level grouping tree, got {} levels",
                self.topology.name(),
                expected_levels,
                self.grouping.levels
            )));
        }
        Ok(())
    }
}

/// Scratch state threaded through the topology builders.
struct HeadBuilder {
    graph: Graph,
    params: ParameterStore,
    rng: rand_chacha::ChaCha8Rng,
    head: HeadSpec,
}

impl HeadBuilder {
    fn new(head: HeadSpec, seed: u64) -> Self {
        HeadBuilder {
            graph: Graph::new(),
            params: ParameterStore::new(),
            rng: stream(seed, streams::INIT),
            head,
        }
    }

    /// fc_depth x (dense(fc_width) -> ReLU -> dropout).
    fn fc_block(&mut self, x: NodeId, in_dim: usize, name: &str) -> Result<(NodeId, Vec<ParamId>)> {
        let mut x = x;
        let mut in_dim = in_dim;
        let mut ids = Vec::with_capacity(2 * self.head.fc_depth);
        for depth in 0..self.head.fc_depth {
            let layer = format!("{name}{depth}");
            super::check_dense_size(&layer, in_dim, self.head.fc_width)?;
            let (w, b) =
                self.params
                    .init_dense(&layer, in_dim, self.head.fc_width, true, &mut self.rng);
            let wn = self.graph.param(w);
            let bn = self.graph.param(b);
            let dense = self.graph.dense(x, wn, bn);
            let act = self.graph.relu(dense);
            x = self
                .graph
                .dropout(act, self.head.dropout_rate)
                .expect("rate validated");
            ids.extend([w, b]);
            in_dim = self.head.fc_width;
        }
        Ok((x, ids))
    }

    /// dense(k) -> softmax; returns (softmax, logits, params).
    fn output_layer(
        &mut self,
        x: NodeId,
        in_dim: usize,
        name: &str,
    ) -> Result<(NodeId, NodeId, Vec<ParamId>)> {
        super::check_dense_size(name, in_dim, self.head.num_classes)?;
        let (w, b) =
            self.params
                .init_dense(name, in_dim, self.head.num_classes, false, &mut self.rng);
        let wn = self.graph.param(w);
        let bn = self.graph.param(b);
        let logits = self.graph.dense(x, wn, bn);
        let probs = self.graph.softmax(logits, 1);
        Ok((probs, logits, vec![w, b]))
    }
}

/// Reorder extractors to match `grouping.members` (which is the canonical
/// member order of the built model).
fn order_members(members: Vec<Extractor>, grouping: &GroupingTree) -> Result<Vec<Extractor>> {
    let mut supplied: Vec<String> = members.iter().map(|m| m.spec.id.clone()).collect();
    supplied.sort();
    let mut wanted = grouping.members.clone();
    wanted.sort();
    if supplied != wanted {
        return Err(Error::Config(format!(
            "grouping member ids {wanted:?} do not match supplied extractors {supplied:?}"
        )));
    }
    let mut by_id: std::collections::BTreeMap<String, Extractor> = members
        .into_iter()
        .map(|m| (m.spec.id.clone(), m))
        .collect();
    if by_id.len() != grouping.members.len() {
        return Err(Error::Config("duplicate extractor ids".into()));
    }
    Ok(grouping
        .members
        .iter()
        .map(|id| by_id.remove(id).expect("checked above"))
        .collect())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    name: String,
    members: Vec<Extractor>,
    spec: EnsembleSpec,
    b: HeadBuilder,
    feature_inputs: Vec<NodeId>,
    output: NodeId,
    loss: NodeId,
    target: NodeId,
    branch_outputs: Vec<NodeId>,
    branch_losses: Vec<NodeId>,
    branch_params: Vec<ParamId>,
    combiner_params: Vec<ParamId>,
    seed: u64,
) -> Result<Model> {
    for m in &members {
        if !m.spec.frozen {
            return Err(Error::State(format!(
                "extractor '{}' must be finalized (frozen) before use",
                m.spec.id
            )));
        }
    }
    let head_spec = spec.head;
    Ok(Model {
        name,
        members,
        head: HeadGraph {
            graph: b.graph,
            params: b.params,
            feature_inputs,
            target,
            output,
            loss,
            branch_outputs,
            branch_losses,
            branch_params,
            combiner_params,
        },
        head_spec,
        kind: ModelKind::Ensemble(spec),
        seed,
    })
}

/// Feature + fully-connected ensemble: per group, raw features concatenate
/// and feed a branch FC stack; all branch activations concatenate into one
/// output layer.
pub fn build_ffc(
    members: Vec<Extractor>,
    spec: EnsembleSpec,
    seed: u64,
    name: impl Into<String>,
) -> Result<Model> {
    debug_assert_eq!(spec.topology, Topology::Ffc);
    spec.validate()?;
    let members = order_members(members, &spec.grouping)?;
    let mut b = HeadBuilder::new(spec.head, seed);

    let inputs: Vec<NodeId> = members
        .iter()
        .map(|m| b.graph.input(format!("features:{}", m.spec.id)))
        .collect();
    let mut branch_params = Vec::new();
    let mut branch_acts = Vec::new();
    for (gi, group) in spec.grouping.feature_groups.iter().enumerate() {
        let parts: Vec<NodeId> = group.iter().map(|&m| inputs[m]).collect();
        let cat = b.graph.concat(&parts, 1, ConcatRole::Feature)?;
        let flat = b.graph.flatten(cat);
        let in_dim: usize = group.iter().map(|&m| members[m].output_dim()).sum();
        let (act, ps) = b.fc_block(flat, in_dim, &format!("branch{gi}.fc"))?;
        branch_params.extend(ps);
        branch_acts.push(act);
    }
    let fc_cat = b.graph.concat(&branch_acts, 1, ConcatRole::Hidden)?;
    let concat_dim = spec.grouping.feature_groups.len() * spec.head.fc_width;
    let (output, _, combiner_params) = b.output_layer(fc_cat, concat_dim, "combiner.out")?;
    let target = b.graph.input("target");
    let loss = b.graph.cross_entropy(output, target);

    finish(
        name.into(),
        members,
        spec,
        b,
        inputs,
        output,
        loss,
        target,
        Vec::new(),
        Vec::new(),
        branch_params,
        combiner_params,
        seed,
    )
}

/// Fully-connected + output ensemble: per group, each member gets its own FC
/// stack; group activations concatenate into a group output layer; group
/// outputs concatenate into the final layer.
pub fn build_fco(
    members: Vec<Extractor>,
    spec: EnsembleSpec,
    seed: u64,
    name: impl Into<String>,
) -> Result<Model> {
    debug_assert_eq!(spec.topology, Topology::Fco);
    spec.validate()?;
    let members = order_members(members, &spec.grouping)?;
    let mut b = HeadBuilder::new(spec.head, seed);

    let inputs: Vec<NodeId> = members
        .iter()
        .map(|m| b.graph.input(format!("features:{}", m.spec.id)))
        .collect();
    let target = b.graph.input("target");
    let mut branch_params = Vec::new();
    let mut branch_outputs = Vec::new();
    let mut branch_losses = Vec::new();
    let mut signals = Vec::new();
    for (gi, group) in spec.grouping.feature_groups.iter().enumerate() {
        let mut acts = Vec::new();
        for &m in group {
            let flat = b.graph.flatten(inputs[m]);
            let (act, ps) = b.fc_block(
                flat,
                members[m].output_dim(),
                &format!("branch{gi}.m{m}.fc"),
            )?;
            branch_params.extend(ps);
            acts.push(act);
        }
        let cat = b.graph.concat(&acts, 1, ConcatRole::Hidden)?;
        let (probs, logits, ps) = b.output_layer(
            cat,
            group.len() * spec.head.fc_width,
            &format!("branch{gi}.out"),
        )?;
        branch_params.extend(ps);
        branch_losses.push(b.graph.cross_entropy(probs, target));
        branch_outputs.push(probs);
        signals.push(match spec.combine_signal {
            CombineSignal::Probabilities => probs,
            CombineSignal::HiddenActivations => logits,
        });
    }
    let out_cat = b.graph.concat(&signals, 1, ConcatRole::Output)?;
    let concat_dim = spec.grouping.feature_groups.len() * spec.head.num_classes;
    let (output, _, combiner_params) = b.output_layer(out_cat, concat_dim, "combiner.out")?;
    let loss = b.graph.cross_entropy(output, target);

    finish(
        name.into(),
        members,
        spec,
        b,
        inputs,
        output,
        loss,
        target,
        branch_outputs,
        branch_losses,
        branch_params,
        combiner_params,
        seed,
    )
}

/// Feature + output ensemble: per group, concatenated raw features feed a
/// branch FC stack and a branch output layer; branch outputs concatenate
/// into the final layer.
pub fn build_fo(
    members: Vec<Extractor>,
    spec: EnsembleSpec,
    seed: u64,
    name: impl Into<String>,
) -> Result<Model> {
    debug_assert_eq!(spec.topology, Topology::Fo);
    spec.validate()?;
    let members = order_members(members, &spec.grouping)?;
    let mut b = HeadBuilder::new(spec.head, seed);

    let inputs: Vec<NodeId> = members
        .iter()
        .map(|m| b.graph.input(format!("features:{}", m.spec.id)))
        .collect();
    let target = b.graph.input("target");
    let mut branch_params = Vec::new();
    let mut branch_outputs = Vec::new();
    let mut branch_losses = Vec::new();
    let mut signals = Vec::new();
    for (gi, group) in spec.grouping.feature_groups.iter().enumerate() {
        let parts: Vec<NodeId> = group.iter().map(|&m| inputs[m]).collect();
        let cat = b.graph.concat(&parts, 1, ConcatRole::Feature)?;
        let flat = b.graph.flatten(cat);
        let in_dim: usize = group.iter().map(|&m| members[m].output_dim()).sum();
        let (act, ps) = b.fc_block(flat, in_dim, &format!("branch{gi}.fc"))?;
        branch_params.extend(ps);
        let (probs, logits, ps) =
            b.output_layer(act, spec.head.fc_width, &format!("branch{gi}.out"))?;
        branch_params.extend(ps);
        branch_losses.push(b.graph.cross_entropy(probs, target));
        branch_outputs.push(probs);
        signals.push(match spec.combine_signal {
            CombineSignal::Probabilities => probs,
            CombineSignal::HiddenActivations => logits,
        });
    }
    let out_cat = b.graph.concat(&signals, 1, ConcatRole::Output)?;
    let concat_dim = spec.grouping.feature_groups.len() * spec.head.num_classes;
    let (output, _, combiner_params) = b.output_layer(out_cat, concat_dim, "combiner.out")?;
    let loss = b.graph.cross_entropy(output, target);

    finish(
        name.into(),
        members,
        spec,
        b,
        inputs,
        output,
        loss,
        target,
        branch_outputs,
        branch_losses,
        branch_params,
        combiner_params,
        seed,
    )
}

/// Three-level ensemble: feature concatenation per pair, hidden
/// concatenation per fc group with a group output layer, and a final layer
/// over the concatenated group outputs.
pub fn build_ffco(
    members: Vec<Extractor>,
    spec: EnsembleSpec,
    seed: u64,
    name: impl Into<String>,
) -> Result<Model> {
    debug_assert_eq!(spec.topology, Topology::Ffco);
    spec.validate()?;
    let members = order_members(members, &spec.grouping)?;
    let mut b = HeadBuilder::new(spec.head, seed);

    let inputs: Vec<NodeId> = members
        .iter()
        .map(|m| b.graph.input(format!("features:{}", m.spec.id)))
        .collect();
    let target = b.graph.input("target");
    let mut branch_params = Vec::new();

    // Level 1: feature concatenation + branch FC per feature group.
    let mut branch_acts = Vec::new();
    for (gi, group) in spec.grouping.feature_groups.iter().enumerate() {
        let parts: Vec<NodeId> = group.iter().map(|&m| inputs[m]).collect();
        let cat = b.graph.concat(&parts, 1, ConcatRole::Feature)?;
        let flat = b.graph.flatten(cat);
        let in_dim: usize = group.iter().map(|&m| members[m].output_dim()).sum();
        let (act, ps) = b.fc_block(flat, in_dim, &format!("branch{gi}.fc"))?;
        branch_params.extend(ps);
        branch_acts.push(act);
    }

    // Level 2: hidden concatenation + output layer per fc group.
    let mut branch_outputs = Vec::new();
    let mut branch_losses = Vec::new();
    let mut signals = Vec::new();
    for (fi, fc_group) in spec.grouping.fc_groups.iter().enumerate() {
        let parts: Vec<NodeId> = fc_group.iter().map(|&g| branch_acts[g]).collect();
        let cat = b.graph.concat(&parts, 1, ConcatRole::Hidden)?;
        let (probs, logits, ps) = b.output_layer(
            cat,
            fc_group.len() * spec.head.fc_width,
            &format!("group{fi}.out"),
        )?;
        branch_params.extend(ps);
        branch_losses.push(b.graph.cross_entropy(probs, target));
        branch_outputs.push(probs);
        signals.push(match spec.combine_signal {
            CombineSignal::Probabilities => probs,
            CombineSignal::HiddenActivations => logits,
        });
    }

    // Level 3: output concatenation + final layer.
    let out_cat = b.graph.concat(&signals, 1, ConcatRole::Output)?;
    let concat_dim = spec.grouping.fc_groups.len() * spec.head.num_classes;
    let (output, _, combiner_params) = b.output_layer(out_cat, concat_dim, "combiner.out")?;
    let loss = b.graph.cross_entropy(output, target);

    finish(
        name.into(),
        members,
        spec,
        b,
        inputs,
        output,
        loss,
        target,
        branch_outputs,
        branch_losses,
        branch_params,
        combiner_params,
        seed,
    )
}

/// Dispatch on topology.
pub fn build_ensemble(
    members: Vec<Extractor>,
    spec: EnsembleSpec,
    seed: u64,
    name: impl Into<String>,
) -> Result<Model> {
    match spec.topology {
        Topology::Ffc => build_ffc(members, spec, seed, name),
        Topology::Fco => build_fco(members, spec, seed, name),
        Topology::Fo => build_fo(members, spec, seed, name),
        Topology::Ffco => build_ffco(members, spec, seed, name),
    }
}
