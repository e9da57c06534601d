//! Training loops, learning-curve capture, and model evaluation.
//!
//! Frozen extractors make member features constant per sample, so they are
//! computed once per dataset and cached (within a memory budget); training
//! then touches only the head graph.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetSplit, ImageRecord, Part};
use crate::error::{Error, Result};
use crate::graph::{EvalOptions, NodeId, Phase, Precision};
use crate::model::{Extractor, ExtractorSource, Model};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::{stream, streams};
use crate::tensor::Tensor;

use super::metrics::{argmax, compute_metrics, ConfusionMatrix, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRegime {
    /// One loss at the final output over all trainable parameters.
    #[default]
    Joint,
    /// Branch stacks first (their own output losses), then the combiner with
    /// the branches frozen. Needs a topology with branch output layers.
    Staged,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub regime: TrainingRegime,
    /// `F32` rounds every op result through single precision.
    pub f32_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            regime: TrainingRegime::Joint,
            f32_mode: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }

    pub fn precision(&self) -> Precision {
        if self.f32_mode {
            Precision::F32
        } else {
            Precision::F64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub seconds_per_epoch: Vec<f64>,
}

/// Cached member features, keyed by extractor spec. Only convolutional
/// backbones are cached; table lookups are already O(1).
#[derive(Debug, Default)]
pub struct FeatureCache {
    entries: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    bytes: usize,
}

/// Stop caching beyond this many bytes of f64 features.
const CACHE_BUDGET_BYTES: usize = 512 << 20;
/// Batch size for cache fills and evaluation passes.
const EVAL_BATCH: usize = 256;

fn cache_key(extractor: &Extractor) -> Option<String> {
    match &extractor.spec.source {
        ExtractorSource::ToyConv { .. } => {
            Some(serde_json::to_string(&extractor.spec).expect("spec serializes"))
        }
        ExtractorSource::FeatureTable { .. } => None,
    }
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Compute and store features of every dataset record for each of the
    /// model's convolutional members (skipped once over budget).
    pub fn populate(&mut self, model: &Model, dataset: &Dataset) -> Result<()> {
        for member in &model.members {
            let Some(key) = cache_key(member) else {
                continue;
            };
            if self.entries.contains_key(&key) {
                continue;
            }
            let added = dataset.len() * member.output_dim() * 8;
            if self.bytes + added > CACHE_BUDGET_BYTES {
                continue;
            }
            let mut rows = BTreeMap::new();
            for chunk in dataset.records.chunks(EVAL_BATCH) {
                let refs: Vec<&ImageRecord> = chunk.iter().collect();
                let feats = member.features(&refs)?;
                let dim = member.output_dim();
                for (i, r) in chunk.iter().enumerate() {
                    rows.insert(
                        r.id.clone(),
                        feats.values()[i * dim..(i + 1) * dim].to_vec(),
                    );
                }
            }
            self.bytes += added;
            self.entries.insert(key, rows);
        }
        Ok(())
    }

    fn lookup(&self, extractor: &Extractor, ids: &[&str]) -> Option<Tensor> {
        let key = cache_key(extractor)?;
        let rows = self.entries.get(&key)?;
        let dim = extractor.output_dim();
        let mut values = Vec::with_capacity(ids.len() * dim);
        for id in ids {
            values.extend_from_slice(rows.get(*id)?);
        }
        Some(Tensor::new(vec![ids.len(), dim], values).expect("shape"))
    }
}

/// Resolves record ids to member feature tensors and labels. Borrows only
/// the member list, so the head parameters stay free for mutation.
pub struct BatchSource<'a> {
    members: &'a [Extractor],
    dataset: &'a Dataset,
    cache: Option<&'a FeatureCache>,
    index: BTreeMap<&'a str, usize>,
}

impl<'a> BatchSource<'a> {
    pub fn new(
        members: &'a [Extractor],
        dataset: &'a Dataset,
        cache: Option<&'a FeatureCache>,
    ) -> Self {
        let index = dataset
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        BatchSource {
            members,
            dataset,
            cache,
            index,
        }
    }

    fn records(&self, ids: &[String]) -> Result<Vec<&'a ImageRecord>> {
        ids.iter()
            .map(|id| {
                self.index
                    .get(id.as_str())
                    .map(|&i| &self.dataset.records[i])
                    .ok_or_else(|| Error::Lookup(format!("sample '{id}' not in dataset")))
            })
            .collect()
    }

    /// (member features, labels) for a batch of ids.
    pub fn batch(&self, ids: &[String]) -> Result<(Vec<Tensor>, Vec<usize>)> {
        let records = self.records(ids)?;
        let id_refs: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        let mut features = Vec::with_capacity(self.members.len());
        for member in self.members {
            let tensor = match self.cache.and_then(|c| c.lookup(member, &id_refs)) {
                Some(t) => t,
                None => member.features(&records)?,
            };
            features.push(tensor);
        }
        let labels = records.iter().map(|r| r.label).collect();
        Ok((features, labels))
    }
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut values = vec![0.0; labels.len() * k];
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Data(format!("label {label} out of range for k {k}")));
        }
        values[i * k + label] = 1.0;
    }
    Tensor::new(vec![labels.len(), k], values)
}

fn batch_accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    let k = probs.shape()[1];
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &label)| argmax(&probs.values()[i * k..(i + 1) * k]) == label)
        .count();
    correct as f64 / labels.len() as f64
}

fn feeds_for(
    feature_inputs: &[NodeId],
    features: &[Tensor],
    target: NodeId,
    targets: Tensor,
) -> Result<Vec<(NodeId, Tensor)>> {
    if features.len() != feature_inputs.len() {
        return Err(Error::Dimension(format!(
            "model has {} members but {} feature tensors were supplied",
            feature_inputs.len(),
            features.len()
        )));
    }
    let mut feeds: Vec<(NodeId, Tensor)> = feature_inputs
        .iter()
        .zip(features)
        .map(|(&node, t)| (node, t.clone()))
        .collect();
    feeds.push((target, targets));
    Ok(feeds)
}

/// Mean loss and accuracy of `ids` in eval phase.
fn eval_loss_acc(
    head: &crate::model::HeadGraph,
    k: usize,
    source: &BatchSource,
    ids: &[String],
    opts: EvalOptions,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in ids.chunks(EVAL_BATCH) {
        let (features, labels) = source.batch(chunk)?;
        let feeds = feeds_for(
            &head.feature_inputs,
            &features,
            head.target,
            one_hot(&labels, k)?,
        )?;
        let eval =
            head.graph
                .forward_to(&[head.loss, head.output], &head.params, &feeds, opts, None)?;
        let loss = eval.value(head.loss)?.item()?;
        loss_sum += loss * labels.len() as f64;
        let probs = eval.value(head.output)?;
        correct += labels
            .iter()
            .enumerate()
            .filter(|(i, &label)| argmax(&probs.values()[i * k..(i + 1) * k]) == label)
            .count();
    }
    Ok((
        loss_sum / ids.len() as f64,
        correct as f64 / ids.len() as f64,
    ))
}

struct EpochStats {
    loss: f64,
    acc: f64,
}

/// One optimization epoch over `train_ids` against the given loss nodes.
/// Loss nodes beyond the first must belong to parameter-disjoint branches.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    graph: &crate::graph::Graph,
    params: &mut crate::params::ParameterStore,
    feature_inputs: &[NodeId],
    target: NodeId,
    output: NodeId,
    k: usize,
    source: &BatchSource,
    train_ids: &mut [String],
    losses: &[NodeId],
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
    shuffle_rng: &mut rand_chacha::ChaCha8Rng,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
    epoch: usize,
) -> Result<EpochStats> {
    use rand::seq::SliceRandom;
    train_ids.shuffle(shuffle_rng);
    let opts = EvalOptions {
        phase: Phase::Train,
        precision: cfg.precision(),
    };

    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    let mut seen = 0usize;
    for chunk in train_ids.chunks(cfg.batch_size) {
        let (features, labels) = source.batch(chunk)?;
        let feeds = feeds_for(feature_inputs, &features, target, one_hot(&labels, k)?)?;

        let mut forward_targets: Vec<NodeId> = losses.to_vec();
        forward_targets.push(output);
        let eval = graph
            .forward_to(&forward_targets, params, &feeds, opts, Some(dropout_rng))
            .map_err(|e| match e {
                Error::Numeric { message, .. } => Error::Numeric { epoch, message },
                other => other,
            })?;

        let mut batch_loss = 0.0;
        for &loss_node in losses {
            batch_loss += eval.value(loss_node)?.item()?;
        }
        batch_loss /= losses.len() as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Numeric {
                epoch,
                message: format!("loss became {batch_loss}"),
            });
        }

        let mut grads = graph.backward(params, &eval, losses[0])?;
        for &loss_node in &losses[1..] {
            let more = graph.backward(params, &eval, loss_node)?;
            grads.merge(more);
        }
        optimizer.step(params, &grads, cfg.precision())?;

        let probs = eval.value(output)?;
        loss_sum += batch_loss * labels.len() as f64;
        acc_sum += batch_accuracy(probs, &labels) * labels.len() as f64;
        seen += labels.len();
    }
    Ok(EpochStats {
        loss: loss_sum / seen as f64,
        acc: acc_sum / seen as f64,
    })
}

/// Train on the split's train partition, tracking validation after each
/// epoch. Deterministic per seed; dropout is active only in train phase.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    cache: Option<&FeatureCache>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.assert_members_frozen()?;
    let train_ids: Vec<String> = split.ids(Part::Train).to_vec();
    if train_ids.is_empty() {
        return Err(Error::Config("train partition is empty".into()));
    }
    let val_ids: Vec<String> = split.ids(Part::Val).to_vec();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome::default());
    }

    let k = model.num_classes();
    let source = BatchSource::new(&model.members, dataset, cache);
    let head = &mut model.head;
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let mut shuffle_rng = stream(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = stream(cfg.seed, streams::DROPOUT);
    let eval_opts = EvalOptions {
        phase: Phase::Eval,
        precision: cfg.precision(),
    };

    let mut outcome = TrainOutcome::default();
    let mut ids = train_ids;

    let stages: Vec<Vec<NodeId>> = match cfg.regime {
        TrainingRegime::Joint => vec![vec![head.loss]],
        TrainingRegime::Staged => {
            if head.branch_losses.is_empty() {
                return Err(Error::Config(
                    "staged training needs per-branch output layers; this topology has none".into(),
                ));
            }
            vec![head.branch_losses.clone(), vec![head.loss]]
        }
    };

    let mut epoch = 0usize;
    for (stage_idx, losses) in stages.iter().enumerate() {
        if cfg.regime == TrainingRegime::Staged {
            // Stage 0 trains branch parameters, stage 1 the combiner.
            let branch_frozen = stage_idx == 1;
            for &p in &head.branch_params {
                head.params.set_frozen(p, branch_frozen);
            }
            for &p in &head.combiner_params {
                head.params.set_frozen(p, !branch_frozen);
            }
        }
        for _ in 0..cfg.epochs {
            let started = Instant::now();
            let stats = run_epoch(
                &head.graph,
                &mut head.params,
                &head.feature_inputs,
                head.target,
                head.output,
                k,
                &source,
                &mut ids,
                losses,
                cfg,
                &mut optimizer,
                &mut shuffle_rng,
                &mut dropout_rng,
                epoch,
            )?;
            let (val_loss, val_acc) = if val_ids.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                eval_loss_acc(head, k, &source, &val_ids, eval_opts)?
            };
            outcome.curve.rows.push(CurveRow {
                epoch,
                train_loss: stats.loss,
                train_acc: stats.acc,
                val_loss,
                val_acc,
            });
            outcome
                .seconds_per_epoch
                .push(started.elapsed().as_secs_f64());
            epoch += 1;
        }
    }

    if cfg.regime == TrainingRegime::Staged {
        // Restore the architecture's freeze state.
        for &p in &head.branch_params {
            head.params.set_frozen(p, false);
        }
        for &p in &head.combiner_params {
            head.params.set_frozen(p, false);
        }
    }
    Ok(outcome)
}

/// Eval-phase predictions over `ids` at an arbitrary output node.
pub fn evaluate_node(
    model: &Model,
    dataset: &Dataset,
    ids: &[String],
    node: NodeId,
    positive_class: usize,
    cache: Option<&FeatureCache>,
) -> Result<(ConfusionMatrix, MetricsReport)> {
    if ids.is_empty() {
        return Err(Error::Contract("evaluation over an empty partition".into()));
    }
    let source = BatchSource::new(&model.members, dataset, cache);
    let k = model.num_classes();
    let mut cm = ConfusionMatrix::new(k)?;
    for chunk in ids.chunks(EVAL_BATCH) {
        let (features, labels) = source.batch(chunk)?;
        let feeds = model.feature_feeds(&features)?;
        let probs = model.head.graph.forward_value(
            node,
            &model.head.params,
            &feeds,
            EvalOptions::default(),
            None,
        )?;
        if probs.shape() != [labels.len(), k] {
            return Err(Error::Dimension(format!(
                "evaluation node produced shape {:?}, expected ({}, {k})",
                probs.shape(),
                labels.len()
            )));
        }
        for (i, &label) in labels.iter().enumerate() {
            cm.record(label, argmax(&probs.values()[i * k..(i + 1) * k]))?;
        }
    }
    let report = compute_metrics(&cm, positive_class)?;
    Ok((cm, report))
}

/// Eval-phase forward (no dropout), argmax predictions, full metric suite.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    ids: &[String],
    positive_class: usize,
    cache: Option<&FeatureCache>,
) -> Result<(ConfusionMatrix, MetricsReport)> {
    evaluate_node(
        model,
        dataset,
        ids,
        model.head.output,
        positive_class,
        cache,
    )
}
