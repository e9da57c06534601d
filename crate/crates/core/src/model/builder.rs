//! Constructors for extractors and the single modified classifier.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::conv2d_output_size;
use crate::params::ParameterStore;
use crate::rng::{stream, streams};

use super::{
    Extractor, ExtractorKind, ExtractorSource, ExtractorSpec, HeadGraph, HeadSpec, Model, ModelKind,
};

/// Toy frozen backbone: conv -> ReLU -> maxpool per channel entry, applied to
/// `(in_channels, in_height, in_width)` images. Convolutions are stride 1
/// with same-padding (kernel/2); pooling uses `pool` for both window and
/// stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConvConfig {
    pub id: String,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub seed: u64,
}

fn default_in_channels() -> usize {
    1
}

/// Upper bound on one backbone's parameter scalars; configurations beyond
/// this are rejected rather than allocated (model documents are untrusted).
pub const MAX_BACKBONE_SCALARS: usize = 1 << 22;
/// Upper bound on input pixels per image.
pub const MAX_INPUT_PIXELS: usize = 1 << 24;

/// Randomly initialized then frozen; deterministic per seed.
pub fn build_toy_backbone(config: &ToyConvConfig) -> Result<Extractor> {
    if config.channels.is_empty() {
        return Err(Error::Config(format!(
            "backbone '{}' needs at least one conv block",
            config.id
        )));
    }
    if config.kernel == 0 || config.pool == 0 || config.in_channels == 0 {
        return Err(Error::Config(format!(
            "backbone '{}' has zero-sized kernel, pool, or channel count",
            config.id
        )));
    }
    let pixels = config
        .in_channels
        .checked_mul(config.in_height)
        .and_then(|p| p.checked_mul(config.in_width));
    match pixels {
        Some(p) if p <= MAX_INPUT_PIXELS => {}
        _ => {
            return Err(Error::Config(format!(
                "backbone '{}' input exceeds {MAX_INPUT_PIXELS} pixels",
                config.id
            )))
        }
    }
    let mut scalars: usize = 0;
    let mut fan = config.in_channels;
    for &c_out in &config.channels {
        let block = c_out
            .checked_mul(fan)
            .and_then(|v| v.checked_mul(config.kernel * config.kernel));
        scalars = match block.and_then(|b| scalars.checked_add(b)) {
            Some(s) if s <= MAX_BACKBONE_SCALARS => s,
            _ => {
                return Err(Error::Config(format!(
                    "backbone '{}' exceeds {MAX_BACKBONE_SCALARS} parameter scalars",
                    config.id
                )))
            }
        };
        fan = c_out;
    }
    let padding = config.kernel / 2;
    let mut rng = stream(config.seed, streams::INIT);
    let mut graph = Graph::new();
    let mut params = ParameterStore::new();
    let input = graph.input("image");

    let mut x = input;
    let mut c = config.in_channels;
    let (mut h, mut w) = (config.in_height, config.in_width);
    for (block, &c_out) in config.channels.iter().enumerate() {
        let kernel = params.init_conv(
            &format!("{}.block{}.conv", config.id, block),
            c_out,
            c,
            config.kernel,
            &mut rng,
        );
        let kn = graph.param(kernel);
        x = graph.conv2d(x, kn, 1, padding)?;
        x = graph.relu(x);
        h = conv2d_output_size(h, config.kernel, 1, padding)
            .map_err(|e| Error::Config(format!("backbone '{}' block {block}: {e}", config.id)))?;
        w = conv2d_output_size(w, config.kernel, 1, padding)
            .map_err(|e| Error::Config(format!("backbone '{}' block {block}: {e}", config.id)))?;
        if h < config.pool || w < config.pool {
            return Err(Error::Config(format!(
                "backbone '{}' block {block}: {h}x{w} feature map is smaller than pool {}",
                config.id, config.pool
            )));
        }
        x = graph.maxpool2d(x, config.pool, config.pool)?;
        h = (h - config.pool) / config.pool + 1;
        w = (w - config.pool) / config.pool + 1;
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "backbone '{}' block {block}: pooled size reached zero",
                config.id
            )));
        }
        c = c_out;
    }
    params.freeze_all();

    let output_dim = c * h * w;
    Ok(Extractor {
        spec: ExtractorSpec {
            id: config.id.clone(),
            source: ExtractorSource::ToyConv {
                channels: config.channels.clone(),
                kernel: config.kernel,
                pool: config.pool,
                in_channels: config.in_channels,
                in_height: config.in_height,
                in_width: config.in_width,
                seed: config.seed,
            },
            output_dim,
            frozen: true,
        },
        kind: ExtractorKind::Conv {
            graph,
            params,
            input,
            output: x,
        },
    })
}

/// Extractor whose forward pass is a row lookup in a precomputed table.
pub fn wrap_feature_table(table: Arc<FeatureTable>, id: impl Into<String>) -> Extractor {
    let id = id.into();
    Extractor {
        spec: ExtractorSpec {
            id,
            source: ExtractorSource::FeatureTable {
                backbone_id: table.backbone_id.clone(),
            },
            output_dim: table.dim,
            frozen: true,
        },
        kind: ExtractorKind::Table(table),
    }
}

/// The modified classifier: frozen extractor, then
/// flatten -> dense(fc_width) -> ReLU -> dropout -> dense(k) -> softmax.
/// Only the head parameters are trainable.
pub fn build_single_model(
    extractor: Extractor,
    head: &HeadSpec,
    seed: u64,
    name: impl Into<String>,
) -> Result<Model> {
    head.validate()?;
    if !extractor.spec.frozen {
        return Err(Error::State(format!(
            "extractor '{}' must be finalized (frozen) before use",
            extractor.spec.id
        )));
    }
    let mut rng = stream(seed, streams::INIT);
    let mut graph = Graph::new();
    let mut params = ParameterStore::new();

    let features = graph.input(format!("features:{}", extractor.spec.id));
    let flat = graph.flatten(features);
    let mut branch_params = Vec::new();
    let mut x = flat;
    let mut in_dim = extractor.output_dim();
    for depth in 0..head.fc_depth {
        let name = format!("head.fc{depth}");
        super::check_dense_size(&name, in_dim, head.fc_width)?;
        let (w, b) = params.init_dense(&name, in_dim, head.fc_width, true, &mut rng);
        let wn = graph.param(w);
        let bn = graph.param(b);
        let hidden = graph.dense(x, wn, bn);
        let act = graph.relu(hidden);
        x = graph.dropout(act, head.dropout_rate)?;
        branch_params.extend([w, b]);
        in_dim = head.fc_width;
    }
    let (w2, b2) = params.init_dense("head.out", head.fc_width, head.num_classes, false, &mut rng);
    let w2n = graph.param(w2);
    let b2n = graph.param(b2);
    let logits = graph.dense(x, w2n, b2n);
    let output = graph.softmax(logits, 1);
    let target = graph.input("target");
    let loss = graph.cross_entropy(output, target);

    let head_graph = HeadGraph {
        graph,
        params,
        feature_inputs: vec![features],
        target,
        output,
        loss,
        branch_outputs: Vec::new(),
        branch_losses: Vec::new(),
        branch_params,
        combiner_params: vec![w2, b2],
    };
    Ok(Model {
        name: name.into(),
        members: vec![extractor],
        head: head_graph,
        head_spec: *head,
        kind: ModelKind::Single,
        seed,
    })
}
