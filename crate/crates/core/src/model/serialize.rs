//! Model persistence: a versioned JSON document describing the topology plus
//! a side-car binary of little-endian f64 parameter values. Loading rebuilds
//! the graphs through the ordinary builders and overwrites every parameter
//! from the blob, so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

use super::builder::{build_single_model, build_toy_backbone, wrap_feature_table, ToyConvConfig};
use super::ensemble::{build_ensemble, EnsembleSpec};
use super::{ExtractorSource, ExtractorSpec, HeadSpec, Model, ModelKind};

pub const MODEL_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum KindDoc {
    Single,
    Ensemble { spec: EnsembleSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamRecord {
    owner: String,
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    version: u32,
    name: String,
    seed: u64,
    head: HeadSpec,
    kind: KindDoc,
    members: Vec<ExtractorSpec>,
    params: Vec<ParamRecord>,
}

fn push_params(
    owner: &str,
    store: &ParameterStore,
    records: &mut Vec<ParamRecord>,
    blob: &mut Vec<u8>,
) {
    for (_, entry) in store.iter() {
        let offset = blob.len();
        for v in entry.tensor.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        records.push(ParamRecord {
            owner: owner.to_string(),
            name: entry.name.clone(),
            shape: entry.tensor.shape().to_vec(),
            frozen: entry.frozen,
            offset,
            len: entry.tensor.len(),
        });
    }
}

/// Serialize to (JSON document, parameter blob).
pub fn encode_model(model: &Model) -> Result<(String, Vec<u8>)> {
    let mut records = Vec::new();
    let mut blob = Vec::new();
    for m in &model.members {
        if let Some(params) = m.params() {
            push_params(
                &format!("member:{}", m.spec.id),
                params,
                &mut records,
                &mut blob,
            );
        }
    }
    push_params("head", &model.head.params, &mut records, &mut blob);

    let doc = ModelDoc {
        version: MODEL_DOC_VERSION,
        name: model.name.clone(),
        seed: model.seed,
        head: model.head_spec,
        kind: match &model.kind {
            ModelKind::Single => KindDoc::Single,
            ModelKind::Ensemble(spec) => KindDoc::Ensemble { spec: spec.clone() },
        },
        members: model.members.iter().map(|m| m.spec.clone()).collect(),
        params: records,
    };
    Ok((serde_json::to_string_pretty(&doc)?, blob))
}

pub fn save_model(model: &Model, json_path: &Path, params_path: &Path) -> Result<()> {
    let (json, blob) = encode_model(model)?;
    std::fs::write(json_path, json)?;
    std::fs::write(params_path, blob)?;
    Ok(())
}

fn overwrite_params(
    owner: &str,
    store: &mut ParameterStore,
    records: &[ParamRecord],
    blob: &[u8],
) -> Result<()> {
    let mut by_name: BTreeMap<&str, &ParamRecord> = records
        .iter()
        .filter(|r| r.owner == owner)
        .map(|r| (r.name.as_str(), r))
        .collect();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, shape) = {
            let entry = store.get(id)?;
            (entry.name.clone(), entry.tensor.shape().to_vec())
        };
        let record = by_name.remove(name.as_str()).ok_or_else(|| {
            Error::Data(format!(
                "model document is missing parameter '{owner}/{name}'"
            ))
        })?;
        if record.shape != shape {
            return Err(Error::Data(format!(
                "parameter '{owner}/{name}' has shape {:?} in the document but {shape:?} in the rebuilt graph",
                record.shape
            )));
        }
        let end = record
            .offset
            .checked_add(record.len.checked_mul(8).ok_or_else(|| {
                Error::Data(format!("parameter '{owner}/{name}' length overflows"))
            })?)
            .ok_or_else(|| Error::Data(format!("parameter '{owner}/{name}' offset overflows")))?;
        if end > blob.len() {
            return Err(Error::Data(format!(
                "parameter '{owner}/{name}' extends to byte {end} but the blob has {}",
                blob.len()
            )));
        }
        let values: Vec<f64> = blob[record.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = Tensor::new(shape, values)?;
        *store.tensor_mut(id)? = tensor;
        store.set_frozen(id, record.frozen);
    }
    if let Some((name, _)) = by_name.into_iter().next() {
        return Err(Error::Data(format!(
            "model document has extra parameter '{owner}/{name}'"
        )));
    }
    Ok(())
}

/// Rebuild a model from its JSON document and parameter blob. Table-backed
/// members are resolved through `tables`, keyed by backbone id.
pub fn decode_model(
    json: &str,
    blob: &[u8],
    tables: &BTreeMap<String, Arc<FeatureTable>>,
) -> Result<Model> {
    let doc: ModelDoc = serde_json::from_str(json)?;
    if doc.version != MODEL_DOC_VERSION {
        return Err(Error::Data(format!(
            "unsupported model document version {}",
            doc.version
        )));
    }
    // Cheap consistency gates before any graph is rebuilt: the declared
    // parameter bytes must tile the blob exactly.
    let mut declared: usize = 0;
    for r in &doc.params {
        declared = r
            .len
            .checked_mul(8)
            .and_then(|b| declared.checked_add(b))
            .ok_or_else(|| Error::Data("parameter sizes overflow".into()))?;
    }
    if declared != blob.len() {
        return Err(Error::Data(format!(
            "parameter records declare {declared} bytes but the blob has {}",
            blob.len()
        )));
    }
    if doc.members.len() > super::ensemble::MAX_MEMBERS {
        return Err(Error::Data(format!(
            "{} members exceed the limit {}",
            doc.members.len(),
            super::ensemble::MAX_MEMBERS
        )));
    }

    let mut members = Vec::with_capacity(doc.members.len());
    for spec in &doc.members {
        let extractor = match &spec.source {
            ExtractorSource::ToyConv {
                channels,
                kernel,
                pool,
                in_channels,
                in_height,
                in_width,
                seed,
            } => build_toy_backbone(&ToyConvConfig {
                id: spec.id.clone(),
                channels: channels.clone(),
                kernel: *kernel,
                pool: *pool,
                in_channels: *in_channels,
                in_height: *in_height,
                in_width: *in_width,
                seed: *seed,
            })?,
            ExtractorSource::FeatureTable { backbone_id } => {
                let table = tables.get(backbone_id).ok_or_else(|| {
                    Error::Lookup(format!(
                        "member '{}' needs feature table '{backbone_id}', which was not supplied",
                        spec.id
                    ))
                })?;
                if table.dim != spec.output_dim {
                    return Err(Error::Data(format!(
                        "feature table '{backbone_id}' has dim {}, model expects {}",
                        table.dim, spec.output_dim
                    )));
                }
                wrap_feature_table(table.clone(), spec.id.clone())
            }
        };
        if extractor.spec.output_dim != spec.output_dim {
            return Err(Error::Data(format!(
                "member '{}' rebuilt with dim {}, document says {}",
                spec.id, extractor.spec.output_dim, spec.output_dim
            )));
        }
        members.push(extractor);
    }

    let mut model = match doc.kind {
        KindDoc::Single => {
            let member = members
                .into_iter()
                .next()
                .ok_or_else(|| Error::Data("single model document has no member".into()))?;
            build_single_model(member, &doc.head, doc.seed, doc.name.clone())?
        }
        KindDoc::Ensemble { spec } => build_ensemble(members, spec, doc.seed, doc.name.clone())?,
    };

    for m in &mut model.members {
        let owner = format!("member:{}", m.spec.id);
        if let Some(params) = m.params_mut() {
            overwrite_params(&owner, params, &doc.params, blob)?;
        }
    }
    overwrite_params("head", &mut model.head.params, &doc.params, blob)?;
    Ok(model)
}

pub fn load_model(
    json_path: &Path,
    params_path: &Path,
    tables: &BTreeMap<String, Arc<FeatureTable>>,
) -> Result<Model> {
    let json = std::fs::read_to_string(json_path)?;
    let blob = std::fs::read(params_path)?;
    decode_model(&json, &blob, tables)
}
