//! The JSON run configuration.
//!
//! One document drives every subcommand: dataset source and preprocessing,
//! model topology and members, training hyperparameters, and the MCCV
//! section. Validation errors name the offending JSON path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use mednc_core::data::{
    augment_universe, balance_classes, load_image_tree, make_synthetic, read_feature_table,
    read_feature_table_csv, resize_record, AugmentSpec, Dataset, FeatureTable, PatternKind,
    SyntheticConfig, DEFAULT_RATIOS,
};
use mednc_core::error::{Error, Result};
use mednc_core::eval::{MccvConfig, TrainConfig, TrainingRegime};
use mednc_core::model::{
    build_ensemble, build_single_model, build_toy_backbone, wrap_feature_table, CombineSignal,
    EnsembleSpec, GroupingTree, HeadSpec, Model, Topology, ToyConvConfig,
};
use mednc_core::optim::{Algorithm, OptimizerConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        per_class: usize,
        height: usize,
        width: usize,
        pattern: PatternKind,
        noise: f64,
    },
    Directory {
        path: PathBuf,
        /// Coerce images to this channel count (1 or 3).
        #[serde(default)]
        channels: Option<usize>,
    },
    FeatureTables {
        tables: Vec<TableRef>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRef {
    pub backbone_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default = "default_true")]
    pub balance: bool,
    /// Target (height, width) for bilinear resizing; None keeps sizes.
    #[serde(default)]
    pub resize: Option<(usize, usize)>,
    #[serde(default)]
    pub augment: Option<AugmentSpec>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MemberConfig {
    ToyConv {
        id: String,
        channels: Vec<usize>,
        kernel: usize,
        pool: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    FeatureTable {
        id: String,
        backbone_id: String,
    },
}

impl MemberConfig {
    pub fn id(&self) -> &str {
        match self {
            MemberConfig::ToyConv { id, .. } => id,
            MemberConfig::FeatureTable { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKindConfig {
    Single,
    Ffc,
    Fco,
    Fo,
    Ffco,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKindConfig,
    pub members: Vec<MemberConfig>,
    #[serde(default = "default_fc_width")]
    pub fc_width: usize,
    #[serde(default = "default_fc_depth")]
    pub fc_depth: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub combine_signal: CombineSignal,
    /// Explicit grouping tree; None groups sorted members in pairs.
    #[serde(default)]
    pub grouping: Option<GroupingTree>,
}

fn default_fc_width() -> usize {
    128
}

fn default_fc_depth() -> usize {
    1
}

fn default_dropout() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub regime: TrainingRegime,
    #[serde(default)]
    pub f32_mode: bool,
}

fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    32
}
fn default_algorithm() -> Algorithm {
    Algorithm::Adam
}
fn default_lr() -> f64 {
    1e-3
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: default_epochs(),
            batch_size: default_batch(),
            algorithm: default_algorithm(),
            lr: default_lr(),
            betas: default_betas(),
            eps: default_eps(),
            regime: TrainingRegime::Joint,
            f32_mode: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MccvSection {
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 4],
    #[serde(default = "default_positive")]
    pub positive_class: usize,
}

fn default_repetitions() -> usize {
    10
}
fn default_ratios() -> [f64; 4] {
    DEFAULT_RATIOS
}
fn default_positive() -> usize {
    1
}

impl Default for MccvSection {
    fn default() -> Self {
        MccvSection {
            repetitions: default_repetitions(),
            base_seed: None,
            ratios: default_ratios(),
            positive_class: default_positive(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub mccv: MccvSection,
}

fn default_run_id() -> String {
    "run".to_string()
}
fn default_seed() -> u64 {
    42
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "desk-demo".into(),
            seed: default_seed(),
            output_dir: default_output_dir(),
            dataset: DatasetConfig {
                source: DatasetSource::Synthetic {
                    classes: 2,
                    per_class: 400,
                    height: 32,
                    width: 32,
                    pattern: PatternKind::GaussianBlob,
                    noise: 0.35,
                },
                balance: true,
                resize: None,
                augment: None,
            },
            model: ModelConfig {
                kind: ModelKindConfig::Single,
                members: vec![MemberConfig::ToyConv {
                    id: "toy0".into(),
                    channels: vec![4, 8],
                    kernel: 3,
                    pool: 2,
                    seed: None,
                }],
                fc_width: default_fc_width(),
                fc_depth: default_fc_depth(),
                dropout: default_dropout(),
                combine_signal: CombineSignal::Probabilities,
                grouping: None,
            },
            training: TrainingSection::default(),
            mccv: MccvSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read '{}': {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// The published experimental settings: 224x224 inputs, dropout 0.5,
    /// 10 repetitions, 60/20/10/10 ratios.
    pub fn apply_paper_mode(&mut self) {
        self.dataset.resize = Some((224, 224));
        self.model.dropout = 0.5;
        self.mccv.repetitions = 10;
        self.mccv.ratios = DEFAULT_RATIOS;
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "run_id: '{}' must be a non-empty path-free name",
                self.run_id
            )));
        }
        match &self.dataset.source {
            DatasetSource::Synthetic {
                classes,
                per_class,
                height,
                width,
                noise,
                ..
            } => {
                if *classes < 2 {
                    return Err(Error::Config(format!(
                        "dataset.source.classes: needs at least 2, got {classes}"
                    )));
                }
                if *per_class == 0 || *height == 0 || *width == 0 {
                    return Err(Error::Config(
                        "dataset.source: per_class, height, width must be positive".into(),
                    ));
                }
                if *noise < 0.0 {
                    return Err(Error::Config(format!(
                        "dataset.source.noise: must be non-negative, got {noise}"
                    )));
                }
            }
            DatasetSource::Directory { channels, .. } => {
                if let Some(c) = channels {
                    if !matches!(c, 1 | 3) {
                        return Err(Error::Config(format!(
                            "dataset.source.channels: must be 1 or 3, got {c}"
                        )));
                    }
                }
            }
            DatasetSource::FeatureTables { tables } => {
                if tables.is_empty() {
                    return Err(Error::Config(
                        "dataset.source.tables: at least one table is required".into(),
                    ));
                }
                if self.dataset.augment.is_some() {
                    return Err(Error::Config(
                        "dataset.augment: table-backed samples carry no pixels to transform".into(),
                    ));
                }
                if self.dataset.resize.is_some() {
                    return Err(Error::Config(
                        "dataset.resize: table-backed samples carry no pixels to resize".into(),
                    ));
                }
            }
        }
        if let Some((h, w)) = self.dataset.resize {
            if h == 0 || w == 0 {
                return Err(Error::Config(
                    "dataset.resize: target must be at least 1x1".into(),
                ));
            }
        }
        if let Some(augment) = &self.dataset.augment {
            augment
                .validate()
                .map_err(|e| Error::Config(format!("dataset.augment: {e}")))?;
        }

        if self.model.members.is_empty() {
            return Err(Error::Config("model.members: at least one member".into()));
        }
        let mut ids: Vec<&str> = self.model.members.iter().map(|m| m.id()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.model.members.len() {
            return Err(Error::Config("model.members: duplicate member ids".into()));
        }
        if self.model.kind == ModelKindConfig::Single && self.model.members.len() != 1 {
            return Err(Error::Config(format!(
                "model.members: a single model takes exactly one member, got {}",
                self.model.members.len()
            )));
        }
        if self.model.fc_width == 0 {
            return Err(Error::Config("model.fc_width: must be at least 1".into()));
        }
        if !(1..=8).contains(&self.model.fc_depth) {
            return Err(Error::Config(format!(
                "model.fc_depth: {} outside 1..=8",
                self.model.fc_depth
            )));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "model.dropout: {} outside [0, 1)",
                self.model.dropout
            )));
        }
        for m in &self.model.members {
            if let MemberConfig::ToyConv {
                id,
                channels,
                kernel,
                pool,
                ..
            } = m
            {
                if channels.is_empty() {
                    return Err(Error::Config(format!(
                        "model.members[{id}].channels: at least one conv block"
                    )));
                }
                if *kernel == 0 || *pool == 0 {
                    return Err(Error::Config(format!(
                        "model.members[{id}]: kernel and pool must be positive"
                    )));
                }
            }
            if let MemberConfig::FeatureTable { id, backbone_id } = m {
                let known = matches!(&self.dataset.source, DatasetSource::FeatureTables { tables }
                    if tables.iter().any(|t| &t.backbone_id == backbone_id));
                if !known {
                    return Err(Error::Config(format!(
                        "model.members[{id}].backbone_id: '{backbone_id}' is not among dataset.source.tables"
                    )));
                }
            }
        }

        if self.training.epochs == 0 {
            // Allowed (prepare-style dry runs) but batch size still matters.
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config(
                "training.batch_size: must be positive".into(),
            ));
        }
        if self.training.lr <= 0.0 {
            return Err(Error::Config(format!(
                "training.lr: must be positive, got {}",
                self.training.lr
            )));
        }

        if self.mccv.repetitions == 0 {
            return Err(Error::Config("mccv.repetitions: must be at least 1".into()));
        }
        let ratio_sum: f64 = self.mccv.ratios.iter().sum();
        if (ratio_sum - 1.0).abs() > 1e-9 || self.mccv.ratios.iter().any(|&r| r <= 0.0) {
            return Err(Error::Config(format!(
                "mccv.ratios: must be positive and sum to 1, got {:?}",
                self.mccv.ratios
            )));
        }
        if self.mccv.positive_class > 1 {
            // Only meaningful for k = 2; range-checked against k at build.
        }
        Ok(())
    }

    pub fn base_seed(&self) -> u64 {
        self.mccv.base_seed.unwrap_or(self.seed)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            algorithm: self.training.algorithm,
            lr: self.training.lr,
            betas: self.training.betas,
            eps: self.training.eps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer: self.optimizer_config(),
            seed: self.seed,
            regime: self.training.regime,
            f32_mode: self.training.f32_mode,
        }
    }

    pub fn mccv_config(&self, threads: usize) -> MccvConfig {
        MccvConfig {
            repetitions: self.mccv.repetitions,
            base_seed: self.base_seed(),
            ratios: self.mccv.ratios,
            train: self.train_config(),
            positive_class: self.mccv.positive_class,
            augment: self.dataset.augment.clone(),
            threads,
            fixed_split: false,
        }
    }
}

/// Tables loaded for a run, keyed by backbone id.
pub type TableRegistry = BTreeMap<String, Arc<FeatureTable>>;

/// A dataset prepared for training: base records (split domain), the
/// augmentation universe, and any loaded feature tables.
pub struct PreparedData {
    pub base: Dataset,
    pub universe: Dataset,
    pub tables: TableRegistry,
}

pub fn load_tables(refs: &[TableRef]) -> Result<TableRegistry> {
    let mut registry = TableRegistry::new();
    for r in refs {
        let is_csv = r
            .path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("csv"))
            .unwrap_or(false);
        let table = if is_csv {
            read_feature_table_csv(&r.path, &r.backbone_id)?
        } else {
            read_feature_table(&r.path, &r.backbone_id)?
        };
        if registry
            .insert(r.backbone_id.clone(), Arc::new(table))
            .is_some()
        {
            return Err(Error::Config(format!(
                "dataset.source.tables: duplicate backbone_id '{}'",
                r.backbone_id
            )));
        }
    }
    Ok(registry)
}

/// Ingest or generate, resize, balance, and build the augmentation universe.
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    let (mut dataset, tables) = match &config.dataset.source {
        DatasetSource::Synthetic {
            classes,
            per_class,
            height,
            width,
            pattern,
            noise,
        } => (
            make_synthetic(&SyntheticConfig {
                classes: *classes,
                per_class: *per_class,
                height: *height,
                width: *width,
                pattern: *pattern,
                noise: *noise,
                seed: config.seed,
            })?,
            TableRegistry::new(),
        ),
        DatasetSource::Directory { path, channels } => {
            (load_image_tree(path, *channels)?, TableRegistry::new())
        }
        DatasetSource::FeatureTables { tables } => {
            let registry = load_tables(tables)?;
            let refs: Vec<&FeatureTable> = registry.values().map(|t| t.as_ref()).collect();
            (Dataset::from_tables(&refs)?, registry)
        }
    };

    if let Some((h, w)) = config.dataset.resize {
        let records = dataset
            .records
            .iter()
            .map(|r| resize_record(r, h, w))
            .collect::<Result<Vec<_>>>()?;
        dataset = Dataset::new(records, dataset.class_names.clone());
    }
    if config.dataset.balance {
        dataset = balance_classes(&dataset, config.seed)?;
    }
    let universe = match &config.dataset.augment {
        None => dataset.clone(),
        Some(spec) => augment_universe(&dataset, spec)?,
    };
    Ok(PreparedData {
        base: dataset,
        universe,
        tables,
    })
}

/// Shape of the images feeding toy backbones (post-resize).
fn image_shape(dataset: &Dataset) -> Result<(usize, usize, usize)> {
    let record = dataset
        .records
        .iter()
        .find(|r| r.pixels.is_some())
        .ok_or_else(|| {
            Error::Config("model.members: toy_conv members need pixel data, not tables".into())
        })?;
    let shape = record.pixels()?.shape();
    Ok((shape[0], shape[1], shape[2]))
}

/// Build the configured model against a prepared dataset.
pub fn build_model(config: &RunConfig, data: &PreparedData, seed: u64) -> Result<Model> {
    let k = data.base.num_classes();
    if k < 2 {
        return Err(Error::Config(format!(
            "dataset: needs at least 2 classes, found {k}"
        )));
    }
    let head = HeadSpec {
        fc_width: config.model.fc_width,
        dropout_rate: config.model.dropout,
        num_classes: k,
        fc_depth: config.model.fc_depth,
    };

    let mut members = Vec::with_capacity(config.model.members.len());
    for (index, member) in config.model.members.iter().enumerate() {
        let extractor = match member {
            MemberConfig::ToyConv {
                id,
                channels,
                kernel,
                pool,
                seed: member_seed,
            } => {
                let (c, h, w) = image_shape(&data.base)?;
                build_toy_backbone(&ToyConvConfig {
                    id: id.clone(),
                    channels: channels.clone(),
                    kernel: *kernel,
                    pool: *pool,
                    in_channels: c,
                    in_height: h,
                    in_width: w,
                    seed: member_seed.unwrap_or(index as u64),
                })?
            }
            MemberConfig::FeatureTable { id, backbone_id } => {
                let table = data.tables.get(backbone_id).ok_or_else(|| {
                    Error::Config(format!(
                        "model.members[{id}].backbone_id: table '{backbone_id}' not loaded"
                    ))
                })?;
                wrap_feature_table(table.clone(), id.clone())
            }
        };
        members.push(extractor);
    }

    let name = format!(
        "{}-{}",
        match config.model.kind {
            ModelKindConfig::Single => "single",
            ModelKindConfig::Ffc => "ffc",
            ModelKindConfig::Fco => "fco",
            ModelKindConfig::Fo => "fo",
            ModelKindConfig::Ffco => "ffco",
        },
        config.run_id
    );

    match config.model.kind {
        ModelKindConfig::Single => {
            let member = members.into_iter().next().expect("validated");
            build_single_model(member, &head, seed, name)
        }
        kind => {
            let topology = match kind {
                ModelKindConfig::Ffc => Topology::Ffc,
                ModelKindConfig::Fco => Topology::Fco,
                ModelKindConfig::Fo => Topology::Fo,
                ModelKindConfig::Ffco => Topology::Ffco,
                ModelKindConfig::Single => unreachable!(),
            };
            let grouping = match &config.model.grouping {
                Some(g) => g.clone(),
                None => {
                    let ids: Vec<String> = members.iter().map(|m| m.spec.id.clone()).collect();
                    GroupingTree::default_pairs(&ids, topology.levels())
                        .map_err(|e| Error::Config(format!("model.grouping: {e}")))?
                }
            };
            let spec = EnsembleSpec {
                topology,
                grouping,
                head,
                combine_signal: config.model.combine_signal,
            };
            build_ensemble(members, spec, seed, name)
        }
    }
}
