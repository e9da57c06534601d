//! Monte Carlo cross-validation: repeated seeded splits, fresh models,
//! training, evaluation on every partition, and mean/std aggregation.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::data::augment::{augment_universe, augmented_train_ids};
use crate::data::{split_mccv, AugmentSpec, Dataset, Part, SplitSpec, DEFAULT_RATIOS};
use crate::error::{Error, Result};
use crate::model::Model;

use super::metrics::{ConfusionMatrix, MetricsReport};
use super::train::{
    evaluate, evaluate_node, train, FeatureCache, LearningCurve, TrainConfig, TrainingRegime,
};

#[derive(Debug, Clone)]
pub struct MccvConfig {
    pub repetitions: usize,
    pub base_seed: u64,
    pub ratios: [f64; 4],
    pub train: TrainConfig,
    pub positive_class: usize,
    /// Train-partition augmentation; validation and test stay untouched.
    pub augment: Option<AugmentSpec>,
    /// Worker threads for repetitions (each repetition stays sequential).
    pub threads: usize,
    /// Test hook: reuse the base seed's split in every repetition.
    pub fixed_split: bool,
}

impl Default for MccvConfig {
    fn default() -> Self {
        MccvConfig {
            repetitions: 10,
            base_seed: 0,
            ratios: DEFAULT_RATIOS,
            train: TrainConfig::default(),
            positive_class: 1,
            augment: None,
            threads: 1,
            fixed_split: false,
        }
    }
}

impl MccvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    /// Metric reports keyed by partition name (train/val/testA/testB).
    pub partitions: BTreeMap<String, MetricsReport>,
    pub confusion_test_b: ConfusionMatrix,
    pub curve: LearningCurve,
    pub seconds_per_epoch: Vec<f64>,
    /// Staged mode only: each branch output evaluated on test A.
    pub branch_test_a: Vec<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct MccvResult {
    pub model_name: String,
    pub trainable_params: usize,
    pub repetitions: Vec<RepetitionResult>,
}

pub const METRIC_NAMES: [&str; 6] = [
    "accuracy",
    "precision",
    "sensitivity",
    "f1",
    "specificity",
    "fdr",
];

pub fn metric_value(report: &MetricsReport, metric: &str) -> Option<f64> {
    match metric {
        "accuracy" => Some(report.accuracy),
        "precision" => report.precision,
        "sensitivity" => report.sensitivity,
        "f1" => report.f1,
        "specificity" => report.specificity,
        "fdr" => report.fdr,
        _ => None,
    }
}

impl MccvResult {
    /// Per-repetition values of one metric on one partition.
    pub fn metric_values(&self, part: Part, metric: &str) -> Vec<Option<f64>> {
        self.repetitions
            .iter()
            .map(|r| {
                r.partitions
                    .get(part.name())
                    .and_then(|m| metric_value(m, metric))
            })
            .collect()
    }

    /// Mean and sample standard deviation over repetitions where the metric
    /// is defined; std is None with fewer than two defined values.
    pub fn mean_std(&self, part: Part, metric: &str) -> (Option<f64>, Option<f64>) {
        mean_std(&self.metric_values(part, metric))
    }

    pub fn mean_seconds_per_epoch(&self) -> Option<f64> {
        let all: Vec<f64> = self
            .repetitions
            .iter()
            .flat_map(|r| r.seconds_per_epoch.iter().copied())
            .collect();
        if all.is_empty() {
            None
        } else {
            Some(all.iter().sum::<f64>() / all.len() as f64)
        }
    }
}

pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return (None, None);
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    let std = if defined.len() >= 2 {
        let var = defined.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (defined.len() - 1) as f64;
        Some(var.sqrt())
    } else {
        None
    };
    (Some(mean), std)
}

/// Builds a fresh model for a repetition seed.
pub type ModelFactory<'a> = Box<dyn Fn(u64) -> Result<Model> + Sync + 'a>;

/// One repetition of one model. Splitting always happens over the base
/// dataset; with augmentation enabled, training sees the train ids expanded
/// into `universe` (base plus transformed records).
fn run_repetition(
    factory: &ModelFactory,
    base: &Dataset,
    universe: &Dataset,
    cfg: &MccvConfig,
    cache: &FeatureCache,
    repetition: usize,
) -> Result<RepetitionResult> {
    let split_seed = if cfg.fixed_split {
        cfg.base_seed
    } else {
        cfg.base_seed + repetition as u64
    };
    let train_seed = cfg.base_seed + repetition as u64;
    let base_split = split_mccv(
        base,
        &SplitSpec {
            ratios: cfg.ratios,
            seed: split_seed,
        },
    )?;
    let split = match &cfg.augment {
        None => base_split,
        Some(spec) => {
            let mut expanded = base_split.clone();
            expanded.set_train_ids(augmented_train_ids(base_split.ids(Part::Train), spec));
            expanded
        }
    };
    let dataset = universe;

    let mut model = factory(train_seed)?;
    let mut train_cfg = cfg.train;
    train_cfg.seed = train_seed;
    let outcome = train(&mut model, dataset, &split, &train_cfg, Some(cache))?;

    let mut partitions = BTreeMap::new();
    let mut confusion_test_b = None;
    for part in Part::ALL {
        let ids = split.ids(part);
        let (cm, report) = evaluate(&model, dataset, ids, cfg.positive_class, Some(cache))?;
        if part == Part::TestB {
            confusion_test_b = Some(cm);
        }
        partitions.insert(part.name().to_string(), report);
    }

    let mut branch_test_a = Vec::new();
    if cfg.train.regime == TrainingRegime::Staged {
        for &node in &model.head.branch_outputs {
            let (_, report) = evaluate_node(
                &model,
                dataset,
                split.ids(Part::TestA),
                node,
                cfg.positive_class,
                Some(cache),
            )?;
            branch_test_a.push(report);
        }
    }

    Ok(RepetitionResult {
        repetition,
        split_seed,
        train_seed,
        partitions,
        confusion_test_b: confusion_test_b.expect("testB evaluated"),
        curve: outcome.curve,
        seconds_per_epoch: outcome.seconds_per_epoch,
        branch_test_a,
    })
}

/// Run MCCV for several models over shared per-repetition splits.
///
/// Every model sees the same split in a given repetition, so per-repetition
/// comparisons between models are paired. Repetitions fan out over
/// `cfg.threads` workers; results aggregate in repetition order.
pub fn run_mccv(
    models: &[(String, ModelFactory)],
    dataset: &Dataset,
    cfg: &MccvConfig,
) -> Result<Vec<MccvResult>> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no models to cross-validate".into()));
    }

    let universe = match &cfg.augment {
        None => None,
        Some(spec) => Some(augment_universe(dataset, spec)?),
    };
    let universe_ref = universe.as_ref().unwrap_or(dataset);

    // Shared frozen-feature cache, filled once up front.
    let mut cache = FeatureCache::new();
    let mut trainable = Vec::with_capacity(models.len());
    for (_, factory) in models {
        let probe = factory(cfg.base_seed)?;
        cache.populate(&probe, universe_ref)?;
        trainable.push(probe.trainable_params());
    }
    let cache = &cache;

    let threads = cfg.threads.max(1).min(cfg.repetitions);
    // slots[model][repetition]
    let slots: Vec<Mutex<Vec<Option<RepetitionResult>>>> = models
        .iter()
        .map(|_| Mutex::new(vec![None; cfg.repetitions]))
        .collect();
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for worker in 0..threads {
            let slots = &slots;
            let failure = &failure;
            scope.spawn(move || {
                let mut rep = worker;
                while rep < cfg.repetitions {
                    if failure.lock().expect("lock").is_some() {
                        return;
                    }
                    for (mi, (name, factory)) in models.iter().enumerate() {
                        match run_repetition(factory, dataset, universe_ref, cfg, cache, rep) {
                            Ok(result) => {
                                slots[mi].lock().expect("lock")[rep] = Some(result);
                            }
                            Err(e) => {
                                let mut slot = failure.lock().expect("lock");
                                if slot.is_none() {
                                    *slot = Some(Error::State(format!(
                                        "repetition {rep} of model '{name}' failed: {e}"
                                    )));
                                }
                                return;
                            }
                        }
                    }
                    rep += threads;
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }

    let mut out = Vec::with_capacity(models.len());
    for ((name, _), (slot, trainable_params)) in models.iter().zip(slots.into_iter().zip(trainable))
    {
        let reps: Vec<RepetitionResult> = slot
            .into_inner()
            .expect("lock")
            .into_iter()
            .map(|r| r.expect("all repetitions completed"))
            .collect();
        out.push(MccvResult {
            model_name: name.clone(),
            trainable_params,
            repetitions: reps,
        });
    }
    Ok(out)
}
