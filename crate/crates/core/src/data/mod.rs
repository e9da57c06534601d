//! Dataset ingestion, preprocessing, splits, and feature tables.

pub mod augment;
pub mod image;
pub mod split;
pub mod synthetic;
pub mod table;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment_records, augment_universe, augmented_train_ids, AugmentSpec};
pub use image::{load_image_tree, normalize_pixels, resize_bilinear, resize_record};
pub use split::{part_sizes, split_mccv, DatasetSplit, Part, SplitSpec, DEFAULT_RATIOS};
pub use synthetic::{make_synthetic, PatternKind, SyntheticConfig};
pub use table::{
    encode_medf, parse_feature_csv, parse_medf, read_feature_table, read_feature_table_csv,
    write_feature_table, FeatureTable,
};

/// One labeled sample. `pixels` is `(channels, H, W)` with values in [0, 1];
/// it is absent for samples whose features come from an external table.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub id: String,
    pub label: usize,
    pub pixels: Option<Tensor>,
    pub origin: String,
}

impl ImageRecord {
    pub fn pixels(&self) -> Result<&Tensor> {
        self.pixels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sample '{}' carries no pixel data", self.id)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>, class_names: Vec<String>) -> Self {
        Dataset {
            records,
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-class record counts, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for r in &self.records {
            if r.label < counts.len() {
                counts[r.label] += 1;
            }
        }
        counts
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn validate_labels(&self) -> Result<()> {
        let k = self.num_classes();
        for r in &self.records {
            if r.label >= k {
                return Err(Error::Data(format!(
                    "sample '{}' has label {} but dataset declares {} classes",
                    r.id, r.label, k
                )));
            }
        }
        Ok(())
    }

    /// Dataset whose class labels come from feature tables (no pixels).
    pub fn from_tables(tables: &[&FeatureTable]) -> Result<Dataset> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Config("no feature tables supplied".into()))?;
        for t in &tables[1..] {
            if t.ids() != first.ids() {
                return Err(Error::Data(format!(
                    "feature tables '{}' and '{}' cover different sample ids",
                    first.backbone_id, t.backbone_id
                )));
            }
            for id in t.ids() {
                if t.label(id) != first.label(id) {
                    return Err(Error::Data(format!(
                        "tables disagree on the label of sample '{id}'"
                    )));
                }
            }
        }
        let records = first
            .ids()
            .iter()
            .map(|id| ImageRecord {
                id: id.clone(),
                label: first.label(id).expect("id from table") as usize,
                pixels: None,
                origin: format!("table:{}", first.backbone_id),
            })
            .collect();
        let k = first.num_classes as usize;
        let class_names = (0..k).map(|c| format!("class{c}")).collect();
        Ok(Dataset::new(records, class_names))
    }
}

/// Down-sample every class to the minority-class count, seeded and without
/// replacement. Classes already at the minimum keep their membership.
pub fn balance_classes(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    use rand::Rng;
    if dataset.num_classes() < 2 {
        return Err(Error::Data(
            "class balancing needs at least two classes".into(),
        ));
    }
    let counts = dataset.class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class '{}' has no samples",
            dataset.class_names[empty]
        )));
    }
    let target = *counts.iter().min().expect("non-empty");

    let mut rng = crate::rng::stream(seed, crate::rng::streams::BALANCE);
    let mut keep = vec![true; dataset.len()];
    for (class, &count) in counts.iter().enumerate() {
        if count == target {
            continue;
        }
        // Partial Fisher-Yates over this class's record indices.
        let mut indices: Vec<usize> = dataset
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class)
            .map(|(i, _)| i)
            .collect();
        for i in 0..target {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        for &drop in &indices[target..] {
            keep[drop] = false;
        }
    }
    let records = dataset
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(Dataset::new(records, dataset.class_names.clone()))
}
