//! Seeded train/validation/testA/testB partitions.
//!
//! Part sizes follow the floor-remainder rule: floor(N * ratio) for train,
//! validation, and test A; everything left goes to test B. Within that fixed
//! total, samples are assigned stratified: each part's class composition
//! tracks the remaining pool's proportions by largest remainder, so the
//! count of class c in part p stays within one sample of
//! `size_p * n_c / N`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, streams};

use super::Dataset;

pub const DEFAULT_RATIOS: [f64; 4] = [0.6, 0.2, 0.1, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Part {
    Train,
    Val,
    TestA,
    TestB,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Train, Part::Val, Part::TestA, Part::TestB];

    pub fn name(&self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::TestA => "testA",
            Part::TestB => "testB",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 4],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            ratios: DEFAULT_RATIOS,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.ratios {
            if r <= 0.0 {
                return Err(Error::Config(format!("split ratio {r} must be positive")));
            }
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub assignment: BTreeMap<String, Part>,
    pub(crate) parts: [Vec<String>; 4],
}

impl DatasetSplit {
    pub fn ids(&self, part: Part) -> &[String] {
        &self.parts[part_index(part)]
    }

    pub fn size(&self, part: Part) -> usize {
        self.ids(part).len()
    }

    pub fn sizes(&self) -> [usize; 4] {
        [
            self.size(Part::Train),
            self.size(Part::Val),
            self.size(Part::TestA),
            self.size(Part::TestB),
        ]
    }

    /// Replace the train-part id list (augmentation expands it).
    pub fn set_train_ids(&mut self, ids: Vec<String>) {
        self.parts[part_index(Part::Train)] = ids;
    }
}

fn part_index(part: Part) -> usize {
    match part {
        Part::Train => 0,
        Part::Val => 1,
        Part::TestA => 2,
        Part::TestB => 3,
    }
}

/// floor(N * ratio) for the first three parts; the remainder is test B.
pub fn part_sizes(n: usize, ratios: &[f64; 4]) -> [usize; 4] {
    let train = (n as f64 * ratios[0]).floor() as usize;
    let val = (n as f64 * ratios[1]).floor() as usize;
    let test_a = (n as f64 * ratios[2]).floor() as usize;
    let test_b = n - train - val - test_a;
    [train, val, test_a, test_b]
}

/// Largest-remainder apportionment of `total` slots across class quotas.
fn apportion(targets: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    let mut counts: Vec<usize> = targets
        .iter()
        .zip(caps)
        .map(|(&t, &cap)| (t.floor() as usize).min(cap))
        .collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    // Stable order: fractional remainder descending, class index ascending.
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    while leftover > 0 {
        let mut advanced = false;
        for &c in &order {
            if leftover == 0 {
                break;
            }
            if counts[c] < caps[c] {
                counts[c] += 1;
                leftover -= 1;
                advanced = true;
            }
        }
        if !advanced {
            break; // caps exhausted; caller guarantees this cannot happen
        }
    }
    counts
}

/// Seeded, stratified 60/20/10/10 split (ratios configurable).
pub fn split_mccv(dataset: &Dataset, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    dataset.validate_labels()?;
    let k = dataset.num_classes();
    let counts = dataset.class_counts();
    for (class, &count) in counts.iter().enumerate() {
        if count < 4 {
            return Err(Error::Data(format!(
                "class '{}' has {} samples; at least 4 are needed to stratify four ways",
                dataset.class_names[class], count
            )));
        }
    }

    // Seeded shuffle of record indices, then bucket by class preserving
    // shuffled order.
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    use rand::seq::SliceRandom;
    indices.shuffle(&mut stream(spec.seed, streams::SPLIT));
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in &indices {
        pools[dataset.records[i].label].push(i);
    }
    // Draw from the back of each pool.
    let mut cursors: Vec<usize> = vec![0; k];

    let sizes = part_sizes(dataset.len(), &spec.ratios);
    let mut parts: [Vec<String>; 4] = Default::default();
    let mut assignment = BTreeMap::new();

    for (pi, &size) in sizes.iter().enumerate() {
        let remaining: Vec<usize> = (0..k).map(|c| pools[c].len() - cursors[c]).collect();
        let remaining_total: usize = remaining.iter().sum();
        let targets: Vec<f64> = remaining
            .iter()
            .map(|&r| size as f64 * r as f64 / remaining_total as f64)
            .collect();
        let quotas = apportion(&targets, size, &remaining);
        for (class, &take) in quotas.iter().enumerate() {
            for _ in 0..take {
                let record = &dataset.records[pools[class][cursors[class]]];
                cursors[class] += 1;
                parts[pi].push(record.id.clone());
                assignment.insert(record.id.clone(), Part::ALL[pi]);
            }
        }
    }

    debug_assert_eq!(assignment.len(), dataset.len());
    Ok(DatasetSplit { assignment, parts })
}
