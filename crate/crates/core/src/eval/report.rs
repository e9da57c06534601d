//! Result files: per-repetition metrics.json / curve.csv / confusion CSV /
//! timing.json, and cross-model summary.csv + summary.md.
//!
//! metrics.json holds only seed-determined content (metrics, seeds, counts),
//! so identical configurations produce byte-identical files; wall-clock
//! timing lives in the timing.json side file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::mccv::{mean_std, metric_value, MccvResult, RepetitionResult, METRIC_NAMES};
use super::metrics::{zero_collapsed, ConfusionMatrix, MetricsReport};

pub const PARTITION_NAMES: [&str; 4] = ["train", "val", "testA", "testB"];

/// Serialized form of one repetition's metrics (deterministic content only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepMetricsDoc {
    pub model: String,
    pub repetition: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub trainable_params: usize,
    pub partitions: BTreeMap<String, MetricsReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub branch_test_a: Vec<MetricsReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingDoc {
    pub seconds_per_epoch: Vec<f64>,
    pub total_seconds: f64,
}

pub fn rep_doc(model: &str, trainable_params: usize, rep: &RepetitionResult) -> RepMetricsDoc {
    RepMetricsDoc {
        model: model.to_string(),
        repetition: rep.repetition,
        split_seed: rep.split_seed,
        train_seed: rep.train_seed,
        trainable_params,
        partitions: rep.partitions.clone(),
        branch_test_a: rep.branch_test_a.clone(),
    }
}

fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("actual\\predicted");
    for p in 0..cm.k() {
        write!(out, ",{p}").expect("string write");
    }
    out.push('\n');
    for (a, row) in cm.rows().enumerate() {
        write!(out, "{a}").expect("string write");
        for v in row {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn curve_csv(rep: &RepetitionResult) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for row in &rep.curve.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.epoch, row.train_loss, row.train_acc, row.val_loss, row.val_acc
        )
        .expect("string write");
    }
    out
}

/// Write `metrics.json`, `curve.csv`, `confusion_testB.csv`, `timing.json`
/// into `dir` (created if needed).
pub fn write_repetition(
    dir: &Path,
    model: &str,
    trainable_params: usize,
    rep: &RepetitionResult,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let doc = rep_doc(model, trainable_params, rep);
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&doc)?,
    )?;
    std::fs::write(dir.join("curve.csv"), curve_csv(rep))?;
    std::fs::write(
        dir.join("confusion_testB.csv"),
        confusion_csv(&rep.confusion_test_b),
    )?;
    let timing = TimingDoc {
        total_seconds: rep.seconds_per_epoch.iter().sum(),
        seconds_per_epoch: rep.seconds_per_epoch.clone(),
    };
    std::fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&timing)?,
    )?;
    Ok(())
}

/// Write all repetitions of one MCCV run under `run_dir/rep<r>/`.
pub fn write_mccv_run(run_dir: &Path, result: &MccvResult) -> Result<()> {
    for rep in &result.repetitions {
        write_repetition(
            &run_dir.join(format!("rep{}", rep.repetition)),
            &result.model_name,
            result.trainable_params,
            rep,
        )?;
    }
    Ok(())
}

/// Aggregate of one metric across repetitions.
#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    /// Mean over repetitions where the metric is defined; None if never.
    pub mean: Option<f64>,
    /// Sample standard deviation (needs at least two defined values).
    pub std: Option<f64>,
    /// Mean with undefined repetitions collapsed to zero.
    pub zero_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ModelSummary {
    pub model: String,
    pub repetitions: usize,
    pub trainable_params: usize,
    pub seconds_per_epoch: Option<f64>,
    /// partition name -> aggregates in `METRIC_NAMES` order.
    pub partitions: BTreeMap<String, Vec<Aggregate>>,
}

fn aggregate(values: &[Option<f64>]) -> Aggregate {
    let (mean, std) = mean_std(values);
    let zero_mean = values.iter().map(|v| zero_collapsed(*v)).sum::<f64>() / values.len() as f64;
    Aggregate {
        mean,
        std,
        zero_mean,
    }
}

/// Group per-repetition docs by model name and aggregate.
pub fn summarize_docs(
    docs: &[RepMetricsDoc],
    timing: &BTreeMap<String, Vec<f64>>,
) -> Vec<ModelSummary> {
    let mut by_model: BTreeMap<&str, Vec<&RepMetricsDoc>> = BTreeMap::new();
    for doc in docs {
        by_model.entry(&doc.model).or_default().push(doc);
    }
    by_model
        .into_iter()
        .map(|(model, mut reps)| {
            reps.sort_by_key(|d| d.repetition);
            let mut partitions = BTreeMap::new();
            for part in PARTITION_NAMES {
                let aggregates = METRIC_NAMES
                    .iter()
                    .map(|metric| {
                        let values: Vec<Option<f64>> = reps
                            .iter()
                            .map(|d| d.partitions.get(part).and_then(|r| metric_value(r, metric)))
                            .collect();
                        aggregate(&values)
                    })
                    .collect();
                partitions.insert(part.to_string(), aggregates);
            }
            let secs = timing.get(model).and_then(|s| {
                if s.is_empty() {
                    None
                } else {
                    Some(s.iter().sum::<f64>() / s.len() as f64)
                }
            });
            ModelSummary {
                model: model.to_string(),
                repetitions: reps.len(),
                trainable_params: reps.first().map(|d| d.trainable_params).unwrap_or(0),
                seconds_per_epoch: secs,
                partitions,
            }
        })
        .collect()
}

pub fn summarize_results(results: &[MccvResult]) -> Vec<ModelSummary> {
    let docs: Vec<RepMetricsDoc> = results
        .iter()
        .flat_map(|r| {
            r.repetitions
                .iter()
                .map(|rep| rep_doc(&r.model_name, r.trainable_params, rep))
        })
        .collect();
    let timing: BTreeMap<String, Vec<f64>> = results
        .iter()
        .map(|r| {
            (
                r.model_name.clone(),
                r.repetitions
                    .iter()
                    .flat_map(|rep| rep.seconds_per_epoch.iter().copied())
                    .collect(),
            )
        })
        .collect();
    summarize_docs(&docs, &timing)
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "n/a".to_string(),
    }
}

pub fn summary_csv(summaries: &[ModelSummary]) -> String {
    let mut out = String::from("model,partition,repetitions,params,params_mb,sec_per_epoch");
    for metric in METRIC_NAMES {
        write!(out, ",{metric},{metric}_std,{metric}_zero").expect("string write");
    }
    out.push('\n');
    for s in summaries {
        for part in PARTITION_NAMES {
            let aggs = &s.partitions[part];
            write!(
                out,
                "{},{},{},{},{},{}",
                s.model,
                part,
                s.repetitions,
                s.trainable_params,
                s.trainable_params as f64 * 4.0 / (1024.0 * 1024.0),
                opt(s.seconds_per_epoch),
            )
            .expect("string write");
            for a in aggs {
                write!(out, ",{},{},{}", opt(a.mean), opt(a.std), a.zero_mean)
                    .expect("string write");
            }
            out.push('\n');
        }
    }
    out
}

fn md_metric(a: &Aggregate, bold: bool) -> String {
    match a.mean {
        Some(mean) => {
            let core = match a.std {
                Some(std) => format!("{mean:.4} ± {std:.4}"),
                None => format!("{mean:.4}"),
            };
            if bold {
                format!("**{core}**")
            } else {
                core
            }
        }
        None => "n/a".to_string(),
    }
}

pub fn summary_markdown(summaries: &[ModelSummary]) -> String {
    let mut out = String::from("# Results\n");
    for part in PARTITION_NAMES {
        writeln!(out, "\n## Partition `{part}`\n").expect("string write");
        out.push_str(
            "| Model | Accuracy | Precision | Sensitivity | F1 | Specificity | FDR | Params | MB | s/epoch |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        // Best accuracy gets the bold annotation.
        let best = summaries
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.partitions[part][0].mean.map(|m| (i, m)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite accuracy"))
            .map(|(i, _)| i);
        for (i, s) in summaries.iter().enumerate() {
            let aggs = &s.partitions[part];
            write!(out, "| {} ", s.model).expect("string write");
            for (mi, a) in aggs.iter().enumerate() {
                let bold = mi == 0 && best == Some(i);
                write!(out, "| {} ", md_metric(a, bold)).expect("string write");
            }
            writeln!(
                out,
                "| {} | {:.2} | {} |",
                s.trainable_params,
                s.trainable_params as f64 * 4.0 / (1024.0 * 1024.0),
                s.seconds_per_epoch
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "n/a".to_string()),
            )
            .expect("string write");
        }
    }
    out
}

pub fn write_summary(dir: &Path, summaries: &[ModelSummary]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(summaries))?;
    std::fs::write(dir.join("summary.md"), summary_markdown(summaries))?;
    Ok(())
}

fn rep_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir()
            && path
                .file_name()
                .map(|n| n.to_string_lossy().starts_with("rep"))
                .unwrap_or(false)
        {
            out.push(path);
        }
    }
    Ok(out)
}

/// Per-model seconds-per-epoch samples gathered from timing.json files.
pub type TimingSamples = BTreeMap<String, Vec<f64>>;

/// Collect every `rep*/metrics.json` under `dir` (directly, or one level
/// down inside per-run directories). timing.json files are optional.
pub fn collect_rep_docs(dir: &Path) -> Result<(Vec<RepMetricsDoc>, TimingSamples)> {
    let mut docs = Vec::new();
    let mut timing: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    let mut candidates = rep_dirs(dir)?;
    if dir.is_dir() {
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            candidates.extend(rep_dirs(&sub)?);
        }
    }

    for rep_dir in candidates {
        let metrics_path = rep_dir.join("metrics.json");
        if !metrics_path.is_file() {
            continue;
        }
        let doc: RepMetricsDoc = serde_json::from_str(&std::fs::read_to_string(&metrics_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", metrics_path.display())))?;
        let timing_path = rep_dir.join("timing.json");
        if timing_path.is_file() {
            if let Ok(t) =
                serde_json::from_str::<TimingDoc>(&std::fs::read_to_string(&timing_path)?)
            {
                timing
                    .entry(doc.model.clone())
                    .or_default()
                    .extend(t.seconds_per_epoch);
            }
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::Data(format!(
            "no rep*/metrics.json found under '{}'",
            dir.display()
        )));
    }
    Ok((docs, timing))
}
