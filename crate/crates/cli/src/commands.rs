//! Subcommand implementations.

use std::path::{Path, PathBuf};

use mednc_core::data::{augmented_train_ids, part_sizes, split_mccv, Part, SplitSpec};
use mednc_core::error::{Error, Result};
use mednc_core::eval::report::{
    collect_rep_docs, summarize_docs, summarize_results, write_repetition, write_summary,
};
use mednc_core::eval::{
    evaluate, run_mccv, train, FeatureCache, MccvResult, ModelFactory, RepetitionResult,
};
use mednc_core::gradcheck;
use mednc_core::model::serialize::save_model;

use crate::config::{build_model, prepare_data, PreparedData, RunConfig};
use crate::manifest::ManifestWriter;

/// Worker pool size for MCCV: available parallelism, capped by the
/// MEDNC_THREADS environment variable.
pub fn mccv_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("MEDNC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(cap) if cap >= 1 => available.min(cap),
        _ => available,
    }
}

fn run_dir(config: &RunConfig) -> PathBuf {
    config.output_dir.join(&config.run_id)
}

/// Ingest/generate, balance, and report class counts and split sizes
/// without training anything.
pub fn cmd_prepare(config: &RunConfig, out: &mut impl std::io::Write) -> Result<()> {
    let data = prepare_data(config)?;
    let counts = data.base.class_counts();
    writeln!(
        out,
        "dataset: {} samples, {} classes",
        data.base.len(),
        counts.len()
    )?;
    for (name, count) in data.base.class_names.iter().zip(&counts) {
        writeln!(out, "  class {name}: {count}")?;
    }
    let sizes = part_sizes(data.base.len(), &config.mccv.ratios);
    writeln!(
        out,
        "split sizes (train/val/testA/testB): ({}, {}, {}, {})",
        sizes[0], sizes[1], sizes[2], sizes[3]
    )?;
    if data.universe.len() != data.base.len() {
        writeln!(
            out,
            "augmentation universe: {} samples (train partition only)",
            data.universe.len()
        )?;
    }
    // Split now to surface stratification errors before any training run.
    let split = split_mccv(
        &data.base,
        &SplitSpec {
            ratios: config.mccv.ratios,
            seed: config.base_seed(),
        },
    )?;
    debug_assert_eq!(split.sizes(), sizes);
    Ok(())
}

/// One full train + evaluate; writes the serialized model, metrics.json,
/// curve.csv, confusion_testB.csv, timing.json, and the run manifest.
pub fn cmd_train(config: &RunConfig, out: &mut impl std::io::Write) -> Result<()> {
    let dir = run_dir(config);
    let mut manifest = ManifestWriter::start(&dir, config, &["prepare", "train", "evaluate"])?;

    let data = prepare_data(config)?;
    manifest.stage_done("prepare")?;

    let seed = config.seed;
    let mut model = build_model(config, &data, seed)?;
    let mut cache = FeatureCache::new();
    cache.populate(&model, &data.universe)?;

    let base_split = split_mccv(
        &data.base,
        &SplitSpec {
            ratios: config.mccv.ratios,
            seed,
        },
    )?;
    let mut split = base_split.clone();
    if let Some(augment) = &config.dataset.augment {
        split.set_train_ids(augmented_train_ids(base_split.ids(Part::Train), augment));
    }

    let train_cfg = config.train_config();
    let outcome = train(&mut model, &data.universe, &split, &train_cfg, Some(&cache))?;
    manifest.stage_done("train")?;

    let mut partitions = std::collections::BTreeMap::new();
    let mut confusion_test_b = None;
    for part in Part::ALL {
        let (cm, report) = evaluate(
            &model,
            &data.universe,
            base_split.ids(part),
            config.mccv.positive_class,
            Some(&cache),
        )?;
        if part == Part::TestB {
            confusion_test_b = Some(cm);
        }
        partitions.insert(part.name().to_string(), report);
    }
    let rep = RepetitionResult {
        repetition: 0,
        split_seed: seed,
        train_seed: seed,
        partitions,
        confusion_test_b: confusion_test_b.expect("testB evaluated"),
        curve: outcome.curve,
        seconds_per_epoch: outcome.seconds_per_epoch,
        branch_test_a: Vec::new(),
    };
    write_repetition(&dir, &model.name, model.trainable_params(), &rep)?;
    save_model(&model, &dir.join("model.json"), &dir.join("model.params"))?;
    manifest.stage_done("evaluate")?;
    manifest.finish()?;

    let test_b = &rep.partitions["testB"];
    writeln!(
        out,
        "model {} ({} trainable parameters)",
        model.name,
        model.trainable_params()
    )?;
    writeln!(out, "testB accuracy: {:.4}", test_b.accuracy)?;
    writeln!(out, "results in {}", dir.display())?;
    Ok(())
}

fn model_factory<'a>(config: &'a RunConfig, data: &'a PreparedData) -> ModelFactory<'a> {
    Box::new(move |seed| build_model(config, data, seed))
}

/// Full Monte Carlo cross-validation with per-repetition files and the
/// cross-model summary.
pub fn cmd_mccv(config: &RunConfig, out: &mut impl std::io::Write) -> Result<()> {
    let dir = run_dir(config);
    let mut manifest = ManifestWriter::start(&dir, config, &["prepare", "mccv", "report"])?;

    let data = prepare_data(config)?;
    manifest.stage_done("prepare")?;

    let mccv_cfg = config.mccv_config(mccv_threads());
    let factories = vec![("model".to_string(), model_factory(config, &data))];
    let results = run_mccv(&factories, &data.base, &mccv_cfg)?;
    manifest.stage_done("mccv")?;

    write_results(&dir, &results)?;
    manifest.stage_done("report")?;
    manifest.finish()?;

    let result = &results[0];
    let (mean, std) = result.mean_std_or_na(Part::TestB);
    writeln!(
        out,
        "{} repetitions complete; testB accuracy mean {mean} std {std}",
        result.repetitions.len()
    )?;
    writeln!(out, "results in {}", dir.display())?;
    Ok(())
}

trait MeanStdDisplay {
    fn mean_std_or_na(&self, part: Part) -> (String, String);
}

impl MeanStdDisplay for MccvResult {
    fn mean_std_or_na(&self, part: Part) -> (String, String) {
        let (mean, std) = self.mean_std(part, "accuracy");
        (
            mean.map(|m| format!("{m:.4}"))
                .unwrap_or_else(|| "n/a".into()),
            std.map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "n/a".into()),
        )
    }
}

/// Write per-repetition files plus summary.csv / summary.md.
pub fn write_results(dir: &Path, results: &[MccvResult]) -> Result<()> {
    for result in results {
        for rep in &result.repetitions {
            write_repetition(
                &dir.join(format!("rep{}", rep.repetition)),
                &result.model_name,
                result.trainable_params,
                rep,
            )?;
        }
    }
    let summaries = summarize_results(results);
    write_summary(dir, &summaries)
}

/// Regenerate summary tables from stored per-run metrics.json files only.
pub fn cmd_report(results_dir: &Path, out: &mut impl std::io::Write) -> Result<()> {
    let (docs, timing) = collect_rep_docs(results_dir)?;
    let summaries = summarize_docs(&docs, &timing);
    write_summary(results_dir, &summaries)?;
    writeln!(
        out,
        "summarized {} repetition(s) across {} model(s) into {}",
        docs.len(),
        summaries.len(),
        results_dir.join("summary.md").display()
    )?;
    Ok(())
}

/// Finite-difference verification of every op kind. Returns an error when
/// any op exceeds its tolerance. The MEDNC_GRADCHECK_CORRUPT environment
/// variable deliberately perturbs one op's analytic gradient (negative
/// control for this gate).
pub fn cmd_gradcheck(seed: u64, out: &mut impl std::io::Write) -> Result<bool> {
    let corrupt = std::env::var("MEDNC_GRADCHECK_CORRUPT").ok();
    let reports = gradcheck::check_all(seed, 20, corrupt.as_deref())?;
    writeln!(
        out,
        "{:<16} {:>9} {:>14} {:>10} {:>7}",
        "op", "instances", "max_rel_err", "tolerance", "status"
    )?;
    let mut all_passed = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        all_passed &= r.passed();
        writeln!(
            out,
            "{:<16} {:>9} {:>14.3e} {:>10.0e} {:>7}",
            r.op, r.instances, r.max_rel_err, r.tolerance, status
        )?;
    }
    Ok(all_passed)
}

/// Map an error to the documented process exit code.
pub fn exit_code_for(error: &Error) -> u8 {
    match error {
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}
