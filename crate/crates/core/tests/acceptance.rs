//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS/FAIL line. Expected values come from hand arithmetic, brute-force
//! oracles coded independently in this file, or finite differences.

use std::sync::Arc;
use std::time::Instant;

use mednc_core::data::{
    encode_medf, parse_medf, part_sizes, split_mccv, Dataset, FeatureTable, ImageRecord,
    PatternKind, SplitSpec, SyntheticConfig, DEFAULT_RATIOS,
};
use mednc_core::eval::report::{rep_doc, PARTITION_NAMES};
use mednc_core::eval::{
    compute_metrics, confusion_from_labels, run_mccv, MccvConfig, ModelFactory, TrainConfig,
    TrainingRegime,
};
use mednc_core::graph::EvalOptions;
use mednc_core::model::{
    build_ensemble, build_single_model, build_toy_backbone, wrap_feature_table, CombineSignal,
    ConcatCensus, EnsembleSpec, GroupingTree, HeadSpec, Model, Topology, ToyConvConfig,
};
use mednc_core::optim::{Optimizer, OptimizerConfig};
use mednc_core::tensor::Tensor;

/// Run one criterion, printing its pass/fail line.
fn criterion(name: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    let result = std::panic::catch_unwind(body);
    match &result {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(_) => println!("acceptance {name}: FAIL"),
    }
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

// ---------------------------------------------------------------------------
// Gradient suite
// ---------------------------------------------------------------------------

#[test]
fn acceptance_gradient_suite() {
    criterion("gradient-suite", || {
        let started = Instant::now();
        let reports = mednc_core::gradcheck::check_all(20260808, 20, None).unwrap();
        assert_eq!(reports.len(), 9);
        for r in &reports {
            assert!(r.instances >= 20);
            assert!(
                r.passed(),
                "{}: max rel err {} >= {}",
                r.op,
                r.max_rel_err,
                r.tolerance
            );
        }
        // Full three-level graph on a miniature instance.
        let max_rel = ffco_miniature_fd_error();
        assert!(max_rel < 1e-4, "ffco graph: max rel err {max_rel}");
        let elapsed = started.elapsed().as_secs_f64();
        assert!(elapsed < 30.0, "gradient suite took {elapsed:.1}s");
    });
}

/// Max relative error of the FFCO head gradient vs central differences,
/// over every trainable parameter (8 members, feature dim 6, fc width 3).
fn ffco_miniature_fd_error() -> f64 {
    use rand::Rng;
    let mut rng = mednc_core::rng::seeded(61);
    let members: Vec<_> = (0..8)
        .map(|i| {
            let mut t = FeatureTable::new(format!("bb{i}"), 6, 2);
            for s in 0..2 {
                let row: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                t.insert(format!("s{s}"), s as u32, row).unwrap();
            }
            wrap_feature_table(Arc::new(t), format!("m{i}"))
        })
        .collect();
    let ids: Vec<String> = members.iter().map(|m| m.spec.id.clone()).collect();
    let spec = EnsembleSpec {
        topology: Topology::Ffco,
        grouping: GroupingTree::default_pairs(&ids, 3).unwrap(),
        head: HeadSpec {
            fc_width: 3,
            dropout_rate: 0.25,
            num_classes: 2,
            fc_depth: 1,
        },
        combine_signal: CombineSignal::Probabilities,
    };
    let mut model = build_ensemble(members, spec, 5, "ffco-mini").unwrap();

    let records: Vec<ImageRecord> = (0..2)
        .map(|s| ImageRecord {
            id: format!("s{s}"),
            label: s,
            pixels: None,
            origin: "t".into(),
        })
        .collect();
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let features = model.member_features(&refs).unwrap();
    let mut feeds: Vec<_> = model
        .head
        .feature_inputs
        .iter()
        .zip(&features)
        .map(|(&n, t)| (n, t.clone()))
        .collect();
    feeds.push((
        model.head.target,
        Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
    ));

    let opts = EvalOptions::default(); // eval phase: dropout inactive, graph smooth
    let eval = model
        .head
        .graph
        .forward_to(&[model.head.loss], &model.head.params, &feeds, opts, None)
        .unwrap();
    let grads = model
        .head
        .graph
        .backward(&model.head.params, &eval, model.head.loss)
        .unwrap();

    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    let ids: Vec<_> = model.head.params.ids().collect();
    for id in ids {
        let analytic = grads.for_param(id).unwrap().clone();
        for e in 0..analytic.len() {
            let original = model.head.params.tensor(id).unwrap().values()[e];
            let mut loss_at = |v: f64| {
                model.head.params.tensor_mut(id).unwrap().values_mut()[e] = v;
                model
                    .head
                    .graph
                    .forward_to(&[model.head.loss], &model.head.params, &feeds, opts, None)
                    .unwrap()
                    .value(model.head.loss)
                    .unwrap()
                    .item()
                    .unwrap()
            };
            let numeric = (loss_at(original + h) - loss_at(original - h)) / (2.0 * h);
            loss_at(original);
            let a = analytic.values()[e];
            max_rel = max_rel.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0));
        }
    }
    max_rel
}

// ---------------------------------------------------------------------------
// Metric oracle
// ---------------------------------------------------------------------------

/// Brute-force metric tally straight from label lists; the independent
/// oracle for the metric suite.
struct BruteForce {
    accuracy: f64,
    precision: Option<f64>,
    sensitivity: Option<f64>,
    f1: Option<f64>,
    specificity: Option<f64>,
    fdr: Option<f64>,
}

fn brute_force(predicted: &[usize], actual: &[usize]) -> BruteForce {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (a, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            (0, 0) => tn += 1,
            _ => unreachable!("binary labels"),
        }
    }
    let div = |n: u64, d: u64| {
        if d == 0 {
            None
        } else {
            Some(n as f64 / d as f64)
        }
    };
    let precision = div(tp, tp + fp);
    let sensitivity = div(tp, tp + fn_);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    BruteForce {
        accuracy: (tp + tn) as f64 / predicted.len() as f64,
        precision,
        sensitivity,
        f1,
        specificity: div(tn, tn + fp),
        fdr: div(fp, tp + fp),
    }
}

#[test]
fn acceptance_metric_oracle() {
    criterion("metric-oracle", || {
        use rand::Rng;
        let mut rng = mednc_core::rng::seeded(404);
        for case in 0..50 {
            let n = rng.random_range(5..200);
            // Mix degenerate predictors in to exercise undefined markers.
            let force_pred: Option<usize> = match case % 5 {
                3 => Some(0),
                4 => Some(1),
                _ => None,
            };
            let actual: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let predicted: Vec<usize> = (0..n)
                .map(|_| force_pred.unwrap_or_else(|| rng.random_range(0..2)))
                .collect();

            let cm = confusion_from_labels(&predicted, &actual, 2).unwrap();
            let report = compute_metrics(&cm, 1).unwrap();
            let oracle = brute_force(&predicted, &actual);

            assert_eq!(report.accuracy, oracle.accuracy, "case {case}");
            assert_eq!(report.precision, oracle.precision, "case {case}");
            assert_eq!(report.sensitivity, oracle.sensitivity, "case {case}");
            assert_eq!(report.f1, oracle.f1, "case {case}");
            assert_eq!(report.specificity, oracle.specificity, "case {case}");
            assert_eq!(report.fdr, oracle.fdr, "case {case}");

            if let (Some(p), Some(r), Some(f1)) = (report.precision, report.sensitivity, report.f1)
            {
                let harmonic = if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                };
                assert!((f1 - harmonic).abs() < 1e-12);
            }
            if let (Some(p), Some(fdr)) = (report.precision, report.fdr) {
                assert!((p + fdr - 1.0).abs() < 1e-12);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Published-number spot checks
// ---------------------------------------------------------------------------

#[test]
fn acceptance_paper_spot_checks() {
    criterion("quoted-accuracy-spot-checks", || {
        // 242 correct of 248 -> 0.9758; 469 correct of 490 -> 0.9571.
        let mut predicted: Vec<usize> = vec![1; 121] // tp
            .into_iter()
            .chain(vec![0; 121]) // tn
            .chain(vec![1; 3]) // fp
            .chain(vec![0; 3]) // fn
            .collect();
        let mut actual: Vec<usize> = vec![1; 121]
            .into_iter()
            .chain(vec![0; 121])
            .chain(vec![0; 3])
            .chain(vec![1; 3])
            .collect();
        let cm = confusion_from_labels(&predicted, &actual, 2).unwrap();
        assert_eq!(cm.total(), 248);
        assert_eq!(cm.correct(), 242);
        let report = compute_metrics(&cm, 1).unwrap();
        assert_eq!(format!("{:.4}", report.accuracy), "0.9758");

        predicted = vec![1; 234]
            .into_iter()
            .chain(vec![0; 235])
            .chain(vec![1; 10])
            .chain(vec![0; 11])
            .collect();
        actual = vec![1; 234]
            .into_iter()
            .chain(vec![0; 235])
            .chain(vec![0; 10])
            .chain(vec![1; 11])
            .collect();
        let cm = confusion_from_labels(&predicted, &actual, 2).unwrap();
        assert_eq!(cm.total(), 490);
        assert_eq!(cm.correct(), 469);
        let report = compute_metrics(&cm, 1).unwrap();
        assert_eq!(format!("{:.4}", report.accuracy), "0.9571");
    });
}

// ---------------------------------------------------------------------------
// Split rule
// ---------------------------------------------------------------------------

#[test]
fn acceptance_split_rule() {
    criterion("split-rule", || {
        assert_eq!(part_sizes(2458, &DEFAULT_RATIOS), [1474, 491, 245, 248]);

        let records: Vec<ImageRecord> = (0..2458)
            .map(|i| ImageRecord {
                id: format!("s{i:04}"),
                label: i % 2,
                pixels: None,
                origin: "t".into(),
            })
            .collect();
        let ds = Dataset::new(records, vec!["neg".into(), "pos".into()]);
        let split = split_mccv(&ds, &SplitSpec::new(7)).unwrap();
        assert_eq!(split.sizes(), [1474, 491, 245, 248]);

        let again = split_mccv(&ds, &SplitSpec::new(7)).unwrap();
        assert_eq!(split.assignment, again.assignment);
        let different = split_mccv(&ds, &SplitSpec::new(8)).unwrap();
        assert_ne!(split.assignment, different.assignment);
    });
}

// ---------------------------------------------------------------------------
// Freeze contract
// ---------------------------------------------------------------------------

#[test]
fn acceptance_freeze_contract() {
    criterion("freeze-contract", || {
        let members: Vec<_> = (0..4)
            .map(|i| {
                build_toy_backbone(&ToyConvConfig {
                    id: format!("m{i}"),
                    channels: vec![3, 6],
                    kernel: 3,
                    pool: 2,
                    in_channels: 1,
                    in_height: 16,
                    in_width: 16,
                    seed: i,
                })
                .unwrap()
            })
            .collect();
        let snapshots: Vec<Vec<Tensor>> = members
            .iter()
            .map(|m| {
                m.params()
                    .unwrap()
                    .iter()
                    .map(|(_, e)| e.tensor.clone())
                    .collect()
            })
            .collect();
        let ids: Vec<String> = members.iter().map(|m| m.spec.id.clone()).collect();
        let spec = EnsembleSpec {
            topology: Topology::Fo,
            grouping: GroupingTree::default_pairs(&ids, 2).unwrap(),
            head: HeadSpec {
                fc_width: 8,
                dropout_rate: 0.3,
                num_classes: 2,
                fc_depth: 1,
            },
            combine_signal: CombineSignal::Probabilities,
        };
        let mut model = build_ensemble(members, spec, 13, "fo").unwrap();

        let records: Vec<ImageRecord> = (0..8)
            .map(|i| ImageRecord {
                id: format!("r{i}"),
                label: i % 2,
                pixels: Some(Tensor::filled(&[1, 16, 16], (i as f64 + 1.0) / 9.0)),
                origin: "t".into(),
            })
            .collect();
        let refs: Vec<&ImageRecord> = records.iter().collect();
        let features = model.member_features(&refs).unwrap();
        let mut feeds: Vec<_> = model
            .head
            .feature_inputs
            .iter()
            .zip(&features)
            .map(|(&n, t)| (n, t.clone()))
            .collect();
        let mut target = vec![0.0; 16];
        for i in 0..8 {
            target[i * 2 + i % 2] = 1.0;
        }
        feeds.push((model.head.target, Tensor::new(vec![8, 2], target).unwrap()));

        let mut optimizer = Optimizer::new(OptimizerConfig::default()).unwrap();
        let mut rng = mednc_core::rng::seeded(1);
        for _ in 0..200 {
            let eval = model
                .head
                .graph
                .forward_to(
                    &[model.head.loss],
                    &model.head.params,
                    &feeds,
                    EvalOptions::train(),
                    Some(&mut rng),
                )
                .unwrap();
            let grads = model
                .head
                .graph
                .backward(&model.head.params, &eval, model.head.loss)
                .unwrap();
            optimizer
                .step(&mut model.head.params, &grads, Default::default())
                .unwrap();
        }

        for (member, before) in model.members.iter().zip(&snapshots) {
            let after: Vec<Tensor> = member
                .params()
                .unwrap()
                .iter()
                .map(|(_, e)| e.tensor.clone())
                .collect();
            assert_eq!(before, &after, "extractor {} drifted", member.spec.id);
        }
    });
}

// ---------------------------------------------------------------------------
// Ensemble beats singles (desk-scale relational claim)
// ---------------------------------------------------------------------------

const FIXTURE_NOISE: f64 = 2.0;
const FIXTURE_SEED: u64 = 42;
const MEMBER_COUNT: usize = 8;

fn fixture_dataset() -> Dataset {
    mednc_core::data::make_synthetic(&SyntheticConfig {
        classes: 2,
        per_class: 400,
        height: 32,
        width: 32,
        pattern: PatternKind::GaussianBlob,
        noise: FIXTURE_NOISE,
        seed: 9,
    })
    .unwrap()
}

fn fixture_backbone(member: usize) -> ToyConvConfig {
    ToyConvConfig {
        id: format!("m{member}"),
        channels: vec![4, 8],
        kernel: 3,
        pool: 2,
        in_channels: 1,
        in_height: 32,
        in_width: 32,
        seed: member as u64,
    }
}

fn fixture_head() -> HeadSpec {
    HeadSpec {
        fc_width: 32,
        dropout_rate: 0.5,
        num_classes: 2,
        fc_depth: 1,
    }
}

fn single_factory<'a>(member: usize) -> ModelFactory<'a> {
    Box::new(move |seed| {
        let extractor = build_toy_backbone(&fixture_backbone(member))?;
        build_single_model(
            extractor,
            &fixture_head(),
            seed,
            format!("single-m{member}"),
        )
    })
}

fn ffco_factory<'a>() -> ModelFactory<'a> {
    Box::new(|seed| {
        let members: Vec<_> = (0..MEMBER_COUNT)
            .map(|i| build_toy_backbone(&fixture_backbone(i)))
            .collect::<mednc_core::error::Result<_>>()?;
        let ids: Vec<String> = members.iter().map(|m| m.spec.id.clone()).collect();
        build_ensemble(
            members,
            EnsembleSpec {
                topology: Topology::Ffco,
                grouping: GroupingTree::default_pairs(&ids, 3)?,
                head: fixture_head(),
                combine_signal: CombineSignal::Probabilities,
            },
            seed,
            "ffco",
        )
    })
}

#[test]
fn acceptance_ensemble_beats_singles() {
    criterion("ensemble-beats-singles", || {
        let started = Instant::now();
        let dataset = fixture_dataset();
        let repetitions = 10;

        // Both runs share base_seed and ratios, so repetition r sees the
        // same split in each: the comparison is paired.
        let train = |regime: TrainingRegime, epochs: usize| TrainConfig {
            epochs,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(3e-3),
            seed: 0,
            regime,
            f32_mode: false,
        };
        let mccv = |cfg: TrainConfig| MccvConfig {
            repetitions,
            base_seed: FIXTURE_SEED,
            ratios: DEFAULT_RATIOS,
            train: cfg,
            positive_class: 1,
            augment: None,
            threads: 1,
            fixed_split: false,
        };

        // The three-level ensemble trains its branch stacks against their
        // own output losses first, then the combiner (15 + 15 epochs); the
        // singles train jointly for the same 30-epoch budget.
        let ffco = run_mccv(
            &[("ffco".to_string(), ffco_factory())],
            &dataset,
            &mccv(train(TrainingRegime::Staged, 15)),
        )
        .unwrap()
        .remove(0);

        let single_factories: Vec<(String, ModelFactory)> = (0..MEMBER_COUNT)
            .map(|m| (format!("single-m{m}"), single_factory(m)))
            .collect();
        let singles = run_mccv(
            &single_factories,
            &dataset,
            &mccv(train(TrainingRegime::Joint, 30)),
        )
        .unwrap();

        // Ten repetitions, each with a full learning curve.
        assert_eq!(ffco.repetitions.len(), repetitions);
        assert!(ffco
            .repetitions
            .iter()
            .all(|r| r.curve.rows.len() == 2 * 15));

        let ffco_acc: Vec<f64> = ffco
            .repetitions
            .iter()
            .map(|r| r.partitions["testB"].accuracy)
            .collect();
        let member_mean_per_rep: Vec<f64> = (0..repetitions)
            .map(|r| {
                singles
                    .iter()
                    .map(|s| s.repetitions[r].partitions["testB"].accuracy)
                    .sum::<f64>()
                    / singles.len() as f64
            })
            .collect();

        let ffco_mean = ffco_acc.iter().sum::<f64>() / repetitions as f64;
        let member_mean = member_mean_per_rep.iter().sum::<f64>() / repetitions as f64;
        let wins = ffco_acc
            .iter()
            .zip(&member_mean_per_rep)
            .filter(|(f, m)| f >= m)
            .count();

        println!(
            "  ffco mean {ffco_mean:.4}; member mean {member_mean:.4}; paired wins {wins}/{repetitions}"
        );
        for (r, (f, m)) in ffco_acc.iter().zip(&member_mean_per_rep).enumerate() {
            println!("  rep {r}: ffco {f:.4} vs members {m:.4}");
        }

        // Calibration band for the fixture: singles mid-pack.
        assert!(
            (0.80..=0.95).contains(&member_mean),
            "fixture drifted: member mean {member_mean:.4} outside [0.80, 0.95]"
        );
        assert!(
            wins >= 8,
            "ensemble won only {wins}/{repetitions} paired repetitions"
        );
        assert!(
            ffco_mean >= member_mean - 0.005,
            "ensemble mean {ffco_mean:.4} below member mean {member_mean:.4} - 0.005"
        );
        let elapsed = started.elapsed().as_secs_f64();
        println!("  elapsed {elapsed:.1}s");
        assert!(elapsed < 600.0, "took {elapsed:.1}s, budget 600s");
    });
}

// ---------------------------------------------------------------------------
// Topology census
// ---------------------------------------------------------------------------

#[test]
fn acceptance_topology_census() {
    criterion("topology-census", || {
        let table_members = |n: usize| -> Vec<mednc_core::model::Extractor> {
            (0..n)
                .map(|i| {
                    let mut t = FeatureTable::new(format!("bb{i}"), 8, 2);
                    t.insert("s0", 0, vec![0.1; 8]).unwrap();
                    t.insert("s1", 1, vec![0.9; 8]).unwrap();
                    wrap_feature_table(Arc::new(t), format!("m{i}"))
                })
                .collect()
        };
        let head = HeadSpec {
            fc_width: 4,
            dropout_rate: 0.5,
            num_classes: 2,
            fc_depth: 1,
        };
        let build = |topology: Topology, n: usize| -> Model {
            let members = table_members(n);
            let ids: Vec<String> = members.iter().map(|m| m.spec.id.clone()).collect();
            build_ensemble(
                members,
                EnsembleSpec {
                    topology,
                    grouping: GroupingTree::default_pairs(&ids, topology.levels()).unwrap(),
                    head,
                    combine_signal: CombineSignal::Probabilities,
                },
                0,
                topology.name(),
            )
            .unwrap()
        };

        // Six members in three pairs for the two-level topologies.
        assert_eq!(
            build(Topology::Ffc, 6).census(),
            ConcatCensus {
                feature: 3,
                hidden: 1,
                output: 0
            }
        );
        assert_eq!(
            build(Topology::Fco, 6).census(),
            ConcatCensus {
                feature: 0,
                hidden: 3,
                output: 1
            }
        );
        assert_eq!(
            build(Topology::Fo, 6).census(),
            ConcatCensus {
                feature: 3,
                hidden: 0,
                output: 1
            }
        );
        // Eight members for the three-level topology: all three kinds.
        let ffco = build(Topology::Ffco, 8);
        assert_eq!(ffco.members.len(), 8);
        assert_eq!(
            ffco.census(),
            ConcatCensus {
                feature: 4,
                hidden: 2,
                output: 1
            }
        );
    });
}

// ---------------------------------------------------------------------------
// MCCV determinism
// ---------------------------------------------------------------------------

#[test]
fn acceptance_mccv_determinism() {
    criterion("mccv-determinism", || {
        let dataset = mednc_core::data::make_synthetic(&SyntheticConfig {
            classes: 2,
            per_class: 40,
            height: 12,
            width: 12,
            pattern: PatternKind::Stripes,
            noise: 0.2,
            seed: 3,
        })
        .unwrap();
        let factory = || -> ModelFactory {
            Box::new(|seed| {
                let extractor = build_toy_backbone(&ToyConvConfig {
                    id: "toy".into(),
                    channels: vec![3],
                    kernel: 3,
                    pool: 2,
                    in_channels: 1,
                    in_height: 12,
                    in_width: 12,
                    seed: 1,
                })?;
                build_single_model(
                    extractor,
                    &HeadSpec {
                        fc_width: 8,
                        dropout_rate: 0.3,
                        num_classes: 2,
                        fc_depth: 1,
                    },
                    seed,
                    "single",
                )
            })
        };
        let cfg = MccvConfig {
            repetitions: 3,
            base_seed: 5,
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                ..Default::default()
            },
            ..Default::default()
        };

        let run = |threads: usize| -> Vec<Vec<u8>> {
            let mut cfg = cfg.clone();
            cfg.threads = threads;
            let results = run_mccv(&[("m".to_string(), factory())], &dataset, &cfg).unwrap();
            results[0]
                .repetitions
                .iter()
                .map(|rep| {
                    serde_json::to_vec_pretty(&rep_doc("m", results[0].trainable_params, rep))
                        .unwrap()
                })
                .collect()
        };
        // Identical config twice, and a different worker count: all
        // metrics.json bytes identical.
        let a = run(1);
        let b = run(1);
        let c = run(2);
        assert_eq!(a, b);
        assert_eq!(a, c);

        // Every partition is present in each document.
        let doc: serde_json::Value = serde_json::from_slice(&a[0]).unwrap();
        for part in PARTITION_NAMES {
            assert!(doc["partitions"][part]["accuracy"].is_number());
        }
    });
}

// ---------------------------------------------------------------------------
// MEDF round trip
// ---------------------------------------------------------------------------

#[test]
fn acceptance_medf_round_trip() {
    criterion("medf-round-trip", || {
        use rand::Rng;
        let mut rng = mednc_core::rng::seeded(606);

        // Zero-row and randomized tables, including one with 10k rows.
        let mut cases: Vec<(usize, usize)> = vec![(0, 5), (1, 0), (10_000, 16)];
        for _ in 0..10 {
            cases.push((rng.random_range(1..200), rng.random_range(0..32)));
        }
        for (rows, dim) in cases {
            let mut table = FeatureTable::new("bb", dim, 4);
            for i in 0..rows {
                let features: Vec<f32> = (0..dim)
                    .map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff))
                    .collect();
                table
                    .insert(format!("id-{i}"), rng.random_range(0..4), features)
                    .unwrap();
            }
            let bytes = encode_medf(&table).unwrap();
            let back = parse_medf(&bytes, "bb").unwrap();
            assert_eq!(back, table, "{rows}x{dim}");
            assert_eq!(encode_medf(&back).unwrap(), bytes, "{rows}x{dim}");
        }

        // Hand-encoded 3x4 fixture parses to exact hand values.
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(b"MEDF");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        let fixture = [
            ("alpha", 0u32, [0.5f32, -1.5, 2.25, 1e-3]),
            ("beta", 1, [3.0, 4.0, 5.0, 6.0]),
            ("gamma", 0, [0.0, -0.0, 1.0, -1.0]),
        ];
        for (id, label, feats) in &fixture {
            bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
            bytes.extend_from_slice(id.as_bytes());
            bytes.extend_from_slice(&label.to_le_bytes());
            for f in feats {
                bytes.extend_from_slice(&f.to_le_bytes());
            }
        }
        let table = parse_medf(&bytes, "fixture").unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.dim, 4);
        for (id, label, feats) in &fixture {
            assert_eq!(table.label(id), Some(*label));
            assert_eq!(table.row(id).unwrap(), feats);
        }
    });
}
