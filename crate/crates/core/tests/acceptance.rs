//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Arguments filter criteria by name substring:
//! `cargo test --release -p mtlb-core --test acceptance -- table2`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use mtlb::data::calibration::calibrate;
use mtlb::data::record::Sex;
use mtlb::data::{generate_cohort, subsample, CohortDataset, GeneratorParams, Split, SubsampleMode, SubsampleSpec, FEW_SHOT_GRID};
use mtlb::experiment::{enumerate, run_grid, GridContext, GridRequest, RegimeKind, ResultsStore};
use mtlb::metrics::{auroc, mean, negative_transfer_matrix, regression_analog, t_test, SeedScores, TTestKind};
use mtlb::model::{decoder_prefix, EncoderConfig, EncoderKind, ModelBundle, ENCODER_PREFIX};
use mtlb::search::{run_sweep, Point, SearchSpace, Strategy};
use mtlb::tasks::{tasks_for, Category, TaskId};
use mtlb::train::{apply_freeze, run_regime, total_loss, Batch, Pretrained, Regime, RunSpec, TrainConfig};
use mtlb_autodiff::gradcheck::{check_params, op_suite, DEFAULT_STEP};
use mtlb_autodiff::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets.
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_MIN_CASES: usize = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const AUROC_INSTANCES: usize = 1000;
const AUROC_MAX_N: usize = 200;
const LOSS_SUM_TOL: f64 = 1e-9;
const CALIBRATION_PATIENTS: usize = 20_000;
const CALIBRATION_BUDGET: Duration = Duration::from_secs(300);
/// (row key, target, tolerance)
const CALIBRATION_BANDS: [(&str, f64, f64); 5] = [
    ("mca.MOR24", 0.980, 0.010),
    ("mca.CMO24", 0.992, 0.005),
    ("mca.REA", 0.950, 0.010),
    ("measured.Heart Rate", 0.916, 0.02),
    ("icd.Circulatory", 0.722, 0.03),
];
const FEW_SHOT_PATIENTS: usize = 4000;
const FEW_SHOT_SEEDS: u64 = 5;
const FEW_SHOT_FRACTION: f64 = 0.01;
const FEW_SHOT_MIN_GAIN: f64 = 0.05;
const FEW_SHOT_ALPHA: f64 = 0.05;
const FULL_DATA_MAX_GAP: f64 = 0.03;
const FEW_SHOT_BUDGET: Duration = Duration::from_secs(2 * 3600);
const TRANSFER_SEEDS: u64 = 5;
const SWEEP_REPEATS: u64 = 10;
const SWEEP_MIN_WINS: usize = 7;
const SWEEP_BUDGET: usize = 20;
const SWEEP_TIME: Duration = Duration::from_secs(30 * 60);

type Outcome = (bool, String);

fn main() {
    mtlb::runtime::tune_allocator();
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient-suite", gradient_suite),
        ("auroc-oracle", auroc_oracle),
        ("regime-contracts", regime_contracts),
        ("generator-calibration", generator_calibration),
        ("table2-direction", table2_direction),
        ("negative-transfer", negative_transfer),
        ("subsampling", subsampling_exactness),
        ("determinism", determinism),
        ("sweep-sanity", sweep_sanity),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn small_cohort(seed: u64, n: usize) -> CohortDataset {
    generate_cohort(seed, n, &GeneratorParams::default()).expect("cohort")
}

/// Finite-difference check of every parameter of a full model under the
/// summed loss, with decoders moved off their zero initialization.
fn model_gradcheck(enc: &EncoderConfig, ds: &CohortDataset, seed: u64) -> Vec<f64> {
    let suite = tasks_for(&[Category::Mor, Category::Los, Category::Icd, Category::Acu, Category::Wbm, Category::Fts]);
    let mut model = ModelBundle::new(enc, &suite, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = ds.indices(Split::Train);
    let batch = Batch::training(ds, &train[..4], &suite, enc.window_hours, &mut rng);
    let report = check_params(&model.store, DEFAULT_STEP, |tape: &mut Tape, store| {
        let mut m = model.clone();
        m.store = store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (loss, _) = total_loss(tape, &m, ds, &batch, &suite, 1.0, false, &mut rng).map_err(|e| {
            mtlb_autodiff::AutodiffError::Usage(e.to_string())
        })?;
        Ok(loss)
    })
    .unwrap();
    report.rel_errors
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let ops = op_suite(0..6).unwrap();
    let op_names: BTreeSet<&str> = ops.iter().map(|c| c.op).collect();
    let mut errors: Vec<f64> = ops.iter().map(|c| c.rel_error).collect();
    let ds = small_cohort(1, 40);
    let gru = model_gradcheck(&EncoderConfig::gru(4, 8, 2, 12), &ds, 2);
    let tf = model_gradcheck(&EncoderConfig::transformer(4, 2, 1, 8, 12), &ds, 3);
    let (n_gru, n_tf) = (gru.len(), tf.len());
    errors.extend(gru);
    errors.extend(tf);
    let worst = errors.iter().copied().fold(0.0, f64::max);
    let elapsed = t0.elapsed();
    let ok = worst < GRAD_REL_TOL && errors.len() >= GRAD_MIN_CASES && elapsed < GRAD_BUDGET;
    (
        ok,
        format!(
            "{} cases ({} ops, GRU {n_gru} tensors, transformer {n_tf} tensors), max rel err {worst:.2e} < {GRAD_REL_TOL:e}, {:.1}s < {}s",
            errors.len(),
            op_names.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut mismatches, mut with_ties, mut defined) = (0, 0, 0);
    for _ in 0..AUROC_INSTANCES {
        let n = rng.random_range(1..=AUROC_MAX_N);
        let levels = rng.random_range(2..=40);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let p = rng.random_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let fast = auroc(&scores, &labels);
        mismatches += usize::from(fast != pairwise_auroc(&scores, &labels));
        defined += usize::from(fast.is_some());
        with_ties += usize::from(scores.iter().map(|s| s.to_bits()).collect::<BTreeSet<_>>().len() < n);
    }
    let analog = (regression_analog(1.0), regression_analog(0.0));
    let ok = mismatches == 0 && analog == (1.0, 0.5) && with_ties > 0;
    (
        ok,
        format!(
            "{mismatches} mismatches in {AUROC_INSTANCES} instances ({defined} defined, {with_ties} with ties); analog(1)={} analog(0)={}",
            analog.0, analog.1
        ),
    )
}

fn regime_contracts() -> Outcome {
    let ds = small_cohort(2, 150);
    let suite = tasks_for(&[Category::Mor, Category::Cmo, Category::Los, Category::Icd]);
    let enc = EncoderConfig::gru(4, 8, 1, 12);
    let train = TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let spec = |regime, pre| RunSpec {
        dataset: &ds,
        suite: &suite,
        encoder: &enc,
        train: &train,
        regime,
        seed: 6,
        subsample: SubsampleSpec::default(),
        pretrained: pre,
    };
    let omit = Regime::PretrainOmit(Category::Mor);
    let fresh = ModelBundle::new(&enc, &suite, 6).unwrap();
    let pre_out = run_regime(&spec(omit, None)).unwrap();
    let mor = [decoder_prefix(TaskId::Mor24), decoder_prefix(TaskId::Mor48)];
    let at_init = mor.iter().all(|p| pre_out.model.store.checksum(p) == fresh.store.checksum(p));
    let pre = Pretrained::from_model(omit, &pre_out.model);
    let ftd = run_regime(&spec(Regime::Ftd(Category::Mor), Some(&pre))).unwrap();
    let encoder_kept = ftd.model.store.checksum(ENCODER_PREFIX) == pre_out.model.store.checksum(ENCODER_PREFIX);
    let head_trained = ftd.model.store.checksum(&mor[0]) != fresh.store.checksum(&mor[0]);

    // Gradient of the omitted decoders under the pretraining loss, on a
    // batch that does carry their labels.
    let mut model = pre_out.model.clone();
    let active = omit.active_tasks(&suite);
    apply_freeze(&mut model, omit, &active);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train_idx = ds.indices(Split::Train);
    let batch = Batch::training(&ds, &train_idx[..48], &suite, 12, &mut rng);
    let mor_labels: usize = [TaskId::Mor24, TaskId::Mor48].iter().map(|t| batch.labels[t].len()).sum();
    let mut tape = Tape::new();
    let (loss, _) = total_loss(&mut tape, &model, &ds, &batch, &active, 1.0, false, &mut rng).unwrap();
    let grads = tape.backward(loss).unwrap();
    let zero_grad = model
        .store
        .iter()
        .filter(|(_, p)| mor.iter().any(|m| p.name.starts_with(m)))
        .all(|(id, _)| grads.param(id).is_none_or(|g| g.data().iter().all(|v| *v == 0.0)));

    // Summed loss against per-task losses at the same parameters.
    let all = TaskId::ALL.to_vec();
    let mut mt = ModelBundle::new(&enc, &all, 3).unwrap();
    for (_, p) in mt.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = Batch::training(&ds, &train_idx[..48], &all, 12, &mut rng);
    let mut tape = Tape::new();
    let (total, parts) = total_loss(&mut tape, &mt, &ds, &batch, &all, 1.0, false, &mut rng).unwrap();
    let total = tape.value(total).item();
    let mut sum = 0.0;
    for (t, _) in &parts {
        let mut tape = Tape::new();
        let (l, _) = total_loss(&mut tape, &mt, &ds, &batch, &[*t], 1.0, false, &mut rng).unwrap();
        sum += tape.value(l).item();
    }
    let gap = (total - sum).abs();

    let ok = at_init && encoder_kept && head_trained && zero_grad && mor_labels > 0 && gap < LOSS_SUM_TOL && parts.len() >= 10;
    (
        ok,
        format!(
            "FTD encoder unchanged={encoder_kept}; omitted decoder at init={at_init}, zero gradient={zero_grad} ({mor_labels} labels); MT loss vs sum of {} task losses |diff|={gap:.1e} < {LOSS_SUM_TOL:e}",
            parts.len()
        ),
    )
}

fn generator_calibration() -> Outcome {
    let t0 = Instant::now();
    let ds = generate_cohort(0, CALIBRATION_PATIENTS, &GeneratorParams::default()).unwrap();
    let report = calibrate(&ds);
    let elapsed = t0.elapsed();
    let mut ok = elapsed < CALIBRATION_BUDGET;
    let mut parts = Vec::new();
    for (key, target, tol) in CALIBRATION_BANDS {
        let Some(row) = report.get(key) else {
            return (false, format!("calibration report lacks {key}"));
        };
        let within = (row.achieved - target).abs() <= tol;
        ok &= within;
        parts.push(format!("{key}={:.4} ({target}±{tol})", row.achieved));
    }
    (ok, format!("{} patients: {}, {:.0}s < {}s", CALIBRATION_PATIENTS, parts.join(", "), elapsed.as_secs_f64(), CALIBRATION_BUDGET.as_secs()))
}

/// GRU configuration for the desk-scale few-shot comparison.
fn few_shot_setup() -> (EncoderConfig, TrainConfig) {
    let enc = EncoderConfig::gru(32, 64, 1, 48);
    let train = TrainConfig {
        epochs: 15,
        batch_size: 32,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    (enc, train)
}

fn table2_direction() -> Outcome {
    let t0 = Instant::now();
    let ds = generate_cohort(11, FEW_SHOT_PATIENTS, &GeneratorParams::default()).unwrap();
    let suite = tasks_for(&[Category::Mor, Category::Cmo, Category::Los]);
    let (enc, train) = few_shot_setup();
    let mut scores: BTreeMap<(&str, bool), Vec<f64>> = BTreeMap::new();
    for seed in 0..FEW_SHOT_SEEDS {
        let spec = |regime, few: bool, pre| RunSpec {
            dataset: &ds,
            suite: &suite,
            encoder: &enc,
            train: &train,
            regime,
            seed,
            subsample: if few {
                SubsampleSpec {
                    mode: SubsampleMode::FewShot { fraction: FEW_SHOT_FRACTION },
                    seed,
                }
            } else {
                SubsampleSpec::default()
            },
            pretrained: pre,
        };
        let omit = Regime::PretrainOmit(Category::Mor);
        let pre = Pretrained::from_model(omit, &run_regime(&spec(omit, false, None)).unwrap().model);
        for few in [true, false] {
            for (name, regime, p) in [("ST", Regime::St(Category::Mor), None), ("FTF", Regime::Ftf(Category::Mor), Some(&pre))] {
                let out = run_regime(&spec(regime, few, p)).unwrap();
                let s = out.result.test.category_score(Category::Mor).expect("MOR score");
                scores.entry((name, few)).or_default().push(s);
            }
        }
    }
    let elapsed = t0.elapsed();
    let (st1, ftf1) = (&scores[&("ST", true)], &scores[&("FTF", true)]);
    let (st100, ftf100) = (&scores[&("ST", false)], &scores[&("FTF", false)]);
    let gain = mean(ftf1) - mean(st1);
    let p = t_test(ftf1, st1, TTestKind::Welch).map_or(f64::NAN, |t| t.p);
    let full_gap = mean(ftf100) - mean(st100);
    let ok = gain >= FEW_SHOT_MIN_GAIN && p < FEW_SHOT_ALPHA && full_gap.abs() < FULL_DATA_MAX_GAP && elapsed < FEW_SHOT_BUDGET;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    (
        ok,
        format!(
            "1%: ST [{}] FTF [{}] gain {gain:+.3} (need >= {FEW_SHOT_MIN_GAIN}), Welch p={p:.3} (need < {FEW_SHOT_ALPHA}); 100%: ST [{}] FTF [{}] |gap| {:.3} (need < {FULL_DATA_MAX_GAP}); {:.0}s < {}s",
            fmt(st1),
            fmt(ftf1),
            fmt(st100),
            fmt(ftf100),
            full_gap.abs(),
            elapsed.as_secs_f64(),
            FEW_SHOT_BUDGET.as_secs()
        ),
    )
}

fn negative_transfer() -> Outcome {
    let params = GeneratorParams {
        adversarial_los: true,
        ..GeneratorParams::default()
    };
    let ds = generate_cohort(31, 1500, &params).unwrap();
    let cats = [Category::Mor, Category::Cmo, Category::Dnr, Category::Los, Category::Acu];
    let suite = tasks_for(&cats);
    // A narrow per-hour projection makes the tasks compete for capacity.
    let enc = EncoderConfig::linear(4, 48);
    let train = TrainConfig {
        epochs: 10,
        batch_size: 32,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let mut full = SeedScores::new();
    let mut omitted: BTreeMap<Category, SeedScores> = BTreeMap::new();
    for seed in 0..TRANSFER_SEEDS {
        let run = |regime| {
            let out = run_regime(&RunSpec {
                dataset: &ds,
                suite: &suite,
                encoder: &enc,
                train: &train,
                regime,
                seed,
                subsample: SubsampleSpec::default(),
                pretrained: None,
            })
            .unwrap();
            cats.iter()
                .filter_map(|&c| out.result.test.category_score(c).map(|s| (c, s)))
                .collect::<BTreeMap<_, _>>()
        };
        full.insert(seed, run(Regime::Mt));
        omitted.entry(Category::Los).or_default().insert(seed, run(Regime::PretrainOmit(Category::Los)));
    }
    let matrix = negative_transfer_matrix(&full, &omitted, &cats);
    let row: Vec<(Category, f64)> = cats
        .iter()
        .filter(|&&r| r != Category::Los)
        .filter_map(|&r| matrix[&(Category::Los, r)].value().map(|v| (r, v)))
        .collect();
    let avg = mean(&row.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let ok = row.len() == cats.len() - 1 && avg > 0.0;
    let cells = row.iter().map(|(r, v)| format!("{r} {v:+.4}")).collect::<Vec<_>>().join(", ");
    (ok, format!("omitting adversarial LOS over {TRANSFER_SEEDS} seeds: {cells}; mean delta {avg:+.4} (need > 0)"))
}

fn subsampling_exactness() -> Outcome {
    let ds = small_cohort(4, 2000);
    let train = ds.indices(Split::Train);
    let (tune, test) = (ds.indices(Split::Tune), ds.indices(Split::Test));
    let train_set: BTreeSet<usize> = train.iter().copied().collect();
    let mut bad = Vec::new();
    for pct in FEW_SHOT_GRID {
        let f = pct / 100.0;
        let spec = SubsampleSpec {
            mode: SubsampleMode::FewShot { fraction: f },
            seed: 9,
        };
        let keep = (f * train.len() as f64).round() as usize;
        match subsample(&ds, &train, &spec) {
            Ok(kept) => {
                let set: BTreeSet<usize> = kept.iter().copied().collect();
                if kept.len() != keep || set.len() != keep || !set.is_subset(&train_set) {
                    bad.push(format!("few-shot {pct}% kept {} of expected {keep}", kept.len()));
                }
            }
            Err(e) if keep == 0 => drop(e),
            Err(e) => bad.push(format!("few-shot {pct}%: {e}")),
        }
    }
    let spec = SubsampleSpec {
        mode: SubsampleMode::Imbalanced { female_removal: 1.0 },
        seed: 9,
    };
    let kept: BTreeSet<usize> = subsample(&ds, &train, &spec).unwrap().into_iter().collect();
    let males: BTreeSet<usize> = train.iter().copied().filter(|&i| ds.records[i].sex == Sex::M).collect();
    let females_left = kept.iter().filter(|&&i| ds.records[i].sex == Sex::F).count();
    if kept != males {
        bad.push(format!("imbalanced 1.0 kept {females_left} females and {} of {} males", kept.len() - females_left, males.len()));
    }
    if ds.indices(Split::Tune) != tune || ds.indices(Split::Test) != test {
        bad.push("tune or test split changed".into());
    }
    let held: BTreeSet<usize> = tune.iter().chain(&test).copied().collect();
    if !held.is_disjoint(&train_set) {
        bad.push("held-out patients leak into train".into());
    }
    (
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} few-shot fractions keep round(f*{}), female removal 1.0 keeps all {} males and 0 females, tune/test sets unchanged",
                FEW_SHOT_GRID.len(),
                train.len(),
                males.len()
            )
        } else {
            bad.join("; ")
        },
    )
}

fn determinism() -> Outcome {
    let ds = small_cohort(6, 150);
    let suite = tasks_for(&[Category::Mor, Category::Los, Category::Fts]);
    let enc = EncoderConfig::gru(4, 8, 1, 12);
    let train = TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let spec = RunSpec {
        dataset: &ds,
        suite: &suite,
        encoder: &enc,
        train: &train,
        regime: Regime::Mt,
        seed: 12,
        subsample: SubsampleSpec::default(),
        pretrained: None,
    };
    let (a, b) = (run_regime(&spec).unwrap(), run_regime(&spec).unwrap());
    let bits = |r: &mtlb::train::RunResult| serde_json::to_string(&r.test).unwrap();
    let same = a.result == b.result && bits(&a.result) == bits(&b.result);

    let dir = tempfile::tempdir().unwrap();
    let ctx = GridContext {
        dataset: &ds,
        suite: suite.clone(),
        encoder: enc.clone(),
        train: train.clone(),
        config_hash: "0123456789abcdef0123456789abcdef".into(),
        master_seed: 5,
        store: ResultsStore::new(dir.path().join("results.jsonl")),
        checkpoint_dir: dir.path().join("ckpt"),
    };
    let cells = enumerate(&GridRequest {
        regimes: vec![RegimeKind::St, RegimeKind::Ftf],
        categories: vec![Category::Mor, Category::Los],
        fractions: vec![1.0, 0.5],
        female_removal: vec![],
        seeds: vec![0],
    });
    let first = run_grid(&ctx, &cells, 1).unwrap();
    let rows_after_first = ctx.store.load().unwrap().len();
    let second = run_grid(&ctx, &cells, 1).unwrap();
    let rows = ctx.store.load().unwrap();
    let mut keys = BTreeMap::new();
    for r in &rows {
        *keys.entry((r.cell.clone(), r.category, r.subgroup)).or_insert(0) += 1;
    }
    let dupes = keys.values().filter(|&&n| n > 1).count();
    let ok = same
        && first.failed.is_empty()
        && first.executed == cells.len()
        && second.executed == 0
        && second.skipped == cells.len()
        && rows.len() == rows_after_first
        && dupes == 0;
    (
        ok,
        format!(
            "repeat run bit-identical={same}; grid of {} cells: first executed {}, resume executed {} and skipped {}, {dupes} duplicate records",
            cells.len(),
            first.executed,
            second.executed,
            second.skipped
        ),
    )
}

/// Negative squared distance to a fixed point on the transformed axes,
/// each axis scaled to unit range.
fn planted_objective(space: &SearchSpace, point: &Point) -> f64 {
    let mut total = 0.0;
    for (name, v) in point {
        let dist = &space.dim(name).expect("known dimension").dist;
        if dist.is_choice() {
            continue;
        }
        let x = dist.coord(v).expect("numeric value");
        let (lo, hi) = dist.coord_bounds().unwrap_or((-8.0, -6.0));
        let target = lo + 0.8 * (hi - lo);
        let u = (x - target) / (hi - lo);
        total -= u * u;
    }
    total
}

fn sweep_sanity() -> Outcome {
    let t0 = Instant::now();
    let space = SearchSpace::standard(&[EncoderKind::LinearConcat]).unwrap();

    // One real sweep: every trial is a full multi-task run on a small cohort.
    let ds = small_cohort(13, 200);
    let suite = TaskId::ALL.to_vec();
    let mut runner = mtlb::search::MtRunner {
        dataset: &ds,
        suite: &suite,
    };
    let real = run_sweep(&space, SWEEP_BUDGET, Strategy::Tpe, 1, &mut runner, |_| {}).unwrap();
    let finished = real.trials.iter().filter(|t| t.objective.is_some()).count();
    let real_best = real.best_objective().unwrap_or(f64::NAN);
    let real_time = t0.elapsed();

    // Planted optimum: TPE against random search with the same seeds.
    let mut wins = 0;
    for rep in 0..SWEEP_REPEATS {
        let mut f = |p: &Point, _seed: u64| -> mtlb::Result<f64> { Ok(planted_objective(&space, p)) };
        let tpe = run_sweep(&space, SWEEP_BUDGET, Strategy::Tpe, 100 + rep, &mut f, |_| {}).unwrap();
        let rnd = run_sweep(&space, SWEEP_BUDGET, Strategy::Random, 100 + rep, &mut f, |_| {}).unwrap();
        wins += usize::from(tpe.best_objective() > rnd.best_objective());
    }
    let elapsed = t0.elapsed();
    let ok = finished == SWEEP_BUDGET && real_best.is_finite() && wins >= SWEEP_MIN_WINS && elapsed < SWEEP_TIME;
    (
        ok,
        format!(
            "real {SWEEP_BUDGET}-trial sweep on {} patients: {finished} finished, best {real_best:.3} in {:.0}s; planted optimum: TPE beat random in {wins}/{SWEEP_REPEATS} (need >= {SWEEP_MIN_WINS}); total {:.0}s < {}s",
            ds.len(),
            real_time.as_secs_f64(),
            elapsed.as_secs_f64(),
            SWEEP_TIME.as_secs()
        ),
    )
}
