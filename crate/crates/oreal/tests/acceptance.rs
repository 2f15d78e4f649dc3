//! Acceptance suite: one test per criterion, each printing a pass line with
//! its measured values (visible with `--nocapture`).
//!
//! Criteria 5 and 6 share one expensive closed-loop simulation; whichever
//! test runs first pays for it and the fixture is reused.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oreal::balancing::{
    brute_force_items_per_class, items_per_class, min_after_allocation, ClassCounts,
};
use oreal::harness::{
    reference_miou, run_experiment_with_reference, ExperimentConfig,
    ExperimentResult, Prepared, RunRecord, SlicConfig,
};
use oreal::maps::ClassId;
use oreal::model::{cross_entropy_loss_and_grad, TrainConfig, FEATURE_DIM, WEIGHT_DIM};
use oreal::scoring::{aggregate, binary_entropy, ovr_entropy_pixel, pixel_entropy, AggregationMode};
use oreal::strategies::{select_by_class_debt, StrategyKind};
use oreal::superpixel::{dominant_fidelity, SuperpixelRef};
use oreal::synthgen::{generate_dataset, SceneConfig};

#[test]
fn criterion_1_allocation_matches_bruteforce_oracle() {
    let start = Instant::now();
    let mut checked = 0u64;
    for num_classes in 1..=4usize {
        let mut counts = vec![0usize; num_classes];
        loop {
            for budget in 0..=6usize {
                let c = ClassCounts(counts.clone());
                let greedy = items_per_class(&c, budget);
                let exhaustive = brute_force_items_per_class(&c, budget);
                assert_eq!(greedy.total(), budget, "budget conservation for {counts:?}");
                assert_eq!(
                    min_after_allocation(&c, &greedy),
                    min_after_allocation(&c, &exhaustive),
                    "objective mismatch at n={counts:?}, budget={budget}"
                );
                checked += 1;
            }
            let mut pos = 0;
            while pos < counts.len() {
                counts[pos] += 1;
                if counts[pos] <= 6 {
                    break;
                }
                counts[pos] = 0;
                pos += 1;
            }
            if pos == counts.len() {
                break;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "oracle sweep took {secs:.1}s");
    println!("criterion 1: PASS ({checked} instances, exact agreement, {secs:.2}s)");
}

#[test]
fn criterion_2_analytic_entropy_suite() {
    let start = Instant::now();

    assert!((pixel_entropy(&[0.5, 0.5]) - std::f64::consts::LN_2).abs() <= 1e-9);

    // Symmetry H(q) = H(1 - q) over a 1e-3 grid.
    for k in 0..=1000u32 {
        let q = k as f64 * 1e-3;
        assert!(
            (binary_entropy(q) - binary_entropy(1.0 - q)).abs() <= 1e-12,
            "asymmetry at q={q}"
        );
    }

    // Binary OVR entropy equals Shannon entropy; dyadic grid so the stored
    // f32 complement is exact (spacing 2^-10, on the order of 1e-3).
    for k in 0..=1024u32 {
        let q = k as f32 / 1024.0;
        let p = [q, 1.0 - q];
        let shannon = pixel_entropy(&p);
        for c in 0..2u32 {
            assert!(
                (ovr_entropy_pixel(&p, ClassId(c)) - shannon).abs() <= 1e-12,
                "OVR/Shannon gap at q={q}"
            );
        }
    }

    // Max dominates mean on 10^4 random superpixels, no violations.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10_000 {
        let len = rng.random_range(1..=40usize);
        let values: Vec<f64> = (0..len)
            .map(|_| rng.random::<f64>() * 5f64.ln())
            .collect();
        let max = aggregate(&values, AggregationMode::Max).unwrap();
        let mean = aggregate(&values, AggregationMode::Mean).unwrap();
        assert!(max >= mean, "dominance violated: max {max} < mean {mean}");
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0, "entropy suite took {secs:.1}s");
    println!("criterion 2: PASS (grids exact, 10000 dominance checks, {secs:.2}s)");
}

#[test]
fn criterion_3_class_debt_selection_trace() {
    let start = Instant::now();

    // Hand trace: three candidates, two classes, class 1 holds two labels.
    let sp = |i: usize| SuperpixelRef {
        image: 0,
        superpixel: i,
    };
    let candidates = vec![sp(0), sp(1), sp(2)]; // a, b, c
    let class_scores = vec![vec![0.2, 0.6, 0.7], vec![0.9, 0.5, 0.1]];
    let selected = select_by_class_debt(&candidates, &class_scores, &[0, 2], 2).unwrap();
    assert_eq!(selected, vec![sp(2), sp(1)], "hand trace must select c then b");

    // 100 randomized instances; when the per-class top sets don't collide,
    // the per-class quotas must match the debt vector exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut non_colliding = 0usize;
    for instance in 0..100 {
        let num_classes = rng.random_range(2..=4usize);
        let pool = rng.random_range(6..=20usize);
        let candidates: Vec<SuperpixelRef> = (0..pool).map(sp).collect();
        let class_scores: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| (0..pool).map(|_| rng.random::<f64>()).collect())
            .collect();
        let labeled_counts: Vec<usize> =
            (0..num_classes).map(|_| rng.random_range(0..=6)).collect();
        let budget = rng.random_range(1..=6.min(pool));

        let selected =
            select_by_class_debt(&candidates, &class_scores, &labeled_counts, budget).unwrap();
        assert_eq!(selected.len(), budget, "instance {instance}");
        let distinct: std::collections::BTreeSet<_> = selected.iter().collect();
        assert_eq!(distinct.len(), budget, "instance {instance}: duplicates");

        let debt = items_per_class(&ClassCounts(labeled_counts.clone()), budget);
        // Isolated top sets per class.
        let top_sets: Vec<std::collections::BTreeSet<usize>> = (0..num_classes)
            .map(|c| {
                let mut order: Vec<usize> = (0..pool).collect();
                order.sort_by(|&a, &b| {
                    class_scores[c][b]
                        .total_cmp(&class_scores[c][a])
                        .then(a.cmp(&b))
                });
                order.into_iter().take(debt.0[c]).collect()
            })
            .collect();
        let mut union = std::collections::BTreeSet::new();
        let mut total = 0usize;
        for set in &top_sets {
            total += set.len();
            union.extend(set.iter().cloned());
        }
        if union.len() == total {
            non_colliding += 1;
            let selected_set: std::collections::BTreeSet<usize> =
                selected.iter().map(|r| r.superpixel).collect();
            assert_eq!(selected_set, union, "instance {instance}: quota mismatch");
        }
    }
    assert!(non_colliding > 0, "no collision-free instances sampled");

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0);
    println!(
        "criterion 3: PASS (hand trace + 100 instances, {non_colliding} collision-free, {secs:.2}s)"
    );
}

#[test]
fn criterion_4_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst = 0f64;
    for _ in 0..20 {
        let num_classes = rng.random_range(2..=5usize);
        let samples = rng.random_range(4..=12usize);
        let features: Vec<f64> = (0..samples * FEATURE_DIM)
            .map(|_| rng.random::<f64>())
            .collect();
        let labels: Vec<u32> = (0..samples)
            .map(|_| rng.random_range(0..num_classes as u32))
            .collect();
        let matrix: Vec<f64> = (0..num_classes * WEIGHT_DIM)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();

        let (_, grad) = cross_entropy_loss_and_grad(&matrix, num_classes, &features, &labels);
        let step = 1e-5;
        let mut fd = vec![0f64; matrix.len()];
        for i in 0..matrix.len() {
            let mut plus = matrix.clone();
            plus[i] += step;
            let mut minus = matrix.clone();
            minus[i] -= step;
            let (lp, _) = cross_entropy_loss_and_grad(&plus, num_classes, &features, &labels);
            let (lm, _) = cross_entropy_loss_and_grad(&minus, num_classes, &features, &labels);
            fd[i] = (lp - lm) / (2.0 * step);
        }
        let norm =
            |v: &[f64]| -> f64 { v.iter().map(|x| x * x).sum::<f64>().sqrt() };
        let diff: Vec<f64> = grad.iter().zip(fd.iter()).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&grad).max(1e-12);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0);
    println!("criterion 4: PASS (20 instances, worst relative error {worst:.2e}, {secs:.2}s)");
}

// ---------------------------------------------------------------------------
// Shared closed-loop fixture for criteria 5 and 6
// ---------------------------------------------------------------------------

const SEEDS: u64 = 10;
const SEED_ROOT: u64 = 1000;

struct BigRun {
    random: ExperimentResult,
    bvsb_max: ExperimentResult,
    bvsb_mean: ExperimentResult,
    entropy_max: ExperimentResult,
    entropy_mean: ExperimentResult,
    oreal_max: ExperimentResult,
    oreal_mean: ExperimentResult,
}

fn big_run() -> &'static BigRun {
    static RUN: OnceLock<BigRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let scene = SceneConfig::default();
        let dataset = generate_dataset(&scene, 40, 8, 20).expect("dataset");
        let prepared = Prepared::from_dataset(dataset, 36, &SlicConfig::default()).expect("slic");
        let reference = reference_miou(&prepared, &TrainConfig::default()).expect("reference");
        let run = |strategy: StrategyKind, mode: AggregationMode| {
            let mut cfg = ExperimentConfig::new(strategy, mode);
            cfg.budget = 60;
            cfg.steps = 6;
            cfg.num_seeds = SEEDS;
            cfg.seed_root = SEED_ROOT;
            run_experiment_with_reference(&prepared, &cfg, reference).expect("experiment")
        };
        BigRun {
            random: run(StrategyKind::Random, AggregationMode::Max),
            bvsb_max: run(StrategyKind::Bvsb, AggregationMode::Max),
            bvsb_mean: run(StrategyKind::Bvsb, AggregationMode::Mean),
            entropy_max: run(StrategyKind::Entropy, AggregationMode::Max),
            entropy_mean: run(StrategyKind::Entropy, AggregationMode::Mean),
            oreal_max: run(StrategyKind::Oreal, AggregationMode::Max),
            oreal_mean: run(StrategyKind::Oreal, AggregationMode::Mean),
        }
    })
}

fn per_seed(result: &ExperimentResult, f: impl Fn(&[&RunRecord]) -> f64) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for seed in result.records.iter().map(|r| r.seed) {
        out.entry(seed).or_insert_with(|| {
            let rs: Vec<&RunRecord> = result.records.iter().filter(|r| r.seed == seed).collect();
            f(&rs)
        });
    }
    assert_eq!(out.len(), SEEDS as usize, "every seed must complete");
    out
}

/// (per-seed win count for a > b, mean paired difference).
fn paired(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> (usize, f64) {
    let mut wins = 0;
    let mut total = 0.0;
    for (seed, va) in a {
        let vb = b[seed];
        if *va > vb {
            wins += 1;
        }
        total += va - vb;
    }
    (wins, total / a.len() as f64)
}

fn final_min_class_count(rs: &[&RunRecord]) -> f64 {
    rs.iter().find(|r| r.step == 6).unwrap().min_class_count as f64
}

fn final_balance_entropy(rs: &[&RunRecord]) -> f64 {
    rs.iter().find(|r| r.step == 6).unwrap().balance_entropy
}

fn mean_boundary_fraction(rs: &[&RunRecord]) -> f64 {
    rs.iter().map(|r| r.boundary_frac).sum::<f64>() / rs.len() as f64
}

#[test]
fn criterion_5_class_balance_beats_baselines() {
    let start = Instant::now();
    let run = big_run();
    for (name, baseline) in [("random", &run.random), ("bvsb-max", &run.bvsb_max)] {
        let (wins, diff) = paired(
            &per_seed(&run.oreal_max, final_min_class_count),
            &per_seed(baseline, final_min_class_count),
        );
        assert!(
            diff > 0.0 && wins >= 8,
            "min class count vs {name}: wins {wins}/10, mean diff {diff:+.2}"
        );
        let (wins_e, diff_e) = paired(
            &per_seed(&run.oreal_max, final_balance_entropy),
            &per_seed(baseline, final_balance_entropy),
        );
        assert!(
            diff_e > 0.0 && wins_e >= 8,
            "balance entropy vs {name}: wins {wins_e}/10, mean diff {diff_e:+.4}"
        );
        println!(
            "criterion 5 vs {name}: min-count wins {wins}/10 (diff {diff:+.2}), \
             entropy wins {wins_e}/10 (diff {diff_e:+.4})"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 900.0, "simulation fixture took {secs:.0}s");
    println!("criterion 5: PASS (class balancing, {secs:.0}s incl. shared fixture)");
}

#[test]
fn criterion_6_boundary_sampling_and_aualc() {
    let start = Instant::now();
    let run = big_run();
    for (name, max_run, mean_run) in [
        ("entropy", &run.entropy_max, &run.entropy_mean),
        ("bvsb", &run.bvsb_max, &run.bvsb_mean),
        ("oreal", &run.oreal_max, &run.oreal_mean),
    ] {
        let (wins, diff) = paired(
            &per_seed(max_run, mean_boundary_fraction),
            &per_seed(mean_run, mean_boundary_fraction),
        );
        assert!(
            diff > 0.0 && wins >= 8,
            "{name}: boundary fraction max vs mean, wins {wins}/10, diff {diff:+.4}"
        );
        println!("criterion 6 {name}: boundary wins {wins}/10 (diff {diff:+.4})");
    }

    let aualc_of = |r: &ExperimentResult| -> BTreeMap<u64, f64> {
        r.per_seed_aualc.iter().cloned().collect()
    };
    let max_aualc = aualc_of(&run.oreal_max);
    let mean_aualc = aualc_of(&run.oreal_mean);
    let mean_of = |m: &BTreeMap<u64, f64>| m.values().sum::<f64>() / m.len() as f64;
    let (_, paired_diff) = paired(&max_aualc, &mean_aualc);
    let (mm, mn) = (mean_of(&max_aualc), mean_of(&mean_aualc));
    assert!(
        mm >= mn - 0.005,
        "OREAL AuALC: max {mm:.4} below mean {mn:.4} - 0.005"
    );
    assert!(
        paired_diff > 0.0,
        "OREAL AuALC paired difference {paired_diff:+.4} not positive"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 900.0, "simulation fixture took {secs:.0}s");
    println!(
        "criterion 6: PASS (AuALC max {mm:.4} vs mean {mn:.4}, paired diff {paired_diff:+.4}, \
         {secs:.0}s incl. shared fixture)"
    );
}

#[test]
fn criterion_7_noise_free_ceiling_and_fidelity() {
    let start = Instant::now();
    let scene = SceneConfig {
        noise_sigma: 0.0,
        ..SceneConfig::default()
    };
    let dataset = generate_dataset(&scene, 40, 8, 20).unwrap();
    let prepared = Prepared::from_dataset(dataset, 36, &SlicConfig::default()).unwrap();

    // Dominant-label fidelity: the measured disagreement must equal the
    // closed-form modal-count formula exactly, image by image.
    for &img in &prepared.dataset.splits.train {
        let part = &prepared.partitions[img];
        let gt = &prepared.dataset.masks[img];
        let report = dominant_fidelity(part, gt);
        let modal_total: usize = (0..part.num_superpixels())
            .map(|sp| {
                let mut counts = vec![0usize; gt.num_classes];
                for &p in part.members(sp) {
                    counts[gt.labels[p] as usize] += 1;
                }
                counts.into_iter().max().unwrap()
            })
            .sum();
        assert_eq!(
            report.disagreeing_pixels,
            gt.num_pixels() - modal_total,
            "fidelity formula mismatch on image {img}"
        );
    }

    let reference = reference_miou(&prepared, &TrainConfig::default()).unwrap();
    assert!(
        reference >= 0.95,
        "noise-free full-training test mIoU {reference:.4} below 0.95"
    );

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0);
    println!("criterion 7: PASS (test mIoU {reference:.4}, exact fidelity, {secs:.1}s)");
}

#[test]
fn criterion_8_protocol_invariants_on_smoke_dataset() {
    let start = Instant::now();
    let scene = SceneConfig {
        height: 32,
        width: 32,
        seed: 5,
        ..SceneConfig::default()
    };
    let dataset = generate_dataset(&scene, 10, 2, 3).unwrap();
    let prepared = Prepared::from_dataset(dataset, 9, &SlicConfig::default()).unwrap();
    let reference = reference_miou(&prepared, &TrainConfig::default()).unwrap();

    for strategy in StrategyKind::ALL {
        for mode in [AggregationMode::Mean, AggregationMode::Max] {
            let mut cfg = ExperimentConfig::new(strategy, mode);
            cfg.budget = 9;
            cfg.steps = 3;
            cfg.num_seeds = 3;
            cfg.seed_root = 7;
            let result = run_experiment_with_reference(&prepared, &cfg, reference).unwrap();
            assert!(result.aborted_seeds.is_empty());
            assert_eq!(result.records.len(), 9, "{strategy} {mode}: 3 seeds x 3 steps");
            for record in &result.records {
                // Exact budget per step; the dominant scheme costs 1 click
                // per superpixel, so clicks count annotations directly.
                assert_eq!(
                    record.clicks,
                    cfg.budget as u64 * record.step as u64,
                    "{strategy} {mode}: budget exactness"
                );
            }
            // Byte-identical rerun (disjointness and double-annotation are
            // enforced by construction inside the loop; a violation panics).
            let again = run_experiment_with_reference(&prepared, &cfg, reference).unwrap();
            assert_eq!(
                oreal::harness::records_to_csv(&result.records),
                oreal::harness::records_to_csv(&again.records),
                "{strategy} {mode}: rerun not byte-identical"
            );
            let summary_a = oreal::harness::summary_to_json(&oreal::harness::summarize(&result));
            let summary_b = oreal::harness::summary_to_json(&oreal::harness::summarize(&again));
            assert_eq!(summary_a, summary_b);
        }
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0);
    println!("criterion 8: PASS (7 strategies x 2 modes x 3 seeds, byte-identical reruns, {secs:.1}s)");
}
