//! Closed-loop experiment orchestration: generate or load a dataset, run the
//! annotate-train-select loop per seed, and emit CSV/JSON/SVG results.
//!
//! Seeds are independent units of work and run in parallel; their records
//! are merged in seed order so all emitted artifacts are deterministic for a
//! fixed (config, seed-root) pair.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::maps::{ClassId, GroundTruthMask, PartialLabelMap};
use crate::metrics::{aualc, balance_report, boundary_fraction, miou_pooled, ALCurve};
use crate::model::{
    extract_features, predict_labels, predict_proba, train, ClassifierWeights, FeatureMap,
    TrainConfig,
};
use crate::scoring::AggregationMode;
use crate::strategies::{
    score_superpixels, select_oreal, select_random, select_top_k, ALState, StrategyKind,
};
use crate::superpixel::{
    annotate, dominant_fidelity, dominant_label, expand_to_pixels, slic_partition, Annotation,
    LabelScheme, SuperpixelPartition, SuperpixelRef,
};
use crate::synthgen::{generate_dataset, Dataset, SceneConfig, Splits};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicConfig {
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SlicConfig {
    fn default() -> Self {
        SlicConfig {
            compactness: 10.0,
            iterations: 10,
        }
    }
}

/// Everything the `gen` subcommand needs: the scene generator, split sizes,
/// and the partitioner settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub scene: SceneConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub superpixels_per_image: usize,
    pub slic: SlicConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scene: SceneConfig::default(),
            n_train: 40,
            n_val: 8,
            n_test: 20,
            superpixels_per_image: 36,
            slic: SlicConfig::default(),
        }
    }
}

/// A dataset plus every derived artifact the loop needs: superpixel
/// partitions, per-pixel features, and dominant-labeled validation masks.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub partitions: Vec<SuperpixelPartition>,
    pub features: Vec<FeatureMap>,
    /// Dominant-label masks for the validation split, in split order.
    pub val_dominant: Vec<GroundTruthMask>,
}

impl Prepared {
    /// Partition and featurize a freshly generated dataset.
    pub fn from_dataset(dataset: Dataset, per_image: usize, slic: &SlicConfig) -> Result<Self> {
        let partitions: Vec<SuperpixelPartition> = dataset
            .images
            .par_iter()
            .map(|img| slic_partition(img, per_image, slic.compactness, slic.iterations))
            .collect::<Result<_>>()?;
        Ok(Self::from_parts(dataset, partitions))
    }

    /// Attach precomputed partitions (the `run` subcommand's load path).
    pub fn from_parts(dataset: Dataset, partitions: Vec<SuperpixelPartition>) -> Self {
        let features: Vec<FeatureMap> = dataset.images.par_iter().map(extract_features).collect();
        let val_dominant = dominant_masks(&dataset, &partitions, &dataset.splits.val);
        Prepared {
            dataset,
            partitions,
            features,
            val_dominant,
        }
    }

    fn features_of(&self, indices: &[usize]) -> Vec<&FeatureMap> {
        indices.iter().map(|&i| &self.features[i]).collect()
    }

    /// All annotatable superpixels (the training split).
    pub fn universe(&self) -> Vec<SuperpixelRef> {
        self.dataset
            .splits
            .train
            .iter()
            .flat_map(|&img| {
                (0..self.partitions[img].num_superpixels()).map(move |superpixel| SuperpixelRef {
                    image: img,
                    superpixel,
                })
            })
            .collect()
    }
}

/// Fully expanded dominant-label masks for a list of images.
pub fn dominant_masks(
    dataset: &Dataset,
    partitions: &[SuperpixelPartition],
    indices: &[usize],
) -> Vec<GroundTruthMask> {
    indices
        .iter()
        .map(|&img| {
            let part = &partitions[img];
            let gt = &dataset.masks[img];
            let mut labels = vec![0u32; gt.num_pixels()];
            for sp in 0..part.num_superpixels() {
                let label = dominant_label(part, sp, gt);
                for &pixel in part.members(sp) {
                    labels[pixel] = label.0;
                }
            }
            GroundTruthMask::new(gt.height, gt.width, gt.num_classes, labels)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategy: StrategyKind,
    pub aggregation: AggregationMode,
    /// Superpixels annotated per step.
    pub budget: usize,
    pub steps: usize,
    pub num_seeds: u64,
    pub seed_root: u64,
    pub scheme: LabelScheme,
    pub train: TrainConfig,
    /// Chebyshev radius for the boundary-adjacency statistic.
    pub boundary_radius: usize,
    /// Off by default so rerunning a config reproduces output byte for byte.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(strategy: StrategyKind, aggregation: AggregationMode) -> Self {
        ExperimentConfig {
            strategy,
            aggregation,
            budget: 60,
            steps: 6,
            num_seeds: 1,
            seed_root: 0,
            scheme: LabelScheme::Dominant,
            train: TrainConfig::default(),
            boundary_radius: 1,
            record_timing: false,
        }
    }

    fn validate(&self, prepared: &Prepared) -> Result<()> {
        if self.scheme == LabelScheme::Weak {
            return Err(Error::InvalidConfig(
                "the weak scheme only drives oracle click statistics; \
                 training runs require --scheme dominant"
                    .into(),
            ));
        }
        if self.steps < 1 || self.num_seeds < 1 {
            return Err(Error::InvalidConfig("steps and seeds must be >= 1".into()));
        }
        let num_classes = prepared.dataset.num_classes();
        if self.budget < num_classes {
            return Err(Error::InvalidConfig(format!(
                "budget {} cannot cover all {} classes",
                self.budget, num_classes
            )));
        }
        let pool = prepared.universe().len();
        if self.budget > pool {
            return Err(Error::BudgetExceedsPool {
                budget: self.budget,
                pool,
            });
        }
        self.train.validate()
    }
}

/// One row of runs.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub step: usize,
    pub clicks: u64,
    pub miou_val: f64,
    pub miou_test: f64,
    pub min_class_count: usize,
    pub balance_entropy: f64,
    pub boundary_frac: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    /// (seed, AuALC); empty when fewer than two steps were run.
    pub per_seed_aualc: Vec<(u64, f64)>,
    pub reference_miou: f64,
    /// Seeds that aborted with `NoLabels` (their records are absent).
    pub aborted_seeds: Vec<u64>,
}

/// Test mIoU of a model trained on the full dominant-labeled training split.
/// Deterministic for a fixed dataset: zero init, full batch, no sampling.
pub fn reference_miou(prepared: &Prepared, train_cfg: &TrainConfig) -> Result<f64> {
    let train_idx = &prepared.dataset.splits.train;
    let dominant = dominant_masks(&prepared.dataset, &prepared.partitions, train_idx);
    let full_labels: Vec<PartialLabelMap> = dominant
        .iter()
        .map(|mask| {
            PartialLabelMap::from_raw(
                mask.height,
                mask.width,
                mask.num_classes,
                mask.labels.iter().map(|&l| l as i32).collect(),
            )
        })
        .collect();
    let label_refs: Vec<&PartialLabelMap> = full_labels.iter().collect();
    let outcome = train(
        &prepared.features_of(train_idx),
        &label_refs,
        &prepared.features_of(&prepared.dataset.splits.val),
        &prepared.val_dominant.iter().collect::<Vec<_>>(),
        prepared.dataset.num_classes(),
        None,
        train_cfg,
    )?;
    Ok(test_miou(prepared, &outcome.weights))
}

fn test_miou(prepared: &Prepared, weights: &ClassifierWeights) -> f64 {
    let test_idx = &prepared.dataset.splits.test;
    let preds: Vec<GroundTruthMask> = test_idx
        .iter()
        .map(|&img| {
            predict_labels(
                &weights.shadow,
                weights.num_classes,
                &prepared.features[img],
            )
        })
        .collect();
    let gts: Vec<GroundTruthMask> = test_idx
        .iter()
        .map(|&img| prepared.dataset.masks[img].clone())
        .collect();
    miou_pooled(&preds, &gts, prepared.dataset.num_classes())
}

/// Run every seed of one experiment, computing the full-training reference
/// internally.
pub fn run_experiment(prepared: &Prepared, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate(prepared)?;
    let reference = reference_miou(prepared, &cfg.train)?;
    run_experiment_with_reference(prepared, cfg, reference)
}

/// Same, but against a caller-supplied reference mIoU (lets several strategy
/// configs share one reference computation on the same dataset).
pub fn run_experiment_with_reference(
    prepared: &Prepared,
    cfg: &ExperimentConfig,
    reference: f64,
) -> Result<ExperimentResult> {
    cfg.validate(prepared)?;
    let seed_outcomes: Vec<(u64, Option<Vec<RunRecord>>)> = (0..cfg.num_seeds)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed_root.wrapping_add(i);
            match run_seed(prepared, cfg, seed) {
                Ok(records) => Ok((seed, Some(records))),
                Err(Error::NoLabels) => Ok((seed, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut per_seed_aualc = Vec::new();
    let mut aborted = Vec::new();
    for (seed, outcome) in seed_outcomes {
        match outcome {
            None => aborted.push(seed),
            Some(seed_records) => {
                if seed_records.len() >= 2 {
                    let curve = ALCurve {
                        points: seed_records
                            .iter()
                            .map(|r| (r.clicks, r.miou_test))
                            .collect(),
                        reference_miou: reference,
                    };
                    per_seed_aualc.push((seed, aualc(&curve)?));
                }
                records.extend(seed_records);
            }
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        records,
        per_seed_aualc,
        reference_miou: reference,
        aborted_seeds: aborted,
    })
}

/// One seed of the loop: a random cold-start query, then model-driven
/// queries; each step annotates, folds in the labels, retrains (warm start),
/// and records metrics of the grown labeled set.
fn run_seed(prepared: &Prepared, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<RunRecord>> {
    let dataset = &prepared.dataset;
    let num_classes = dataset.num_classes();
    let train_idx = &dataset.splits.train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut state = ALState::new(prepared.universe());
    let mut partial: Vec<PartialLabelMap> = dataset
        .images
        .iter()
        .map(|img| PartialLabelMap::unlabeled(img.height, img.width, num_classes))
        .collect();
    let mut weights: Option<ClassifierWeights> = None;
    let mut clicks = 0u64;
    let mut records = Vec::with_capacity(cfg.steps);

    let val_features = prepared.features_of(&dataset.splits.val);
    let val_masks: Vec<&GroundTruthMask> = prepared.val_dominant.iter().collect();
    let train_features = prepared.features_of(train_idx);

    for step in 1..=cfg.steps {
        let start = Instant::now();
        state.step = step;

        // A depleted pool shrinks the last query instead of failing.
        let budget = cfg.budget.min(state.num_candidates());
        if budget == 0 {
            break;
        }

        let query: Vec<SuperpixelRef> = if step == 1 || cfg.strategy == StrategyKind::Random {
            select_random(&state, budget, &mut rng)?
        } else {
            let model = weights.as_ref().expect("trained at the previous step");
            let prob_maps: Vec<crate::maps::ProbabilityMap> = dataset
                .images
                .iter()
                .enumerate()
                .map(|(img, _)| predict_proba(model, &prepared.features[img]))
                .collect();
            match cfg.strategy {
                StrategyKind::Oreal => select_oreal(
                    &state,
                    &prob_maps,
                    &prepared.partitions,
                    budget,
                    cfg.aggregation,
                )?,
                kind => {
                    let rule = kind.scoring_rule().expect("random handled above");
                    let scores = score_superpixels(
                        &state,
                        &prob_maps,
                        &prepared.partitions,
                        rule,
                        cfg.aggregation,
                        budget,
                    )?;
                    select_top_k(&scores, budget)?
                }
            }
        };

        let (annotations, cost) = annotate(
            &query,
            &prepared.partitions,
            &dataset.masks,
            LabelScheme::Dominant,
        );
        clicks += cost as u64;
        let mut labeled_batch: Vec<(SuperpixelRef, ClassId)> = Vec::with_capacity(query.len());
        for (sp_ref, annotation) in annotations {
            let Annotation::Dominant(label) = annotation else {
                unreachable!("dominant scheme returns single labels")
            };
            expand_to_pixels(
                &prepared.partitions[sp_ref.image],
                sp_ref.superpixel,
                label,
                &mut partial[sp_ref.image],
            );
            labeled_batch.push((sp_ref, label));
        }
        state.absorb(&labeled_batch);

        let label_refs: Vec<&PartialLabelMap> = train_idx.iter().map(|&i| &partial[i]).collect();
        let outcome = train(
            &train_features,
            &label_refs,
            &val_features,
            &val_masks,
            num_classes,
            weights.as_ref(),
            &cfg.train,
        )?;
        let miou_test = test_miou(prepared, &outcome.weights);
        let (min_class_count, balance_entropy) = balance_report(&state.labeled, num_classes);
        let boundary_frac = boundary_fraction(
            &query,
            &prepared.partitions,
            &dataset.masks,
            cfg.boundary_radius,
        );
        records.push(RunRecord {
            seed,
            step,
            clicks,
            miou_val: outcome.best_val_miou,
            miou_test,
            min_class_count,
            balance_entropy,
            boundary_frac,
            seconds: if cfg.record_timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        weights = Some(outcome.weights);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Result emission
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str =
    "seed,step,clicks,miou_val,miou_test,min_class_count,balance_entropy,boundary_frac,seconds";

pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{:.6},{:.6},{:.3}\n",
            r.seed,
            r.step,
            r.clicks,
            r.miou_val,
            r.miou_test,
            r.min_class_count,
            r.balance_entropy,
            r.boundary_frac,
            r.seconds
        ));
    }
    out
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRecord>> {
    let bad = |line: &str| Error::BadContainer(format!("bad runs.csv line: {line}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(Error::BadContainer(format!(
                "bad runs.csv header: {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(bad(line));
            }
            Ok(RunRecord {
                seed: fields[0].parse().map_err(|_| bad(line))?,
                step: fields[1].parse().map_err(|_| bad(line))?,
                clicks: fields[2].parse().map_err(|_| bad(line))?,
                miou_val: fields[3].parse().map_err(|_| bad(line))?,
                miou_test: fields[4].parse().map_err(|_| bad(line))?,
                min_class_count: fields[5].parse().map_err(|_| bad(line))?,
                balance_entropy: fields[6].parse().map_err(|_| bad(line))?,
                boundary_frac: fields[7].parse().map_err(|_| bad(line))?,
                seconds: fields[8].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub clicks: u64,
    pub miou_mean: f64,
    pub miou_std: f64,
}

/// The summary.json payload of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub strategy: StrategyKind,
    pub aggregation: AggregationMode,
    pub reference_miou: f64,
    pub aualc_mean: f64,
    pub aualc_std: f64,
    pub aualc_per_seed: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub config: ExperimentConfig,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

pub fn summarize(result: &ExperimentResult) -> RunSummary {
    let steps = result.config.steps;
    let mut curve = Vec::with_capacity(steps);
    for step in 1..=steps {
        let step_records: Vec<&RunRecord> =
            result.records.iter().filter(|r| r.step == step).collect();
        if step_records.is_empty() {
            continue;
        }
        let mious: Vec<f64> = step_records.iter().map(|r| r.miou_test).collect();
        let (miou_mean, miou_std) = mean_std(&mious);
        curve.push(CurvePoint {
            clicks: step_records[0].clicks,
            miou_mean,
            miou_std,
        });
    }
    let aualcs: Vec<f64> = result.per_seed_aualc.iter().map(|&(_, a)| a).collect();
    let (aualc_mean, aualc_std) = mean_std(&aualcs);
    RunSummary {
        format_version: FORMAT_VERSION,
        strategy: result.config.strategy,
        aggregation: result.config.aggregation,
        reference_miou: result.reference_miou,
        aualc_mean,
        aualc_std,
        aualc_per_seed: aualcs,
        curve,
        config: result.config.clone(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn summary_to_json(summary: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    text
}

/// Write runs.csv, summary.json, and curves.svg for one finished experiment.
pub fn emit_results(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    if result.records.is_empty() {
        return Err(Error::InvalidConfig("no records to emit".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("runs.csv"), &records_to_csv(&result.records))?;
    let summary = summarize(result);
    write_text(&out_dir.join("summary.json"), &summary_to_json(&summary))?;
    write_text(&out_dir.join("curves.svg"), &render_curves_svg(&[summary]))?;
    Ok(())
}

/// Merge several run directories: a combined CSV (with strategy and
/// aggregation columns prepended), a merged summary, and one curve per
/// strategy in a single SVG.
pub fn write_report(run_dirs: &[impl AsRef<Path>], out_dir: &Path) -> Result<()> {
    let mut summaries = Vec::new();
    let mut merged_rows = Vec::new();
    for dir in run_dirs {
        let dir = dir.as_ref();
        let summary: RunSummary = serde_json::from_str(&read_text(&dir.join("summary.json"))?)
            .map_err(|e| Error::Json {
                path: dir.join("summary.json"),
                source: e,
            })?;
        let records = parse_runs_csv(&read_text(&dir.join("runs.csv"))?)?;
        for r in &records {
            merged_rows.push(format!(
                "{},{},{}",
                summary.strategy,
                summary.aggregation,
                records_to_csv(std::slice::from_ref(r))
                    .lines()
                    .nth(1)
                    .unwrap()
            ));
        }
        summaries.push(summary);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut csv = format!("strategy,aggregation,{CSV_HEADER}\n");
    for row in merged_rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    write_text(&out_dir.join("runs.csv"), &csv)?;

    let merged = MergedSummary {
        format_version: FORMAT_VERSION,
        runs: summaries.clone(),
    };
    let mut json = serde_json::to_string_pretty(&merged).expect("summary serializes");
    json.push('\n');
    write_text(&out_dir.join("summary.json"), &json)?;
    write_text(&out_dir.join("curves.svg"), &render_curves_svg(&summaries))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedSummary {
    pub format_version: u32,
    pub runs: Vec<RunSummary>,
}

const SVG_COLORS: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e8540", "#8953ad", "#c77b21", "#11777b", "#7a3e2e", "#49494b",
];

/// Mean curves with +-1 std bands. Exactly one `<polyline>` per strategy;
/// everything else is drawn with `<line>`, `<path>`, and `<text>`.
pub fn render_curves_svg(summaries: &[RunSummary]) -> String {
    let (width, height) = (720.0, 480.0);
    let (left, right, top, bottom) = (70.0, 24.0, 24.0, 56.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let xs: Vec<u64> = summaries
        .iter()
        .flat_map(|s| s.curve.iter().map(|p| p.clicks))
        .collect();
    let x_min = xs.iter().cloned().min().unwrap_or(0) as f64;
    let x_max = xs.iter().cloned().max().unwrap_or(1).max(1) as f64;
    let x_span = (x_max - x_min).max(1.0);
    let y_max = summaries
        .iter()
        .flat_map(|s| {
            s.curve
                .iter()
                .map(|p| p.miou_mean + p.miou_std)
                .chain(std::iter::once(s.reference_miou))
        })
        .fold(0.2f64, f64::max)
        * 1.05;

    let x_of = |clicks: f64| left + (clicks - x_min) / x_span * plot_w;
    let y_of = |miou: f64| top + (1.0 - miou / y_max) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Axes and ticks.
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + plot_h
    ));
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let x = left + frac * plot_w;
        let clicks = x_min + frac * x_span;
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"black\"/>\n",
            top + plot_h,
            top + plot_h + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{:.0}</text>\n",
            top + plot_h + 20.0,
            clicks
        ));
        let y = top + plot_h - frac * plot_h;
        let miou = frac * y_max;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{left}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            left - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{miou:.2}</text>\n",
            left - 9.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">annotated superpixels (clicks)</text>\n",
        left + plot_w / 2.0,
        height - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">test mIoU</text>\n",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    ));

    for (i, summary) in summaries.iter().enumerate() {
        let color = SVG_COLORS[i % SVG_COLORS.len()];
        if summary.curve.is_empty() {
            continue;
        }
        // Reference ceiling, dashed.
        let ref_y = y_of(summary.reference_miou);
        svg.push_str(&format!(
            "<line x1=\"{left}\" y1=\"{ref_y:.2}\" x2=\"{:.2}\" y2=\"{ref_y:.2}\" \
             stroke=\"{color}\" stroke-dasharray=\"6 4\" opacity=\"0.5\"/>\n",
            left + plot_w
        ));
        // Std band as a closed path.
        let mut band = String::from("M");
        for p in &summary.curve {
            band.push_str(&format!(
                " {:.2} {:.2}",
                x_of(p.clicks as f64),
                y_of(p.miou_mean + p.miou_std)
            ));
        }
        for p in summary.curve.iter().rev() {
            band.push_str(&format!(
                " L {:.2} {:.2}",
                x_of(p.clicks as f64),
                y_of((p.miou_mean - p.miou_std).max(0.0))
            ));
        }
        band.push_str(" Z");
        svg.push_str(&format!(
            "<path d=\"{band}\" fill=\"{color}\" opacity=\"0.15\" stroke=\"none\"/>\n"
        ));
        // Mean polyline.
        let points: Vec<String> = summary
            .curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", x_of(p.clicks as f64), y_of(p.miou_mean)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{} ({})</text>\n",
            left + 10.0,
            top + 16.0 + 16.0 * i as f64,
            summary.strategy,
            summary.aggregation
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Dataset persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub test: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub gen: GenConfig,
    pub splits: Splits,
    pub class_pixel_frequencies: SplitStats,
    /// Pixel fraction the dominant labeling gets wrong, per split.
    pub dominant_disagreement: SplitStats2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitStats2 {
    pub train: f64,
    pub val: f64,
}

fn split_disagreement(
    dataset: &Dataset,
    partitions: &[SuperpixelPartition],
    indices: &[usize],
) -> f64 {
    let mut wrong = 0usize;
    let mut total = 0usize;
    for &img in indices {
        let report = dominant_fidelity(&partitions[img], &dataset.masks[img]);
        wrong += report.disagreeing_pixels;
        total += report.total_pixels;
    }
    wrong as f64 / total.max(1) as f64
}

/// Generate, partition, and persist a dataset directory.
pub fn generate_and_save(gen: &GenConfig, out_dir: &Path) -> Result<Manifest> {
    let dataset = generate_dataset(&gen.scene, gen.n_train, gen.n_val, gen.n_test)?;
    if gen.superpixels_per_image == 0
        || gen.superpixels_per_image > gen.scene.height * gen.scene.width
    {
        return Err(Error::InvalidConfig(format!(
            "superpixels_per_image {} out of range",
            gen.superpixels_per_image
        )));
    }
    let partitions: Vec<SuperpixelPartition> = dataset
        .images
        .par_iter()
        .map(|img| {
            slic_partition(
                img,
                gen.superpixels_per_image,
                gen.slic.compactness,
                gen.slic.iterations,
            )
        })
        .collect::<Result<_>>()?;
    save_dataset(&dataset, &partitions, gen, out_dir)
}

pub fn save_dataset(
    dataset: &Dataset,
    partitions: &[SuperpixelPartition],
    gen: &GenConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    for sub in ["images", "masks", "parts"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir.join(sub), e))?;
    }
    for (i, image) in dataset.images.iter().enumerate() {
        io::write_image(&out_dir.join(format!("images/img_{i:05}.orim")), image)?;
        io::write_mask(&out_dir.join(format!("masks/mask_{i:05}.orlm")), &dataset.masks[i])?;
        io::write_partition(&out_dir.join(format!("parts/part_{i:05}.orsp")), &partitions[i])?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        gen: gen.clone(),
        splits: dataset.splits.clone(),
        class_pixel_frequencies: SplitStats {
            train: dataset.class_pixel_frequencies(&dataset.splits.train),
            val: dataset.class_pixel_frequencies(&dataset.splits.val),
            test: dataset.class_pixel_frequencies(&dataset.splits.test),
        },
        dominant_disagreement: SplitStats2 {
            train: split_disagreement(dataset, partitions, &dataset.splits.train),
            val: split_disagreement(dataset, partitions, &dataset.splits.val),
        },
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_text(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, Vec<SuperpixelPartition>, Manifest)> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest =
        serde_json::from_str(&read_text(&manifest_path)?).map_err(|e| Error::Json {
            path: manifest_path,
            source: e,
        })?;
    let total = manifest.splits.train.len() + manifest.splits.val.len() + manifest.splits.test.len();
    let mut images = Vec::with_capacity(total);
    let mut masks = Vec::with_capacity(total);
    let mut partitions = Vec::with_capacity(total);
    for i in 0..total {
        images.push(io::read_image(&dir.join(format!("images/img_{i:05}.orim")))?);
        masks.push(io::read_mask(&dir.join(format!("masks/mask_{i:05}.orlm")))?);
        partitions.push(io::read_partition(&dir.join(format!("parts/part_{i:05}.orsp")))?);
    }
    let dataset = Dataset {
        config: manifest.gen.scene.clone(),
        images,
        masks,
        splits: manifest.splits.clone(),
    };
    Ok((dataset, partitions, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_prepared() -> Prepared {
        let scene = SceneConfig {
            height: 16,
            width: 16,
            shapes_per_image: (1, 3),
            radius_range: (0.15, 0.3),
            noise_sigma: 0.03,
            seed: 11,
            ..SceneConfig::default()
        };
        let dataset = generate_dataset(&scene, 6, 2, 3).unwrap();
        Prepared::from_dataset(dataset, 4, &SlicConfig::default()).unwrap()
    }

    fn smoke_config(strategy: StrategyKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(strategy, AggregationMode::Max);
        cfg.budget = 5;
        cfg.steps = 2;
        cfg.num_seeds = 1;
        cfg.train = TrainConfig {
            max_epochs: 60,
            ..TrainConfig::default()
        };
        cfg
    }

    #[test]
    fn click_accounting_and_labeled_growth() {
        let prepared = smoke_prepared();
        let cfg = smoke_config(StrategyKind::Random);
        let result = run_experiment(&prepared, &cfg).unwrap();
        assert_eq!(result.records.len(), 2);
        assert_eq!(result.records[0].clicks, 5);
        assert_eq!(result.records[1].clicks, 10);
        assert!(result.aborted_seeds.is_empty());
        assert_eq!(result.per_seed_aualc.len(), 1);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let prepared = smoke_prepared();
        let cfg = smoke_config(StrategyKind::Oreal);
        let a = run_experiment(&prepared, &cfg).unwrap();
        let b = run_experiment(&prepared, &cfg).unwrap();
        assert_eq!(records_to_csv(&a.records), records_to_csv(&b.records));
        assert_eq!(
            summary_to_json(&summarize(&a)),
            summary_to_json(&summarize(&b))
        );
    }

    #[test]
    fn weak_scheme_is_rejected_for_training_runs() {
        let prepared = smoke_prepared();
        let mut cfg = smoke_config(StrategyKind::Random);
        cfg.scheme = LabelScheme::Weak;
        assert!(matches!(
            run_experiment(&prepared, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn infeasible_budgets_are_rejected() {
        let prepared = smoke_prepared();
        let mut cfg = smoke_config(StrategyKind::Random);
        cfg.budget = 3; // below the class count
        assert!(matches!(
            run_experiment(&prepared, &cfg),
            Err(Error::InvalidConfig(_))
        ));
        cfg.budget = 10_000;
        assert!(matches!(
            run_experiment(&prepared, &cfg),
            Err(Error::BudgetExceedsPool { .. })
        ));
    }

    #[test]
    fn pool_exhaustion_shrinks_the_last_query() {
        let prepared = smoke_prepared();
        let pool = prepared.universe().len();
        let mut cfg = smoke_config(StrategyKind::Random);
        cfg.budget = 5;
        cfg.steps = pool; // far more steps than the pool can feed
        let result = run_experiment(&prepared, &cfg).unwrap();
        let last = result.records.last().unwrap();
        assert_eq!(last.clicks as usize, pool, "every superpixel annotated once");
        assert_eq!(result.records.len(), pool.div_ceil(5));
        for pair in result.records.windows(2) {
            assert!(pair[1].clicks > pair[0].clicks);
            assert!(pair[1].clicks - pair[0].clicks <= 5);
        }
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let records = vec![RunRecord {
            seed: 3,
            step: 1,
            clicks: 5,
            miou_val: 0.5,
            miou_test: 0.25,
            min_class_count: 1,
            balance_entropy: 0.75,
            boundary_frac: 0.4,
            seconds: 0.0,
        }];
        let csv = records_to_csv(&records);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("seed,step,clicks,"));
        let parsed = parse_runs_csv(&csv).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn summary_json_roundtrips_byte_identical() {
        let prepared = smoke_prepared();
        let cfg = smoke_config(StrategyKind::Bvsb);
        let result = run_experiment(&prepared, &cfg).unwrap();
        let summary = summarize(&result);
        let json = summary_to_json(&summary);
        let reparsed: RunSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(summary_to_json(&reparsed), json);
    }

    #[test]
    fn svg_has_one_polyline_per_strategy() {
        let prepared = smoke_prepared();
        let a = summarize(&run_experiment(&prepared, &smoke_config(StrategyKind::Random)).unwrap());
        let b = summarize(&run_experiment(&prepared, &smoke_config(StrategyKind::Entropy)).unwrap());
        let svg = render_curves_svg(&[a, b]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("random"));
        assert!(svg.contains("entropy"));
    }

    #[test]
    fn dataset_roundtrips_through_disk() {
        let gen = GenConfig {
            scene: SceneConfig {
                height: 12,
                width: 12,
                seed: 5,
                ..SceneConfig::default()
            },
            n_train: 2,
            n_val: 1,
            n_test: 1,
            superpixels_per_image: 4,
            ..GenConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_and_save(&gen, dir.path()).unwrap();
        assert_eq!(manifest.splits.train.len(), 2);
        let (dataset, partitions, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(dataset.images.len(), 4);
        assert_eq!(partitions.len(), 4);
        assert_eq!(loaded.gen.superpixels_per_image, 4);
        let regenerated = generate_dataset(&gen.scene, 2, 1, 1).unwrap();
        assert_eq!(dataset.images[0], regenerated.images[0]);
        assert_eq!(dataset.masks[3], regenerated.masks[3]);
    }

    #[test]
    fn disjointness_and_exact_budget_each_step() {
        let prepared = smoke_prepared();
        let universe = prepared.universe().len();
        let mut cfg = smoke_config(StrategyKind::PixelBal);
        cfg.steps = 3;
        let result = run_experiment(&prepared, &cfg).unwrap();
        for r in &result.records {
            assert_eq!(r.clicks, cfg.budget as u64 * r.step as u64);
        }
        assert!(cfg.budget * cfg.steps <= universe);
    }
}
