//! Query strategies: map (unlabeled pool, labeled set, model outputs) to the
//! set of superpixels to annotate next.
//!
//! All strategies share a uniform shape: score the unlabeled candidates,
//! then pick argmax. The class-debt strategy is the exception in that it
//! ranks per class and consumes a per-class budget share, neediest class
//! first.

use std::collections::BTreeSet;

use rand::Rng;

use crate::balancing::{class_counts, items_per_class};
use crate::error::{Error, Result};
use crate::maps::{predicted_label_map, ClassId, ProbabilityMap};
use crate::scoring::{superpixel_scores, AggregationMode, PixelScore};
use crate::superpixel::{SuperpixelPartition, SuperpixelRef};

/// Bookkeeping of one active-learning run: who is labeled with what, and who
/// is still a candidate. The union of both sides is fixed at construction.
#[derive(Debug, Clone)]
pub struct ALState {
    pub labeled: Vec<(SuperpixelRef, ClassId)>,
    pub unlabeled: BTreeSet<SuperpixelRef>,
    pub step: usize,
}

impl ALState {
    pub fn new(universe: impl IntoIterator<Item = SuperpixelRef>) -> Self {
        ALState {
            labeled: Vec::new(),
            unlabeled: universe.into_iter().collect(),
            step: 0,
        }
    }

    /// Move freshly annotated superpixels from the pool to the labeled set.
    /// Panics if a superpixel was not in the pool (double annotation).
    pub fn absorb(&mut self, annotations: &[(SuperpixelRef, ClassId)]) {
        for &(sp, class) in annotations {
            assert!(self.unlabeled.remove(&sp), "{sp:?} annotated twice");
            self.labeled.push((sp, class));
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.unlabeled.len()
    }

    fn candidates(&self) -> Vec<SuperpixelRef> {
        self.unlabeled.iter().cloned().collect()
    }

    fn check_budget(&self, budget: usize) -> Result<()> {
        if budget > self.unlabeled.len() {
            return Err(Error::BudgetExceedsPool {
                budget,
                pool: self.unlabeled.len(),
            });
        }
        Ok(())
    }
}

/// Every selectable strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Random,
    Entropy,
    Bvsb,
    RevisitingSp,
    PixelBal,
    Cbal,
    Oreal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::Bvsb,
        StrategyKind::RevisitingSp,
        StrategyKind::PixelBal,
        StrategyKind::Cbal,
        StrategyKind::Oreal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Bvsb => "bvsb",
            StrategyKind::RevisitingSp => "revisiting-sp",
            StrategyKind::PixelBal => "pixelbal",
            StrategyKind::Cbal => "cbal",
            StrategyKind::Oreal => "oreal",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .cloned()
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown strategy '{}', expected one of: {}",
                    s,
                    StrategyKind::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

/// Uniform sample without replacement; deterministic given the rng state.
pub fn select_random(
    state: &ALState,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SuperpixelRef>> {
    state.check_budget(budget)?;
    let mut pool = state.candidates();
    // Partial Fisher-Yates over the sorted pool.
    for i in 0..budget {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(budget);
    Ok(pool)
}

/// The budget-ranked baselines (everything except Random and the class-debt
/// strategy).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringRule {
    Entropy,
    Bvsb,
    RevisitingSp,
    PixelBal,
    Cbal,
}

impl StrategyKind {
    pub fn scoring_rule(&self) -> Option<ScoringRule> {
        match self {
            StrategyKind::Entropy => Some(ScoringRule::Entropy),
            StrategyKind::Bvsb => Some(ScoringRule::Bvsb),
            StrategyKind::RevisitingSp => Some(ScoringRule::RevisitingSp),
            StrategyKind::PixelBal => Some(ScoringRule::PixelBal),
            StrategyKind::Cbal => Some(ScoringRule::Cbal),
            StrategyKind::Random | StrategyKind::Oreal => None,
        }
    }
}

/// Score every unlabeled superpixel under one of the baseline rules.
///
/// `budget` only feeds the class-debt vector of the Cbal rule; the others
/// ignore it.
pub fn score_superpixels(
    state: &ALState,
    prob_maps: &[ProbabilityMap],
    partitions: &[SuperpixelPartition],
    rule: ScoringRule,
    mode: AggregationMode,
    budget: usize,
) -> Result<Vec<(SuperpixelRef, f64)>> {
    let candidates = state.candidates();
    let images: BTreeSet<usize> = candidates.iter().map(|r| r.image).collect();

    // Base uncertainty per superpixel, aggregated with the requested mode.
    let pixel_score = match rule {
        ScoringRule::Bvsb => PixelScore::Bvsb,
        _ => PixelScore::Entropy,
    };
    let mut base: Vec<Option<Vec<f64>>> = vec![None; partitions.len()];
    for &img in &images {
        base[img] = Some(superpixel_scores(
            &prob_maps[img],
            &partitions[img],
            pixel_score,
            mode,
        )?);
    }
    let base_of = |r: &SuperpixelRef| base[r.image].as_ref().unwrap()[r.superpixel];

    match rule {
        ScoringRule::Entropy | ScoringRule::Bvsb => Ok(candidates
            .iter()
            .map(|r| (*r, base_of(r)))
            .collect()),
        ScoringRule::RevisitingSp | ScoringRule::PixelBal => {
            let num_classes = prob_maps[*images.iter().next().unwrap()].num_classes;
            // Predicted dominant class per candidate superpixel.
            let mut predicted: Vec<Option<Vec<ClassId>>> = vec![None; partitions.len()];
            for &img in &images {
                predicted[img] = Some(predicted_dominant_classes(
                    &prob_maps[img],
                    &partitions[img],
                ));
            }
            let class_of = |r: &SuperpixelRef| predicted[r.image].as_ref().unwrap()[r.superpixel];

            let freq: Vec<f64> = match rule {
                ScoringRule::RevisitingSp => {
                    // Fraction of unlabeled superpixels predicted as each class.
                    let mut counts = vec![0usize; num_classes];
                    for r in &candidates {
                        counts[class_of(r).index()] += 1;
                    }
                    counts
                        .iter()
                        .map(|&c| c as f64 / candidates.len() as f64)
                        .collect()
                }
                _ => {
                    // Probability mass over all pixels of unlabeled superpixels.
                    let mut mass = vec![0f64; num_classes];
                    let mut pixels = 0usize;
                    for r in &candidates {
                        let pm = &prob_maps[r.image];
                        for &p in partitions[r.image].members(r.superpixel) {
                            for (c, &v) in pm.row(p).iter().enumerate() {
                                mass[c] += v as f64;
                            }
                        }
                        pixels += partitions[r.image].members(r.superpixel).len();
                    }
                    mass.iter().map(|&m| m / pixels as f64).collect()
                }
            };
            let weights = tail_class_weights(&freq, candidates.len());
            Ok(candidates
                .iter()
                .map(|r| (*r, base_of(r) * weights[class_of(r).index()]))
                .collect())
        }
        ScoringRule::Cbal => {
            let num_classes = prob_maps[*images.iter().next().unwrap()].num_classes;
            let counts = class_counts(&state.labeled, num_classes);
            let debt = items_per_class(&counts, budget);
            let target = debt.normalized();
            Ok(candidates
                .iter()
                .map(|r| {
                    let pm = &prob_maps[r.image];
                    let members = partitions[r.image].members(r.superpixel);
                    let mut mean = vec![0f64; num_classes];
                    for &p in members {
                        for (c, &v) in pm.row(p).iter().enumerate() {
                            mean[c] += v as f64;
                        }
                    }
                    for m in &mut mean {
                        *m /= members.len() as f64;
                    }
                    let distance = match &target {
                        Some(t) => mean
                            .iter()
                            .zip(t.iter())
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt(),
                        None => 0.0,
                    };
                    (*r, base_of(r) - distance)
                })
                .collect())
        }
    }
}

/// Dominant class of the argmax-decoded prediction within each superpixel.
fn predicted_dominant_classes(
    pm: &ProbabilityMap,
    part: &SuperpixelPartition,
) -> Vec<ClassId> {
    let decoded = predicted_label_map(pm);
    (0..part.num_superpixels())
        .map(|sp| {
            let mut counts = vec![0usize; pm.num_classes];
            for &p in part.members(sp) {
                counts[decoded.labels[p] as usize] += 1;
            }
            let mut best = 0usize;
            for (c, &n) in counts.iter().enumerate().skip(1) {
                if n > counts[best] {
                    best = c;
                }
            }
            ClassId(best as u32)
        })
        .collect()
}

/// `w_c = 1 / (freq_c + eps)` with `eps = 1/|pool|`, rescaled to mean 1.
fn tail_class_weights(freq: &[f64], pool: usize) -> Vec<f64> {
    let eps = 1.0 / pool.max(1) as f64;
    let raw: Vec<f64> = freq.iter().map(|&f| 1.0 / (f + eps)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|&w| w / mean).collect()
}

/// Highest-scoring `budget` refs; ties broken by ascending (image, superpixel).
pub fn select_top_k(
    scores: &[(SuperpixelRef, f64)],
    budget: usize,
) -> Result<Vec<SuperpixelRef>> {
    if budget > scores.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: scores.len(),
        });
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(budget).map(|(r, _)| r).collect())
}

/// The class-debt strategy over precomputed per-class superpixel scores.
///
/// `class_scores[c][i]` is the one-vs-rest score of candidate `i` for class
/// `c`. Classes are processed neediest first (ascending labeled count, ties
/// by index); each class takes its debt share of the highest-scoring
/// still-available candidates, so the result always has exactly `budget`
/// distinct entries.
pub fn select_by_class_debt(
    candidates: &[SuperpixelRef],
    class_scores: &[Vec<f64>],
    labeled_counts: &[usize],
    budget: usize,
) -> Result<Vec<SuperpixelRef>> {
    if budget > candidates.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: candidates.len(),
        });
    }
    let counts = crate::balancing::ClassCounts(labeled_counts.to_vec());
    let debt = items_per_class(&counts, budget);

    let mut class_order: Vec<usize> = (0..labeled_counts.len()).collect();
    class_order.sort_by_key(|&c| (labeled_counts[c], c));

    let mut available = vec![true; candidates.len()];
    let mut selected = Vec::with_capacity(budget);
    for &class in &class_order {
        let share = debt.0[class];
        if share == 0 {
            continue;
        }
        let mut ranked: Vec<usize> = (0..candidates.len()).filter(|&i| available[i]).collect();
        ranked.sort_by(|&a, &b| {
            class_scores[class][b]
                .total_cmp(&class_scores[class][a])
                .then(candidates[a].cmp(&candidates[b]))
        });
        for &i in ranked.iter().take(share) {
            available[i] = false;
            selected.push(candidates[i]);
        }
    }
    debug_assert_eq!(selected.len(), budget);
    Ok(selected)
}

/// One-vs-rest entropy selection with class-debt balancing, end to end:
/// scores every unlabeled superpixel per class, splits the budget by debt,
/// and ranks neediest classes first.
pub fn select_oreal(
    state: &ALState,
    prob_maps: &[ProbabilityMap],
    partitions: &[SuperpixelPartition],
    budget: usize,
    mode: AggregationMode,
) -> Result<Vec<SuperpixelRef>> {
    state.check_budget(budget)?;
    let candidates = state.candidates();
    let images: BTreeSet<usize> = candidates.iter().map(|r| r.image).collect();
    let num_classes = prob_maps[*images.iter().next().unwrap()].num_classes;

    // Per-image, per-class superpixel scores, computed once.
    let mut per_image: Vec<Option<Vec<Vec<f64>>>> = vec![None; partitions.len()];
    for &img in &images {
        let per_class = (0..num_classes)
            .map(|c| {
                crate::scoring::ovr_entropy_superpixel(
                    &prob_maps[img],
                    &partitions[img],
                    ClassId(c as u32),
                    mode,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        per_image[img] = Some(per_class);
    }
    let class_scores: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            candidates
                .iter()
                .map(|r| per_image[r.image].as_ref().unwrap()[c][r.superpixel])
                .collect()
        })
        .collect();

    let counts = class_counts(&state.labeled, num_classes);
    select_by_class_debt(&candidates, &class_scores, &counts.0, budget)
}
