//! Evaluation: mIoU, area under the active-learning curve, labeled-set
//! balance statistics, and boundary-adjacency measurement.

use crate::error::{Error, Result};
use crate::maps::{ClassId, GroundTruthMask};
use crate::superpixel::{neighbors4, SuperpixelPartition, SuperpixelRef};

/// Mean intersection-over-union between two label maps.
///
/// Classes absent from both maps are excluded from the mean (no 0/0 terms).
pub fn miou(pred: &GroundTruthMask, gt: &GroundTruthMask, num_classes: usize) -> Result<f64> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", gt.height, gt.width),
            actual: format!("{}x{}", pred.height, pred.width),
        });
    }
    Ok(miou_pooled(
        std::slice::from_ref(pred),
        std::slice::from_ref(gt),
        num_classes,
    ))
}

/// mIoU with intersections and unions pooled over several image pairs.
/// Shapes must already agree pairwise.
pub fn miou_pooled<P, G>(preds: &[P], gts: &[G], num_classes: usize) -> f64
where
    P: std::borrow::Borrow<GroundTruthMask>,
    G: std::borrow::Borrow<GroundTruthMask>,
{
    let mut intersection = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    for (pred, gt) in preds.iter().zip(gts.iter()) {
        let (pred, gt) = (pred.borrow(), gt.borrow());
        debug_assert_eq!((pred.height, pred.width), (gt.height, gt.width));
        for (&p, &g) in pred.labels.iter().zip(gt.labels.iter()) {
            if p == g {
                intersection[p as usize] += 1;
                union[p as usize] += 1;
            } else {
                union[p as usize] += 1;
                union[g as usize] += 1;
            }
        }
    }
    let mut sum = 0f64;
    let mut present = 0usize;
    for c in 0..num_classes {
        if union[c] > 0 {
            sum += intersection[c] as f64 / union[c] as f64;
            present += 1;
        }
    }
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

/// An active-learning curve: test mIoU as a function of cumulative
/// annotations, with the full-training mIoU as reference ceiling.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ALCurve {
    /// (cumulative annotated superpixels, test mIoU), budgets strictly increasing.
    pub points: Vec<(u64, f64)>,
    pub reference_miou: f64,
}

/// Area under the curve as a fraction of the flat-reference area over the
/// same budget interval. May exceed 1 when the curve beats full training.
pub fn aualc(curve: &ALCurve) -> Result<f64> {
    if curve.points.len() < 2 {
        return Err(Error::DegenerateCurve {
            points: curve.points.len(),
        });
    }
    debug_assert!(curve.points.windows(2).all(|w| w[0].0 < w[1].0));
    debug_assert!(curve.reference_miou > 0.0);
    let mut area = 0f64;
    for pair in curve.points.windows(2) {
        let (b0, m0) = pair[0];
        let (b1, m1) = pair[1];
        area += (b1 - b0) as f64 * (m0 + m1) / 2.0;
    }
    let span = (curve.points.last().unwrap().0 - curve.points[0].0) as f64;
    Ok((area / (curve.reference_miou * span)).max(0.0))
}

/// Minimum per-class count and normalized label entropy of a labeled set.
/// The entropy is 0 for an empty set and 1 exactly when all counts are equal
/// and nonzero.
pub fn balance_report(
    labeled: &[(SuperpixelRef, ClassId)],
    num_classes: usize,
) -> (usize, f64) {
    let counts = crate::balancing::class_counts(labeled, num_classes).0;
    let min = counts.iter().cloned().min().unwrap_or(0);
    let total: usize = counts.iter().sum();
    if total == 0 || num_classes < 2 {
        return (min, 0.0);
    }
    let mut entropy = 0f64;
    for &n in &counts {
        if n > 0 {
            let p = n as f64 / total as f64;
            entropy -= p * p.ln();
        }
    }
    (min, entropy / (num_classes as f64).ln())
}

/// Fraction of queried superpixels containing at least one pixel within
/// Chebyshev distance `radius` of a ground-truth class boundary. A boundary
/// pixel is one with a 4-neighbor of a different class. Empty query sets
/// score 0.
pub fn boundary_fraction(
    queries: &[SuperpixelRef],
    partitions: &[SuperpixelPartition],
    gts: &[GroundTruthMask],
    radius: usize,
) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let images: std::collections::BTreeSet<usize> = queries.iter().map(|q| q.image).collect();
    let mut near_boundary: Vec<Option<Vec<bool>>> = vec![None; gts.len()];
    for &img in &images {
        near_boundary[img] = Some(boundary_mask(&gts[img], radius));
    }
    let touching = queries
        .iter()
        .filter(|q| {
            let mask = near_boundary[q.image].as_ref().unwrap();
            partitions[q.image]
                .members(q.superpixel)
                .iter()
                .any(|&p| mask[p])
        })
        .count();
    touching as f64 / queries.len() as f64
}

/// Pixels within Chebyshev distance `radius` of a class boundary.
fn boundary_mask(gt: &GroundTruthMask, radius: usize) -> Vec<bool> {
    let (h, w) = (gt.height, gt.width);
    let mut mask: Vec<bool> = (0..h * w)
        .map(|p| neighbors4(p, h, w).any(|q| gt.labels[q] != gt.labels[p]))
        .collect();
    // Chebyshev dilation = `radius` rounds of 8-neighborhood growth.
    for _ in 0..radius {
        let prev = mask.clone();
        for y in 0..h {
            for x in 0..w {
                if prev[y * w + x] {
                    continue;
                }
                'scan: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny >= 0
                            && nx >= 0
                            && (ny as usize) < h
                            && (nx as usize) < w
                            && prev[ny as usize * w + nx as usize]
                        {
                            mask[y * w + x] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    mask
}
