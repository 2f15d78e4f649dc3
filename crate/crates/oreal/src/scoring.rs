//! Per-pixel uncertainty scores and their aggregation into superpixel
//! scores.
//!
//! All logarithms are natural; probabilities are clamped away from 0 and 1
//! inside log terms so one-hot model outputs stay finite. Reductions run in
//! 64-bit regardless of the 32-bit storage of probability maps.

use crate::error::{Error, Result};
use crate::maps::{ClassId, ProbabilityMap};
use crate::superpixel::SuperpixelPartition;

const CLAMP: f64 = 1e-12;

/// Per-superpixel score = mean or max of its pixel scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Mean,
    Max,
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationMode::Mean => write!(f, "mean"),
            AggregationMode::Max => write!(f, "max"),
        }
    }
}

/// Which per-pixel uncertainty feeds the superpixel score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelScore {
    /// Shannon entropy of the full distribution.
    Entropy,
    /// Best-vs-second-best margin, flipped so higher means more uncertain.
    Bvsb,
}

/// Shannon entropy of one distribution, `-sum p ln p` with `0 ln 0 := 0`.
pub fn pixel_entropy(p: &[f32]) -> f64 {
    let mut h = 0f64;
    for &v in p {
        let q = (v as f64).clamp(CLAMP, 1.0);
        h -= q * q.ln();
    }
    h
}

/// `1 - (p_best - p_second)`: zero margin scores 1, full margin scores 0.
pub fn bvsb_score(p: &[f32]) -> f64 {
    debug_assert!(p.len() >= 2);
    let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        let v = v as f64;
        if v > best {
            second = best;
            best = v;
        } else if v > second {
            second = v;
        }
    }
    1.0 - (best - second)
}

/// Binary entropy of a single probability mass, clamped away from 0 and 1.
/// Peaks at `ln 2` for `q = 0.5`.
pub fn binary_entropy(q: f64) -> f64 {
    let q = q.clamp(CLAMP, 1.0 - CLAMP);
    -q * q.ln() - (1.0 - q) * (1.0 - q).ln()
}

/// Binary entropy of class `c` vs the rest: depends only on `p[c]`.
pub fn ovr_entropy_pixel(p: &[f32], c: ClassId) -> f64 {
    binary_entropy(p[c.index()] as f64)
}

/// Reduce a non-empty list of pixel scores to a superpixel score.
pub fn aggregate(values: &[f64], mode: AggregationMode) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySuperpixel);
    }
    Ok(match mode {
        AggregationMode::Max => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        AggregationMode::Mean => values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Score every superpixel of one image with the chosen pixel score and
/// aggregation mode.
pub fn superpixel_scores(
    pm: &ProbabilityMap,
    part: &SuperpixelPartition,
    score: PixelScore,
    mode: AggregationMode,
) -> Result<Vec<f64>> {
    check_shapes(pm, part)?;
    let per_pixel = |pixel: usize| match score {
        PixelScore::Entropy => pixel_entropy(pm.row(pixel)),
        PixelScore::Bvsb => bvsb_score(pm.row(pixel)),
    };
    (0..part.num_superpixels())
        .map(|sp| {
            let values: Vec<f64> = part.members(sp).iter().map(|&p| per_pixel(p)).collect();
            aggregate(&values, mode)
        })
        .collect()
}

/// Per-superpixel one-vs-rest entropy for class `c`.
pub fn ovr_entropy_superpixel(
    pm: &ProbabilityMap,
    part: &SuperpixelPartition,
    c: ClassId,
    mode: AggregationMode,
) -> Result<Vec<f64>> {
    check_shapes(pm, part)?;
    (0..part.num_superpixels())
        .map(|sp| {
            let values: Vec<f64> = part
                .members(sp)
                .iter()
                .map(|&p| ovr_entropy_pixel(pm.row(p), c))
                .collect();
            aggregate(&values, mode)
        })
        .collect()
}

fn check_shapes(pm: &ProbabilityMap, part: &SuperpixelPartition) -> Result<()> {
    if (pm.height, pm.width) != (part.height, part.width) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{} partition", pm.height, pm.width),
            actual: format!("{}x{}", part.height, part.width),
        });
    }
    Ok(())
}
