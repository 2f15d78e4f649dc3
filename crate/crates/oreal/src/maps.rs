//! Per-pixel containers shared by every other module: images, probability
//! maps, and label maps (full and partial).
//!
//! Classes are 0-based. A partial label map additionally carries the
//! "unlabeled" sentinel, serialized as -1. All containers are immutable in
//! spirit: operations return new values or take `&mut` explicitly, and none
//! of them hold interior mutability, so sharing across threads is safe.

use crate::error::{Error, Result};

/// Tolerance for per-pixel probability normalization.
pub const PROB_TOLERANCE: f64 = 1e-6;

/// A class index in `{0..C-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A 3-channel color image with values in `[0, 1]`, row-major, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// `height * width * 3` values, channel-fastest.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * 3, "image payload size");
        Image {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, color: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&color);
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, idx: usize) -> [f32; 3] {
        let o = idx * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-pixel categorical distribution over `num_classes` classes.
///
/// Stored in 32-bit floats; every reduction over entries happens in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// `height * width * num_classes` values, class-fastest.
    pub probs: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, num_classes: usize, probs: Vec<f32>) -> Self {
        assert_eq!(
            probs.len(),
            height * width * num_classes,
            "probability payload size"
        );
        ProbabilityMap {
            height,
            width,
            num_classes,
            probs,
        }
    }

    /// The distribution of one pixel, by flat row-major pixel index.
    pub fn row(&self, pixel: usize) -> &[f32] {
        let c = self.num_classes;
        &self.probs[pixel * c..(pixel + 1) * c]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Fully labeled per-pixel class map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// `height * width` class indices, each `< num_classes`.
    pub labels: Vec<u32>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), height * width, "mask payload size");
        debug_assert!(labels.iter().all(|&l| (l as usize) < num_classes));
        GroundTruthMask {
            height,
            width,
            num_classes,
            labels,
        }
    }

    pub fn label(&self, pixel: usize) -> ClassId {
        ClassId(self.labels[pixel])
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Label map where pixels may still be unlabeled.
///
/// Internally -1 marks the unlabeled state, matching the on-disk encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialLabelMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    labels: Vec<i32>,
}

impl PartialLabelMap {
    /// An all-unlabeled map.
    pub fn unlabeled(height: usize, width: usize, num_classes: usize) -> Self {
        PartialLabelMap {
            height,
            width,
            num_classes,
            labels: vec![-1; height * width],
        }
    }

    pub fn from_raw(height: usize, width: usize, num_classes: usize, labels: Vec<i32>) -> Self {
        assert_eq!(labels.len(), height * width, "label payload size");
        debug_assert!(labels
            .iter()
            .all(|&l| l == -1 || (0..num_classes as i32).contains(&l)));
        PartialLabelMap {
            height,
            width,
            num_classes,
            labels,
        }
    }

    pub fn get(&self, pixel: usize) -> Option<ClassId> {
        match self.labels[pixel] {
            -1 => None,
            l => Some(ClassId(l as u32)),
        }
    }

    pub fn set(&mut self, pixel: usize, label: ClassId) {
        debug_assert!(label.index() < self.num_classes);
        self.labels[pixel] = label.0 as i32;
    }

    pub fn raw(&self) -> &[i32] {
        &self.labels
    }

    pub fn labeled_pixels(&self) -> impl Iterator<Item = (usize, ClassId)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l >= 0).then(|| (i, ClassId(l as u32))))
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).count()
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Check the [`ProbabilityMap`] invariants: non-negative entries and rows
/// summing to 1 within [`PROB_TOLERANCE`].
pub fn validate_probability_map(pm: &ProbabilityMap) -> Result<()> {
    let c = pm.num_classes;
    for pixel in 0..pm.num_pixels() {
        let row = &pm.probs[pixel * c..(pixel + 1) * c];
        let mut sum = 0f64;
        for (class, &p) in row.iter().enumerate() {
            if p < 0.0 {
                return Err(Error::NegativeEntry { pixel, class });
            }
            sum += p as f64;
        }
        if (sum - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::NotNormalized { pixel, sum });
        }
    }
    Ok(())
}

/// Argmax of one probability row; ties broken by lowest class index.
pub fn argmax_class(row: &[f32]) -> ClassId {
    let mut best = 0usize;
    for (c, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = c;
        }
    }
    ClassId(best as u32)
}

/// Decode a probability map into a label map by per-pixel argmax.
pub fn predicted_label_map(pm: &ProbabilityMap) -> GroundTruthMask {
    let labels = (0..pm.num_pixels())
        .map(|i| argmax_class(pm.row(i)).0)
        .collect();
    GroundTruthMask::new(pm.height, pm.width, pm.num_classes, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map1x1(probs: Vec<f32>) -> ProbabilityMap {
        let c = probs.len();
        ProbabilityMap::new(1, 1, c, probs)
    }

    #[test]
    fn validate_accepts_uniform() {
        assert!(validate_probability_map(&map1x1(vec![0.5, 0.5])).is_ok());
    }

    #[test]
    fn validate_rejects_unnormalized() {
        match validate_probability_map(&map1x1(vec![0.7, 0.4])) {
            Err(Error::NotNormalized { pixel: 0, sum }) => {
                assert!((sum - 1.1).abs() < 1e-6, "sum was {sum}");
            }
            other => panic!("expected NotNormalized, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_negative_entry() {
        match validate_probability_map(&map1x1(vec![1.2, -0.2])) {
            Err(Error::NegativeEntry { pixel: 0, class: 1 }) => {}
            other => panic!("expected NegativeEntry, got {other:?}"),
        }
    }

    #[test]
    fn argmax_picks_max_and_breaks_ties_low() {
        assert_eq!(argmax_class(&[0.1, 0.9]), ClassId(1));
        assert_eq!(argmax_class(&[0.5, 0.5]), ClassId(0));
        assert_eq!(argmax_class(&[0.2, 0.3, 0.5]), ClassId(2));
    }

    #[test]
    fn predicted_label_map_decodes_per_pixel() {
        let pm = ProbabilityMap::new(1, 2, 2, vec![0.1, 0.9, 0.8, 0.2]);
        let mask = predicted_label_map(&pm);
        assert_eq!(mask.labels, vec![1, 0]);
    }

    #[test]
    fn partial_map_roundtrips_sentinel() {
        let mut plm = PartialLabelMap::unlabeled(2, 2, 3);
        assert_eq!(plm.get(0), None);
        plm.set(0, ClassId(2));
        assert_eq!(plm.get(0), Some(ClassId(2)));
        assert_eq!(plm.num_labeled(), 1);
        assert_eq!(plm.raw()[1], -1);
    }

    proptest! {
        // argmax is invariant under strictly increasing transforms of a row
        // (power-of-two scaling is exact in f32, so ordering is untouched).
        #[test]
        fn argmax_monotone_invariant(row in proptest::collection::vec(0.0f32..1.0, 2..6)) {
            let transformed: Vec<f32> = row.iter().map(|&p| 0.25 * p).collect();
            prop_assert_eq!(argmax_class(&row), argmax_class(&transformed));
        }
    }
}
