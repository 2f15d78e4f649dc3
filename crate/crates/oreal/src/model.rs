//! Desk-scale trainable pixel classifier: hand-crafted per-pixel features
//! feeding a multinomial logistic model, trained by full-batch gradient
//! descent with Polyak averaging and validation-mIoU early stopping.
//!
//! Training is entirely deterministic: zero (or warm-start) initialization,
//! no shuffling, 64-bit arithmetic throughout.

use crate::error::{Error, Result};
use crate::maps::{GroundTruthMask, Image, PartialLabelMap, ProbabilityMap};
use crate::metrics::miou_pooled;

/// Color, position, and local-window statistics per pixel.
pub const FEATURE_DIM: usize = 11;
/// Feature dimension plus the implicit bias input.
pub const WEIGHT_DIM: usize = FEATURE_DIM + 1;

/// Per-pixel feature vectors for one image, row-major, feature-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * FEATURE_DIM..(pixel + 1) * FEATURE_DIM]
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// 3 color channels, 2 normalized coordinates, and 3x3 clamped-window mean
/// and standard deviation per channel: 11 features.
pub fn extract_features(image: &Image) -> FeatureMap {
    let (h, w) = (image.height, image.width);
    let mut data = Vec::with_capacity(h * w * FEATURE_DIM);
    let norm = |v: usize, extent: usize| {
        if extent <= 1 {
            0.0
        } else {
            v as f64 / (extent - 1) as f64
        }
    };
    for y in 0..h {
        for x in 0..w {
            let px = image.pixel(y * w + x);
            data.extend(px.iter().map(|&v| v as f64));
            data.push(norm(x, w));
            data.push(norm(y, h));

            let mut sum = [0f64; 3];
            let mut sum_sq = [0f64; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let q = image.pixel(ny * w + nx);
                    for c in 0..3 {
                        sum[c] += q[c] as f64;
                        sum_sq[c] += (q[c] as f64).powi(2);
                    }
                }
            }
            for c in 0..3 {
                data.push(sum[c] / 9.0);
            }
            for c in 0..3 {
                let mean = sum[c] / 9.0;
                data.push((sum_sq[c] / 9.0 - mean * mean).max(0.0).sqrt());
            }
        }
    }
    FeatureMap {
        height: h,
        width: w,
        data,
    }
}

/// Weight matrix (one row of `WEIGHT_DIM` values per class, bias last) plus
/// its Polyak-averaged shadow. The shadow is the validated copy used for
/// inference; the raw matrix is kept for warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    pub num_classes: usize,
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub shadow: Vec<f64>,
}

impl ClassifierWeights {
    pub fn zeros(num_classes: usize) -> Self {
        ClassifierWeights {
            num_classes,
            dim: WEIGHT_DIM,
            matrix: vec![0.0; num_classes * WEIGHT_DIM],
            shadow: vec![0.0; num_classes * WEIGHT_DIM],
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub polyak_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            max_epochs: 500,
            patience: 10,
            polyak_alpha: 0.99,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || self.max_epochs == 0
            || self.patience == 0
            || !(0.0..1.0).contains(&self.polyak_alpha)
        {
            return Err(Error::InvalidConfig(format!("bad training config: {self:?}")));
        }
        Ok(())
    }
}

/// What training produced, with enough trace for convergence checks.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ClassifierWeights,
    pub epochs: usize,
    pub best_val_miou: f64,
    /// Mean cross-entropy after each accepted epoch (index 0 = initial loss).
    pub loss_history: Vec<f64>,
}

/// Flattened labeled pixels from a set of partially labeled images.
struct TrainSet {
    features: Vec<f64>,
    labels: Vec<u32>,
}

/// Nearest-class-mean linear init: `w_c = mu_c`, `b_c = -|mu_c|^2 / 2`, so
/// the argmax at epoch 0 is the nearest-mean classifier. Stands in for the
/// pretrained weights a full-scale run would start from; classes without
/// labeled pixels get a zero row.
fn class_mean_init(set: &TrainSet, num_classes: usize) -> ClassifierWeights {
    let mut weights = ClassifierWeights::zeros(num_classes);
    let mut counts = vec![0usize; num_classes];
    for (i, &label) in set.labels.iter().enumerate() {
        counts[label as usize] += 1;
        let row = &mut weights.matrix[label as usize * WEIGHT_DIM..];
        for (d, &x) in set.features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
            .iter()
            .enumerate()
        {
            row[d] += x;
        }
    }
    for c in 0..num_classes {
        if counts[c] == 0 {
            continue;
        }
        let row = &mut weights.matrix[c * WEIGHT_DIM..(c + 1) * WEIGHT_DIM];
        let mut norm_sq = 0f64;
        for d in 0..FEATURE_DIM {
            row[d] /= counts[c] as f64;
            norm_sq += row[d] * row[d];
        }
        row[FEATURE_DIM] = -norm_sq / 2.0;
    }
    weights.shadow.copy_from_slice(&weights.matrix);
    weights
}

fn gather_labeled(features: &[&FeatureMap], labels: &[&PartialLabelMap]) -> TrainSet {
    let mut set = TrainSet {
        features: Vec::new(),
        labels: Vec::new(),
    };
    for (fm, lm) in features.iter().zip(labels.iter()) {
        debug_assert_eq!((fm.height, fm.width), (lm.height, lm.width));
        for (pixel, class) in lm.labeled_pixels() {
            set.features.extend_from_slice(fm.row(pixel));
            set.labels.push(class.0);
        }
    }
    set
}

/// Mean cross-entropy and its gradient for a weight matrix over a flattened
/// sample set. Exposed for the finite-difference gradient check.
pub fn cross_entropy_loss_and_grad(
    matrix: &[f64],
    num_classes: usize,
    features: &[f64],
    labels: &[u32],
) -> (f64, Vec<f64>) {
    let n = labels.len();
    debug_assert_eq!(features.len(), n * FEATURE_DIM);
    debug_assert_eq!(matrix.len(), num_classes * WEIGHT_DIM);
    let mut loss = 0f64;
    let mut grad = vec![0f64; matrix.len()];
    let mut logits = vec![0f64; num_classes];
    let mut probs = vec![0f64; num_classes];
    for (i, &label) in labels.iter().enumerate() {
        let x = &features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM];
        for c in 0..num_classes {
            let row = &matrix[c * WEIGHT_DIM..(c + 1) * WEIGHT_DIM];
            let mut z = row[FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                z += row[d] * x[d];
            }
            logits[c] = z;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0f64;
        for c in 0..num_classes {
            probs[c] = (logits[c] - max).exp();
            denom += probs[c];
        }
        for p in &mut probs {
            *p /= denom;
        }
        loss -= probs[label as usize].max(1e-300).ln();
        for c in 0..num_classes {
            let residual = probs[c] - f64::from(c as u32 == label);
            let row = &mut grad[c * WEIGHT_DIM..(c + 1) * WEIGHT_DIM];
            for d in 0..FEATURE_DIM {
                row[d] += residual * x[d];
            }
            row[FEATURE_DIM] += residual;
        }
    }
    let scale = 1.0 / n as f64;
    for g in &mut grad {
        *g *= scale;
    }
    (loss * scale, grad)
}

/// Argmax-decode one feature map under a weight matrix.
pub fn predict_labels(
    matrix: &[f64],
    num_classes: usize,
    features: &FeatureMap,
) -> GroundTruthMask {
    let mut labels = Vec::with_capacity(features.num_pixels());
    for pixel in 0..features.num_pixels() {
        let x = features.row(pixel);
        let mut best = 0usize;
        let mut best_z = f64::NEG_INFINITY;
        for c in 0..num_classes {
            let row = &matrix[c * WEIGHT_DIM..(c + 1) * WEIGHT_DIM];
            let mut z = row[FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                z += row[d] * x[d];
            }
            if z > best_z {
                best_z = z;
                best = c;
            }
        }
        labels.push(best as u32);
    }
    GroundTruthMask::new(features.height, features.width, num_classes, labels)
}

/// Softmax probabilities from the shadow (validated) weights.
pub fn predict_proba(weights: &ClassifierWeights, features: &FeatureMap) -> ProbabilityMap {
    let c = weights.num_classes;
    let mut probs = Vec::with_capacity(features.num_pixels() * c);
    let mut logits = vec![0f64; c];
    for pixel in 0..features.num_pixels() {
        let x = features.row(pixel);
        for class in 0..c {
            let row = &weights.shadow[class * WEIGHT_DIM..(class + 1) * WEIGHT_DIM];
            let mut z = row[FEATURE_DIM];
            for d in 0..FEATURE_DIM {
                z += row[d] * x[d];
            }
            logits[class] = z;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0f64;
        for z in &mut logits {
            *z = (*z - max).exp();
            denom += *z;
        }
        probs.extend(logits.iter().map(|&e| (e / denom) as f32));
    }
    ProbabilityMap::new(features.height, features.width, c, probs)
}

/// Train on the labeled pixels of `labels`, early-stopping on pooled
/// validation mIoU computed with the Polyak shadow. Returns the raw and
/// shadow matrices captured at the best validation point.
///
/// Each epoch is one full-batch step; a step that would increase the loss
/// halves the learning rate and retries, so the loss trace is monotone
/// non-increasing.
pub fn train(
    features: &[&FeatureMap],
    labels: &[&PartialLabelMap],
    val_features: &[&FeatureMap],
    val_masks: &[&GroundTruthMask],
    num_classes: usize,
    init: Option<&ClassifierWeights>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    assert_eq!(features.len(), labels.len());
    assert_eq!(val_features.len(), val_masks.len());
    assert!(!val_features.is_empty(), "validation set must be non-empty");

    let set = gather_labeled(features, labels);
    if set.labels.is_empty() {
        return Err(Error::NoLabels);
    }

    // Warm starts resume from the previously validated (shadow) weights;
    // the averaging buffer itself restarts at the init point so validation
    // tracks this run's progress rather than a stale average.
    let mut weights = match init {
        Some(w) => {
            assert_eq!(w.num_classes, num_classes);
            ClassifierWeights {
                num_classes: w.num_classes,
                dim: w.dim,
                matrix: w.shadow.clone(),
                shadow: w.shadow.clone(),
            }
        }
        None => class_mean_init(&set, num_classes),
    };

    let validate = |shadow: &[f64]| -> f64 {
        let preds: Vec<GroundTruthMask> = val_features
            .iter()
            .map(|fm| predict_labels(shadow, num_classes, fm))
            .collect();
        miou_pooled(&preds, val_masks, num_classes)
    };

    let mut lr = cfg.learning_rate;
    let (mut loss, mut grad) =
        cross_entropy_loss_and_grad(&weights.matrix, num_classes, &set.features, &set.labels);
    let mut loss_history = vec![loss];
    // The starting point is a validation point too: a session that never
    // beats its (possibly warm-started) init returns the init unchanged.
    let mut best_miou = validate(&weights.shadow);
    let mut best = weights.clone();
    let mut strikes = 0usize;
    let mut epochs = 0usize;

    'training: for _ in 0..cfg.max_epochs {
        // Accept a step only if it does not increase the loss; otherwise
        // halve the learning rate and retry from the same point.
        loop {
            let trial: Vec<f64> = weights
                .matrix
                .iter()
                .zip(grad.iter())
                .map(|(w, g)| w - lr * g)
                .collect();
            let (trial_loss, trial_grad) =
                cross_entropy_loss_and_grad(&trial, num_classes, &set.features, &set.labels);
            if trial_loss <= loss + 1e-12 {
                weights.matrix = trial;
                loss = trial_loss;
                grad = trial_grad;
                break;
            }
            lr /= 2.0;
            if lr < 1e-15 {
                break 'training;
            }
        }
        epochs += 1;
        loss_history.push(loss);

        let alpha = cfg.polyak_alpha;
        for (s, w) in weights.shadow.iter_mut().zip(weights.matrix.iter()) {
            *s = alpha * *s + (1.0 - alpha) * w;
        }

        let val_miou = validate(&weights.shadow);
        if val_miou > best_miou + 1e-12 {
            best_miou = val_miou;
            best = weights.clone();
            strikes = 0;
        } else {
            strikes += 1;
            if strikes >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        weights: best,
        epochs,
        best_val_miou: best_miou.max(0.0),
        loss_history,
    })
}
