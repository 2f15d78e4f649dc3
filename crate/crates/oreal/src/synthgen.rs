//! Reproducible synthetic multi-class segmentation scenes: colored shapes
//! (discs, rectangles, triangles) over a background, with controllable class
//! imbalance and Gaussian color noise.
//!
//! Generation is deterministic per (seed, scene index), so datasets are
//! byte-identical across runs and scene generation parallelizes trivially.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{GroundTruthMask, Image};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Class 0 is the background; classes 1.. are shape classes.
    pub num_classes: usize,
    /// Inclusive range of shapes per scene.
    pub shapes_per_image: (usize, usize),
    /// Sampling weights for the foreground classes `1..num_classes`.
    pub class_weights: Vec<f64>,
    /// Mean color per class; derived from a fixed palette when absent.
    pub class_colors: Option<Vec<[f32; 3]>>,
    /// Shape radius as a fraction of `min(height, width)`, inclusive range.
    pub radius_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            num_classes: 5,
            shapes_per_image: (3, 8),
            class_weights: vec![4.0, 4.0, 2.0, 1.75],
            class_colors: None,
            radius_range: (0.10, 0.22),
            noise_sigma: 0.45,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.class_weights.len() != self.num_classes - 1 {
            return Err(Error::InvalidConfig(format!(
                "{} foreground weights for {} classes",
                self.class_weights.len(),
                self.num_classes
            )));
        }
        if self.class_weights.iter().any(|&w| w < 0.0)
            || self.class_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::InvalidConfig(
                "class weights must be non-negative and not all zero".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        if let Some(colors) = &self.class_colors {
            if colors.len() != self.num_classes {
                return Err(Error::InvalidConfig("one color per class required".into()));
            }
        }
        if self.shapes_per_image.0 > self.shapes_per_image.1 {
            return Err(Error::InvalidConfig("empty shapes-per-image range".into()));
        }
        if !(self.radius_range.0 > 0.0 && self.radius_range.0 <= self.radius_range.1) {
            return Err(Error::InvalidConfig("bad radius range".into()));
        }
        Ok(())
    }

    pub fn colors(&self) -> Vec<[f32; 3]> {
        self.class_colors
            .clone()
            .unwrap_or_else(|| default_palette(self.num_classes))
    }
}

/// Background gray plus well-separated foreground colors; classes beyond the
/// fixed list walk a golden-ratio hue wheel.
pub fn default_palette(num_classes: usize) -> Vec<[f32; 3]> {
    const FIXED: [[f32; 3]; 5] = [
        [0.15, 0.15, 0.15],
        [0.85, 0.20, 0.20],
        [0.20, 0.80, 0.25],
        [0.20, 0.30, 0.85],
        [0.85, 0.80, 0.20],
    ];
    (0..num_classes)
        .map(|c| {
            if c < FIXED.len() {
                FIXED[c]
            } else {
                let hue = (c as f64 * 0.618_033_988_749_895).fract();
                hsv_to_rgb(hue, 0.7, 0.8)
            }
        })
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent rng stream per (seed, scene index).
fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64)))
}

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        cx: f64,
        cy: f64,
        hx: f64,
        hy: f64,
    },
    Triangle {
        v: [(f64, f64); 3],
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { cx, cy, hx, hy } => (x - cx).abs() <= *hx && (y - cy).abs() <= *hy,
            Shape::Triangle { v } => {
                let sign = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| {
                    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
                };
                let p = (x, y);
                let d0 = sign(v[0], v[1], p);
                let d1 = sign(v[1], v[2], p);
                let d2 = sign(v[2], v[0], p);
                let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }

    fn bounding_box(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let (x0, y0, x1, y1) = match self {
            Shape::Disc { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Rect { cx, cy, hx, hy } => (cx - hx, cy - hy, cx + hx, cy + hy),
            Shape::Triangle { v } => {
                let xs = [v[0].0, v[1].0, v[2].0];
                let ys = [v[0].1, v[1].1, v[2].1];
                let min = |a: &[f64]| a.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = |a: &[f64]| a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (min(&xs), min(&ys), max(&xs), max(&ys))
            }
        };
        (
            (x0.floor().max(0.0)) as usize,
            (y0.floor().max(0.0)) as usize,
            (x1.ceil().min(width as f64 - 1.0)).max(0.0) as usize,
            (y1.ceil().min(height as f64 - 1.0)).max(0.0) as usize,
        )
    }
}

fn weighted_class(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        pick -= w;
        if pick < 0.0 {
            return i + 1; // foreground classes start at 1
        }
    }
    weights.len() // numeric edge: last foreground class
}

/// Generate one scene: background, then shapes drawn back to front (the mask
/// records the topmost shape per pixel), then clipped Gaussian color noise.
pub fn generate_scene(cfg: &SceneConfig, index: usize) -> (Image, GroundTruthMask) {
    debug_assert!(cfg.validate().is_ok());
    let (h, w) = (cfg.height, cfg.width);
    let colors = cfg.colors();
    let mut rng = scene_rng(cfg.seed, index);

    let mut image = Image::filled(h, w, colors[0]);
    let mut labels = vec![0u32; h * w];

    let scale = h.min(w) as f64;
    let (r_lo, r_hi) = (cfg.radius_range.0 * scale, cfg.radius_range.1 * scale);
    let n_shapes = rng.random_range(cfg.shapes_per_image.0..=cfg.shapes_per_image.1);
    for _ in 0..n_shapes {
        let class = weighted_class(&cfg.class_weights, &mut rng);
        let kind = rng.random_range(0..3u32);
        let cx = rng.random::<f64>() * w as f64;
        let cy = rng.random::<f64>() * h as f64;
        let shape = match kind {
            0 => Shape::Disc {
                cx,
                cy,
                r: rng.random_range(r_lo..=r_hi),
            },
            1 => Shape::Rect {
                cx,
                cy,
                hx: rng.random_range(r_lo..=r_hi),
                hy: rng.random_range(r_lo..=r_hi),
            },
            _ => {
                let theta = rng.random::<f64>() * std::f64::consts::TAU;
                let mut v = [(0.0, 0.0); 3];
                for (i, vertex) in v.iter_mut().enumerate() {
                    let angle = theta + i as f64 * std::f64::consts::TAU / 3.0;
                    let radius = rng.random_range(r_lo..=r_hi) * 1.3;
                    *vertex = (cx + radius * angle.cos(), cy + radius * angle.sin());
                }
                Shape::Triangle { v }
            }
        };
        let color = colors[class];
        let (x0, y0, x1, y1) = shape.bounding_box(h, w);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if shape.contains(x as f64, y as f64) {
                    let p = y * w + x;
                    labels[p] = class as u32;
                    image.data[p * 3..p * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }

    if cfg.noise_sigma > 0.0 {
        // Spatially correlated noise: a blurred Gaussian field, like sensor
        // noise after demosaicing. Isolated single-pixel outliers are rare;
        // perturbations drift coherently over small neighborhoods.
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
        let field: Vec<f32> = (0..h * w * 3)
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut sum = 0f32;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                            let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            sum += field[(ny * w + nx) * 3 + c];
                        }
                    }
                    let p = (y * w + x) * 3 + c;
                    image.data[p] = (image.data[p] + sum / 9.0).clamp(0.0, 1.0);
                }
            }
        }
    }

    (image, GroundTruthMask::new(h, w, cfg.num_classes, labels))
}

/// Index lists per split; train, then val, then test in generation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SceneConfig,
    pub images: Vec<Image>,
    pub masks: Vec<GroundTruthMask>,
    pub splits: Splits,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Per-class share of pixels over a list of scene indices.
    pub fn class_pixel_frequencies(&self, scenes: &[usize]) -> Vec<f64> {
        let mut counts = vec![0u64; self.num_classes()];
        let mut total = 0u64;
        for &i in scenes {
            for &l in &self.masks[i].labels {
                counts[l as usize] += 1;
            }
            total += self.masks[i].num_pixels() as u64;
        }
        counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }
}

/// Generate disjoint train/val/test splits from one scene stream.
pub fn generate_dataset(
    cfg: &SceneConfig,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidConfig("every split needs at least 1 scene".into()));
    }
    let total = n_train + n_val + n_test;
    let mut images = Vec::with_capacity(total);
    let mut masks = Vec::with_capacity(total);
    for index in 0..total {
        let (image, mask) = generate_scene(cfg, index);
        images.push(image);
        masks.push(mask);
    }
    Ok(Dataset {
        config: cfg.clone(),
        images,
        masks,
        splits: Splits {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..total).collect(),
        },
    })
}
