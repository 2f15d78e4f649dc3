//! Superpixel partitioning and the simulated annotator.
//!
//! Two partitioners are provided: a deterministic rectangular grid (useful as
//! a test baseline) and a SLIC-style k-means in (color, position) space with
//! an enforced-connectivity post-pass. Labeling oracles turn ground truth
//! into dominant labels (one class per superpixel, one click) or weak labels
//! (the set of present classes, one click each).

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::maps::{ClassId, GroundTruthMask, Image, PartialLabelMap};

/// A disjoint cover of one image by 4-connected pixel groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelPartition {
    pub height: usize,
    pub width: usize,
    assignment: Vec<u32>,
    members: Vec<Vec<usize>>,
}

impl SuperpixelPartition {
    /// Build from a per-pixel assignment, checking every invariant: ids are
    /// dense in `0..k`, every superpixel is non-empty and 4-connected.
    pub fn from_assignment(
        height: usize,
        width: usize,
        k: usize,
        assignment: Vec<u32>,
    ) -> Result<Self> {
        if assignment.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} assignment", height, width),
                actual: format!("{} entries", assignment.len()),
            });
        }
        let mut members = vec![Vec::new(); k];
        for (pixel, &id) in assignment.iter().enumerate() {
            let id = id as usize;
            if id >= k {
                return Err(Error::BadContainer(format!(
                    "superpixel id {} out of range for K={}",
                    id, k
                )));
            }
            members[id].push(pixel);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::BadContainer(format!(
                "superpixel {} is empty; ids must be dense",
                empty
            )));
        }
        let part = SuperpixelPartition {
            height,
            width,
            assignment,
            members,
        };
        for id in 0..k {
            if !part.is_connected(id) {
                return Err(Error::BadContainer(format!(
                    "superpixel {} is not 4-connected",
                    id
                )));
            }
        }
        Ok(part)
    }

    pub fn num_superpixels(&self) -> usize {
        self.members.len()
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn superpixel_of(&self, pixel: usize) -> usize {
        self.assignment[pixel] as usize
    }

    /// Pixel indices of one superpixel, in ascending order.
    pub fn members(&self, id: usize) -> &[usize] {
        &self.members[id]
    }

    fn is_connected(&self, id: usize) -> bool {
        let members = &self.members[id];
        let start = members[0];
        let mut seen = vec![false; self.height * self.width];
        let mut reached = 0usize;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            reached += 1;
            for n in neighbors4(p, self.height, self.width) {
                if !seen[n] && self.assignment[n] == self.assignment[start] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        reached == members.len()
    }
}

/// One superpixel of one image in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SuperpixelRef {
    pub image: usize,
    pub superpixel: usize,
}

/// 4-neighborhood of a flat pixel index.
pub(crate) fn neighbors4(pixel: usize, height: usize, width: usize) -> impl Iterator<Item = usize> {
    let y = pixel / width;
    let x = pixel % width;
    [
        (y > 0).then(|| pixel - width),
        (x > 0).then(|| pixel - 1),
        (x + 1 < width).then(|| pixel + 1),
        (y + 1 < height).then(|| pixel + width),
    ]
    .into_iter()
    .flatten()
}

/// Partition an image into `k` rectangular tiles of near-equal size.
///
/// `k` must factor as rows x cols fitting the image; among the feasible
/// factorizations the one with the most square tiles wins.
pub fn grid_partition(height: usize, width: usize, k: usize) -> Result<SuperpixelPartition> {
    if k == 0 || k > height * width {
        return Err(Error::InfeasibleGrid {
            height,
            width,
            superpixels: k,
        });
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for rows in 1..=height.min(k) {
        if k % rows != 0 {
            continue;
        }
        let cols = k / rows;
        if cols > width {
            continue;
        }
        let aspect = ((height as f64 / rows as f64) / (width as f64 / cols as f64))
            .ln()
            .abs();
        if best.map_or(true, |(s, _, _)| aspect < s) {
            best = Some((aspect, rows, cols));
        }
    }
    let (_, rows, cols) = best.ok_or(Error::InfeasibleGrid {
        height,
        width,
        superpixels: k,
    })?;

    let row_of = |y: usize| -> usize {
        // Inverse of the rounded tile boundaries.
        (1..rows)
            .take_while(|&i| (i as f64 * height as f64 / rows as f64).round() as usize <= y)
            .count()
    };
    let col_of = |x: usize| -> usize {
        (1..cols)
            .take_while(|&j| (j as f64 * width as f64 / cols as f64).round() as usize <= x)
            .count()
    };
    let mut assignment = vec![0u32; height * width];
    for y in 0..height {
        for x in 0..width {
            assignment[y * width + x] = (row_of(y) * cols + col_of(x)) as u32;
        }
    }
    SuperpixelPartition::from_assignment(height, width, k, assignment)
}

const SLIC_COLOR_SCALE: f64 = 100.0;

/// 3x3 clamped-edge box filter; superpixel boundaries should follow scene
/// edges rather than per-pixel noise.
fn smooth3x3(image: &Image) -> Image {
    let (h, w) = (image.height, image.width);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let mut sum = [0f32; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let px = image.pixel(ny * w + nx);
                    for c in 0..3 {
                        sum[c] += px[c];
                    }
                }
            }
            data.extend(sum.iter().map(|s| s / 9.0));
        }
    }
    Image::new(h, w, data)
}

/// SLIC-style superpixels: k-means over scaled color and position on a
/// lightly smoothed copy of the image, followed by a connectivity pass.
/// Yields at most `k` superpixels, re-indexed densely; deterministic for
/// fixed inputs.
pub fn slic_partition(
    image: &Image,
    k: usize,
    compactness: f64,
    iterations: usize,
) -> Result<SuperpixelPartition> {
    let (h, w) = (image.height, image.width);
    let n = h * w;
    assert!(k >= 1 && k <= n, "superpixel count {} out of range", k);
    assert!(iterations >= 1);
    let image = &smooth3x3(image);

    // Exactly k initial centers on a near-square grid.
    let mut rows = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h.min(k));
    rows = rows.max(k.div_ceil(w)).min(h.min(k));
    let base = k / rows;
    let extra = k % rows;
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(k); // (x, y, r, g, b)
    for i in 0..rows {
        let in_row = base + usize::from(i < extra);
        let y = ((i as f64 + 0.5) * h as f64 / rows as f64).floor().min(h as f64 - 1.0);
        for j in 0..in_row {
            let x = ((j as f64 + 0.5) * w as f64 / in_row as f64).floor().min(w as f64 - 1.0);
            let px = image.pixel(y as usize * w + x as usize);
            centers.push([
                x,
                y,
                px[0] as f64 * SLIC_COLOR_SCALE,
                px[1] as f64 * SLIC_COLOR_SCALE,
                px[2] as f64 * SLIC_COLOR_SCALE,
            ]);
        }
    }
    debug_assert_eq!(centers.len(), k);

    let spacing = (n as f64 / k as f64).sqrt();
    let spatial_weight = (compactness / spacing).powi(2);
    let mut assignment = vec![0u32; n];
    for _ in 0..iterations {
        for pixel in 0..n {
            let y = (pixel / w) as f64;
            let x = (pixel % w) as f64;
            let px = image.pixel(pixel);
            let (r, g, b) = (
                px[0] as f64 * SLIC_COLOR_SCALE,
                px[1] as f64 * SLIC_COLOR_SCALE,
                px[2] as f64 * SLIC_COLOR_SCALE,
            );
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (id, c) in centers.iter().enumerate() {
                let ds = (x - c[0]).powi(2) + (y - c[1]).powi(2);
                let dc = (r - c[2]).powi(2) + (g - c[3]).powi(2) + (b - c[4]).powi(2);
                let d = dc + spatial_weight * ds;
                if d < best_d {
                    best_d = d;
                    best = id;
                }
            }
            assignment[pixel] = best as u32;
        }
        let mut sums = vec![[0f64; 5]; k];
        let mut counts = vec![0usize; k];
        for pixel in 0..n {
            let id = assignment[pixel] as usize;
            let px = image.pixel(pixel);
            sums[id][0] += (pixel % w) as f64;
            sums[id][1] += (pixel / w) as f64;
            sums[id][2] += px[0] as f64 * SLIC_COLOR_SCALE;
            sums[id][3] += px[1] as f64 * SLIC_COLOR_SCALE;
            sums[id][4] += px[2] as f64 * SLIC_COLOR_SCALE;
            counts[id] += 1;
        }
        for id in 0..k {
            if counts[id] > 0 {
                for d in 0..5 {
                    centers[id][d] = sums[id][d] / counts[id] as f64;
                }
            }
        }
    }

    let assignment = enforce_connectivity(h, w, &assignment);
    let k_final = assignment.iter().map(|&a| a as usize).max().unwrap() + 1;
    SuperpixelPartition::from_assignment(h, w, k_final, assignment)
}

/// Keep the largest connected component of each k-means label, grow the
/// survivors over the remaining pixels, and re-index densely in scan order.
fn enforce_connectivity(h: usize, w: usize, assignment: &[u32]) -> Vec<u32> {
    let n = h * w;
    const UNSET: u32 = u32::MAX;

    // Connected components of equal-label regions, in scan order.
    let mut component = vec![UNSET; n];
    let mut comp_label: Vec<u32> = Vec::new();
    let mut comp_size: Vec<usize> = Vec::new();
    for start in 0..n {
        if component[start] != UNSET {
            continue;
        }
        let id = comp_label.len() as u32;
        comp_label.push(assignment[start]);
        let mut size = 0usize;
        let mut queue = VecDeque::from([start]);
        component[start] = id;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for q in neighbors4(p, h, w) {
                if component[q] == UNSET && assignment[q] == assignment[start] {
                    component[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_size.push(size);
    }

    // Survivor: the largest component per label (first in scan order on ties).
    let k = assignment.iter().map(|&a| a as usize).max().unwrap() + 1;
    let mut survivor: Vec<Option<u32>> = vec![None; k];
    for (comp, &label) in comp_label.iter().enumerate() {
        let slot = &mut survivor[label as usize];
        match *slot {
            Some(cur) if comp_size[cur as usize] >= comp_size[comp] => {}
            _ => *slot = Some(comp as u32),
        }
    }

    let mut grown = vec![UNSET; n];
    for pixel in 0..n {
        if survivor[assignment[pixel] as usize] == Some(component[pixel]) {
            grown[pixel] = component[pixel];
        }
    }
    // Flood the orphans from adjacent surviving regions, breadth-first.
    let mut queue: VecDeque<usize> = (0..n)
        .filter(|&p| grown[p] == UNSET && neighbors4(p, h, w).any(|q| grown[q] != UNSET))
        .collect();
    while let Some(p) = queue.pop_front() {
        if grown[p] != UNSET {
            continue;
        }
        let adopted = neighbors4(p, h, w)
            .filter(|&q| grown[q] != UNSET)
            .map(|q| grown[q])
            .min();
        if let Some(label) = adopted {
            grown[p] = label;
            for q in neighbors4(p, h, w) {
                if grown[q] == UNSET {
                    queue.push_back(q);
                }
            }
        }
    }
    debug_assert!(grown.iter().all(|&g| g != UNSET));

    // Dense re-index in order of first appearance.
    let mut remap = vec![UNSET; comp_label.len()];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for pixel in 0..n {
        let g = grown[pixel] as usize;
        if remap[g] == UNSET {
            remap[g] = next;
            next += 1;
        }
        out[pixel] = remap[g];
    }
    out
}

/// The most prevalent ground-truth class in a superpixel; ties go to the
/// lowest class index.
pub fn dominant_label(
    partition: &SuperpixelPartition,
    superpixel: usize,
    gt: &GroundTruthMask,
) -> ClassId {
    debug_assert_eq!((partition.height, partition.width), (gt.height, gt.width));
    let mut counts = vec![0usize; gt.num_classes];
    for &pixel in partition.members(superpixel) {
        counts[gt.labels[pixel] as usize] += 1;
    }
    let mut best = 0usize;
    for (c, &n) in counts.iter().enumerate().skip(1) {
        if n > counts[best] {
            best = c;
        }
    }
    ClassId(best as u32)
}

/// All distinct ground-truth classes present in a superpixel, ascending.
pub fn weak_labels(
    partition: &SuperpixelPartition,
    superpixel: usize,
    gt: &GroundTruthMask,
) -> Vec<ClassId> {
    let mut present = vec![false; gt.num_classes];
    for &pixel in partition.members(superpixel) {
        present[gt.labels[pixel] as usize] = true;
    }
    present
        .iter()
        .enumerate()
        .filter_map(|(c, &p)| p.then(|| ClassId(c as u32)))
        .collect()
}

/// How the simulated annotator answers a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// One class per superpixel, one click each.
    Dominant,
    /// Every present class, one click per class.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Annotation {
    Dominant(ClassId),
    Weak(Vec<ClassId>),
}

/// Answer a batch of queries against the ground-truth oracle, returning the
/// labels plus the total click cost.
pub fn annotate(
    queries: &[SuperpixelRef],
    partitions: &[SuperpixelPartition],
    gts: &[GroundTruthMask],
    scheme: LabelScheme,
) -> (Vec<(SuperpixelRef, Annotation)>, usize) {
    let mut out = Vec::with_capacity(queries.len());
    let mut clicks = 0usize;
    for &q in queries {
        let part = &partitions[q.image];
        let gt = &gts[q.image];
        let ann = match scheme {
            LabelScheme::Dominant => {
                clicks += 1;
                Annotation::Dominant(dominant_label(part, q.superpixel, gt))
            }
            LabelScheme::Weak => {
                let classes = weak_labels(part, q.superpixel, gt);
                clicks += classes.len();
                Annotation::Weak(classes)
            }
        };
        out.push((q, ann));
    }
    (out, clicks)
}

/// Stamp one superpixel's label onto every pixel it covers.
pub fn expand_to_pixels(
    partition: &SuperpixelPartition,
    superpixel: usize,
    label: ClassId,
    target: &mut PartialLabelMap,
) {
    debug_assert_eq!(
        (partition.height, partition.width),
        (target.height, target.width)
    );
    for &pixel in partition.members(superpixel) {
        target.set(pixel, label);
    }
}

/// Pixel-level cost of the dominant labeling scheme on one image: how many
/// pixels the expanded dominant labels get wrong, counted directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DominantFidelity {
    pub disagreeing_pixels: usize,
    pub total_pixels: usize,
}

impl DominantFidelity {
    pub fn disagreement_fraction(&self) -> f64 {
        self.disagreeing_pixels as f64 / self.total_pixels as f64
    }
}

pub fn dominant_fidelity(
    partition: &SuperpixelPartition,
    gt: &GroundTruthMask,
) -> DominantFidelity {
    let mut expanded = PartialLabelMap::unlabeled(gt.height, gt.width, gt.num_classes);
    for sp in 0..partition.num_superpixels() {
        expand_to_pixels(partition, sp, dominant_label(partition, sp, gt), &mut expanded);
    }
    let disagreeing = (0..gt.num_pixels())
        .filter(|&p| expanded.get(p) != Some(gt.label(p)))
        .count();
    DominantFidelity {
        disagreeing_pixels: disagreeing,
        total_pixels: gt.num_pixels(),
    }
}
