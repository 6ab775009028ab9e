//! Segmentation evaluation: Rand F-score and Variation of Information,
//! both decomposed into merge and split components, over a boundary-excluded
//! pixel set.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::LabelMap;

/// Which pixels participate in evaluation (`true` = included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    include: Vec<bool>,
}

impl PixelMask {
    /// Mask including every pixel.
    pub fn all(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(PixelMask {
            height,
            width,
            include: vec![true; height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, include: Vec<bool>) -> Result<Self> {
        if include.len() != height * width {
            return Err(Error::shape(format!(
                "mask data length {} does not match {height}x{width}",
                include.len()
            )));
        }
        Ok(PixelMask {
            height,
            width,
            include,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn included(&self, y: usize, x: usize) -> bool {
        self.include[y * self.width + x]
    }

    pub fn num_included(&self) -> usize {
        self.include.iter().filter(|&&b| b).count()
    }
}

/// Exclude pixels near ground-truth label changes, plus all background.
///
/// A pixel is excluded iff some pixel within Chebyshev distance `radius`
/// carries a different ground-truth label (background transitions count),
/// or the pixel itself is background. Scores should reflect object
/// interiors, not the inherently ambiguous boundary strip.
///
/// Implemented as separable sliding-window min/max over the label grid
/// (a square window is constant exactly when its min equals its max), so it
/// runs in O(H·W·radius) rather than O(H·W·radius²).
pub fn boundary_exclusion_mask(gt: &LabelMap, radius: usize) -> PixelMask {
    let (h, w) = (gt.height(), gt.width());
    let r = radius as i64;

    // Row pass: per-pixel min/max over the horizontal window.
    let mut row_min = vec![0u32; h * w];
    let mut row_max = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = (x as i64 - r).max(0) as usize;
            let hi = ((x as i64 + r) as usize).min(w - 1);
            let window = &gt.labels()[y * w + lo..=y * w + hi];
            row_min[y * w + x] = *window.iter().min().expect("window non-empty");
            row_max[y * w + x] = *window.iter().max().expect("window non-empty");
        }
    }

    // Column pass over the row extrema completes the square window.
    let mut include = vec![false; h * w];
    for y in 0..h {
        let lo = (y as i64 - r).max(0) as usize;
        let hi = ((y as i64 + r) as usize).min(h - 1);
        for x in 0..w {
            let mut mn = u32::MAX;
            let mut mx = 0u32;
            for yy in lo..=hi {
                mn = mn.min(row_min[yy * w + x]);
                mx = mx.max(row_max[yy * w + x]);
            }
            include[y * w + x] = mn == mx && gt.get(y, x) != 0;
        }
    }
    PixelMask {
        height: h,
        width: w,
        include,
    }
}

/// Joint label counts over the evaluated pixels: `counts[i][j]` is the
/// number of pixels with the i-th predicted label and j-th ground-truth
/// label. Label values are taken verbatim — a predicted 0 is a segment like
/// any other here.
#[derive(Debug, Clone, Serialize)]
pub struct ContingencyTable {
    pub pred_labels: Vec<u32>,
    pub gt_labels: Vec<u32>,
    /// Row-major pred × gt count matrix.
    pub counts: Vec<u64>,
    /// Per-predicted-label totals s_i.
    pub row_sums: Vec<u64>,
    /// Per-ground-truth-label totals t_j.
    pub col_sums: Vec<u64>,
    /// Evaluated pixel count n.
    pub total: u64,
}

impl ContingencyTable {
    /// Count included pixels. Errors when shapes differ or no pixel is
    /// included.
    pub fn build(pred: &LabelMap, gt: &LabelMap, mask: &PixelMask) -> Result<Self> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::shape(format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        if mask.height() != gt.height() || mask.width() != gt.width() {
            return Err(Error::shape(format!(
                "mask is {}x{} but maps are {}x{}",
                mask.height(),
                mask.width(),
                gt.height(),
                gt.width()
            )));
        }
        let mut cells: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if mask.included(y, x) {
                    *cells.entry((pred.get(y, x), gt.get(y, x))).or_insert(0) += 1;
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::invalid("no pixels left to evaluate"));
        }

        // BTreeMap keys iterate in (pred, gt) order, so pred values arrive
        // sorted; gt values need their own sort.
        let mut pred_labels: Vec<u32> = cells.keys().map(|&(p, _)| p).collect();
        pred_labels.dedup();
        let mut gt_labels: Vec<u32> = cells.keys().map(|&(_, g)| g).collect();
        gt_labels.sort_unstable();
        gt_labels.dedup();

        let (np, ng) = (pred_labels.len(), gt_labels.len());
        let mut counts = vec![0u64; np * ng];
        for (&(p, g), &c) in &cells {
            let i = pred_labels.binary_search(&p).expect("row exists");
            let j = gt_labels.binary_search(&g).expect("column exists");
            counts[i * ng + j] = c;
        }
        let row_sums: Vec<u64> = (0..np)
            .map(|i| counts[i * ng..(i + 1) * ng].iter().sum())
            .collect();
        let col_sums: Vec<u64> = (0..ng)
            .map(|j| (0..np).map(|i| counts[i * ng + j]).sum())
            .collect();
        let total = row_sums.iter().sum();
        Ok(ContingencyTable {
            pred_labels,
            gt_labels,
            counts,
            row_sums,
            col_sums,
            total,
        })
    }
}

/// Scores produced by [`evaluate`].
///
/// Rand scores live in [0, 1], 1 is perfect; `rand_merge` drops when true
/// objects are erroneously joined, `rand_split` when one true object is
/// fragmented. VI components are conditional entropies in nats, 0 is
/// perfect; `vi_total = vi_merge + vi_split`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub rand_f: f64,
    pub rand_merge: f64,
    pub rand_split: f64,
    pub vi_total: f64,
    /// H(gt | pred): information about the truth lost by merging.
    pub vi_merge: f64,
    /// H(pred | gt): excess fragmentation information.
    pub vi_split: f64,
    pub evaluated_pixels: u64,
    pub excluded_pixels: u64,
    pub num_pred_segments: usize,
    pub num_gt_segments: usize,
}

/// Score a prediction against ground truth over the masked-in pixels.
///
/// ```text
/// rand_merge = Σ n_ij² / Σ s_i²      rand_split = Σ n_ij² / Σ t_j²
/// rand_f     = harmonic mean of the two
/// vi_split   = H(pred | gt)          vi_merge   = H(gt | pred)
/// ```
///
/// where n_ij are contingency counts, s_i predicted-segment sizes and t_j
/// ground-truth-segment sizes; entropies use natural logs with 0·ln 0 = 0.
pub fn evaluate(pred: &LabelMap, gt: &LabelMap, mask: &PixelMask) -> Result<EvalReport> {
    let table = ContingencyTable::build(pred, gt, mask)?;
    let n = table.total as f64;
    let ng = table.gt_labels.len();

    let sum_sq_cells: f64 = table.counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    let sum_sq_rows: f64 = table.row_sums.iter().map(|&s| (s as f64) * (s as f64)).sum();
    let sum_sq_cols: f64 = table.col_sums.iter().map(|&t| (t as f64) * (t as f64)).sum();
    let rand_merge = sum_sq_cells / sum_sq_rows;
    let rand_split = sum_sq_cells / sum_sq_cols;
    let rand_f = 2.0 * rand_merge * rand_split / (rand_merge + rand_split);

    // Conditional entropies straight off the table; absent cells are the
    // 0·ln 0 = 0 case.
    let mut vi_split = 0.0; // H(pred | gt)
    let mut vi_merge = 0.0; // H(gt | pred)
    for (i, &s) in table.row_sums.iter().enumerate() {
        for (j, &t) in table.col_sums.iter().enumerate() {
            let c = table.counts[i * ng + j];
            if c == 0 {
                continue;
            }
            let p = c as f64 / n;
            vi_split -= p * (c as f64 / t as f64).ln();
            vi_merge -= p * (c as f64 / s as f64).ln();
        }
    }

    Ok(EvalReport {
        rand_f,
        rand_merge,
        rand_split,
        vi_total: vi_merge + vi_split,
        vi_merge,
        vi_split,
        evaluated_pixels: table.total,
        excluded_pixels: (gt.height() * gt.width()) as u64 - table.total,
        num_pred_segments: table.pred_labels.len(),
        num_gt_segments: table.gt_labels.len(),
    })
}
