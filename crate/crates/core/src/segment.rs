//! Segmentation: thresholded connected components, cleanup, and the
//! seed-based baseline.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{l1_dist, VectorField};
use crate::graph::{AffinityGraph, EdgeOffset, MetricGraph};
use crate::labels::{Connectivity, LabelMap};
use crate::loss::object_stats;
use crate::union_find::UnionFind;

/// Settings for component extraction and postprocessing.
#[derive(Debug, Clone, Copy)]
pub struct SegmentationConfig {
    /// Join a metric-graph edge when its distance is strictly below this.
    /// Defaults to the hinge margin: the loss pulls intra-object distances
    /// toward 0 and pushes inter-mean distances past twice the margin, so
    /// the margin itself is the natural midpoint.
    pub distance_threshold: f64,
    /// Join an affinity-graph edge when its affinity is strictly above this.
    pub affinity_threshold: f64,
    /// Segments of at most this many pixels become background (1 removes
    /// singletons only).
    pub min_size: usize,
    /// Maximum number of dilation rounds growing segments into background.
    pub max_dilation: usize,
    /// Which edges count as "nearest neighbor" for components.
    pub connectivity: Connectivity,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            distance_threshold: 1.5,
            affinity_threshold: 0.5,
            min_size: 1,
            max_dilation: 10,
            connectivity: Connectivity::Four,
        }
    }
}

impl SegmentationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.distance_threshold.is_finite() && self.distance_threshold > 0.0) {
            return Err(Error::invalid(format!(
                "distance threshold must be positive, got {}",
                self.distance_threshold
            )));
        }
        if !(self.affinity_threshold > 0.0 && self.affinity_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "affinity threshold must lie strictly inside (0, 1), got {}",
                self.affinity_threshold
            )));
        }
        Ok(())
    }
}

/// Either graph kind, as accepted by [`connected_components`].
#[derive(Debug, Clone, Copy)]
pub enum GraphRef<'a> {
    Metric(&'a MetricGraph),
    Affinity(&'a AffinityGraph),
}

impl<'a> GraphRef<'a> {
    fn planes(&self) -> &'a crate::graph::EdgePlanes {
        match self {
            GraphRef::Metric(g) => g.planes(),
            GraphRef::Affinity(g) => g.planes(),
        }
    }

    /// Whether an edge value joins its endpoints under `config`.
    fn joins(&self, value: f64, config: &SegmentationConfig) -> bool {
        match self {
            GraphRef::Metric(_) => value < config.distance_threshold,
            GraphRef::Affinity(_) => value > config.affinity_threshold,
        }
    }
}

/// Partition the grid by joining nearest-neighbor edges that pass the
/// threshold (distance strictly below it, or affinity strictly above it).
///
/// Only the nearest-neighbor channels of the graph are consulted, even when
/// longer-range channels exist. Components are labeled 1..=K in row-major
/// first-touch order; every pixel receives a label (cleanup happens in
/// [`postprocess`]). The resulting partition is a pure function of the edge
/// set, independent of traversal order.
pub fn connected_components(graph: GraphRef, config: &SegmentationConfig) -> Result<LabelMap> {
    config.validate()?;
    let planes = graph.planes();
    let (h, w) = (planes.height(), planes.width());

    let mut nn_indices = Vec::new();
    for &(dy, dx) in config.connectivity.forward_offsets() {
        let off = EdgeOffset { dy, dx };
        match planes.offset_index(off) {
            Some(o) => nn_indices.push(o),
            None => {
                return Err(Error::invalid(format!(
                    "graph lacks the nearest-neighbor offset ({dy}, {dx})"
                )))
            }
        }
    }

    let mut uf = UnionFind::new(h * w);
    for &o in &nn_indices {
        for y in 0..h {
            for x in 0..w {
                if !planes.is_valid(o, y, x) {
                    continue;
                }
                if graph.joins(planes.value(o, y, x), config) {
                    let (ny, nx) = planes
                        .far_endpoint(o, y, x)
                        .expect("valid edges stay in bounds");
                    uf.union((y * w + x) as u32, (ny * w + nx) as u32);
                }
            }
        }
    }

    let mut out = LabelMap::zeros(h, w)?;
    let mut next = 0u32;
    let mut root_to_label: BTreeMap<u32, u32> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let root = uf.find((y * w + x) as u32);
            let label = *root_to_label.entry(root).or_insert_with(|| {
                next += 1;
                next
            });
            out.set(y, x, label);
        }
    }
    Ok(out)
}

/// Set every segment of size ≤ `min_size` to background.
pub fn remove_small_segments(labels: &LabelMap, min_size: usize) -> LabelMap {
    let sizes = labels.sizes();
    let mut out = labels.clone();
    for l in out.labels_mut() {
        if *l > 0 && sizes[l] <= min_size {
            *l = 0;
        }
    }
    out
}

/// Grow positive segments into background by synchronous 4-neighbor rounds.
///
/// Each round assigns to every background pixel the smallest positive label
/// among its 4-neighbors in the previous round's map (competing fronts tie
/// toward the smaller id). Positive pixels are never overwritten. Stops
/// after `max_rounds` or when a round changes nothing.
pub fn dilate_segments(labels: &LabelMap, max_rounds: usize) -> LabelMap {
    let (h, w) = (labels.height(), labels.width());
    let mut current = labels.clone();
    for _ in 0..max_rounds {
        let mut next = current.clone();
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if current.get(y, x) != 0 {
                    continue;
                }
                let mut best = 0u32;
                for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let l = current.get(ny as usize, nx as usize);
                    if l > 0 && (best == 0 || l < best) {
                        best = l;
                    }
                }
                if best > 0 {
                    next.set(y, x, best);
                    changed = true;
                }
            }
        }
        current = next;
        if !changed {
            break;
        }
    }
    current
}

/// Small-segment removal followed by dilation, in that order.
pub fn postprocess(labels: &LabelMap, config: &SegmentationConfig) -> LabelMap {
    let cleaned = remove_small_segments(labels, config.min_size);
    dilate_segments(&cleaned, config.max_dilation)
}

/// Assign every non-background pixel to the ground-truth object whose mean
/// vector is nearest (L1) to the pixel's vector; ties go to the smallest
/// label. Ground-truth background pixels stay background.
///
/// The means are computed from the ground truth itself, making this the
/// upper bound of seed-based methods: real seeds could only be worse.
pub fn seed_segment(field: &VectorField, gt: &LabelMap) -> Result<LabelMap> {
    let stats = object_stats(field, gt)?;
    let mut out = LabelMap::zeros(gt.height(), gt.width())?;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if gt.get(y, x) == 0 {
                continue;
            }
            let v = field.vector(y, x);
            let mut best_label = stats.labels[0];
            let mut best_dist = l1_dist(&stats.means[0], v);
            for c in 1..stats.labels.len() {
                let d = l1_dist(&stats.means[c], v);
                // Strict improvement only: on ties the earlier (smaller,
                // since sorted) label wins.
                if d < best_dist {
                    best_dist = d;
                    best_label = stats.labels[c];
                }
            }
            out.set(y, x, best_label);
        }
    }
    Ok(out)
}
