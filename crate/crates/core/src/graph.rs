//! Grid graphs: per-offset edge planes holding distances or affinities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;

/// A pixel-pair offset (dy, dx) identifying one family of parallel edges.
///
/// Offsets are canonical: lexicographically positive (`dy > 0`, or `dy == 0`
/// and `dx > 0`), so each undirected edge is stored exactly once. The edge
/// for offset o at pixel (y, x) connects (y, x) to (y+dy, x+dx).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeOffset {
    pub dy: i32,
    pub dx: i32,
}

impl EdgeOffset {
    /// Construct a canonical offset; rejects (0,0) and backward orientations.
    pub fn new(dy: i32, dx: i32) -> Result<Self> {
        let off = EdgeOffset { dy, dx };
        if !off.is_canonical() {
            return Err(Error::invalid(format!(
                "offset ({dy}, {dx}) is not canonical (need dy > 0, or dy == 0 and dx > 0)"
            )));
        }
        Ok(off)
    }

    pub fn is_canonical(&self) -> bool {
        self.dy > 0 || (self.dy == 0 && self.dx > 0)
    }
}

/// The nearest-neighbor offsets of a 4-connected grid: right and down.
pub fn nearest_neighbor_offsets() -> Vec<EdgeOffset> {
    vec![EdgeOffset { dy: 0, dx: 1 }, EdgeOffset { dy: 1, dx: 0 }]
}

/// Shared storage for [`MetricGraph`] and [`AffinityGraph`]: one dense H×W
/// value plane and one validity plane per offset.
///
/// An edge is valid when its far endpoint is in bounds and it has not been
/// explicitly masked out (e.g. unsampled pairs). Values at invalid positions
/// are meaningless and kept at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePlanes {
    height: usize,
    width: usize,
    offsets: Vec<EdgeOffset>,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl EdgePlanes {
    /// Zero-valued planes with bounds-implied validity masks.
    pub fn new(height: usize, width: usize, offsets: Vec<EdgeOffset>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "graph dimensions must be positive, got {height}x{width}"
            )));
        }
        if offsets.is_empty() {
            return Err(Error::invalid("offset list must not be empty"));
        }
        for off in &offsets {
            if !off.is_canonical() {
                return Err(Error::invalid(format!(
                    "offset ({}, {}) is not canonical",
                    off.dy, off.dx
                )));
            }
            if off.dy.unsigned_abs() as usize >= height || off.dx.unsigned_abs() as usize >= width {
                return Err(Error::invalid(format!(
                    "offset ({}, {}) reaches beyond a {height}x{width} grid",
                    off.dy, off.dx
                )));
            }
        }
        if offsets.len() != {
            let mut dedup = offsets.clone();
            dedup.sort_unstable_by_key(|o| (o.dy, o.dx));
            dedup.dedup();
            dedup.len()
        } {
            return Err(Error::invalid("offset list contains duplicates"));
        }

        let plane = height * width;
        let mut valid = vec![false; offsets.len() * plane];
        for (o, off) in offsets.iter().enumerate() {
            for y in 0..height {
                for x in 0..width {
                    let ny = y as i64 + off.dy as i64;
                    let nx = x as i64 + off.dx as i64;
                    valid[o * plane + y * width + x] =
                        ny >= 0 && nx >= 0 && (ny as usize) < height && (nx as usize) < width;
                }
            }
        }
        let values = vec![0.0; offsets.len() * plane];
        Ok(EdgePlanes {
            height,
            width,
            offsets,
            values,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offsets(&self) -> &[EdgeOffset] {
        &self.offsets
    }

    pub fn num_offsets(&self) -> usize {
        self.offsets.len()
    }

    /// Raw edge values, offset-major then row-major; invalid edges are 0.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of a given offset in this graph's channel order.
    pub fn offset_index(&self, off: EdgeOffset) -> Option<usize> {
        self.offsets.iter().position(|o| *o == off)
    }

    #[inline]
    fn idx(&self, o: usize, y: usize, x: usize) -> usize {
        debug_assert!(o < self.offsets.len() && y < self.height && x < self.width);
        (o * self.height + y) * self.width + x
    }

    #[inline]
    pub fn value(&self, o: usize, y: usize, x: usize) -> f64 {
        self.values[self.idx(o, y, x)]
    }

    #[inline]
    pub fn is_valid(&self, o: usize, y: usize, x: usize) -> bool {
        self.valid[self.idx(o, y, x)]
    }

    /// Set the value of a valid edge; rejected on invalid edges.
    pub fn set_value(&mut self, o: usize, y: usize, x: usize, v: f64) -> Result<()> {
        let i = self.idx(o, y, x);
        if !self.valid[i] {
            return Err(Error::invalid(format!(
                "edge at offset index {o}, pixel ({y}, {x}) is not valid"
            )));
        }
        self.values[i] = v;
        Ok(())
    }

    /// Mask an in-bounds edge as unsampled. Out-of-bounds edges can never be
    /// made valid, so only `false` assignments are accepted there.
    pub fn set_valid(&mut self, o: usize, y: usize, x: usize, is_valid: bool) -> Result<()> {
        let off = self.offsets[o];
        let ny = y as i64 + off.dy as i64;
        let nx = x as i64 + off.dx as i64;
        let in_bounds = ny >= 0 && nx >= 0 && (ny as usize) < self.height && (nx as usize) < self.width;
        if is_valid && !in_bounds {
            return Err(Error::invalid(format!(
                "edge at offset ({}, {}), pixel ({y}, {x}) leaves the grid and cannot be valid",
                off.dy, off.dx
            )));
        }
        let i = self.idx(o, y, x);
        self.valid[i] = is_valid;
        if !is_valid {
            self.values[i] = 0.0;
        }
        Ok(())
    }

    /// The far endpoint of the edge at (o, y, x), if it lies in bounds.
    pub fn far_endpoint(&self, o: usize, y: usize, x: usize) -> Option<(usize, usize)> {
        let off = self.offsets[o];
        let ny = y as i64 + off.dy as i64;
        let nx = x as i64 + off.dx as i64;
        (ny >= 0 && nx >= 0 && (ny as usize) < self.height && (nx as usize) < self.width)
            .then(|| (ny as usize, nx as usize))
    }

    /// Iterate all valid edges as (offset index, near pixel, far pixel, value).
    pub fn valid_edges(
        &self,
    ) -> impl Iterator<Item = (usize, (usize, usize), (usize, usize), f64)> + '_ {
        (0..self.num_offsets()).flat_map(move |o| {
            (0..self.height).flat_map(move |y| {
                (0..self.width).filter_map(move |x| {
                    if !self.is_valid(o, y, x) {
                        return None;
                    }
                    let far = self.far_endpoint(o, y, x)?;
                    Some((o, (y, x), far, self.value(o, y, x)))
                })
            })
        })
    }

    fn check_range(&self, lo: f64, hi: f64, what: &str) -> Result<()> {
        for o in 0..self.num_offsets() {
            for y in 0..self.height {
                for x in 0..self.width {
                    if !self.is_valid(o, y, x) {
                        continue;
                    }
                    let v = self.value(o, y, x);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "{what} at offset index {o}, pixel ({y}, {x})"
                        )));
                    }
                    if v < lo || v > hi {
                        return Err(Error::invalid(format!(
                            "{what} {v} at offset index {o}, pixel ({y}, {x}) outside [{lo}, {hi}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A grid graph whose edge values are non-negative L1 distances.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    planes: EdgePlanes,
}

impl MetricGraph {
    /// Validate distance planes: finite and non-negative on valid edges.
    pub fn from_planes(planes: EdgePlanes) -> Result<Self> {
        planes.check_range(0.0, f64::INFINITY, "distance")?;
        Ok(MetricGraph { planes })
    }

    pub fn planes(&self) -> &EdgePlanes {
        &self.planes
    }

    #[inline]
    pub fn distance(&self, o: usize, y: usize, x: usize) -> f64 {
        self.planes.value(o, y, x)
    }
}

/// A grid graph whose edge values are affinities in [0, 1]; 1 means "same
/// object", 0 means "certainly different objects".
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    planes: EdgePlanes,
}

impl AffinityGraph {
    /// Validate affinity planes: finite and within [0, 1] on valid edges.
    pub fn from_planes(planes: EdgePlanes) -> Result<Self> {
        planes.check_range(0.0, 1.0, "affinity")?;
        Ok(AffinityGraph { planes })
    }

    pub fn planes(&self) -> &EdgePlanes {
        &self.planes
    }

    #[inline]
    pub fn affinity(&self, o: usize, y: usize, x: usize) -> f64 {
        self.planes.value(o, y, x)
    }
}

/// Build the metric graph of a vector field: each valid edge carries the L1
/// distance between the embedding vectors at its endpoints.
///
/// Distances inherit the metric axioms from the L1 norm, so any triple of
/// pixels (taking distances from the field itself) satisfies the triangle
/// inequality.
pub fn build_metric_graph(field: &VectorField, offsets: &[EdgeOffset]) -> Result<MetricGraph> {
    let mut planes = EdgePlanes::new(field.height(), field.width(), offsets.to_vec())?;
    for o in 0..planes.num_offsets() {
        for y in 0..field.height() {
            for x in 0..field.width() {
                if !planes.is_valid(o, y, x) {
                    continue;
                }
                let (ny, nx) = planes
                    .far_endpoint(o, y, x)
                    .expect("valid edges have in-bounds endpoints");
                planes.set_value(o, y, x, field.l1_distance((y, x), (ny, nx)))?;
            }
        }
    }
    MetricGraph::from_planes(planes)
}

/// Convert distances to affinities via a = exp(−d), preserving masks.
///
/// exp is strictly decreasing, so distance ordering is reversed exactly and
/// d = 0 maps to affinity 1.
pub fn metric_to_affinity(graph: &MetricGraph) -> AffinityGraph {
    let mut planes = graph.planes.clone();
    for o in 0..planes.num_offsets() {
        for y in 0..planes.height() {
            for x in 0..planes.width() {
                if planes.is_valid(o, y, x) {
                    let d = planes.value(o, y, x);
                    planes
                        .set_value(o, y, x, (-d).exp())
                        .expect("edge validity unchanged");
                }
            }
        }
    }
    AffinityGraph::from_planes(planes).expect("exp(-d) of non-negative d lies in (0, 1]")
}
