//! Dense integer label maps and connected-component relabeling.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::union_find::UnionFind;

/// A dense H×W grid of object ids, row-major.
///
/// Label 0 is reserved for background/unlabeled pixels; positive labels are
/// object ids. Labels need not be contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

/// Pixel neighborhood used for connectivity decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    /// Forward half of the neighborhood: each undirected pixel adjacency is
    /// visited exactly once when every pixel scans these offsets.
    pub(crate) fn forward_offsets(self) -> &'static [(i32, i32)] {
        match self {
            Connectivity::Four => &[(0, 1), (1, 0)],
            Connectivity::Eight => &[(0, 1), (1, 0), (1, 1), (1, -1)],
        }
    }
}

impl LabelMap {
    /// All-background map. Dimensions must be positive.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels: vec![0; height * width],
        })
    }

    /// Wrap an existing row-major buffer of length H·W.
    pub fn from_vec(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "label data length {} does not match {height}x{width}",
                labels.len()
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        debug_assert!(y < self.height && x < self.width);
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: u32) {
        debug_assert!(y < self.height && x < self.width);
        self.labels[y * self.width + x] = label;
    }

    /// Sorted list of distinct positive labels.
    pub fn positive_labels(&self) -> Vec<u32> {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Pixel count per positive label, sorted by label.
    pub fn sizes(&self) -> BTreeMap<u32, usize> {
        let mut sizes = BTreeMap::new();
        for &l in &self.labels {
            if l > 0 {
                *sizes.entry(l).or_insert(0) += 1;
            }
        }
        sizes
    }
}

/// Output of [`relabel_connected`]: the component map plus, for each new
/// label, the original label it came from (`mapping[new] == original`,
/// with `mapping[0] == 0` for background).
#[derive(Debug, Clone)]
pub struct RelabelResult {
    pub labels: LabelMap,
    pub mapping: Vec<u32>,
}

/// Split every positive label into one label per connected component.
///
/// Two pixels belong to the same component when they are neighbors under
/// `connectivity` AND carry the same original label. New labels are assigned
/// 1..=K in row-major first-touch order; background is unchanged. The result
/// carries the new→original label mapping.
pub fn relabel_connected(labels: &LabelMap, connectivity: Connectivity) -> RelabelResult {
    let (h, w) = (labels.height, labels.width);
    let mut uf = UnionFind::new(h * w);
    for y in 0..h {
        for x in 0..w {
            let here = labels.get(y, x);
            if here == 0 {
                continue;
            }
            for &(dy, dx) in connectivity.forward_offsets() {
                let (ny, nx) = (y as i64 + dy as i64, x as i64 + dx as i64);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if labels.get(ny, nx) == here {
                    uf.union((y * w + x) as u32, (ny * w + nx) as u32);
                }
            }
        }
    }

    let mut out = LabelMap::zeros(h, w).expect("input dims already validated");
    let mut mapping = vec![0u32];
    let mut root_to_new: BTreeMap<u32, u32> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let original = labels.get(y, x);
            if original == 0 {
                continue;
            }
            let root = uf.find((y * w + x) as u32);
            let new = *root_to_new.entry(root).or_insert_with(|| {
                mapping.push(original);
                (mapping.len() - 1) as u32
            });
            out.set(y, x, new);
        }
    }
    RelabelResult {
        labels: out,
        mapping,
    }
}
