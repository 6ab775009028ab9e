//! Discriminative embedding loss with analytic gradients.
//!
//! The loss drives the vectors of each object toward their object mean
//! (`l_int`), pushes distinct object means at least 2·δ_d apart (`l_ext`,
//! a squared hinge), and weakly regularizes mean magnitudes (`l_norm`):
//!
//! ```text
//! L_int  = (1/C) Σ_c (1/N_c) Σ_{i∈c} ‖μ_c − v_i‖₁²
//! L_ext  = (1/(C(C−1))) Σ_{a≠b included} max(2δ_d − ‖μ_a − μ_b‖₁, 0)²
//! L_norm = (1/C) Σ_c ‖μ_c‖₁
//! L      = L_int + L_ext + γ·L_norm
//! ```
//!
//! All norms are L1. C is the number of distinct positive labels, N_c the
//! pixel count of object c, μ_c its mean vector. Background pixels (label 0)
//! carry no loss terms. The L_ext sum runs over ordered label pairs, which
//! pairs being controlled by an [`ExtMask`]; with a single object L_ext is
//! defined as 0. At the non-differentiable points (a zero coordinate inside
//! |·|, the hinge kink) the subgradient 0 is used, which keeps gradients
//! deterministic.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{l1_dist, l1_norm, VectorField};
use crate::labels::LabelMap;

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParams {
    /// Hinge margin: object means are pushed until ≥ 2·delta_d apart.
    pub delta_d: f64,
    /// Weight of the mean-norm regularizer in the total.
    pub gamma: f64,
    /// Embedding dimension used when a vector field has to be created for
    /// fitting; loss evaluation itself follows the field's own dimension.
    pub dim: usize,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            delta_d: 1.5,
            gamma: 0.001,
            dim: 32,
        }
    }
}

impl LossParams {
    fn validate(&self) -> Result<()> {
        if !(self.delta_d.is_finite() && self.delta_d > 0.0) {
            return Err(Error::invalid(format!(
                "delta_d must be positive, got {}",
                self.delta_d
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::invalid(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        Ok(())
    }
}

/// Which ordered object pairs enter L_ext.
///
/// Indexed by position in the sorted list of positive labels it was built
/// for; symmetric with the diagonal always excluded. Used to drop hinge
/// terms between components that one original object was split into, so the
/// loss never pushes apart pieces of the same object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtMask {
    labels: Vec<u32>,
    include: Vec<bool>,
}

impl ExtMask {
    /// Mask including every off-diagonal pair of the given labels.
    pub fn all_pairs(labels: &[u32]) -> Result<Self> {
        let labels = validated_label_list(labels)?;
        let n = labels.len();
        let mut include = vec![true; n * n];
        for i in 0..n {
            include[i * n + i] = false;
        }
        Ok(ExtMask { labels, include })
    }

    /// The sorted positive labels this mask is indexed by.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Whether the ordered pair at (sorted) label indices (i, j) is counted.
    pub fn included(&self, i: usize, j: usize) -> bool {
        self.include[i * self.labels.len() + j]
    }

    fn exclude(&mut self, i: usize, j: usize) {
        let n = self.labels.len();
        self.include[i * n + j] = false;
        self.include[j * n + i] = false;
    }
}

fn validated_label_list(labels: &[u32]) -> Result<Vec<u32>> {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != labels.len() || sorted.first() == Some(&0) {
        return Err(Error::invalid(
            "mask label list must be distinct positive labels",
        ));
    }
    Ok(sorted)
}

/// Everything `compute_loss` knows at the end of an evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub l_int: f64,
    pub l_ext: f64,
    /// Unweighted mean-norm term; `total` applies the gamma weight.
    pub l_norm: f64,
    pub total: f64,
    /// Number of distinct positive labels C.
    pub num_objects: usize,
    /// The distinct positive labels, sorted; parallel to `pixel_counts`
    /// and `means`.
    pub labels: Vec<u32>,
    /// N_c per object.
    pub pixel_counts: Vec<usize>,
    /// μ_c per object.
    pub means: Vec<Vec<f64>>,
    /// Gradient of `total` with respect to every pixel vector; only filled
    /// by the gradient entry points.
    #[serde(skip)]
    pub gradient: Option<VectorField>,
}

/// Compensated (Kahan) summation: the object means feed every other term,
/// so they are accumulated with a running error correction.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-object pixel counts and Kahan-summed mean vectors, ordered by sorted
/// positive label.
pub(crate) struct ObjectStats {
    pub labels: Vec<u32>,
    pub counts: Vec<usize>,
    pub means: Vec<Vec<f64>>,
}

pub(crate) fn object_stats(field: &VectorField, labels: &LabelMap) -> Result<ObjectStats> {
    if field.height() != labels.height() || field.width() != labels.width() {
        return Err(Error::shape(format!(
            "field is {}x{} but labels are {}x{}",
            field.height(),
            field.width(),
            labels.height(),
            labels.width()
        )));
    }
    let sorted = labels.positive_labels();
    if sorted.is_empty() {
        return Err(Error::invalid("label map contains no positive labels"));
    }
    let dim = field.dim();
    let mut counts = vec![0usize; sorted.len()];
    let mut sums = vec![KahanSum::default(); sorted.len() * dim];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(y, x);
            if l == 0 {
                continue;
            }
            let c = sorted.binary_search(&l).expect("label seen in first scan");
            counts[c] += 1;
            let v = field.vector(y, x);
            for (k, acc) in sums[c * dim..(c + 1) * dim].iter_mut().enumerate() {
                acc.add(v[k]);
            }
        }
    }
    let means = (0..sorted.len())
        .map(|c| {
            (0..dim)
                .map(|k| sums[c * dim + k].value() / counts[c] as f64)
                .collect()
        })
        .collect();
    Ok(ObjectStats {
        labels: sorted,
        counts,
        means,
    })
}

/// Evaluate the loss. `ext_mask = None` means all object pairs enter L_ext;
/// a mask must have been built for exactly the positive labels of `labels`.
pub fn compute_loss(
    field: &VectorField,
    labels: &LabelMap,
    params: &LossParams,
    ext_mask: Option<&ExtMask>,
) -> Result<LossReport> {
    loss_impl(field, labels, params, ext_mask, false)
}

/// Evaluate the loss and its gradient in one pass; `report.gradient` is
/// always `Some`.
pub fn compute_loss_with_gradient(
    field: &VectorField,
    labels: &LabelMap,
    params: &LossParams,
    ext_mask: Option<&ExtMask>,
) -> Result<LossReport> {
    loss_impl(field, labels, params, ext_mask, true)
}

/// Gradient of the total loss with respect to every pixel vector, including
/// the chain through the object means (each pixel contributes 1/N_c to its
/// object's mean).
pub fn compute_loss_gradient(
    field: &VectorField,
    labels: &LabelMap,
    params: &LossParams,
    ext_mask: Option<&ExtMask>,
) -> Result<VectorField> {
    Ok(loss_impl(field, labels, params, ext_mask, true)?
        .gradient
        .expect("gradient requested"))
}

fn loss_impl(
    field: &VectorField,
    labels: &LabelMap,
    params: &LossParams,
    ext_mask: Option<&ExtMask>,
    want_gradient: bool,
) -> Result<LossReport> {
    params.validate()?;
    field.check_finite()?;
    let stats = object_stats(field, labels)?;
    let (h, w, dim) = (field.height(), field.width(), field.dim());
    let num_objects = stats.labels.len();
    let c_count = num_objects as f64;

    if let Some(mask) = ext_mask {
        if mask.labels() != stats.labels {
            return Err(Error::invalid(
                "ext mask was built for a different set of labels",
            ));
        }
    }

    // --- L_int, with per-object accumulators for the mean-chain gradient.
    //
    // Writing r_i = μ_c − v_i and s_i = ‖r_i‖₁, the term for pixel j of
    // object c differentiates to
    //   ∂L_int/∂v_{j,m} = (1/(C·N_c)) · (G_{c,m}/N_c − 2·s_j·sgn(r_{j,m}))
    // where G_{c,m} = Σ_{i∈c} 2·s_i·sgn(r_{i,m}) collects the mean chain.
    let mut int_per_object = vec![0.0f64; num_objects];
    let mut pixel_s = if want_gradient {
        vec![0.0f64; h * w]
    } else {
        Vec::new()
    };
    let mut g_mean = if want_gradient {
        vec![0.0f64; num_objects * dim]
    } else {
        Vec::new()
    };
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(y, x);
            if l == 0 {
                continue;
            }
            let c = stats.labels.binary_search(&l).expect("known label");
            let mu = &stats.means[c];
            let v = field.vector(y, x);
            let s: f64 = mu.iter().zip(v).map(|(m, p)| (m - p).abs()).sum();
            int_per_object[c] += s * s;
            if want_gradient {
                pixel_s[y * w + x] = s;
                for k in 0..dim {
                    g_mean[c * dim + k] += 2.0 * s * sgn(mu[k] - v[k]);
                }
            }
        }
    }
    let l_int = int_per_object
        .iter()
        .zip(&stats.counts)
        .map(|(sum, &n)| sum / n as f64)
        .sum::<f64>()
        / c_count;

    // --- L_ext over ordered included pairs; hinge h_ab = max(2δ_d − ‖μ_a − μ_b‖₁, 0).
    // With one object the pair sum is empty and the term is defined as 0.
    let mut l_ext = 0.0;
    let mut g_ext = if want_gradient {
        vec![0.0f64; num_objects * dim]
    } else {
        Vec::new()
    };
    if num_objects > 1 {
        let pair_norm = c_count * (c_count - 1.0);
        let mut ext_sum = 0.0;
        for a in 0..num_objects {
            for b in 0..num_objects {
                if a == b {
                    continue;
                }
                if let Some(mask) = ext_mask {
                    if !mask.included(a, b) {
                        continue;
                    }
                }
                let d = l1_dist(&stats.means[a], &stats.means[b]);
                let hinge = 2.0 * params.delta_d - d;
                if hinge <= 0.0 {
                    continue;
                }
                ext_sum += hinge * hinge;
                if want_gradient {
                    for k in 0..dim {
                        let s = sgn(stats.means[a][k] - stats.means[b][k]);
                        g_ext[a * dim + k] -= 2.0 * hinge * s;
                        g_ext[b * dim + k] += 2.0 * hinge * s;
                    }
                }
            }
        }
        l_ext = ext_sum / pair_norm;
        if want_gradient {
            for g in g_ext.iter_mut() {
                *g /= pair_norm;
            }
        }
    }

    // --- L_norm.
    let l_norm = stats.means.iter().map(|mu| l1_norm(mu)).sum::<f64>() / c_count;

    let total = l_int + l_ext + params.gamma * l_norm;

    let gradient = if want_gradient {
        let mut grad = VectorField::zeros(h, w, dim)?;
        for y in 0..h {
            for x in 0..w {
                let l = labels.get(y, x);
                if l == 0 {
                    continue;
                }
                let c = stats.labels.binary_search(&l).expect("known label");
                let n_c = stats.counts[c] as f64;
                let mu = &stats.means[c];
                let s = pixel_s[y * w + x];
                let v = field.vector(y, x);
                let g = grad.vector_mut(y, x);
                for k in 0..dim {
                    let int_part =
                        (g_mean[c * dim + k] / n_c - 2.0 * s * sgn(mu[k] - v[k])) / (c_count * n_c);
                    let ext_part = g_ext[c * dim + k] / n_c;
                    let norm_part = params.gamma * sgn(mu[k]) / (c_count * n_c);
                    g[k] = int_part + ext_part + norm_part;
                }
            }
        }
        grad.check_finite()?;
        Some(grad)
    } else {
        None
    };

    Ok(LossReport {
        l_int,
        l_ext,
        l_norm,
        total,
        num_objects,
        labels: stats.labels,
        pixel_counts: stats.counts,
        means: stats.means,
        gradient,
    })
}

/// Build the L_ext mask for a patch-split label map: a pair of split labels
/// is excluded iff both pieces came from the same original object.
///
/// `split` must be the connected-component relabeling of `original` and
/// `mapping[split_label] = original_label` (as produced by
/// [`crate::labels::relabel_connected`]); the three are cross-checked
/// pixel by pixel.
pub fn build_ext_mask(
    original: &LabelMap,
    split: &LabelMap,
    mapping: &[u32],
) -> Result<ExtMask> {
    if original.height() != split.height() || original.width() != split.width() {
        return Err(Error::shape(format!(
            "original is {}x{} but split is {}x{}",
            original.height(),
            original.width(),
            split.height(),
            split.width()
        )));
    }
    for (i, (&s, &o)) in split.labels().iter().zip(original.labels()).enumerate() {
        if (s == 0) != (o == 0) {
            return Err(Error::invalid(format!(
                "split and original disagree on background at pixel index {i}"
            )));
        }
        if s > 0 && mapping.get(s as usize).copied() != Some(o) {
            return Err(Error::invalid(format!(
                "mapping sends split label {s} to {:?} but pixel index {i} has original label {o}",
                mapping.get(s as usize)
            )));
        }
    }

    let split_labels = split.positive_labels();
    if split_labels.is_empty() {
        return Err(Error::invalid("label map contains no positive labels"));
    }
    let mut mask = ExtMask::all_pairs(&split_labels)?;
    for (i, &a) in split_labels.iter().enumerate() {
        for (j, &b) in split_labels.iter().enumerate().skip(i + 1) {
            if mapping[a as usize] == mapping[b as usize] {
                mask.exclude(i, j);
            }
        }
    }
    Ok(mask)
}
