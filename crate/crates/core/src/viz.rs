//! PCA projection of vector fields to RGB images.
//!
//! High-dimensional embedding fields are made inspectable by projecting
//! every pixel vector onto the top three principal components of the field
//! and rescaling each projected channel to an 8-bit color channel.

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::loss::KahanSum;

/// A fitted PCA projection: the field mean and up to three principal axes.
#[derive(Debug, Clone)]
pub struct PcaModel {
    /// Mean pixel vector (length D).
    pub mean: Vec<f64>,
    /// Principal axes as orthonormal rows (min(3, D) of them, length D),
    /// ordered by descending eigenvalue. Sign convention: each axis is
    /// flipped so its largest-magnitude coordinate is positive (first such
    /// coordinate on ties), making the decomposition unique.
    pub axes: Vec<Vec<f64>>,
    /// Variances along the axes, non-negative and non-increasing.
    pub eigenvalues: Vec<f64>,
    /// True when the field has fewer than 3 dimensions; rendering pads the
    /// missing channels with a constant.
    pub padded: bool,
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, eigenvectors as rows), unsorted. Rotations are
/// orthogonal, so the eigenvector matrix stays orthonormal to machine
/// precision; convergence is quadratic once off-diagonal mass is small.
fn jacobi_symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    // v holds eigenvectors as columns during the sweeps.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-14 * (1.0 + frob);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // Rotate rows/columns p and q of the symmetric matrix.
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[p * n + k] = a[k * n + p];
                        a[k * n + q] = s * akp + c * akq;
                        a[q * n + k] = a[k * n + q];
                    }
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                // Accumulate the rotation into the eigenvector columns.
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    // Transpose: columns -> rows.
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            rows[i * n + k] = v[k * n + i];
        }
    }
    (eigenvalues, rows)
}

/// Fit a PCA model on all pixel vectors of a field.
///
/// Needs at least 3 pixels. Fields with fewer than 3 dimensions are not an
/// error: the model keeps all D axes and is marked `padded` so rendering
/// fills the remaining channels.
pub fn fit_pca(field: &VectorField) -> Result<PcaModel> {
    let n = field.height() * field.width();
    let d = field.dim();
    if n < 3 {
        return Err(Error::invalid(format!(
            "PCA needs at least 3 pixels, got {n}"
        )));
    }

    let mut mean_acc = vec![KahanSum::default(); d];
    for chunk in field.data().chunks_exact(d) {
        for (acc, &x) in mean_acc.iter_mut().zip(chunk) {
            acc.add(x);
        }
    }
    let mean: Vec<f64> = mean_acc.iter().map(|acc| acc.value() / n as f64).collect();

    // Sample covariance of the centered vectors.
    let mut cov = vec![0.0; d * d];
    for chunk in field.data().chunks_exact(d) {
        for i in 0..d {
            let ci = chunk[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (chunk[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_symmetric_eigen(&cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    // Descending eigenvalue; index ties keep the lower index first so the
    // decomposition of degenerate spectra stays deterministic.
    order.sort_by(|&i, &j| eigenvalues[j].partial_cmp(&eigenvalues[i]).unwrap());

    let keep = d.min(3);
    let mut axes = Vec::with_capacity(keep);
    let mut kept_values = Vec::with_capacity(keep);
    for &idx in order.iter().take(keep) {
        let mut axis = eigenvectors[idx * d..(idx + 1) * d].to_vec();
        // Sign rule: largest-|coordinate| entry positive, first index wins
        // ties.
        let mut arg = 0;
        for (k, &x) in axis.iter().enumerate() {
            if x.abs() > axis[arg].abs() {
                arg = k;
            }
        }
        if axis[arg] < 0.0 {
            for x in axis.iter_mut() {
                *x = -*x;
            }
        }
        axes.push(axis);
        // Covariance matrices are positive semidefinite; snub the tiny
        // negative roundoff Jacobi can leave behind.
        kept_values.push(eigenvalues[idx].max(0.0));
    }

    Ok(PcaModel {
        mean,
        axes,
        eigenvalues: kept_values,
        padded: d < 3,
    })
}

/// Project a field through a PCA model and render it as an 8-bit RGB image.
///
/// Channel k of a pixel is the dot product of its centered vector with axis
/// k; missing axes (padded models) contribute a constant channel. Each
/// channel is affinely rescaled to [0, 255] by its own min/max over the
/// image; a constant channel renders as 128.
pub fn render_rgb(field: &VectorField, model: &PcaModel) -> Result<image::RgbImage> {
    if model.mean.len() != field.dim() {
        return Err(Error::shape(format!(
            "model was fitted on dimension {} but field has {}",
            model.mean.len(),
            field.dim()
        )));
    }
    let (h, w, d) = (field.height(), field.width(), field.dim());
    let n = h * w;

    let mut projected = vec![0.0f64; n * 3];
    for (p, chunk) in field.data().chunks_exact(d).enumerate() {
        for (k, axis) in model.axes.iter().take(3).enumerate() {
            let mut dot = 0.0;
            for i in 0..d {
                dot += axis[i] * (chunk[i] - model.mean[i]);
            }
            projected[p * 3 + k] = dot;
        }
    }

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in 0..n {
        for k in 0..3 {
            lo[k] = lo[k].min(projected[p * 3 + k]);
            hi[k] = hi[k].max(projected[p * 3 + k]);
        }
    }

    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut rgb = [0u8; 3];
            for k in 0..3 {
                rgb[k] = if hi[k] > lo[k] {
                    let t = (projected[p * 3 + k] - lo[k]) / (hi[k] - lo[k]);
                    (t * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    128
                };
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
    Ok(img)
}
