//! Dense per-pixel embedding vectors.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// A dense H×W grid of D-dimensional embedding vectors.
///
/// Storage is row-major with the D components of each pixel contiguous:
/// `data[(y * width + x) * dim + k]`. All arithmetic in this crate is done
/// in f64; the on-disk representation is f32 (see the `io` module).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl VectorField {
    /// All-zero field. Dimensions must be positive.
    pub fn zeros(height: usize, width: usize, dim: usize) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "field dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        Ok(VectorField {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
        })
    }

    /// Wrap an existing buffer. The buffer length must be exactly H·W·D and
    /// every value must be finite.
    pub fn from_vec(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "field dimensions must be positive, got {height}x{width}x{dim}"
            )));
        }
        if data.len() != height * width * dim {
            return Err(Error::shape(format!(
                "field data length {} does not match {height}x{width}x{dim}",
                data.len()
            )));
        }
        let field = VectorField {
            height,
            width,
            dim,
            data,
        };
        field.check_finite()?;
        Ok(field)
    }

    /// Field with i.i.d. Gaussian components of standard deviation `scale`,
    /// filled in row-major scan order so a seed fixes the exact content.
    pub fn gaussian(
        height: usize,
        width: usize,
        dim: usize,
        scale: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("scale must be positive, got {scale}")));
        }
        let mut field = VectorField::zeros(height, width, dim)?;
        for v in field.data.iter_mut() {
            *v = scale * rng.next_gaussian();
        }
        Ok(field)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn base(&self, y: usize, x: usize) -> usize {
        debug_assert!(y < self.height && x < self.width);
        (y * self.width + x) * self.dim
    }

    /// The D-vector at pixel (y, x).
    #[inline]
    pub fn vector(&self, y: usize, x: usize) -> &[f64] {
        let base = self.base(y, x);
        &self.data[base..base + self.dim]
    }

    #[inline]
    pub fn vector_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let base = self.base(y, x);
        let dim = self.dim;
        &mut self.data[base..base + dim]
    }

    /// L1 distance between the vectors at two pixels.
    pub fn l1_distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let va = self.vector(a.0, a.1);
        let vb = self.vector(b.0, b.1);
        va.iter().zip(vb).map(|(p, q)| (p - q).abs()).sum()
    }

    /// Error if any component is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let pixel = i / self.dim;
                Err(Error::NonFinite(format!(
                    "field value {} at pixel ({}, {}) component {}",
                    self.data[i],
                    pixel / self.width,
                    pixel % self.width,
                    i % self.dim
                )))
            }
        }
    }
}

/// L1 norm of a vector.
pub(crate) fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// L1 distance between two equal-length vectors.
pub(crate) fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum()
}
