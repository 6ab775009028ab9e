//! Synthetic ground truth: Voronoi label maps and embedding drift.

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::labels::LabelMap;
use crate::rng::SplitMix64;

/// Label every pixel by its nearest site under squared Euclidean distance.
///
/// Sites must be distinct and in bounds; site k owns label k+1. Distances
/// are exact integer arithmetic, and ties go to the smallest label, so the
/// result is fully deterministic.
pub fn voronoi_labels_from_sites(
    height: usize,
    width: usize,
    sites: &[(usize, usize)],
) -> Result<LabelMap> {
    if sites.is_empty() {
        return Err(Error::invalid("need at least one Voronoi site"));
    }
    for (i, &(sy, sx)) in sites.iter().enumerate() {
        if sy >= height || sx >= width {
            return Err(Error::invalid(format!(
                "site {i} at ({sy}, {sx}) is outside the {height}x{width} grid"
            )));
        }
        if sites[..i].contains(&(sy, sx)) {
            return Err(Error::invalid(format!(
                "duplicate site at ({sy}, {sx})"
            )));
        }
    }

    let mut map = LabelMap::zeros(height, width)?;
    for y in 0..height {
        for x in 0..width {
            let mut best = u64::MAX;
            let mut label = 0u32;
            for (i, &(sy, sx)) in sites.iter().enumerate() {
                let dy = y.abs_diff(sy) as u64;
                let dx = x.abs_diff(sx) as u64;
                let d = dy * dy + dx * dx;
                if d < best {
                    best = d;
                    label = (i + 1) as u32;
                }
            }
            map.set(y, x, label);
        }
    }
    Ok(map)
}

/// Generate a Voronoi label map with `num_objects` randomly placed sites.
///
/// Sites are drawn uniformly over the grid and rejection-sampled to be
/// distinct, then pixels are assigned by [`voronoi_labels_from_sites`].
/// Every cell is nonempty (it contains its own site), so labels 1 through
/// `num_objects` all appear. There is no background.
pub fn voronoi_labels(
    height: usize,
    width: usize,
    num_objects: usize,
    seed: u64,
) -> Result<LabelMap> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("grid must be nonempty"));
    }
    if num_objects == 0 || num_objects > height * width {
        return Err(Error::invalid(format!(
            "cannot place {num_objects} distinct sites on a {height}x{width} grid"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(num_objects);
    while sites.len() < num_objects {
        let y = rng.next_below(height as u64) as usize;
        let x = rng.next_below(width as u64) as usize;
        if !sites.contains(&(y, x)) {
            sites.push((y, x));
        }
    }
    voronoi_labels_from_sites(height, width, &sites)
}

/// Add a horizontal sinusoidal drift to one object's embedding vectors.
///
/// Every pixel of `target_label` gets `amplitude * sin(2π x / wavelength)`
/// added to all of its components, where x is the pixel column. A smooth
/// within-object drift like this leaves neighboring pixels close (local
/// structure intact) while pushing distant pixels of the same object apart.
pub fn inject_drift(
    field: &mut VectorField,
    labels: &LabelMap,
    target_label: u32,
    amplitude: f64,
    wavelength: f64,
) -> Result<()> {
    if field.height() != labels.height() || field.width() != labels.width() {
        return Err(Error::shape(format!(
            "field is {}x{} but labels are {}x{}",
            field.height(),
            field.width(),
            labels.height(),
            labels.width()
        )));
    }
    if !(wavelength > 0.0) || !wavelength.is_finite() {
        return Err(Error::invalid(format!(
            "wavelength must be positive and finite, got {wavelength}"
        )));
    }
    if !amplitude.is_finite() {
        return Err(Error::invalid(format!(
            "amplitude must be finite, got {amplitude}"
        )));
    }
    if !labels.positive_labels().contains(&target_label) || target_label == 0 {
        return Err(Error::invalid(format!(
            "label {target_label} does not appear in the label map"
        )));
    }

    let (h, w) = (field.height(), field.width());
    for y in 0..h {
        for x in 0..w {
            if labels.get(y, x) != target_label {
                continue;
            }
            let shift = amplitude * (2.0 * std::f64::consts::PI * x as f64 / wavelength).sin();
            for v in field.vector_mut(y, x) {
                *v += shift;
            }
        }
    }
    Ok(())
}
