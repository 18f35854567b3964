//! Deterministic 2-D map primitives: bilinear resampling and min-max
//! normalization.

use crate::error::{Error, Result};

/// Bilinearly resample a `grid_h × grid_w` row-major map to `out_h × out_w`.
///
/// Uses align-corners sampling: the four corner cells of the grid land
/// exactly on the four corner pixels of the output. Every output value is a
/// convex combination of grid values, so the output range is contained in
/// the grid range.
pub fn bilinear_upsample(grid: &[f32], grid_h: usize, grid_w: usize, out_h: usize, out_w: usize) -> Result<Vec<f32>> {
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::InvalidDimension("source grid must be non-empty".into()));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidDimension(format!(
            "target size must be positive, got {out_h}x{out_w}"
        )));
    }
    if grid.len() != grid_h * grid_w {
        return Err(Error::mismatch(
            format!("{grid_h}x{grid_w} grid"),
            format!("{} values", grid.len()),
        ));
    }

    let rows: Vec<(usize, usize, f64)> = (0..out_h).map(|y| axis_weights(y, grid_h, out_h)).collect();
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|x| axis_weights(x, grid_w, out_w)).collect();

    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let at = |y: usize, x: usize| f64::from(grid[y * grid_w + x]);
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Ok(out)
}

/// Source neighbours and interpolation weight for output coordinate `i`.
fn axis_weights(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Rescale `values` affinely so the minimum maps to 0 and the maximum to 1.
///
/// A constant input carries no saliency information and maps to all zeros.
pub fn minmax_normalize(values: &[f32]) -> Vec<f32> {
    minmax_normalize_f64(&values.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
}

/// Spans at or below this fraction of the largest magnitude are rounding
/// noise (e.g. `s·ρ/ρ` over pixels) and are normalized as a constant map.
/// Any two distinct f32 values are further apart than this.
const RELATIVE_FLAT_SPAN: f64 = 1e-10;

pub(crate) fn minmax_normalize_f64(values: &[f64]) -> Vec<f32> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    if values.is_empty() || span.is_nan() || span <= RELATIVE_FLAT_SPAN * lo.abs().max(hi.abs()) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / span) as f32).collect()
}
