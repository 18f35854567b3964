//! Faithfulness (deletion / insertion AUC) and localization (pointing game)
//! metrics for saliency maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ModelOracle;
use crate::types::{ImageTensor, SaliencyMap};

pub const DEFAULT_STEPS: usize = 100;

/// Canvases scored per oracle call while tracing a curve.
const CURVE_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    /// Fraction of pixels deleted (or inserted), ascending from 0 to 1.
    pub fractions: Vec<f64>,
    pub scores: Vec<f64>,
}

impl PerturbationCurve {
    pub fn new(fractions: Vec<f64>, scores: Vec<f64>) -> Result<Self> {
        if fractions.len() != scores.len() || fractions.len() < 2 {
            return Err(Error::InvalidArgument(
                "a curve needs at least two points and one score per fraction".into(),
            ));
        }
        if fractions[0] != 0.0 || *fractions.last().unwrap() != 1.0 {
            return Err(Error::InvalidArgument("curve fractions must run from 0 to 1".into()));
        }
        if fractions.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("curve fractions must be ascending".into()));
        }
        Ok(Self { fractions, scores })
    }
}

/// Trapezoidal area under the curve over the fraction axis.
pub fn auc(curve: &PerturbationCurve) -> f64 {
    curve
        .fractions
        .windows(2)
        .zip(curve.scores.windows(2))
        .map(|(f, s)| (f[1] - f[0]) * (s[0] + s[1]) / 2.0)
        .sum()
}

/// Pixel indices by descending saliency; ties in ascending row-major order.
pub fn saliency_order(map: &SaliencyMap) -> Vec<usize> {
    let v = map.values();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Copy)]
enum Direction {
    Delete,
    Insert,
}

fn trace<O: ModelOracle + ?Sized>(
    image: &ImageTensor,
    saliency: &SaliencyMap,
    target: usize,
    oracle: &O,
    steps: usize,
    direction: Direction,
) -> Result<PerturbationCurve> {
    if (image.height(), image.width()) != saliency.dims() {
        return Err(Error::mismatch(
            format!("{}x{} saliency", image.height(), image.width()),
            format!("{}x{}", saliency.height(), saliency.width()),
        ));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    let total = image.pixel_count();
    let per_step = total.div_ceil(steps);
    let order = saliency_order(saliency);

    let mut canvas = match direction {
        Direction::Delete => image.clone(),
        Direction::Insert => ImageTensor::zeros(image.height(), image.width(), image.channels())?,
    };
    let mut fractions = vec![0.0];
    let mut pending = vec![canvas.clone()];
    let mut scores = Vec::new();
    let mut done = 0;
    while done < total {
        let next = (done + per_step).min(total);
        for &p in &order[done..next] {
            match direction {
                Direction::Delete => canvas.pixel_mut(p).fill(0.0),
                Direction::Insert => canvas.pixel_mut(p).copy_from_slice(image.pixel(p)),
            }
        }
        done = next;
        fractions.push(if done == total { 1.0 } else { done as f64 / total as f64 });
        pending.push(canvas.clone());
        if pending.len() >= CURVE_BATCH {
            scores.extend(oracle.score_batch(&pending, target)?.into_iter().map(f64::from));
            pending.clear();
        }
    }
    if !pending.is_empty() {
        scores.extend(oracle.score_batch(&pending, target)?.into_iter().map(f64::from));
    }
    PerturbationCurve::new(fractions, scores)
}

/// Target score as the most salient pixels are blacked out, `⌈HW/steps⌉`
/// pixels at a time, starting from the untouched image.
pub fn deletion_curve<O: ModelOracle + ?Sized>(
    image: &ImageTensor,
    saliency: &SaliencyMap,
    target: usize,
    oracle: &O,
    steps: usize,
) -> Result<PerturbationCurve> {
    trace(image, saliency, target, oracle, steps, Direction::Delete)
}

/// Target score as pixels are copied onto a black canvas in saliency order.
pub fn insertion_curve<O: ModelOracle + ?Sized>(
    image: &ImageTensor,
    saliency: &SaliencyMap,
    target: usize,
    oracle: &O,
    steps: usize,
) -> Result<PerturbationCurve> {
    trace(image, saliency, target, oracle, steps, Direction::Insert)
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, width: usize, height: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 || x1 > width || y1 > height {
            return Err(Error::InvalidArgument(format!(
                "box [{x0},{x1})x[{y0},{y1}) is empty or outside a {width}x{height} image"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Whether the saliency peak (lowest row-major index on ties) lies in any
/// of the boxes.
pub fn pointing_game(saliency: &SaliencyMap, boxes: &[BoundingBox]) -> Result<bool> {
    if boxes.is_empty() {
        return Err(Error::InvalidArgument("pointing game needs at least one box".into()));
    }
    let peak = saliency_order(saliency)[0];
    let (y, x) = (peak / saliency.width(), peak % saliency.width());
    Ok(boxes.iter().any(|b| b.contains(x, y)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointingTally {
    pub hits: usize,
    pub misses: usize,
}

impl PointingTally {
    pub fn record(&mut self, hit: bool) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
    }

    /// `hits / (hits + misses)`, or `None` before any trial.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.hits + self.misses;
        (n > 0).then(|| self.hits as f64 / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SaliencyKind;

    fn curve(points: &[(f64, f64)]) -> PerturbationCurve {
        PerturbationCurve::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
        .unwrap()
    }

    fn map(h: usize, w: usize, values: Vec<f32>) -> SaliencyMap {
        SaliencyMap::new(h, w, values, SaliencyKind::Normalized).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert!((auc(&curve(&[(0.0, 0.5), (1.0, 0.5)])) - 0.5).abs() < 1e-12);
        assert!((auc(&curve(&[(0.0, 1.0), (1.0, 0.0)])) - 0.5).abs() < 1e-12);
        assert!((auc(&curve(&[(0.0, 1.0), (0.5, 1.0), (1.0, 0.0)])) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn curve_validation() {
        assert!(PerturbationCurve::new(vec![0.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(PerturbationCurve::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(PerturbationCurve::new(vec![0.0, 0.7, 0.5, 1.0], vec![1.0; 4]).is_err());
    }

    #[test]
    fn order_ties_go_row_major() {
        let m = map(2, 2, vec![0.5, 1.0, 0.5, 1.0]);
        assert_eq!(saliency_order(&m), vec![1, 3, 0, 2]);
    }

    #[test]
    fn pointing_examples() {
        let full = BoundingBox::new(0, 0, 3, 2, 3, 2).unwrap();
        let peak_at_origin = map(2, 3, vec![1.0, 0.2, 0.1, 0.0, 0.3, 0.4]);
        assert!(pointing_game(&peak_at_origin, &[full]).unwrap());

        let elsewhere = BoundingBox::new(1, 0, 3, 2, 3, 2).unwrap();
        assert!(!pointing_game(&peak_at_origin, &[elsewhere]).unwrap());

        let uniform = map(2, 3, vec![0.0; 6]);
        let origin = BoundingBox::new(0, 0, 1, 1, 3, 2).unwrap();
        assert!(pointing_game(&uniform, &[origin]).unwrap());
        assert!(pointing_game(&uniform, &[elsewhere, origin]).unwrap());

        assert!(pointing_game(&uniform, &[]).is_err());
    }

    #[test]
    fn box_validation() {
        assert!(BoundingBox::new(2, 0, 2, 1, 4, 4).is_err());
        assert!(BoundingBox::new(0, 0, 5, 1, 4, 4).is_err());
        let b = BoundingBox::new(1, 1, 3, 2, 4, 4).unwrap();
        assert!(b.contains(1, 1) && b.contains(2, 1));
        assert!(!b.contains(3, 1) && !b.contains(1, 2));
    }

    #[test]
    fn tally_accuracy() {
        let mut t = PointingTally::default();
        assert_eq!(t.accuracy(), None);
        for hit in [true, true, false] {
            t.record(hit);
        }
        assert!((t.accuracy().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }
}
