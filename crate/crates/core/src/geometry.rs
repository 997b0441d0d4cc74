//! Axis-aligned boxes in `(x, y, w, h)` pixel form.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned box: left edge, top edge, width, height.
///
/// Width and height are strictly positive and every field is finite; the
/// constructor is the only way in, so downstream code never re-checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    x: T,
    y: T,
    w: T,
    h: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinate in [{x}, {y}, {w}, {h}]"
            )));
        }
        if w <= T::zero() || h <= T::zero() {
            return Err(Error::InvalidBox(format!(
                "non-positive extent in [{x}, {y}, {w}, {h}]"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_array(v: [T; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    pub fn w(&self) -> T {
        self.w
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw > T::zero() && ih > T::zero() {
            iw * ih
        } else {
            T::zero()
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        iou(self, other)
    }
}

/// Intersection over union. Boxes that only touch along an edge score 0.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// Coordinate-wise weighted mean of `boxes`, weights normalized to sum 1.
pub fn convex_combination<T: Scalar>(boxes: &[BBox<T>], weights: &[T]) -> Result<BBox<T>> {
    if boxes.is_empty() {
        return Err(Error::DegenerateWeights("no boxes to combine".into()));
    }
    if boxes.len() != weights.len() {
        return Err(Error::DegenerateWeights(format!(
            "{} boxes but {} weights",
            boxes.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(Error::DegenerateWeights(
            "weights must be finite and nonnegative".into(),
        ));
    }
    // Scale by the largest weight first so equal weights become exactly 1.
    let max = weights.iter().copied().fold(T::zero(), T::max);
    if max.is_nan() || max <= T::zero() {
        return Err(Error::DegenerateWeights("weights sum to zero".into()));
    }
    let scaled: Vec<T> = weights.iter().map(|&w| w / max).collect();
    let total: T = scaled.iter().copied().sum();

    let mut acc = [T::zero(); 4];
    for (b, &w) in boxes.iter().zip(&scaled) {
        let wn = w / total;
        for (a, c) in acc.iter_mut().zip(b.to_array()) {
            *a = *a + wn * c;
        }
    }

    // Rounding can push a coordinate a hair outside the input envelope.
    for (i, a) in acc.iter_mut().enumerate() {
        let (lo, hi) = boxes
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), b| {
                let c = b.to_array()[i];
                (lo.min(c), hi.max(c))
            });
        *a = a.max(lo).min(hi);
    }
    BBox::from_array(acc)
}
