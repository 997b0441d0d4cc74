//! Detection data model: score vectors, detections, ground truth and class priors.
//!
//! Class index 0 is always background; foreground classes are `1..=K`. A
//! [`ClassScores`] always carries both views, logits and posteriors, and the
//! posteriors are the softmax of the logits.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::{cmp, Scalar};

/// Clamp applied to posteriors before taking logs.
pub const POSTERIOR_EPS: f64 = 1e-7;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::InvalidScore("empty logit vector".into()));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidScore("NaN logit".into()));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::InvalidScore("non-finite logit".into()));
    }
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `ln(sum(exp(v)))`, stable.
pub(crate) fn log_sum_exp<T: Scalar>(v: impl Iterator<Item = T> + Clone) -> T {
    let max = v.clone().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + v.map(|x| (x - max).exp()).sum::<T>().ln()
}

/// Log of posteriors, clamping each entry into `[eps, 1 - eps]` first.
///
/// Returns the logits and whether any entry needed clamping.
pub fn logits_from_posteriors<T: Scalar>(p: &[T]) -> Result<(Vec<T>, bool)> {
    if p.is_empty() {
        return Err(Error::InvalidScore("empty posterior vector".into()));
    }
    let eps = T::lit(POSTERIOR_EPS);
    let hi = T::one() - eps;
    let mut clamped = false;
    let mut out = Vec::with_capacity(p.len());
    for &v in p {
        if !v.is_finite() || v < T::zero() || v > T::one() {
            return Err(Error::InvalidScore(format!("posterior {v} outside [0, 1]")));
        }
        let c = v.max(eps).min(hi);
        if c != v {
            clamped = true;
        }
        out.push(c.ln());
    }
    Ok((out, clamped))
}

/// Natural log that maps 0 to the log of the smallest positive value.
pub(crate) fn safe_ln<T: Scalar>(v: T) -> T {
    v.max(T::min_positive_value()).ln()
}

/// The (K+1)-way score vector of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores<T> {
    logits: Vec<T>,
    posteriors: Vec<T>,
}

impl<T: Scalar> ClassScores<T> {
    pub fn from_logits(logits: Vec<T>) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::InvalidScore(
                "score vectors need background plus at least one class".into(),
            ));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScore("non-finite logit".into()));
        }
        let posteriors = softmax(&logits)?;
        Ok(Self { logits, posteriors })
    }

    /// Builds scores from a posterior vector; entries at exactly 0 or 1 are
    /// clamped (with a warning) so a finite logit preimage exists.
    pub fn from_posteriors(posteriors: &[T]) -> Result<Self> {
        let sum: T = posteriors.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-3) {
            return Err(Error::InvalidScore(format!(
                "posteriors sum to {sum}, expected 1"
            )));
        }
        let (logits, clamped) = logits_from_posteriors(posteriors)?;
        if clamped {
            log::warn!("posterior vector clamped to [{POSTERIOR_EPS}, 1 - {POSTERIOR_EPS}]");
        }
        Self::from_logits(logits)
    }

    /// Single-confidence ingest: `score` on `class_id`, `1 - score` on
    /// background, zero elsewhere (clamped).
    pub fn from_score(score: T, class_id: usize, num_classes: usize) -> Result<Self> {
        if class_id == 0 || class_id > num_classes {
            return Err(Error::InvalidScore(format!(
                "class_id {class_id} outside 1..={num_classes}"
            )));
        }
        if !(score >= T::zero() && score <= T::one()) {
            return Err(Error::InvalidScore(format!("score {score} outside [0, 1]")));
        }
        let mut p = vec![T::zero(); num_classes + 1];
        p[0] = T::one() - score;
        p[class_id] = score;
        Self::from_posteriors(&p)
    }

    /// Fusion outputs that computed both views along separate routes.
    pub(crate) fn from_parts(logits: Vec<T>, posteriors: Vec<T>) -> Self {
        debug_assert_eq!(logits.len(), posteriors.len());
        Self { logits, posteriors }
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn posteriors(&self) -> &[T] {
        &self.posteriors
    }

    /// K, the number of foreground classes.
    pub fn num_classes(&self) -> usize {
        self.posteriors.len() - 1
    }

    /// Highest-posterior foreground class; ties go to the lower class id.
    pub fn argmax_class(&self) -> usize {
        let mut best = 1;
        for k in 2..self.posteriors.len() {
            if self.posteriors[k] > self.posteriors[best] {
                best = k;
            }
        }
        best
    }

    /// Posterior of the argmax foreground class: the detection's confidence.
    pub fn score(&self) -> T {
        self.posteriors[self.argmax_class()]
    }

    /// Binary relative logit `s[k] - s[0]` for class `k`.
    pub fn relative_logit(&self, k: usize) -> T {
        self.logits[k] - self.logits[0]
    }
}

/// One candidate detection from one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub image_id: String,
    pub modality: String,
    pub bbox: BBox<T>,
    pub scores: ClassScores<T>,
    pub box_variance: Option<T>,
    /// Ingest ordinal, last key of every sort.
    pub det_id: u64,
}

impl<T: Scalar> Detection<T> {
    pub fn new(
        image_id: impl Into<String>,
        modality: impl Into<String>,
        bbox: BBox<T>,
        scores: ClassScores<T>,
        det_id: u64,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            modality: modality.into(),
            bbox,
            scores,
            box_variance: None,
            det_id,
        }
    }

    pub fn with_variance(mut self, variance: T) -> Result<Self> {
        if !variance.is_finite() || variance <= T::zero() {
            return Err(Error::InvalidScore(format!(
                "box variance {variance} must be finite and positive"
            )));
        }
        self.box_variance = Some(variance);
        Ok(self)
    }

    pub fn label(&self) -> usize {
        self.scores.argmax_class()
    }

    pub fn score(&self) -> T {
        self.scores.score()
    }
}

/// Ranking order used everywhere: score descending, then class id, then det_id.
pub fn rank_order<T: Scalar>(a: &Detection<T>, b: &Detection<T>) -> Ordering {
    cmp(b.score(), a.score())
        .then_with(|| a.label().cmp(&b.label()))
        .then_with(|| a.det_id.cmp(&b.det_id))
}

pub fn sort_by_rank<T: Scalar>(dets: &mut [Detection<T>]) {
    dets.sort_by(rank_order);
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<T> {
    pub image_id: String,
    pub bbox: BBox<T>,
    pub class_id: usize,
    pub ignore: bool,
}

/// Every annotation of a dataset plus the image list and per-image tags.
///
/// Images can be declared without objects so they still count towards
/// per-image false-positive rates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet<T> {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub objects: Vec<GroundTruth<T>>,
    /// image id -> optional tag such as `day` or `night`.
    pub images: BTreeMap<String, Option<String>>,
}

impl<T: Scalar> GroundTruthSet<T> {
    pub fn new(num_classes: usize, class_names: Vec<String>) -> Self {
        Self {
            num_classes,
            class_names,
            objects: Vec::new(),
            images: BTreeMap::new(),
        }
    }

    pub fn class_name(&self, class_id: usize) -> String {
        self.class_names
            .get(class_id.wrapping_sub(1))
            .cloned()
            .unwrap_or_else(|| format!("class_{class_id}"))
    }

    /// Registers an object and its image.
    pub fn push(&mut self, gt: GroundTruth<T>) {
        self.images.entry(gt.image_id.clone()).or_insert(None);
        self.objects.push(gt);
    }

    pub fn tag_image(&mut self, image_id: impl Into<String>, tag: Option<String>) {
        let slot = self.images.entry(image_id.into()).or_insert(None);
        if tag.is_some() {
            *slot = tag;
        }
    }
}

/// Class prior p(y) over background plus K classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior<T> {
    priors: Vec<T>,
}

impl<T: Scalar> ClassPrior<T> {
    pub fn new(priors: Vec<T>) -> Result<Self> {
        if priors.len() < 2 {
            return Err(Error::config("class prior needs background plus one class"));
        }
        if priors.iter().any(|p| !(*p > T::zero() && *p <= T::one())) {
            return Err(Error::config("class prior entries must lie in (0, 1]"));
        }
        let sum: T = priors.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) {
            return Err(Error::config(format!("class prior sums to {sum}")));
        }
        Ok(Self { priors })
    }

    pub fn uniform(num_classes: usize) -> Self {
        let n = num_classes + 1;
        Self {
            priors: vec![T::one() / <T as Scalar>::from_usize(n); n],
        }
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.priors.windows(2).all(|w| w[0] == w[1])
    }
}

/// Mass given to a class with no annotated examples before renormalizing.
pub const PRIOR_FLOOR: f64 = 1e-6;

/// Prior from per-class counts of non-ignored ground truth; background gets
/// `background_prior` and the foreground shares the rest proportionally.
pub fn estimate_class_prior<T: Scalar>(
    gts: &[GroundTruth<T>],
    num_classes: usize,
    background_prior: T,
) -> Result<ClassPrior<T>> {
    if !(background_prior > T::zero() && background_prior < T::one()) {
        return Err(Error::config("background prior must lie in (0, 1)"));
    }
    let mut counts = vec![0usize; num_classes + 1];
    for g in gts.iter().filter(|g| !g.ignore) {
        if g.class_id == 0 || g.class_id > num_classes {
            return Err(Error::config(format!(
                "class_id {} outside 1..={num_classes}",
                g.class_id
            )));
        }
        counts[g.class_id] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::config(
            "class prior needs at least one non-ignored ground truth",
        ));
    }
    let floor = T::lit(PRIOR_FLOOR);
    let shares: Vec<T> = counts[1..]
        .iter()
        .map(|&c| (<T as Scalar>::from_usize(c) / <T as Scalar>::from_usize(total)).max(floor))
        .collect();
    let share_sum: T = shares.iter().copied().sum();
    let fg_mass = T::one() - background_prior;
    let mut priors = Vec::with_capacity(num_classes + 1);
    priors.push(background_prior);
    priors.extend(shares.into_iter().map(|s| fg_mass * s / share_sum));
    ClassPrior::new(priors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(class_id: usize) -> GroundTruth<f64> {
        GroundTruth {
            image_id: "0".into(),
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            class_id,
            ignore: false,
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        let big = softmax(&[1000.0, 0.0, -1000.0]).unwrap();
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_round_trip() {
        let (l, clamped) = logits_from_posteriors(&[0.5, 0.5]).unwrap();
        assert!(!clamped);
        assert_eq!(l, vec![0.5f64.ln(), 0.5f64.ln()]);
        assert_eq!(softmax(&l).unwrap(), vec![0.5, 0.5]);

        let (l, clamped) = logits_from_posteriors(&[1.0, 0.0]).unwrap();
        assert!(clamped);
        let p = softmax(&l).unwrap();
        assert!((p[0] - (1.0 - POSTERIOR_EPS)).abs() < 2e-7);
        assert!((p[1] - POSTERIOR_EPS).abs() < 2e-7);
    }

    #[test]
    fn binary_score_ingest() {
        let s = ClassScores::from_score(0.8f64, 1, 1).unwrap();
        assert!((s.posteriors()[1] - 0.8).abs() < 1e-12);
        assert!((s.posteriors()[0] - 0.2).abs() < 1e-12);
        assert_eq!(s.argmax_class(), 1);
        assert!(ClassScores::from_score(0.8, 0, 1).is_err());
        assert!(ClassScores::from_score(1.2, 1, 1).is_err());
    }

    #[test]
    fn argmax_prefers_lower_class_on_tie() {
        let s = ClassScores::from_logits(vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.argmax_class(), 1);
        let s = ClassScores::from_logits(vec![5.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.argmax_class(), 2);
    }

    #[test]
    fn class_prior_examples() {
        let gts: Vec<_> = (1..=3)
            .flat_map(|k| std::iter::repeat_n(gt(k), 10))
            .collect();
        let p = estimate_class_prior(&gts, 3, 0.25).unwrap();
        for v in p.priors() {
            assert!((v - 0.25).abs() < 1e-12);
        }

        let mut gts = Vec::new();
        for (k, n) in [(1, 28151), (2, 46692), (3, 4457)] {
            gts.extend(std::iter::repeat_n(gt(k), n));
        }
        let p = estimate_class_prior(&gts, 3, 0.5).unwrap();
        let total = (28151 + 46692 + 4457) as f64;
        let expect = [
            0.5,
            0.5 * 28151.0 / total,
            0.5 * 46692.0 / total,
            0.5 * 4457.0 / total,
        ];
        for (a, e) in p.priors().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }

        let p = estimate_class_prior(&[gt(1)], 1, 0.3).unwrap();
        assert!((p.priors()[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn class_prior_floor_and_errors() {
        let p = estimate_class_prior(&[gt(1)], 2, 0.5).unwrap();
        assert!(p.priors()[2] > 0.0);
        assert!((p.priors().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut ignored = gt(1);
        ignored.ignore = true;
        assert!(estimate_class_prior(&[ignored], 1, 0.5).is_err());
        assert!(estimate_class_prior(&[gt(1)], 1, 1.0).is_err());
        assert!(ClassPrior::new(vec![0.0, 1.0]).is_err());
        assert!(ClassPrior::new(vec![0.5, 0.6]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-20.0..20.0f64, 2..6), c in -50.0..50.0f64) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let sa = ClassScores::from_logits(v.clone()).unwrap();
            let sb = ClassScores::from_logits(shifted).unwrap();
            prop_assert_eq!(sa.argmax_class(), sb.argmax_class());
        }

        #[test]
        fn posteriors_round_trip(raw in proptest::collection::vec(0.01..1.0f64, 2..7)) {
            let z: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
            let (l, clamped) = logits_from_posteriors(&p).unwrap();
            prop_assert!(!clamped);
            let back = softmax(&l).unwrap();
            for (x, y) in p.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let s = ClassScores::from_posteriors(&p).unwrap();
            prop_assert!((s.posteriors().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
