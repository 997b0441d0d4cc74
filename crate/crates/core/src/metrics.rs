//! Detection evaluation: IoU matching with ignore regions, all-point AP,
//! log-average miss rate over nine FPPI points, and per-tag breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::detections::{rank_order, Detection, GroundTruth, GroundTruthSet};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::scalar::Scalar;

/// Miss rates below this are floored before taking logs.
pub const MISS_RATE_FLOOR: f64 = 1e-10;

/// The nine FPPI reference points `10^(-2 + k/4)`, `k = 0..=8`.
pub fn reference_fppi() -> [f64; 9] {
    std::array::from_fn(|k| 10f64.powf(-2.0 + k as f64 / 4.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchLabel {
    #[serde(rename = "tp")]
    TruePositive,
    #[serde(rename = "fp")]
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMatch {
    pub image_id: String,
    pub det_id: u64,
    pub class_id: usize,
    pub score: f64,
    pub label: MatchLabel,
}

/// Matching outcome for one image or a pool of images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    /// In rank order within each image.
    pub detections: Vec<ScoredMatch>,
    /// One flag per ground truth, in input order; ignored objects stay false.
    pub gt_matched: Vec<bool>,
    /// Non-ignored ground-truth count per class id (index 0 unused).
    pub num_gt: Vec<usize>,
}

impl MatchResult {
    pub fn merge(parts: impl IntoIterator<Item = MatchResult>) -> Self {
        let mut out = MatchResult::default();
        for p in parts {
            out.detections.extend(p.detections);
            out.gt_matched.extend(p.gt_matched);
            if out.num_gt.len() < p.num_gt.len() {
                out.num_gt.resize(p.num_gt.len(), 0);
            }
            for (acc, n) in out.num_gt.iter_mut().zip(&p.num_gt) {
                *acc += n;
            }
        }
        out
    }

    pub fn total_gt(&self) -> usize {
        self.num_gt.iter().sum()
    }

    pub fn count(&self, label: MatchLabel) -> usize {
        self.detections.iter().filter(|d| d.label == label).count()
    }
}

/// Greedy matching for one image.
///
/// Detections are visited in rank order; each claims the highest-IoU
/// unmatched non-ignored object of its class above the threshold. Failing
/// that, a detection overlapping any ignored object above the threshold is
/// ignored, and anything else is a false positive.
pub fn match_image<T: Scalar>(
    detections: &[Detection<T>],
    gts: &[GroundTruth<T>],
    iou_threshold: T,
    num_classes: usize,
) -> MatchResult {
    let mut order: Vec<&Detection<T>> = detections.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));

    let mut num_gt = vec![0usize; num_classes + 1];
    for g in gts.iter().filter(|g| !g.ignore) {
        if g.class_id < num_gt.len() {
            num_gt[g.class_id] += 1;
        }
    }

    let mut matched = vec![false; gts.len()];
    let mut out = Vec::with_capacity(order.len());
    for d in order {
        let class_id = d.label();
        let mut best: Option<(usize, T)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if g.ignore || matched[gi] || g.class_id != class_id {
                continue;
            }
            let o = iou(&d.bbox, &g.bbox);
            if o > iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        let label = if let Some((gi, _)) = best {
            matched[gi] = true;
            MatchLabel::TruePositive
        } else if gts
            .iter()
            .any(|g| g.ignore && iou(&d.bbox, &g.bbox) > iou_threshold)
        {
            MatchLabel::Ignored
        } else {
            MatchLabel::FalsePositive
        };
        out.push(ScoredMatch {
            image_id: d.image_id.clone(),
            det_id: d.det_id,
            class_id,
            score: d.score().as_f64(),
            label,
        });
    }
    MatchResult {
        detections: out,
        gt_matched: matched,
        num_gt,
    }
}

/// Matches every image in `images`, in parallel, merged in image order.
pub fn match_images<T: Scalar>(
    detections: &[Detection<T>],
    gt: &GroundTruthSet<T>,
    images: &BTreeSet<String>,
    iou_threshold: T,
) -> MatchResult {
    let mut dets: BTreeMap<&str, Vec<Detection<T>>> = BTreeMap::new();
    for d in detections.iter().filter(|d| images.contains(&d.image_id)) {
        dets.entry(d.image_id.as_str()).or_default().push(d.clone());
    }
    let mut objs: BTreeMap<&str, Vec<GroundTruth<T>>> = BTreeMap::new();
    for g in gt.objects.iter().filter(|g| images.contains(&g.image_id)) {
        objs.entry(g.image_id.as_str()).or_default().push(g.clone());
    }
    let ids: Vec<&String> = images.iter().collect();
    let parts: Vec<MatchResult> = ids
        .par_iter()
        .map(|id| {
            let empty_d = Vec::new();
            let empty_g = Vec::new();
            let d = dets.get(id.as_str()).unwrap_or(&empty_d);
            let g = objs.get(id.as_str()).unwrap_or(&empty_g);
            match_image(d, g, iou_threshold, gt.num_classes)
        })
        .collect();
    MatchResult::merge(parts)
}

/// Cumulative (tp, fp) after each distinct score, loosest threshold last.
/// Tied scores enter together, so no point splits a tie.
fn operating_points<'a>(matches: impl Iterator<Item = &'a ScoredMatch>) -> Vec<(usize, usize)> {
    let mut scored: Vec<(f64, bool)> = matches
        .filter(|m| m.label != MatchLabel::Ignored)
        .map(|m| (m.score, m.label == MatchLabel::TruePositive))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(score, is_tp)) in scored.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        if scored.get(i + 1).is_none_or(|next| next.0 != score) {
            points.push((tp, fp));
        }
    }
    points
}

/// (recall, precision) at each distinct score threshold for one class.
pub fn pr_curve(matches: &MatchResult, class_id: usize) -> Vec<[f64; 2]> {
    let npos = matches.num_gt.get(class_id).copied().unwrap_or(0);
    if npos == 0 {
        return Vec::new();
    }
    operating_points(matches.detections.iter().filter(|m| m.class_id == class_id))
        .into_iter()
        .map(|(tp, fp)| [tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64])
        .collect()
}

/// All-point interpolated AP for one class; `None` without ground truth.
pub fn average_precision(matches: &MatchResult, class_id: usize) -> Option<f64> {
    if matches.num_gt.get(class_id).copied().unwrap_or(0) == 0 {
        return None;
    }
    let curve = pr_curve(matches, class_id);
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for [r, p] in curve {
        recall.push(r);
        precision.push(p);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let ap = (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum::<f64>();
    Some(ap.clamp(0.0, 1.0))
}

/// Class-agnostic (fppi, miss rate) curve, starting at the empty operating
/// point (0, 1) and loosening the threshold one distinct score at a time.
pub fn miss_rate_curve(matches: &MatchResult, image_count: usize) -> Vec<[f64; 2]> {
    let npos = matches.total_gt();
    if npos == 0 || image_count == 0 {
        return Vec::new();
    }
    let images = image_count as f64;
    std::iter::once([0.0, 1.0])
        .chain(
            operating_points(matches.detections.iter())
                .into_iter()
                .map(|(tp, fp)| [fp as f64 / images, 1.0 - tp as f64 / npos as f64]),
        )
        .collect()
}

/// Log-average miss rate over the nine reference FPPI points.
///
/// At each reference the miss rate is read from the loosest operating point
/// whose FPPI does not exceed it. `None` without non-ignored ground truth.
pub fn lamr(matches: &MatchResult, image_count: usize) -> Option<f64> {
    let curve = miss_rate_curve(matches, image_count);
    if curve.is_empty() {
        return None;
    }
    let log_sum: f64 = reference_fppi()
        .iter()
        .map(|&r| {
            let mr = curve
                .iter()
                .rev()
                .find(|p| p[0] <= r)
                .unwrap_or_else(|| curve.last().expect("non-empty"))[1];
            mr.max(MISS_RATE_FLOOR).ln()
        })
        .sum();
    Some((log_sum / 9.0).exp().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ap,
    Lamr,
    #[default]
    Both,
}

impl Metric {
    fn wants_ap(self) -> bool {
        matches!(self, Metric::Ap | Metric::Both)
    }

    fn wants_lamr(self) -> bool {
        matches!(self, Metric::Lamr | Metric::Both)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ap" => Ok(Metric::Ap),
            "lamr" => Ok(Metric::Lamr),
            "both" => Ok(Metric::Both),
            other => Err(Error::config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub metric: Metric,
    /// Report each image tag separately besides `all`.
    pub breakdown: bool,
    /// Objects shorter than this many pixels are turned into ignore regions.
    pub min_height: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            metric: Metric::Both,
            breakdown: false,
            min_height: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetReport {
    pub images: usize,
    pub ground_truths: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ignored: usize,
    /// Per class name; `None` where the class has no ground truth.
    pub average_precision: BTreeMap<String, Option<f64>>,
    pub mean_ap: Option<f64>,
    pub lamr: Option<f64>,
    pub pr_curves: BTreeMap<String, Vec<[f64; 2]>>,
    pub miss_rate_curve: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub metric: Metric,
    pub class_names: Vec<String>,
    /// `all` plus one entry per tag; `None` marks an empty subset.
    pub subsets: BTreeMap<String, Option<SubsetReport>>,
}

fn subset_report(
    matches: &MatchResult,
    images: usize,
    gt: &GroundTruthSet<f64>,
    metric: Metric,
) -> SubsetReport {
    let mut per_class = BTreeMap::new();
    let mut pr_curves = BTreeMap::new();
    let mut mean_ap = None;
    if metric.wants_ap() {
        let mut defined = Vec::new();
        for k in 1..=gt.num_classes {
            let name = gt.class_name(k);
            let ap = average_precision(matches, k);
            if let Some(v) = ap {
                defined.push(v);
            } else {
                log::warn!("class {name} has no ground truth; excluded from mean AP");
            }
            per_class.insert(name.clone(), ap);
            pr_curves.insert(name, pr_curve(matches, k));
        }
        if !defined.is_empty() {
            mean_ap = Some(defined.iter().sum::<f64>() / defined.len() as f64);
        }
    }
    let (lamr_value, miss_rate) = if metric.wants_lamr() {
        (lamr(matches, images), miss_rate_curve(matches, images))
    } else {
        (None, Vec::new())
    };
    SubsetReport {
        images,
        ground_truths: matches.total_gt(),
        true_positives: matches.count(MatchLabel::TruePositive),
        false_positives: matches.count(MatchLabel::FalsePositive),
        ignored: matches.count(MatchLabel::Ignored),
        average_precision: per_class,
        mean_ap,
        lamr: lamr_value,
        pr_curves,
        miss_rate_curve: miss_rate,
    }
}

/// Evaluates detections against ground truth overall and, on request, per
/// image tag. Images with detections but no ground-truth record count in
/// `all` only.
pub fn breakdown<T: Scalar>(
    detections: &[Detection<T>],
    gt: &GroundTruthSet<T>,
    options: &EvalOptions,
) -> EvalReport {
    let gt = to_f64_set(gt, options.min_height);
    let detections: Vec<Detection<f64>> = detections.iter().map(to_f64_detection).collect();

    let mut all_images: BTreeSet<String> = gt.images.keys().cloned().collect();
    let unknown: BTreeSet<&str> = detections
        .iter()
        .map(|d| d.image_id.as_str())
        .filter(|id| !gt.images.contains_key(*id))
        .collect();
    if !unknown.is_empty() {
        log::warn!(
            "{} image(s) have detections but no ground-truth record, e.g. {}",
            unknown.len(),
            unknown.iter().next().expect("non-empty")
        );
        all_images.extend(unknown.iter().map(|s| s.to_string()));
    }

    let mut subsets: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    subsets.insert("all".into(), all_images);
    if options.breakdown {
        subsets.insert("day".into(), BTreeSet::new());
        subsets.insert("night".into(), BTreeSet::new());
        for (id, tag) in &gt.images {
            if let Some(tag) = tag {
                subsets.entry(tag.clone()).or_default().insert(id.clone());
            }
        }
    }

    let reports = subsets
        .into_iter()
        .map(|(name, images)| {
            if images.is_empty() {
                return (name, None);
            }
            let m = match_images(&detections, &gt, &images, options.iou_threshold);
            (
                name,
                Some(subset_report(&m, images.len(), &gt, options.metric)),
            )
        })
        .collect();

    EvalReport {
        iou_threshold: options.iou_threshold,
        metric: options.metric,
        class_names: (1..=gt.num_classes).map(|k| gt.class_name(k)).collect(),
        subsets: reports,
    }
}

fn to_f64_detection<T: Scalar>(d: &Detection<T>) -> Detection<f64> {
    use crate::detections::ClassScores;
    use crate::geometry::BBox;
    let b = d.bbox.to_array().map(Scalar::as_f64);
    let logits: Vec<f64> = d.scores.logits().iter().map(|v| v.as_f64()).collect();
    let posteriors: Vec<f64> = d.scores.posteriors().iter().map(|v| v.as_f64()).collect();
    Detection {
        image_id: d.image_id.clone(),
        modality: d.modality.clone(),
        bbox: BBox::from_array(b).expect("valid box stays valid in f64"),
        scores: ClassScores::from_parts(logits, posteriors),
        box_variance: d.box_variance.map(Scalar::as_f64),
        det_id: d.det_id,
    }
}

fn to_f64_set<T: Scalar>(gt: &GroundTruthSet<T>, min_height: Option<f64>) -> GroundTruthSet<f64> {
    use crate::geometry::BBox;
    GroundTruthSet {
        num_classes: gt.num_classes,
        class_names: gt.class_names.clone(),
        objects: gt
            .objects
            .iter()
            .map(|g| {
                let bbox = BBox::from_array(g.bbox.to_array().map(Scalar::as_f64))
                    .expect("valid box stays valid in f64");
                let short = min_height.is_some_and(|m| bbox.h() < m);
                GroundTruth {
                    image_id: g.image_id.clone(),
                    bbox,
                    class_id: g.class_id,
                    ignore: g.ignore || short,
                }
            })
            .collect(),
        images: gt.images.clone(),
    }
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    match v {
        Some(v) => format!("{:.2}", v * scale),
        None => "-".into(),
    }
}

impl EvalReport {
    /// Aligned-column plain-text rendering (AP and LAMR in percent).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "IoU threshold {}", self.iou_threshold);
        let _ = writeln!(
            s,
            "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}",
            "subset", "images", "gt", "tp", "fp", "ignored", "mAP%", "LAMR%"
        );
        for (name, report) in &self.subsets {
            match report {
                None => {
                    let _ = writeln!(s, "{name:<10} (no images)");
                }
                Some(r) => {
                    let _ = writeln!(
                        s,
                        "{:<10} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}",
                        name,
                        r.images,
                        r.ground_truths,
                        r.true_positives,
                        r.false_positives,
                        r.ignored,
                        fmt_opt(r.mean_ap, 100.0),
                        fmt_opt(r.lamr, 100.0)
                    );
                }
            }
        }
        let with_ap: Vec<_> = self
            .subsets
            .iter()
            .filter_map(|(n, r)| r.as_ref().map(|r| (n, r)))
            .filter(|(_, r)| !r.average_precision.is_empty())
            .collect();
        if !with_ap.is_empty() {
            let _ = writeln!(s);
            let _ = write!(s, "{:<10}", "AP%");
            for c in &self.class_names {
                let _ = write!(s, " {c:>10}");
            }
            let _ = writeln!(s);
            for (name, r) in with_ap {
                let _ = write!(s, "{name:<10}");
                for c in &self.class_names {
                    let v = r.average_precision.get(c).copied().flatten();
                    let _ = write!(s, " {:>10}", fmt_opt(v, 100.0));
                }
                let _ = writeln!(s);
            }
        }
        s
    }
}
