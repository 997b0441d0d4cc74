//! Greedy multimodal clustering and fusion, plus the pooling baseline.
//!
//! Per image and per argmax class: take the highest-ranked remaining
//! detection, gather every remaining detection of that class overlapping it
//! above the IoU threshold, keep the best detection of each modality from
//! that group, fuse their scores and boxes, and drop the whole group.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::box_fusion::{fuse_boxes, BoxFusion};
use crate::detections::{rank_order, sort_by_rank, ClassPrior, ClassScores, Detection};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::scalar::Scalar;
use crate::score_fusion::{
    calibrate_scores, fuse_avg_logits, fuse_avg_posteriors, fuse_linear, fuse_max, fuse_proben,
    CalibrationParams, LinearFusionWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreFusion {
    /// Keep the seed's scores (NMS).
    Max,
    AvgPosteriors,
    AvgLogits,
    #[default]
    ProbEn,
    Linear,
}

impl FromStr for ScoreFusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "avg" | "avg-posteriors" => Ok(Self::AvgPosteriors),
            "avg-logits" => Ok(Self::AvgLogits),
            "proben" => Ok(Self::ProbEn),
            "linear" => Ok(Self::Linear),
            other => Err(Error::config(format!(
                "unknown score fusion mode {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ScoreFusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::AvgPosteriors => "avg-posteriors",
            Self::AvgLogits => "avg-logits",
            Self::ProbEn => "proben",
            Self::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone)]
pub struct FusionConfig<T> {
    pub iou_threshold: T,
    pub score_fusion: ScoreFusion,
    pub box_fusion: BoxFusion,
    /// `None` means uniform.
    pub prior: Option<ClassPrior<T>>,
    /// Per-modality logit calibration; modalities not listed are left alone.
    pub calibration: BTreeMap<String, CalibrationParams<T>>,
    pub weights: Option<LinearFusionWeights<T>>,
}

impl<T: Scalar> Default for FusionConfig<T> {
    fn default() -> Self {
        Self {
            iou_threshold: T::lit(0.5),
            score_fusion: ScoreFusion::ProbEn,
            box_fusion: BoxFusion::Argmax,
            prior: None,
            calibration: BTreeMap::new(),
            weights: None,
        }
    }
}

impl<T: Scalar> FusionConfig<T> {
    pub fn new(score_fusion: ScoreFusion, box_fusion: BoxFusion) -> Self {
        Self {
            score_fusion,
            box_fusion,
            ..Self::default()
        }
    }

    /// Plain NMS: max scores, argmax boxes.
    pub fn nms() -> Self {
        Self::new(ScoreFusion::Max, BoxFusion::Argmax)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > T::zero() && self.iou_threshold < T::one()) {
            return Err(Error::config(format!(
                "IoU threshold {} must lie in (0, 1)",
                self.iou_threshold
            )));
        }
        if self.score_fusion == ScoreFusion::Linear && self.weights.is_none() {
            return Err(Error::config("linear score fusion requires weights"));
        }
        Ok(())
    }

    fn prior_for(&self, num_classes: usize) -> Result<ClassPrior<T>> {
        match &self.prior {
            Some(p) if p.len() != num_classes + 1 => Err(Error::config(format!(
                "class prior has {} entries but detections have {}",
                p.len(),
                num_classes + 1
            ))),
            Some(p) => Ok(p.clone()),
            None => Ok(ClassPrior::uniform(num_classes)),
        }
    }
}

/// One greedy iteration's worth of detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    pub seed: Detection<T>,
    /// Every remaining detection of the seed's class overlapping it, seed first.
    pub members: Vec<Detection<T>>,
    /// Highest-ranked member of each modality, in rank order.
    pub selected: Vec<Detection<T>>,
}

impl<T: Scalar> Cluster<T> {
    pub fn distinct_modalities(&self) -> usize {
        self.selected
            .iter()
            .map(|d| d.modality.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Concatenates every modality's detections and ranks them; nothing is suppressed.
pub fn pool<T: Scalar>(detection_sets: &[Vec<Detection<T>>]) -> Vec<Detection<T>> {
    let mut out: Vec<Detection<T>> = detection_sets.iter().flatten().cloned().collect();
    sort_by_rank(&mut out);
    out
}

/// Applies each modality's calibration to its detections.
pub fn calibrate_detections<T: Scalar>(
    detections: &[Detection<T>],
    calibration: &BTreeMap<String, CalibrationParams<T>>,
) -> Result<Vec<Detection<T>>> {
    detections
        .iter()
        .map(|d| {
            let mut d = d.clone();
            if let Some(params) = calibration.get(&d.modality) {
                d.scores = calibrate_scores(&d.scores, params)?;
            }
            Ok(d)
        })
        .collect()
}

/// Greedy star-shaped clustering of one image's detections.
///
/// Overlap is tested against the seed only; a detection chained through a
/// non-seed member waits for a later iteration.
pub fn clusters<T: Scalar>(detections: &[Detection<T>], iou_threshold: T) -> Vec<Cluster<T>> {
    let mut order: Vec<&Detection<T>> = detections.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));

    let mut by_class: BTreeMap<usize, Vec<&Detection<T>>> = BTreeMap::new();
    for d in order {
        by_class.entry(d.label()).or_default().push(d);
    }

    let mut out = Vec::new();
    for dets in by_class.values() {
        let mut alive = vec![true; dets.len()];
        for i in 0..dets.len() {
            if !alive[i] {
                continue;
            }
            let seed = dets[i];
            let mut members = Vec::new();
            let mut selected: Vec<Detection<T>> = Vec::new();
            for j in i..dets.len() {
                if alive[j] && (j == i || iou(&seed.bbox, &dets[j].bbox) > iou_threshold) {
                    alive[j] = false;
                    members.push(dets[j].clone());
                    if !selected.iter().any(|s| s.modality == dets[j].modality) {
                        selected.push(dets[j].clone());
                    }
                }
            }
            out.push(Cluster {
                seed: seed.clone(),
                members,
                selected,
            });
        }
    }
    out
}

fn fused_modality<T>(selected: &[Detection<T>]) -> String {
    let tags: BTreeSet<&str> = selected.iter().map(|d| d.modality.as_str()).collect();
    tags.into_iter().collect::<Vec<_>>().join("+")
}

/// Turns one cluster into one output detection.
pub fn fuse_cluster<T: Scalar>(
    cluster: &Cluster<T>,
    config: &FusionConfig<T>,
) -> Result<Detection<T>> {
    if config.score_fusion == ScoreFusion::Max && config.box_fusion == BoxFusion::Argmax {
        return Ok(cluster.seed.clone());
    }

    let selected: Vec<&Detection<T>> = cluster.selected.iter().collect();
    let scores: Vec<&ClassScores<T>> = selected.iter().map(|d| &d.scores).collect();
    let fused_scores = match config.score_fusion {
        ScoreFusion::Max => fuse_max(&scores)?,
        ScoreFusion::AvgPosteriors => fuse_avg_posteriors(&scores)?,
        ScoreFusion::AvgLogits => fuse_avg_logits(&scores)?,
        ScoreFusion::ProbEn => {
            let prior = config.prior_for(cluster.seed.scores.num_classes())?;
            fuse_proben(&scores, &prior, cluster.distinct_modalities())?
        }
        ScoreFusion::Linear => {
            let weights = config
                .weights
                .as_ref()
                .ok_or_else(|| Error::config("linear score fusion requires weights"))?;
            let tagged: Vec<(&str, &ClassScores<T>)> = selected
                .iter()
                .map(|d| (d.modality.as_str(), &d.scores))
                .collect();
            fuse_linear(&tagged, weights)?
        }
    };
    let bbox = fuse_boxes(&selected, &fused_scores, config.box_fusion)?;

    let box_variance = if config.box_fusion == BoxFusion::VarianceAvg {
        let precision: T = selected
            .iter()
            .map(|d| T::one() / d.box_variance.expect("checked by fuse_boxes"))
            .sum();
        Some(T::one() / precision)
    } else {
        cluster.seed.box_variance
    };

    Ok(Detection {
        image_id: cluster.seed.image_id.clone(),
        modality: fused_modality(&cluster.selected),
        bbox,
        scores: fused_scores,
        box_variance,
        det_id: cluster.seed.det_id,
    })
}

/// Fuses the detections of a single image.
pub fn fuse_image<T: Scalar>(
    detections: &[Detection<T>],
    config: &FusionConfig<T>,
) -> Result<Vec<Detection<T>>> {
    config.validate()?;
    if let Some(first) = detections.first() {
        if let Some(other) = detections.iter().find(|d| d.image_id != first.image_id) {
            return Err(Error::config(format!(
                "fuse_image given detections from {} and {}",
                first.image_id, other.image_id
            )));
        }
    }
    if config.box_fusion == BoxFusion::VarianceAvg {
        if let Some(d) = detections.iter().find(|d| d.box_variance.is_none()) {
            return Err(Error::MissingVariance { det_id: d.det_id });
        }
    }
    let calibrated = calibrate_detections(detections, &config.calibration)?;
    let mut out = clusters(&calibrated, config.iou_threshold)
        .iter()
        .map(|c| fuse_cluster(c, config))
        .collect::<Result<Vec<_>>>()?;
    sort_by_rank(&mut out);
    Ok(out)
}

/// Fuses per-modality detection lists belonging to one image.
pub fn fuse<T: Scalar>(
    detection_sets: &[Vec<Detection<T>>],
    config: &FusionConfig<T>,
) -> Result<Vec<Detection<T>>> {
    let all: Vec<Detection<T>> = detection_sets.iter().flatten().cloned().collect();
    fuse_image(&all, config)
}

/// Groups detections by image id (sorted).
pub fn group_by_image<T: Scalar>(detections: &[Detection<T>]) -> BTreeMap<&str, Vec<Detection<T>>> {
    let mut groups: BTreeMap<&str, Vec<Detection<T>>> = BTreeMap::new();
    for d in detections {
        groups
            .entry(d.image_id.as_str())
            .or_default()
            .push(d.clone());
    }
    groups
}

/// Fuses a multi-image detection list. Images are processed in parallel and
/// emitted in image-id order, each image's detections in rank order.
pub fn fuse_all<T: Scalar>(
    detections: &[Detection<T>],
    config: &FusionConfig<T>,
) -> Result<Vec<Detection<T>>> {
    config.validate()?;
    let groups: Vec<Vec<Detection<T>>> = group_by_image(detections).into_values().collect();
    let fused = groups
        .par_iter()
        .map(|dets| fuse_image(dets, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(fused.into_iter().flatten().collect())
}

/// Pooling baseline over a multi-image detection list.
pub fn pool_all<T: Scalar>(detections: &[Detection<T>]) -> Vec<Detection<T>> {
    group_by_image(detections)
        .into_values()
        .flat_map(|dets| pool(&[dets]))
        .collect()
}
