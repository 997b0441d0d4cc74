//! Box coordinate fusion for a cluster of detections.
//!
//! Each member is treated as an isotropic Gaussian over box coordinates; the
//! fused box is the inverse-variance weighted mean. The modes differ only in
//! where the variances come from.

use std::fmt;
use std::str::FromStr;

use crate::detections::{rank_order, ClassScores, Detection};
use crate::error::{Error, Result};
use crate::geometry::{convex_combination, BBox};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxFusion {
    /// Box of the most confident member (plain NMS).
    #[default]
    Argmax,
    /// Unit variance for every member.
    Avg,
    /// Variance taken as the inverse of the member's posterior for the fused class.
    ScoreAvg,
    /// Variance reported by the detector.
    VarianceAvg,
}

impl FromStr for BoxFusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Self::Argmax),
            "avg" => Ok(Self::Avg),
            "s-avg" => Ok(Self::ScoreAvg),
            "v-avg" => Ok(Self::VarianceAvg),
            other => Err(Error::config(format!("unknown box fusion mode {other:?}"))),
        }
    }
}

impl fmt::Display for BoxFusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Argmax => "argmax",
            Self::Avg => "avg",
            Self::ScoreAvg => "s-avg",
            Self::VarianceAvg => "v-avg",
        })
    }
}

pub fn fuse_boxes<T: Scalar>(
    members: &[&Detection<T>],
    fused_scores: &ClassScores<T>,
    mode: BoxFusion,
) -> Result<BBox<T>> {
    let first = members.first().ok_or(Error::EmptyCluster)?;
    if mode == BoxFusion::VarianceAvg {
        if let Some(d) = members.iter().find(|d| d.box_variance.is_none()) {
            return Err(Error::MissingVariance { det_id: d.det_id });
        }
    }
    if members.len() == 1 {
        return Ok(first.bbox);
    }

    let boxes: Vec<BBox<T>> = members.iter().map(|d| d.bbox).collect();
    let weights: Vec<T> = match mode {
        BoxFusion::Argmax => {
            let best = members
                .iter()
                .min_by(|a, b| rank_order(a, b))
                .expect("non-empty");
            return Ok(best.bbox);
        }
        BoxFusion::Avg => vec![T::one(); members.len()],
        BoxFusion::ScoreAvg => {
            let k = fused_scores.argmax_class();
            members.iter().map(|d| d.scores.posteriors()[k]).collect()
        }
        BoxFusion::VarianceAvg => members
            .iter()
            .map(|d| T::one() / d.box_variance.expect("checked above"))
            .collect(),
    };
    convex_combination(&boxes, &weights)
}
