//! Validation-driven tuning: calibration grid search and assembly of
//! training clusters for learned linear fusion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::detections::{Detection, GroundTruthSet};
use crate::engine::{calibrate_detections, clusters, fuse_all, group_by_image, FusionConfig};
use crate::error::{Error, Result};
use crate::metrics::{breakdown, match_image, EvalOptions, MatchLabel, Metric};
use crate::scalar::Scalar;
use crate::score_fusion::{CalibrationParams, LinearFusionExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Minimized.
    Lamr,
    /// Mean AP over classes, maximized.
    Ap,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lamr" => Ok(Self::Lamr),
            "ap" => Ok(Self::Ap),
            other => Err(Error::config(format!("unknown objective {other:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lamr => "lamr",
            Self::Ap => "ap",
        })
    }
}

impl Objective {
    /// Orders objective values best first.
    fn rank(self, a: f64, b: f64) -> std::cmp::Ordering {
        match self {
            Objective::Lamr => a.total_cmp(&b),
            Objective::Ap => b.total_cmp(&a),
        }
    }
}

/// `steps` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::config(
            "grid needs finite bounds and at least one step",
        ));
    }
    if steps == 1 {
        if lo != hi {
            return Err(Error::config("a one-step grid needs equal bounds"));
        }
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            if i == steps - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

/// Fuses with `config` and scores the result on the `all` subset.
pub fn evaluate_objective<T: Scalar>(
    detections: &[Detection<T>],
    gt: &GroundTruthSet<T>,
    config: &FusionConfig<T>,
    objective: Objective,
    eval_iou: f64,
) -> Result<f64> {
    let fused = fuse_all(detections, config)?;
    let options = EvalOptions {
        iou_threshold: eval_iou,
        metric: match objective {
            Objective::Lamr => Metric::Lamr,
            Objective::Ap => Metric::Ap,
        },
        breakdown: false,
        min_height: None,
    };
    let report = breakdown(&fused, gt, &options);
    let all = report.subsets["all"]
        .as_ref()
        .ok_or_else(|| Error::config("validation set has no images"))?;
    match objective {
        Objective::Lamr => all.lamr,
        Objective::Ap => all.mean_ap,
    }
    .ok_or_else(|| Error::config("objective undefined: no non-ignored ground truth"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub temperature: f64,
    pub shift: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSearch {
    pub modality: String,
    pub objective: Objective,
    /// Temperature-major grid order.
    pub surface: Vec<GridPoint>,
    pub best: GridPoint,
}

impl CalibrationSearch {
    pub fn params<T: Scalar>(&self) -> Result<CalibrationParams<T>> {
        CalibrationParams::new(T::lit(self.best.temperature), T::lit(self.best.shift))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("temperature,shift,objective\n");
        for p in &self.surface {
            s.push_str(&format!("{},{},{}\n", p.temperature, p.shift, p.objective));
        }
        s
    }
}

/// Exhaustive search over `(T, b)` for one modality's calibration, every
/// other setting taken from `base`.
///
/// Ties on the objective go to the point nearest `(1, 0)`, then to the
/// lexicographically smallest `(T, b)`.
pub fn calibration_grid_search<T: Scalar>(
    detections: &[Detection<T>],
    gt: &GroundTruthSet<T>,
    base: &FusionConfig<T>,
    modality: &str,
    temperatures: &[f64],
    shifts: &[f64],
    objective: Objective,
) -> Result<CalibrationSearch> {
    if temperatures.is_empty() || shifts.is_empty() {
        return Err(Error::config("calibration grid is empty"));
    }
    if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::config(format!("grid temperature {t} must be > 0")));
    }
    if let Some(b) = shifts.iter().find(|b| !b.is_finite()) {
        return Err(Error::config(format!("grid shift {b} must be finite")));
    }
    if !detections.iter().any(|d| d.modality == modality) {
        log::warn!("no detections carry modality {modality:?}; the surface will be flat");
    }

    let grid: Vec<(f64, f64)> = temperatures
        .iter()
        .flat_map(|&t| shifts.iter().map(move |&b| (t, b)))
        .collect();
    let eval_iou = base.iou_threshold.as_f64();
    let surface = grid
        .par_iter()
        .map(|&(t, b)| {
            let mut config = base.clone();
            config.calibration.insert(
                modality.to_string(),
                CalibrationParams::new(T::lit(t), T::lit(b))?,
            );
            let value = evaluate_objective(detections, gt, &config, objective, eval_iou)?;
            Ok(GridPoint {
                temperature: t,
                shift: b,
                objective: value,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let distance = |p: &GridPoint| (p.temperature - 1.0).powi(2) + p.shift.powi(2);
    let best = *surface
        .iter()
        .min_by(|a, b| {
            objective
                .rank(a.objective, b.objective)
                .then_with(|| distance(a).total_cmp(&distance(b)))
                .then_with(|| a.temperature.total_cmp(&b.temperature))
                .then_with(|| a.shift.total_cmp(&b.shift))
        })
        .expect("grid is non-empty");

    Ok(CalibrationSearch {
        modality: modality.to_string(),
        objective,
        surface,
        best,
    })
}

/// Collects one training example per cluster formed during greedy fusion:
/// the cached logits of each modality's selected detection and whether the
/// cluster's seed is a true positive. Seeds landing on ignore regions are
/// skipped.
pub fn linear_training_examples<T: Scalar>(
    detections: &[Detection<T>],
    gt: &GroundTruthSet<T>,
    config: &FusionConfig<T>,
    modalities: &[String],
) -> Result<Vec<LinearFusionExample<T>>> {
    let mut objects: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for g in &gt.objects {
        objects
            .entry(g.image_id.as_str())
            .or_default()
            .push(g.clone());
    }
    let mut out = Vec::new();
    for dets in group_by_image(detections).values() {
        let calibrated = calibrate_detections(dets, &config.calibration)?;
        let cs = clusters(&calibrated, config.iou_threshold);
        let seeds: Vec<Detection<T>> = cs.iter().map(|c| c.seed.clone()).collect();
        let empty = Vec::new();
        let gts = objects.get(dets[0].image_id.as_str()).unwrap_or(&empty);
        let matched = match_image(&seeds, gts, config.iou_threshold, gt.num_classes);
        let labels: BTreeMap<u64, MatchLabel> = matched
            .detections
            .iter()
            .map(|m| (m.det_id, m.label))
            .collect();

        for c in &cs {
            let label = labels[&c.seed.det_id];
            if label == MatchLabel::Ignored {
                continue;
            }
            let mut logits = vec![None; modalities.len()];
            for d in &c.selected {
                let i = modalities
                    .iter()
                    .position(|m| *m == d.modality)
                    .ok_or_else(|| {
                        Error::config(format!("modality {} not in weight list", d.modality))
                    })?;
                logits[i] = Some(d.scores.logits().to_vec());
            }
            out.push(LinearFusionExample {
                logits,
                class_id: c.seed.label(),
                positive: label == MatchLabel::TruePositive,
            });
        }
    }
    Ok(out)
}

/// Sorted distinct modality tags.
pub fn modalities_of<T>(detections: &[Detection<T>]) -> Vec<String> {
    let mut m: Vec<String> = detections.iter().map(|d| d.modality.clone()).collect();
    m.sort();
    m.dedup();
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::box_fusion::BoxFusion;
    use crate::engine::ScoreFusion;
    use crate::synth::{generate, ScenarioSpec};

    #[test]
    fn linspace_grid() {
        let g = linspace(0.5, 5.0, 19).unwrap();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[18], 5.0);
        assert!((g[10] - 3.0).abs() < 1e-12);
        assert_eq!(linspace(1.0, 1.0, 1).unwrap(), vec![1.0]);
        assert!(linspace(0.0, 1.0, 0).is_err());
        assert!(linspace(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn identity_only_grid() {
        let ds = generate(&ScenarioSpec::preset("kaist-like", 2, 5, 40).unwrap()).unwrap();
        let dets = ds.all_detections();
        let cfg = FusionConfig::new(ScoreFusion::ProbEn, BoxFusion::Argmax);
        let search = calibration_grid_search(
            &dets,
            &ds.ground_truth,
            &cfg,
            "thermal",
            &[1.0],
            &[0.0],
            Objective::Lamr,
        )
        .unwrap();
        let plain =
            evaluate_objective(&dets, &ds.ground_truth, &cfg, Objective::Lamr, 0.5).unwrap();
        assert_eq!(search.best.temperature, 1.0);
        assert_eq!(search.best.shift, 0.0);
        assert_eq!(search.best.objective, plain);
        assert_eq!(search.surface.len(), 1);
        assert!(search
            .to_csv()
            .starts_with("temperature,shift,objective\n1,0,"));
    }

    #[test]
    fn rejects_bad_grid() {
        let ds = generate(&ScenarioSpec::preset("kaist-like", 2, 5, 5).unwrap()).unwrap();
        let dets = ds.all_detections();
        let cfg = FusionConfig::default();
        assert!(matches!(
            calibration_grid_search(
                &dets,
                &ds.ground_truth,
                &cfg,
                "thermal",
                &[0.0, 1.0],
                &[0.0],
                Objective::Lamr
            ),
            Err(Error::Config(_))
        ));
        assert!(calibration_grid_search(
            &dets,
            &ds.ground_truth,
            &cfg,
            "thermal",
            &[],
            &[0.0],
            Objective::Ap
        )
        .is_err());
    }

    #[test]
    fn ties_prefer_identity() {
        // No thermal detections at all: every grid point scores the same.
        let ds = generate(&ScenarioSpec::preset("kaist-like", 1, 5, 30).unwrap()).unwrap();
        let dets = ds.all_detections();
        let cfg = FusionConfig::default();
        let search = calibration_grid_search(
            &dets,
            &ds.ground_truth,
            &cfg,
            "thermal",
            &[0.5, 1.0, 2.0],
            &[-1.0, 0.0, 1.0],
            Objective::Ap,
        )
        .unwrap();
        assert_eq!((search.best.temperature, search.best.shift), (1.0, 0.0));
    }

    #[test]
    fn training_examples_cover_clusters() {
        let ds = generate(&ScenarioSpec::preset("kaist-like", 2, 9, 60).unwrap()).unwrap();
        let dets = ds.all_detections();
        let mods = modalities_of(&dets);
        assert_eq!(mods, vec!["rgb".to_string(), "thermal".to_string()]);
        let cfg = FusionConfig::nms();
        let ex = linear_training_examples(&dets, &ds.ground_truth, &cfg, &mods).unwrap();
        assert!(ex.iter().any(|e| e.positive));
        assert!(ex.iter().any(|e| !e.positive));
        assert!(ex.iter().any(|e| e.logits.iter().all(|l| l.is_some())));
        let fused = fuse_all(&dets, &cfg).unwrap();
        assert!(ex.len() <= fused.len());
        assert!(linear_training_examples(&dets, &ds.ground_truth, &cfg, &mods[..1]).is_err());
    }
}
