#![allow(dead_code)]

use std::collections::BTreeSet;

use proben::metrics::{match_image, MatchLabel, MatchResult, MISS_RATE_FLOOR};
use proben::{BBox, ClassScores, Detection, GroundTruth, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODALITIES: [&str; 3] = ["rgb", "thermal", "depth"];

pub struct Instance {
    pub num_classes: usize,
    pub images: Vec<String>,
    pub detections: Vec<Detection<f64>>,
    pub gts: Vec<GroundTruth<f64>>,
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox<f64> {
    // A small canvas so overlaps are common; integer corners make exact ties likely.
    let x = rng.random_range(0..40) as f64;
    let y = rng.random_range(0..40) as f64;
    let w = rng.random_range(4..24) as f64;
    let h = rng.random_range(4..24) as f64;
    BBox::new(x, y, w, h).unwrap()
}

/// Random instance: up to 20 detections over up to three modalities and up
/// to 10 objects, spread over `max_images` images at most. Logits are
/// quantized so score ties occur.
pub fn random_instance(seed: u64, max_images: usize, max_classes: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = rng.random_range(1..=max_classes);
    let images: Vec<String> = (0..rng.random_range(1..=max_images))
        .map(|i| format!("img{i}"))
        .collect();
    let n_det = rng.random_range(0..=20);
    let n_gt = rng.random_range(0..=10);
    let modalities = rng.random_range(1..=3);
    let detections = (0..n_det)
        .map(|i| {
            let logits: Vec<f64> = (0..=num_classes)
                .map(|_| rng.random_range(-8..=8) as f64 * 0.5)
                .collect();
            let mut d = Detection::new(
                images[rng.random_range(0..images.len())].clone(),
                MODALITIES[rng.random_range(0..modalities)],
                random_box(&mut rng),
                ClassScores::from_logits(logits).unwrap(),
                i as u64,
            );
            d = d.with_variance(rng.random_range(1..10) as f64).unwrap();
            d
        })
        .collect();
    let gts = (0..n_gt)
        .map(|_| GroundTruth {
            image_id: images[rng.random_range(0..images.len())].clone(),
            bbox: random_box(&mut rng),
            class_id: rng.random_range(1..=num_classes),
            ignore: rng.random_bool(0.15),
        })
        .collect();
    Instance {
        num_classes,
        images,
        detections,
        gts,
    }
}

/// Plain greedy NMS by repeated linear scans: per argmax class, keep the best
/// remaining detection and delete everything overlapping it above `thr`.
pub fn nms_oracle<T: Scalar>(dets: &[Detection<T>], thr: T) -> BTreeSet<u64> {
    let better = |a: &Detection<T>, b: &Detection<T>| {
        a.score() > b.score()
            || (a.score() == b.score() && (a.label(), a.det_id) < (b.label(), b.det_id))
    };
    let mut remaining: Vec<&Detection<T>> = dets.iter().collect();
    let mut kept = BTreeSet::new();
    while !remaining.is_empty() {
        let mut best = remaining[0];
        for d in &remaining {
            if better(d, best) {
                best = d;
            }
        }
        kept.insert(best.det_id);
        remaining.retain(|d| {
            d.det_id != best.det_id && !(d.label() == best.label() && best.bbox.iou(&d.bbox) > thr)
        });
    }
    kept
}

fn counts_at(matches: &MatchResult, class_id: Option<usize>, threshold: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for m in &matches.detections {
        if class_id.is_some_and(|c| c != m.class_id) || m.score < threshold {
            continue;
        }
        match m.label {
            MatchLabel::TruePositive => tp += 1,
            MatchLabel::FalsePositive => fp += 1,
            MatchLabel::Ignored => {}
        }
    }
    (tp, fp)
}

fn thresholds(matches: &MatchResult, class_id: Option<usize>) -> Vec<f64> {
    let mut s: Vec<f64> = matches
        .detections
        .iter()
        .filter(|m| class_id.is_none_or(|c| c == m.class_id) && m.label != MatchLabel::Ignored)
        .map(|m| m.score)
        .collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// AP by enumerating every score threshold: precision at each recall level is
/// the best precision among thresholds reaching at least that recall.
pub fn ap_oracle(matches: &MatchResult, class_id: usize) -> Option<f64> {
    let npos = matches.num_gt.get(class_id).copied().unwrap_or(0);
    if npos == 0 {
        return None;
    }
    let points: Vec<(f64, f64)> = thresholds(matches, Some(class_id))
        .into_iter()
        .map(|s| {
            let (tp, fp) = counts_at(matches, Some(class_id), s);
            (tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64)
        })
        .collect();
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|r| *r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut ap = 0.0;
    let mut previous = 0.0;
    for r in levels {
        let best = points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max);
        ap += (r - previous) * best;
        previous = r;
    }
    Some(ap)
}

/// LAMR by enumerating thresholds: at each reference FPPI take the lowest miss
/// rate over all thresholds (including "accept nothing") within that FPPI.
pub fn lamr_oracle(matches: &MatchResult, images: usize) -> Option<f64> {
    let npos = matches.total_gt();
    if npos == 0 || images == 0 {
        return None;
    }
    let mut points = vec![(0.0, 1.0)];
    for s in thresholds(matches, None) {
        let (tp, fp) = counts_at(matches, None, s);
        points.push((fp as f64 / images as f64, 1.0 - tp as f64 / npos as f64));
    }
    let mut log_sum = 0.0;
    for k in 0..9 {
        let reference = 10f64.powf(-2.0 + k as f64 / 4.0);
        let mr = points
            .iter()
            .filter(|p| p.0 <= reference)
            .map(|p| p.1)
            .fold(1.0, f64::min);
        log_sum += mr.max(MISS_RATE_FLOOR).ln();
    }
    Some((log_sum / 9.0).exp())
}

pub fn match_instance(inst: &Instance) -> MatchResult {
    MatchResult::merge(inst.images.iter().map(|id| {
        let dets: Vec<_> = inst
            .detections
            .iter()
            .filter(|d| &d.image_id == id)
            .cloned()
            .collect();
        let gts: Vec<_> = inst
            .gts
            .iter()
            .filter(|g| &g.image_id == id)
            .cloned()
            .collect();
        match_image(&dets, &gts, 0.5, inst.num_classes)
    }))
}

/// The invariant checks shared by the acceptance suite and the invariant
/// tests. Each returns a description of the first violation.
pub mod invariants {
    use super::*;
    use proben::engine::{fuse_all, FusionConfig, ScoreFusion};
    use proben::io::{detections_to_string, write_dataset};
    use proben::metrics::{breakdown, EvalOptions};
    use proben::synth::{generate, ScenarioSpec};
    use proben::{fuse, BoxFusion, GroundTruthSet};
    use rand::seq::SliceRandom;

    fn envelope_contains(members: &[&Detection<f64>], b: &BBox<f64>) -> bool {
        let tol = 1e-9;
        let x0 = members
            .iter()
            .map(|d| d.bbox.x())
            .fold(f64::INFINITY, f64::min);
        let y0 = members
            .iter()
            .map(|d| d.bbox.y())
            .fold(f64::INFINITY, f64::min);
        let x1 = members
            .iter()
            .map(|d| d.bbox.right())
            .fold(f64::NEG_INFINITY, f64::max);
        let y1 = members
            .iter()
            .map(|d| d.bbox.bottom())
            .fold(f64::NEG_INFINITY, f64::max);
        b.x() >= x0 - tol && b.y() >= y0 - tol && b.right() <= x1 + tol && b.bottom() <= y1 + tol
    }

    /// Every fused box lies inside the envelope of its cluster's boxes.
    pub fn box_envelope(cases: u64) -> Result<(), String> {
        for seed in 0..cases {
            let inst = random_instance(seed, 1, 3);
            for mode in [BoxFusion::Avg, BoxFusion::ScoreAvg, BoxFusion::VarianceAvg] {
                let config = FusionConfig::new(ScoreFusion::ProbEn, mode);
                for c in proben::clusters(&inst.detections, config.iou_threshold) {
                    let fused = proben::fuse_cluster(&c, &config).map_err(|e| e.to_string())?;
                    let members: Vec<&Detection<f64>> = c.selected.iter().collect();
                    if !envelope_contains(&members, &fused.bbox) {
                        return Err(format!(
                            "seed {seed}, {mode}: {:?} escapes its cluster",
                            fused.bbox
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Shuffling the input leaves the fused output unchanged.
    pub fn permutation(cases: u64) -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..cases {
            let inst = random_instance(seed, 3, 3);
            for sf in [
                ScoreFusion::Max,
                ScoreFusion::AvgPosteriors,
                ScoreFusion::AvgLogits,
                ScoreFusion::ProbEn,
            ] {
                for bf in [
                    BoxFusion::Argmax,
                    BoxFusion::Avg,
                    BoxFusion::ScoreAvg,
                    BoxFusion::VarianceAvg,
                ] {
                    let config = FusionConfig::new(sf, bf);
                    let want = fuse_all(&inst.detections, &config).map_err(|e| e.to_string())?;
                    let mut shuffled = inst.detections.clone();
                    shuffled.shuffle(&mut rng);
                    let got = fuse_all(&shuffled, &config).map_err(|e| e.to_string())?;
                    if got != want {
                        return Err(format!(
                            "seed {seed}, {sf}+{bf}: output depends on input order"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Generation and fusion are byte-identical across reruns.
    pub fn determinism() -> Result<(), String> {
        let spec = ScenarioSpec::preset("kaist-like", 3, 7, 50).map_err(|e| e.to_string())?;
        let mut trees = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let ds = generate(&spec).map_err(|e| e.to_string())?;
            write_dataset(dir.path(), &spec, &ds).map_err(|e| e.to_string())?;
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
                .map_err(|e| e.to_string())?
                .map(|e| {
                    let e = e.expect("dir entry");
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).expect("readable"),
                    )
                })
                .collect();
            files.sort();
            let fused = fuse_all(
                &ds.all_detections(),
                &FusionConfig::new(ScoreFusion::ProbEn, BoxFusion::VarianceAvg),
            )
            .map_err(|e| e.to_string())?;
            files.push(("fused".into(), detections_to_string(&fused, 1).into_bytes()));
            trees.push(files);
        }
        if trees[0] != trees[1] {
            return Err("two runs with the same seed differ".into());
        }
        Ok(())
    }

    /// Multiplying every logit of single-class detections by a positive
    /// factor keeps the ranking, hence AP and LAMR.
    pub fn monotone_rescaling() -> Result<(), String> {
        let spec = ScenarioSpec::preset("kaist-like", 2, 11, 200).map_err(|e| e.to_string())?;
        let ds = generate(&spec).map_err(|e| e.to_string())?;
        let dets = ds.all_detections();
        let scaled: Vec<Detection<f64>> = dets
            .iter()
            .map(|d| {
                let logits = d.scores.logits().iter().map(|l| l * 2.5).collect();
                Detection {
                    scores: ClassScores::from_logits(logits).expect("finite"),
                    ..d.clone()
                }
            })
            .collect();
        let gt: &GroundTruthSet<f64> = &ds.ground_truth;
        let options = EvalOptions::default();
        let a = breakdown(&dets, gt, &options);
        let b = breakdown(&scaled, gt, &options);
        let (a, b) = (
            a.subsets["all"].as_ref().unwrap(),
            b.subsets["all"].as_ref().unwrap(),
        );
        if a.mean_ap != b.mean_ap || a.lamr != b.lamr {
            return Err(format!(
                "AP {:?} vs {:?}, LAMR {:?} vs {:?}",
                a.mean_ap, b.mean_ap, a.lamr, b.lamr
            ));
        }
        Ok(())
    }

    /// A member with huge variance stops influencing the v-avg box.
    pub fn variance_limit() -> Result<(), String> {
        let scores = |p: f64| ClassScores::from_score(p, 1, 1).expect("valid");
        let sure = Detection::new(
            "i",
            "rgb",
            BBox::new(10.0, 20.0, 30.0, 40.0).unwrap(),
            scores(0.9),
            0,
        )
        .with_variance(2.0)
        .unwrap();
        let mut previous = f64::INFINITY;
        for exp in [2, 4, 6, 8, 10, 12] {
            let vague = Detection::new(
                "i",
                "thermal",
                BBox::new(14.0, 24.0, 30.0, 40.0).unwrap(),
                scores(0.8),
                1,
            )
            .with_variance(10f64.powi(exp))
            .unwrap();
            let out = fuse(
                &[vec![sure.clone()], vec![vague]],
                &FusionConfig::new(ScoreFusion::ProbEn, BoxFusion::VarianceAvg),
            )
            .map_err(|e| e.to_string())?;
            let gap = out[0]
                .bbox
                .to_array()
                .iter()
                .zip(sure.bbox.to_array())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > previous {
                return Err(format!("gap grew to {gap} at variance 1e{exp}"));
            }
            previous = gap;
        }
        if previous > 1e-6 {
            return Err(format!("gap {previous} at variance 1e12"));
        }
        Ok(())
    }
}
