//! Late fusion of object detections from several modalities.
//!
//! Detections from independently run detectors (RGB, thermal, ...) are
//! grouped by greedy clustering and fused: scores by a product of class
//! posteriors divided by the prior (or one of the baseline rules), boxes by
//! a weighted average. The crate also evaluates detections with AP and the
//! log-average miss rate, tunes per-modality calibration, and generates
//! seeded synthetic scenarios.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root name the common instantiations.

pub mod box_fusion;
pub mod detections;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod scalar;
pub mod score_fusion;
pub mod synth;
pub mod tuning;

pub use box_fusion::{fuse_boxes, BoxFusion};
pub use detections::{
    estimate_class_prior, logits_from_posteriors, rank_order, softmax, sort_by_rank, ClassPrior,
    ClassScores, Detection, GroundTruth, GroundTruthSet,
};
pub use engine::{
    clusters, fuse, fuse_all, fuse_cluster, fuse_image, pool, pool_all, Cluster, FusionConfig,
    ScoreFusion,
};
pub use error::{Error, Result};
pub use geometry::{convex_combination, iou, BBox};
pub use metrics::{average_precision, breakdown, lamr, EvalOptions, EvalReport, Metric};
pub use scalar::Scalar;
pub use score_fusion::{
    calibrate_scores, fit_linear_weights, fuse_avg_logits, fuse_avg_posteriors, fuse_linear,
    fuse_max, fuse_proben, CalibrationParams, LinearFitOptions, LinearFusionExample,
    LinearFusionWeights,
};
pub use synth::{generate, ScenarioSpec, SyntheticDataset};
pub use tuning::{calibration_grid_search, linspace, Objective};

pub type BBoxF64 = BBox<f64>;
pub type BBoxF32 = BBox<f32>;
pub type ClassScoresF64 = ClassScores<f64>;
pub type ClassScoresF32 = ClassScores<f32>;
pub type DetectionF64 = Detection<f64>;
pub type DetectionF32 = Detection<f32>;
pub type GroundTruthSetF64 = GroundTruthSet<f64>;
pub type GroundTruthSetF32 = GroundTruthSet<f32>;
pub type FusionConfigF64 = FusionConfig<f64>;
pub type FusionConfigF32 = FusionConfig<f32>;
