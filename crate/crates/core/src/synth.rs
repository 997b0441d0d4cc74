//! Seeded synthetic multimodal scenarios.
//!
//! Every object is detected independently by each modality given its true
//! label, so the modalities are conditionally independent by construction.
//! Per-modality profiles differ between `day` and `night` images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detections::{ClassScores, Detection, GroundTruth, GroundTruthSet};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// How one modality behaves under one lighting condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// Probability that an object is detected.
    pub recall: f64,
    /// Mean number of false positives per image (Poisson).
    pub fp_per_image: f64,
    /// Mean true-class logit of a detected object; the other logits are N(0, 1).
    pub concentration: f64,
    /// Mean background logit of a false positive.
    pub fp_concentration: f64,
    /// Typical localization noise std as a fraction of object height.
    pub loc_noise: f64,
    /// Log-std of the per-detection noise scale around `loc_noise`.
    pub loc_noise_spread: f64,
    /// Log-std of the multiplicative error on the reported box variance.
    pub variance_noise: f64,
}

impl Profile {
    fn validate(&self, what: &str) -> Result<()> {
        let finite = [
            self.recall,
            self.fp_per_image,
            self.concentration,
            self.fp_concentration,
            self.loc_noise,
            self.loc_noise_spread,
            self.variance_noise,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config(format!("{what}: non-finite profile value")));
        }
        if !(0.0..=1.0).contains(&self.recall) {
            return Err(Error::config(format!("{what}: recall must lie in [0, 1]")));
        }
        if self.fp_per_image < 0.0
            || self.loc_noise < 0.0
            || self.loc_noise_spread < 0.0
            || self.variance_noise < 0.0
        {
            return Err(Error::config(format!(
                "{what}: rates and noise levels must be >= 0"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub day: Profile,
    pub night: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub image_count: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub class_names: Vec<String>,
    /// Poisson mean of objects per image.
    pub objects_per_image: f64,
    pub day_fraction: f64,
    pub min_object_height: f64,
    pub max_object_height: f64,
    /// Object width as a fraction of its height.
    pub aspect_ratio: f64,
    /// Fraction of objects annotated as ignore regions.
    pub ignore_fraction: f64,
    pub modalities: Vec<ModalitySpec>,
}

/// Image id, box, logits and box variance of one generated detection.
type RawDetection = (String, BBox<f64>, Vec<f64>, f64);

fn profile(recall: f64, fp: f64, conc: f64, fp_conc: f64, noise: f64) -> Profile {
    Profile {
        recall,
        fp_per_image: fp,
        concentration: conc,
        fp_concentration: fp_conc,
        loc_noise: noise,
        loc_noise_spread: 0.6,
        variance_noise: 0.1,
    }
}

impl ScenarioSpec {
    /// Names accepted by [`ScenarioSpec::preset`].
    pub const PRESETS: &'static [&'static str] = &["kaist-like", "flir-like"];

    /// Built-in scenarios. `kaist-like` pairs an RGB detector that is strong
    /// by day with a thermal detector that is strong at night; `flir-like`
    /// has three imbalanced classes. A third modality is a middling
    /// all-weather detector; further ones reuse its profile.
    pub fn preset(name: &str, modalities: usize, seed: u64, image_count: usize) -> Result<Self> {
        if modalities == 0 {
            return Err(Error::config("a scenario needs at least one modality"));
        }
        // Every profile shares one score separation, so a single temperature of
        // 1 suits both lighting conditions; weakness shows as lower recall,
        // more false positives and looser boxes.
        let strong = profile(0.85, 2.0, 2.0, 1.0, 0.02);
        let weak = profile(0.6, 3.0, 2.0, 1.0, 0.035);
        let rgb = ModalitySpec {
            name: "rgb".into(),
            day: strong,
            night: weak,
        };
        let thermal = ModalitySpec {
            name: "thermal".into(),
            day: weak,
            night: strong,
        };
        let extra = |i: usize| ModalitySpec {
            name: if i == 2 {
                "mid".into()
            } else {
                format!("mod{i}")
            },
            day: profile(0.75, 2.5, 2.0, 1.0, 0.025),
            night: profile(0.75, 2.5, 2.0, 1.0, 0.025),
        };
        let mut mods = vec![rgb, thermal];
        mods.extend((2..modalities.max(2)).map(extra));
        mods.truncate(modalities);

        let spec = match name {
            "kaist-like" => Self {
                seed,
                image_count,
                image_width: 640.0,
                image_height: 512.0,
                class_names: vec!["person".into()],
                objects_per_image: 3.0,
                day_fraction: 0.5,
                min_object_height: 40.0,
                max_object_height: 140.0,
                aspect_ratio: 0.41,
                ignore_fraction: 0.05,
                modalities: mods,
            },
            "flir-like" => Self {
                seed,
                image_count,
                image_width: 640.0,
                image_height: 512.0,
                class_names: vec!["person".into(), "car".into(), "bicycle".into()],
                objects_per_image: 5.0,
                day_fraction: 0.6,
                min_object_height: 30.0,
                max_object_height: 160.0,
                aspect_ratio: 0.8,
                ignore_fraction: 0.0,
                modalities: mods,
            },
            other => {
                return Err(Error::config(format!(
                    "unknown preset {other:?}; expected one of {:?}",
                    Self::PRESETS
                )))
            }
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::config("scenario needs at least one class"));
        }
        if self.modalities.is_empty() {
            return Err(Error::config("scenario needs at least one modality"));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.name.is_empty() || self.modalities[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::config(format!(
                    "modality name {:?} empty or repeated",
                    m.name
                )));
            }
            m.day.validate(&format!("{} day", m.name))?;
            m.night.validate(&format!("{} night", m.name))?;
        }
        let positive = [
            self.image_width,
            self.image_height,
            self.min_object_height,
            self.max_object_height,
            self.aspect_ratio,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config(
                "image and object dimensions must be positive",
            ));
        }
        if self.min_object_height > self.max_object_height {
            return Err(Error::config("min object height exceeds max"));
        }
        if !(self.objects_per_image.is_finite() && self.objects_per_image >= 0.0) {
            return Err(Error::config("objects per image must be >= 0"));
        }
        for (v, what) in [
            (self.day_fraction, "day fraction"),
            (self.ignore_fraction, "ignore fraction"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{what} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub ground_truth: GroundTruthSet<f64>,
    /// One detection list per modality, in spec order.
    pub detections: Vec<(String, Vec<Detection<f64>>)>,
}

impl SyntheticDataset {
    pub fn num_classes(&self) -> usize {
        self.ground_truth.num_classes
    }

    pub fn all_detections(&self) -> Vec<Detection<f64>> {
        self.detections
            .iter()
            .flat_map(|(_, d)| d.iter().cloned())
            .collect()
    }
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

/// Logits with `hot` drawn around `concentration` and the rest around 0.
fn logits(rng: &mut ChaCha8Rng, width: usize, hot: usize, concentration: f64) -> Vec<f64> {
    (0..width)
        .map(|k| std_normal(rng) + if k == hot { concentration } else { 0.0 })
        .collect()
}

struct Emitter {
    next_id: u64,
}

impl Emitter {
    fn emit(
        &mut self,
        image_id: &str,
        modality: &str,
        bbox: BBox<f64>,
        logits: Vec<f64>,
        variance: f64,
    ) -> Result<Detection<f64>> {
        let d = Detection::new(
            image_id,
            modality,
            bbox,
            ClassScores::from_logits(logits)?,
            self.next_id,
        )
        .with_variance(variance)?;
        self.next_id += 1;
        Ok(d)
    }
}

/// Generates the scenario. Identical specs give identical datasets.
///
/// Detection ids run through the modalities in order, matching the ids the
/// file reader assigns when the per-modality files are read in that order.
pub fn generate(spec: &ScenarioSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.class_names.len();
    let mut gt = GroundTruthSet::new(k, spec.class_names.clone());
    let mut per_mod: Vec<Vec<RawDetection>> = vec![Vec::new(); spec.modalities.len()];

    let digits = spec.image_count.max(1).to_string().len().max(5);
    for img in 0..spec.image_count {
        let image_id = format!("img_{img:0digits$}");
        let day = rng.random::<f64>() < spec.day_fraction;
        gt.tag_image(
            &image_id,
            Some(if day { "day" } else { "night" }.to_string()),
        );

        let n_obj = poisson(&mut rng, spec.objects_per_image);
        let mut objects = Vec::with_capacity(n_obj);
        for _ in 0..n_obj {
            let h = rng.random_range(spec.min_object_height..=spec.max_object_height);
            let w = h * spec.aspect_ratio;
            let x = rng.random_range(0.0..=(spec.image_width - w).max(0.0));
            let y = rng.random_range(0.0..=(spec.image_height - h).max(0.0));
            let class_id = rng.random_range(1..=k);
            let ignore = rng.random::<f64>() < spec.ignore_fraction;
            let bbox = BBox::new(x, y, w, h)?;
            gt.push(GroundTruth {
                image_id: image_id.clone(),
                bbox,
                class_id,
                ignore,
            });
            objects.push((bbox, class_id));
        }

        for (mi, m) in spec.modalities.iter().enumerate() {
            let p = if day { m.day } else { m.night };
            for &(bbox, class_id) in &objects {
                if rng.random::<f64>() >= p.recall {
                    continue;
                }
                let sigma =
                    p.loc_noise * bbox.h() * (p.loc_noise_spread * std_normal(&mut rng)).exp();
                let jitter: [f64; 4] = std::array::from_fn(|_| sigma * std_normal(&mut rng));
                let b = bbox.to_array();
                let noisy = BBox::new(
                    b[0] + jitter[0],
                    b[1] + jitter[1],
                    (b[2] + jitter[2]).max(1.0),
                    (b[3] + jitter[3]).max(1.0),
                )?;
                let reported =
                    (sigma * sigma).max(1e-6) * (p.variance_noise * std_normal(&mut rng)).exp();
                let l = logits(&mut rng, k + 1, class_id, p.concentration);
                per_mod[mi].push((image_id.clone(), noisy, l, reported));
            }
            for _ in 0..poisson(&mut rng, p.fp_per_image) {
                let h = rng.random_range(spec.min_object_height..=spec.max_object_height);
                let w = h * spec.aspect_ratio;
                let x = rng.random_range(0.0..=(spec.image_width - w).max(0.0));
                let y = rng.random_range(0.0..=(spec.image_height - h).max(0.0));
                let sigma = (p.loc_noise * h).max(1.0);
                let l = logits(&mut rng, k + 1, 0, p.fp_concentration);
                per_mod[mi].push((image_id.clone(), BBox::new(x, y, w, h)?, l, sigma * sigma));
            }
        }
    }

    let mut emitter = Emitter { next_id: 0 };
    let mut detections = Vec::with_capacity(spec.modalities.len());
    for (m, raw) in spec.modalities.iter().zip(per_mod) {
        let dets = raw
            .into_iter()
            .map(|(image_id, bbox, l, var)| emitter.emit(&image_id, &m.name, bbox, l, var))
            .collect::<Result<Vec<_>>>()?;
        detections.push((m.name.clone(), dets));
    }
    Ok(SyntheticDataset {
        ground_truth: gt,
        detections,
    })
}

/// Multiplies every logit of one modality by `factor` (miscalibration).
pub fn scale_logits(dataset: &mut SyntheticDataset, modality: &str, factor: f64) -> Result<()> {
    let (_, dets) = dataset
        .detections
        .iter_mut()
        .find(|(m, _)| m == modality)
        .ok_or_else(|| Error::config(format!("no modality {modality:?} in dataset")))?;
    for d in dets.iter_mut() {
        d.scores =
            ClassScores::from_logits(d.scores.logits().iter().map(|v| v * factor).collect())?;
    }
    Ok(())
}
