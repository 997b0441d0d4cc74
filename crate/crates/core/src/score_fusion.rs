//! Per-cluster class-score fusion rules and logit calibration.
//!
//! Every rule takes the score vectors of the detections selected for one
//! cluster and returns a single valid [`ClassScores`].

use crate::detections::{log_sum_exp, safe_ln, ClassPrior, ClassScores};
use crate::error::{Error, Result};
use crate::scalar::{cmp, Scalar};

/// Logit transform `s / T + b` for one modality (`b` on foreground classes only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams<T> {
    temperature: T,
    shift: T,
}

impl<T: Scalar> CalibrationParams<T> {
    pub fn new(temperature: T, shift: T) -> Result<Self> {
        if !temperature.is_finite() || temperature <= T::zero() {
            return Err(Error::config(format!(
                "temperature {temperature} must be finite and > 0"
            )));
        }
        if !shift.is_finite() {
            return Err(Error::config(format!("shift {shift} must be finite")));
        }
        Ok(Self { temperature, shift })
    }

    pub fn identity() -> Self {
        Self {
            temperature: T::one(),
            shift: T::zero(),
        }
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn is_identity(&self) -> bool {
        self.temperature == T::one() && self.shift == T::zero()
    }
}

impl<T: Scalar> Default for CalibrationParams<T> {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn calibrate_scores<T: Scalar>(
    scores: &ClassScores<T>,
    params: &CalibrationParams<T>,
) -> Result<ClassScores<T>> {
    if params.is_identity() {
        return Ok(scores.clone());
    }
    let logits = scores
        .logits()
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let scaled = s / params.temperature;
            if k == 0 {
                scaled
            } else {
                scaled + params.shift
            }
        })
        .collect();
    ClassScores::from_logits(logits)
}

fn check_members<T: Scalar>(members: &[&ClassScores<T>]) -> Result<usize> {
    let first = members.first().ok_or(Error::EmptyCluster)?;
    let n = first.posteriors().len();
    if members.iter().any(|m| m.posteriors().len() != n) {
        return Err(Error::InvalidScore(
            "cluster members disagree on class count".into(),
        ));
    }
    Ok(n)
}

/// NMS score rule: the whole score vector of the most confident member.
pub fn fuse_max<T: Scalar>(members: &[&ClassScores<T>]) -> Result<ClassScores<T>> {
    check_members(members)?;
    let winner = members
        .iter()
        .min_by(|a, b| {
            cmp(b.score(), a.score())
                .then_with(|| a.argmax_class().cmp(&b.argmax_class()))
                .then_with(|| {
                    // Remaining ties resolved on the full vector so member order never matters.
                    b.posteriors()
                        .iter()
                        .zip(a.posteriors())
                        .map(|(x, y)| cmp(*x, *y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        })
        .expect("non-empty");
    Ok((*winner).clone())
}

/// Entrywise mean of posteriors.
pub fn fuse_avg_posteriors<T: Scalar>(members: &[&ClassScores<T>]) -> Result<ClassScores<T>> {
    let n = check_members(members)?;
    let m = <T as Scalar>::from_usize(members.len());
    let posteriors: Vec<T> = (0..n)
        .map(|k| members.iter().map(|s| s.posteriors()[k]).sum::<T>() / m)
        .collect();
    let logits = posteriors.iter().map(|&p| safe_ln(p)).collect();
    Ok(ClassScores::from_parts(logits, posteriors))
}

/// Softmax of the entrywise mean of logits.
pub fn fuse_avg_logits<T: Scalar>(members: &[&ClassScores<T>]) -> Result<ClassScores<T>> {
    let n = check_members(members)?;
    let m = <T as Scalar>::from_usize(members.len());
    let logits = (0..n)
        .map(|k| members.iter().map(|s| s.logits()[k]).sum::<T>() / m)
        .collect();
    ClassScores::from_logits(logits)
}

/// Product of member posteriors divided by `prior^(m_effective - 1)`, renormalized.
///
/// `m_effective` is the number of distinct modalities among the members.
/// The stored logits are the summed member logits minus
/// `(m_effective - 1) * ln prior`, whose softmax equals the posteriors.
pub fn fuse_proben<T: Scalar>(
    members: &[&ClassScores<T>],
    prior: &ClassPrior<T>,
    m_effective: usize,
) -> Result<ClassScores<T>> {
    let n = check_members(members)?;
    if prior.len() != n {
        return Err(Error::config(format!(
            "prior has {} entries, scores have {n}",
            prior.len()
        )));
    }
    if m_effective == 0 || m_effective > members.len() {
        return Err(Error::config(format!(
            "effective modality count {m_effective} invalid for {} members",
            members.len()
        )));
    }
    let exponent = <T as Scalar>::from_usize(m_effective - 1);
    let uniform = prior.is_uniform();

    let logits: Vec<T> = (0..n)
        .map(|k| {
            let summed: T = members.iter().map(|s| s.logits()[k]).sum();
            if uniform {
                summed
            } else {
                summed - exponent * prior.priors()[k].ln()
            }
        })
        .collect();

    let products: Vec<T> = (0..n)
        .map(|k| {
            let prod = members
                .iter()
                .fold(T::one(), |acc, s| acc * s.posteriors()[k]);
            if uniform {
                prod
            } else {
                prod / prior.priors()[k].powf(exponent)
            }
        })
        .collect();
    let z: T = products.iter().copied().sum();

    let posteriors = if z.is_normal() {
        products.into_iter().map(|p| p / z).collect()
    } else {
        // Product underflowed; normalize in the log domain instead.
        let log_terms: Vec<T> = (0..n)
            .map(|k| {
                let s: T = members.iter().map(|m| safe_ln(m.posteriors()[k])).sum();
                if uniform {
                    s
                } else {
                    s - exponent * prior.priors()[k].ln()
                }
            })
            .collect();
        let lse = log_sum_exp(log_terms.iter().copied());
        log_terms.iter().map(|&l| (l - lse).exp()).collect()
    };
    Ok(ClassScores::from_parts(logits, posteriors))
}

/// Per-modality, per-class logit weights for learned linear fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFusionWeights<T> {
    modalities: Vec<String>,
    weights: Vec<Vec<T>>,
}

impl<T: Scalar> LinearFusionWeights<T> {
    pub fn new(modalities: Vec<String>, weights: Vec<Vec<T>>) -> Result<Self> {
        if modalities.is_empty() || modalities.len() != weights.len() {
            return Err(Error::config("linear weights need one row per modality"));
        }
        let n = weights[0].len();
        if n < 2 || weights.iter().any(|row| row.len() != n) {
            return Err(Error::config(
                "linear weight rows must all have K+1 entries",
            ));
        }
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::config("linear weights must be finite"));
        }
        for (i, m) in modalities.iter().enumerate() {
            if modalities[..i].contains(m) {
                return Err(Error::config(format!(
                    "modality {m} listed twice in weights"
                )));
            }
        }
        Ok(Self {
            modalities,
            weights,
        })
    }

    /// Every weight set to `value`: 1 gives summed logits, 1/M averaged logits.
    pub fn constant(modalities: Vec<String>, num_classes: usize, value: T) -> Self {
        let weights = vec![vec![value; num_classes + 1]; modalities.len()];
        Self {
            modalities,
            weights,
        }
    }

    pub fn modalities(&self) -> &[String] {
        &self.modalities
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.weights
    }

    pub fn get(&self, modality: &str) -> Option<&[T]> {
        self.modalities
            .iter()
            .position(|m| m == modality)
            .map(|i| self.weights[i].as_slice())
    }
}

/// Softmax of `sum_i w_i[k] * s_i[k]` over the members present.
pub fn fuse_linear<T: Scalar>(
    members: &[(&str, &ClassScores<T>)],
    weights: &LinearFusionWeights<T>,
) -> Result<ClassScores<T>> {
    let scores: Vec<&ClassScores<T>> = members.iter().map(|(_, s)| *s).collect();
    let n = check_members(&scores)?;
    let mut logits = vec![T::zero(); n];
    for (modality, s) in members {
        let w = weights
            .get(modality)
            .ok_or_else(|| Error::config(format!("no linear weights for modality {modality}")))?;
        if w.len() != n {
            return Err(Error::config(
                "linear weights and scores disagree on class count",
            ));
        }
        for (acc, (wk, sk)) in logits.iter_mut().zip(w.iter().zip(s.logits())) {
            *acc = *acc + *wk * *sk;
        }
    }
    ClassScores::from_logits(logits)
}

/// One cluster's cached logits (None where a modality did not fire) and
/// whether the fused detection was a true positive.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFusionExample<T> {
    pub logits: Vec<Option<Vec<T>>>,
    pub class_id: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFitOptions {
    pub step: f64,
    pub iterations: usize,
}

impl Default for LinearFitOptions {
    fn default() -> Self {
        Self {
            step: 0.1,
            iterations: 5000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearFit<T> {
    pub weights: LinearFusionWeights<T>,
    /// Mean logistic loss before the first step and after each iteration.
    pub loss_history: Vec<T>,
    /// Training data carried only one label; the weights are not meaningful.
    pub single_label: bool,
}

struct LinearProblem<'a, T> {
    examples: &'a [LinearFusionExample<T>],
    num_modalities: usize,
    width: usize,
}

impl<T: Scalar> LinearProblem<'_, T> {
    fn fused_logits(&self, w: &[T], ex: &LinearFusionExample<T>) -> Vec<T> {
        let mut z = vec![T::zero(); self.width];
        for (i, s) in ex.logits.iter().enumerate() {
            if let Some(s) = s {
                for k in 0..self.width {
                    z[k] = z[k] + w[i * self.width + k] * s[k];
                }
            }
        }
        z
    }

    fn example_loss(&self, z: &[T], ex: &LinearFusionExample<T>) -> (T, T, T) {
        let c = ex.class_id;
        let lse = log_sum_exp(z.iter().copied());
        let lse_rest = log_sum_exp(
            z.iter()
                .enumerate()
                .filter(|(j, _)| *j != c)
                .map(|(_, v)| *v),
        );
        let log_p = z[c] - lse;
        let log_q = lse_rest - lse;
        let loss = if ex.positive { -log_p } else { -log_q };
        (loss, log_p.exp(), lse_rest)
    }

    fn loss(&self, w: &[T]) -> T {
        let total: T = self
            .examples
            .iter()
            .map(|ex| self.example_loss(&self.fused_logits(w, ex), ex).0)
            .sum();
        total / <T as Scalar>::from_usize(self.examples.len())
    }

    fn gradient(&self, w: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); self.num_modalities * self.width];
        for ex in self.examples {
            let z = self.fused_logits(w, ex);
            let (_, p, lse_rest) = self.example_loss(&z, ex);
            let y = if ex.positive { T::one() } else { T::zero() };
            let resid = p - y;
            for (i, s) in ex.logits.iter().enumerate() {
                let Some(s) = s else { continue };
                for j in 0..self.width {
                    let dz = if j == ex.class_id {
                        resid
                    } else {
                        -resid * (z[j] - lse_rest).exp()
                    };
                    g[i * self.width + j] = g[i * self.width + j] + dz * s[j];
                }
            }
        }
        let n = <T as Scalar>::from_usize(self.examples.len());
        g.into_iter().map(|v| v / n).collect()
    }
}

/// Fits linear fusion weights by full-batch gradient descent on the mean
/// logistic loss, starting from zero.
///
/// A step that would raise the loss is halved until it does not, so the
/// recorded loss never increases.
pub fn fit_linear_weights<T: Scalar>(
    modalities: &[String],
    examples: &[LinearFusionExample<T>],
    options: LinearFitOptions,
) -> Result<LinearFit<T>> {
    let first = examples
        .first()
        .ok_or_else(|| Error::config("no training clusters for linear fusion"))?;
    if modalities.is_empty() {
        return Err(Error::config("no modalities for linear fusion"));
    }
    let width = first
        .logits
        .iter()
        .flatten()
        .map(|s| s.len())
        .next()
        .ok_or_else(|| Error::config("training cluster without any logits"))?;
    for ex in examples {
        if ex.logits.len() != modalities.len() {
            return Err(Error::config("training cluster modality count mismatch"));
        }
        if ex.class_id == 0 || ex.class_id >= width {
            return Err(Error::config(format!(
                "training class id {} out of range",
                ex.class_id
            )));
        }
        if ex
            .logits
            .iter()
            .flatten()
            .any(|s| s.len() != width || s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::config(
                "training logits must be finite with K+1 entries",
            ));
        }
    }
    let positives = examples.iter().filter(|e| e.positive).count();
    let single_label = positives == 0 || positives == examples.len();
    if single_label {
        log::warn!("linear fusion training data has a single label; weights are not separable");
    }

    let problem = LinearProblem {
        examples,
        num_modalities: modalities.len(),
        width,
    };
    let base_step = T::lit(options.step);
    let mut w = vec![T::zero(); modalities.len() * width];
    let mut loss = problem.loss(&w);
    let mut history = Vec::with_capacity(options.iterations + 1);
    history.push(loss);

    for _ in 0..options.iterations {
        let g = problem.gradient(&w);
        let mut step = base_step;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<T> = w.iter().zip(&g).map(|(wi, gi)| *wi - step * *gi).collect();
            let cand_loss = problem.loss(&cand);
            if cand_loss <= loss {
                accepted = Some((cand, cand_loss));
                break;
            }
            step = step / T::lit(2.0);
        }
        if let Some((cand, cand_loss)) = accepted {
            w = cand;
            loss = cand_loss;
        }
        history.push(loss);
    }

    let rows = w.chunks(width).map(|c| c.to_vec()).collect();
    Ok(LinearFit {
        weights: LinearFusionWeights::new(modalities.to_vec(), rows)?,
        loss_history: history,
        single_label,
    })
}
