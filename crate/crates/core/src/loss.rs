//! Loss kernels with analytic gradients.
//!
//! Inputs are plain dense `f64` vectors so any training framework can call
//! the kernels and copy gradients back into its own tensors.
//!
//! Contrastive loss over positive set P and negative set N, with
//! `s(i, k) = cos(h_i, h_k) / tau`:
//!
//! ```text
//! L_CL = -1/C(|P|, 2) * sum_{i in P} sum_{j in P, j != i}
//!            log( exp(s(i, j)) / sum_{k in P ∪ N, k != i} exp(s(i, k)) )
//! ```
//!
//! The pair sum runs over ordered pairs; the anchor `i` fixes the
//! denominator, so `(i, j)` and `(j, i)` are different terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mki::MkiVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("representation {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("representation {0} has zero norm")]
    ZeroNorm(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("contrastive loss needs at least 2 positives, got {0}")]
    TooFewPositives(usize),
    #[error("contrastive loss needs at least 1 negative")]
    NoNegatives,
    #[error("b_m has length {bm}, logits have length {logits}")]
    LengthMismatch { bm: usize, logits: usize },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

fn one() -> f64 {
    1.0
}

/// Temperature and objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(default = "one")]
    pub tau: f64,
    pub lambda_cl: f64,
    pub lambda_mki: f64,
}

impl Default for LossConfig {
    /// `tau = 1`, with the PEGASUS / HQS weights.
    fn default() -> Self {
        LossConfig {
            tau: 1.0,
            lambda_cl: 1.0,
            lambda_mki: 0.001,
        }
    }
}

impl LossConfig {
    /// Reported weights `(lambda_cl, lambda_mki)` per backbone and dataset.
    pub const PRESETS: [(&'static str, f64, f64); 8] = [
        ("pegasus-hqs", 1.0, 0.001),
        ("bart-hqs", 1.0, 0.0011),
        ("t5-hqs", 1.0, 0.0013),
        ("biobart-hqs", 0.95, 0.0011),
        ("pegasus-rrs-indiana", 2.0, 0.0014),
        ("pegasus-rrs-stanford", 0.8, 0.0014),
        ("mt5-mds", 1.0, 0.001),
        ("pegasus-hqs-all-ref-positive", 1.0, 0.001),
    ];

    pub fn preset(name: &str) -> Option<Self> {
        Self::PRESETS
            .iter()
            .find(|(n, ..)| *n == name)
            .map(|&(_, lambda_cl, lambda_mki)| LossConfig {
                tau: 1.0,
                lambda_cl,
                lambda_mki,
            })
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(LossError::InvalidConfig(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        for (name, v) in [
            ("lambda_cl", self.lambda_cl),
            ("lambda_mki", self.lambda_mki),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::InvalidConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimensionMismatch {
            index: 1,
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite("cosine input"));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(LossError::ZeroNorm(0));
    }
    if nb == 0.0 {
        return Err(LossError::ZeroNorm(1));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Loss value and gradient with respect to every representation, in input
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub positive_grads: Vec<Vec<f64>>,
    pub negative_grads: Vec<Vec<f64>>,
}

pub fn contrastive_loss(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    config: &LossConfig,
) -> Result<ContrastiveLoss, LossError> {
    config.validate()?;
    let p = positives.len();
    if p < 2 {
        return Err(LossError::TooFewPositives(p));
    }
    if negatives.is_empty() {
        return Err(LossError::NoNegatives);
    }
    let all: Vec<&[f64]> = positives
        .iter()
        .chain(negatives)
        .map(Vec::as_slice)
        .collect();
    let n = all.len();
    let d = all[0].len();
    let mut norms = Vec::with_capacity(n);
    for (index, h) in all.iter().enumerate() {
        if h.len() != d {
            return Err(LossError::DimensionMismatch {
                index,
                expected: d,
                got: h.len(),
            });
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(LossError::NonFinite("representation"));
        }
        let nh = norm(h);
        if nh == 0.0 {
            return Err(LossError::ZeroNorm(index));
        }
        norms.push(nh);
    }
    let units: Vec<Vec<f64>> = all
        .iter()
        .zip(&norms)
        .map(|(h, nh)| h.iter().map(|x| x / nh).collect())
        .collect();

    let tau = config.tau;
    let pairs = (p * (p - 1)) as f64 / 2.0;
    let mut grads = vec![vec![0.0; d]; n];
    let mut total = 0.0;
    let mut logits = vec![0.0; n];
    let mut cos = vec![0.0; n];

    for i in 0..p {
        for k in 0..n {
            if k != i {
                cos[k] = dot(&units[i], &units[k]);
                logits[k] = cos[k] / tau;
            }
        }
        let max = (0..n)
            .filter(|&k| k != i)
            .map(|k| logits[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n)
            .filter(|&k| k != i)
            .map(|k| (logits[k] - max).exp())
            .sum();
        let lse = max + sum.ln();
        for j in (0..p).filter(|&j| j != i) {
            total += lse - logits[j];
        }
        // d(anchor-i terms)/d cos(i, k) = ((|P|-1) softmax_k - [k in P]) / tau
        for k in (0..n).filter(|&k| k != i) {
            let softmax = (logits[k] - lse).exp();
            let indicator = if k < p { 1.0 } else { 0.0 };
            let g = ((p - 1) as f64 * softmax - indicator) / (pairs * tau);
            let c = cos[k];
            for t in 0..d {
                grads[i][t] += g * (units[k][t] - c * units[i][t]) / norms[i];
                grads[k][t] += g * (units[i][t] - c * units[k][t]) / norms[k];
            }
        }
    }

    let negative_grads = grads.split_off(p);
    Ok(ContrastiveLoss {
        loss: total / pairs,
        positive_grads: grads,
        negative_grads,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MkiLoss {
    pub loss: f64,
    /// Gradient with respect to the logits; equals `-b_m`.
    pub grad: Vec<f64>,
}

/// `-b_m · p` over dense inputs.
pub fn mki_loss_dense(bm: &[f64], logits: &[f64]) -> Result<MkiLoss, LossError> {
    if bm.len() != logits.len() {
        return Err(LossError::LengthMismatch {
            bm: bm.len(),
            logits: logits.len(),
        });
    }
    if bm.iter().chain(logits).any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite("mki input"));
    }
    Ok(MkiLoss {
        loss: -dot(bm, logits),
        grad: bm.iter().map(|b| -b).collect(),
    })
}

/// `-b_m · p`, visiting only the nonzero entries of `b_m`.
pub fn mki_loss(bm: &MkiVector, logits: &[f64]) -> Result<MkiLoss, LossError> {
    if bm.vocab_size() != logits.len() {
        return Err(LossError::LengthMismatch {
            bm: bm.vocab_size(),
            logits: logits.len(),
        });
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite("logits"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, c) in bm.nonzero() {
        let c = f64::from(c);
        loss -= c * logits[i];
        grad[i] = -c;
    }
    Ok(MkiLoss { loss, grad })
}

/// `lambda_cl * cl + lambda_mki * mki + ce`.
pub fn combined_loss(cl: f64, mki: f64, ce: f64, config: &LossConfig) -> Result<f64, LossError> {
    config.validate()?;
    if !(cl.is_finite() && mki.is_finite() && ce.is_finite()) {
        return Err(LossError::NonFinite("combined loss component"));
    }
    Ok(config.lambda_cl * cl + config.lambda_mki * mki + ce)
}

/// Central-difference audit of an analytic gradient. Returns the largest
/// per-coordinate error `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(
    f: F,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<f64, LossError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(LossError::InvalidStep(step));
    }
    if point.len() != analytic.len() {
        return Err(LossError::LengthMismatch {
            bm: analytic.len(),
            logits: point.len(),
        });
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(LossError::NonFinite("finite-difference evaluation"));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Finite-difference audit of [`contrastive_loss`] over all representation
/// coordinates at once.
pub fn contrastive_gradient_error(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    config: &LossConfig,
    step: f64,
) -> Result<f64, LossError> {
    let out = contrastive_loss(positives, negatives, config)?;
    let d = positives[0].len();
    let (np, nn) = (positives.len(), negatives.len());
    let point: Vec<f64> = positives
        .iter()
        .chain(negatives)
        .flatten()
        .copied()
        .collect();
    let analytic: Vec<f64> = out
        .positive_grads
        .iter()
        .chain(&out.negative_grads)
        .flatten()
        .copied()
        .collect();
    let f = |x: &[f64]| {
        let reps: Vec<Vec<f64>> = x.chunks(d).map(<[f64]>::to_vec).collect();
        contrastive_loss(&reps[..np], &reps[np..np + nn], config)
            .map(|o| o.loss)
            .unwrap_or(f64::NAN)
    };
    finite_difference_check(f, &point, &analytic, step)
}

/// Finite-difference audit of [`mki_loss`] with respect to the logits.
pub fn mki_gradient_error(bm: &MkiVector, logits: &[f64], step: f64) -> Result<f64, LossError> {
    let out = mki_loss(bm, logits)?;
    let f = |x: &[f64]| mki_loss(bm, x).map(|o| o.loss).unwrap_or(f64::NAN);
    finite_difference_check(f, logits, &out.grad, step)
}
