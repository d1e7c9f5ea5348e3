//! Metric losses over origin/mutant embedding pairs, pair cross-entropy,
//! and the joint objective, each with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cosine_distance_grad, EmaParams, Vector};
use crate::verge::VergeRegistry;

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Hyperparameters shared by the metric losses.
///
/// `zeta` is the hinge margin and may be negative. `hinge_epsilon` is the
/// lower clamp applied to the hinge argument inside the derivative factor
/// only, which keeps fractional exponents from producing unbounded
/// gradients at activation onset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub lambda: f64,
    pub hinge_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 12.0,
            alpha: 2.0,
            beta: 0.5,
            zeta: -0.05,
            lambda: 1.15,
            hinge_epsilon: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        EmaParams::new(self.gamma)?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if !self.zeta.is_finite() {
            return Err(Error::Config(format!("zeta must be finite, got {}", self.zeta)));
        }
        // lambda = 0 is accepted as the "metric term off" ablation switch
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.hinge_epsilon > 0.0 && self.hinge_epsilon <= 1e-3) {
            return Err(Error::Config(format!(
                "hinge_epsilon must lie in (0, 1e-3], got {}",
                self.hinge_epsilon
            )));
        }
        Ok(())
    }

    pub fn ema_params(&self) -> Result<EmaParams> {
        EmaParams::new(self.gamma)
    }
}

/// One minibatch sample in embedding space: class, origin embedding,
/// mutant embedding and equivalence label (1 = equivalent).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSample {
    pub class_id: u64,
    pub origin: Vector,
    pub mutant: Vector,
    pub label: u8,
}

impl EmbeddedSample {
    pub fn new(class_id: u64, origin: Vector, mutant: Vector, label: u8) -> Result<Self> {
        let s = EmbeddedSample {
            class_id,
            origin,
            mutant,
            label,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Range(format!("label must be 0 or 1, got {}", self.label)));
        }
        if self.origin.dim() != self.mutant.dim() {
            return Err(Error::Dimension {
                expected: self.origin.dim(),
                actual: self.mutant.dim(),
            });
        }
        check_unit(&self.origin)?;
        check_unit(&self.mutant)
    }
}

fn check_unit(v: &Vector) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::Normalization { norm: n });
    }
    Ok(())
}

fn check_batch(batch: &[EmbeddedSample]) -> Result<()> {
    let Some(first) = batch.first() else {
        return Err(Error::EmptyBatch("loss needs at least one sample".into()));
    };
    for s in batch {
        s.validate()?;
        if s.origin.dim() != first.origin.dim() {
            return Err(Error::Dimension {
                expected: first.origin.dim(),
                actual: s.origin.dim(),
            });
        }
    }
    Ok(())
}

/// Value and per-sample embedding gradients of a pair loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub origin_grads: Vec<Vec<f64>>,
    pub mutant_grads: Vec<Vec<f64>>,
    /// Samples whose term was dropped because the opposite verge of their
    /// class was still uninitialized.
    pub skipped_count: usize,
}

impl LossOutput {
    fn zeros(batch: &[EmbeddedSample]) -> Self {
        let dim = batch[0].origin.dim();
        LossOutput {
            value: 0.0,
            origin_grads: vec![vec![0.0; dim]; batch.len()],
            mutant_grads: vec![vec![0.0; dim]; batch.len()],
            skipped_count: 0,
        }
    }

    fn accumulate(&mut self, i: usize, coef: f64, grad_o: &[f64], grad_s: &[f64]) {
        for (g, d) in self.origin_grads[i].iter_mut().zip(grad_o) {
            *g += coef * d;
        }
        for (g, d) in self.mutant_grads[i].iter_mut().zip(grad_s) {
            *g += coef * d;
        }
    }
}

/// `[u]_+^p` and its derivative in `u`, with `u` clamped from below by
/// `eps` inside the derivative only.
fn powered_hinge(u: f64, p: f64, eps: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0);
    }
    (u.powf(p), p * u.max(eps).powf(p - 1.0))
}

/// Cluster Purge Loss.
///
/// Equivalent samples pay `[dist - v_minus + zeta]_+^alpha` and
/// non-equivalent samples pay `[v_plus - dist + zeta]_+^beta`, where the
/// verges belong to the sample's class and are read as constants. The sum
/// is divided by the batch size. A sample whose opposite verge is still
/// uninitialized contributes nothing and is counted in `skipped_count`.
pub fn cpl(batch: &[EmbeddedSample], registry: &VergeRegistry, cfg: &LossConfig) -> Result<LossOutput> {
    check_batch(batch)?;
    let m = batch.len() as f64;
    let mut out = LossOutput::zeros(batch);
    for (i, s) in batch.iter().enumerate() {
        let state = registry.get(s.class_id).copied().unwrap_or_default();
        let opposite = if s.label == 1 { state.v_minus } else { state.v_plus };
        let Some(verge) = opposite else {
            out.skipped_count += 1;
            continue;
        };
        let dist = cosine_distance_grad(s.origin.as_slice(), s.mutant.as_slice())?;
        let (value, slope) = if s.label == 1 {
            let (v, dv) = powered_hinge(dist.value - verge + cfg.zeta, cfg.alpha, cfg.hinge_epsilon);
            (v, dv)
        } else {
            let (v, dv) = powered_hinge(verge - dist.value + cfg.zeta, cfg.beta, cfg.hinge_epsilon);
            (v, -dv)
        };
        out.value += value;
        if slope != 0.0 {
            out.accumulate(i, slope / m, &dist.grad_a, &dist.grad_b);
        }
    }
    out.value /= m;
    Ok(out)
}

/// Origin-anchored contrastive loss: equivalents pay their distance,
/// non-equivalents pay `[zeta - dist]_+`. Class ids are ignored.
pub fn contrastive(batch: &[EmbeddedSample], cfg: &LossConfig) -> Result<LossOutput> {
    check_batch(batch)?;
    let m = batch.len() as f64;
    let mut out = LossOutput::zeros(batch);
    for (i, s) in batch.iter().enumerate() {
        let dist = cosine_distance_grad(s.origin.as_slice(), s.mutant.as_slice())?;
        let (value, slope) = if s.label == 1 {
            (dist.value.max(0.0), 1.0)
        } else if cfg.zeta - dist.value > 0.0 {
            (cfg.zeta - dist.value, -1.0)
        } else {
            (0.0, 0.0)
        };
        out.value += value;
        if slope != 0.0 {
            out.accumulate(i, slope / m, &dist.grad_a, &dist.grad_b);
        }
    }
    out.value /= m;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletOutput {
    pub value: f64,
    pub anchor_grad: Vec<f64>,
    pub positive_grad: Vec<f64>,
    pub negative_grad: Vec<f64>,
}

/// Standard triplet hinge `[dist(a, p) - dist(a, n) + margin]_+`.
pub fn triplet(anchor: &Vector, positive: &Vector, negative: &Vector, margin: f64) -> Result<TripletOutput> {
    for v in [anchor, positive, negative] {
        if v.dim() != anchor.dim() {
            return Err(Error::Dimension {
                expected: anchor.dim(),
                actual: v.dim(),
            });
        }
        check_unit(v)?;
    }
    if !margin.is_finite() {
        return Err(Error::Numeric(format!("margin is {margin}")));
    }
    let ap = cosine_distance_grad(anchor.as_slice(), positive.as_slice())?;
    let an = cosine_distance_grad(anchor.as_slice(), negative.as_slice())?;
    let u = ap.value - an.value + margin;
    let dim = anchor.dim();
    if u <= 0.0 {
        return Ok(TripletOutput {
            value: 0.0,
            anchor_grad: vec![0.0; dim],
            positive_grad: vec![0.0; dim],
            negative_grad: vec![0.0; dim],
        });
    }
    Ok(TripletOutput {
        value: u,
        anchor_grad: ap.grad_a.iter().zip(&an.grad_a).map(|(p, n)| p - n).collect(),
        positive_grad: ap.grad_b,
        negative_grad: an.grad_b.iter().map(|g| -g).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossEntropyOutput {
    pub value: f64,
    pub probs: [f64; 2],
    /// `softmax(logits) - one_hot(label)`
    pub grad_logits: [f64; 2],
}

pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let mx = logits[0].max(logits[1]);
    let e = [(logits[0] - mx).exp(), (logits[1] - mx).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

/// Two-class softmax cross-entropy with max-subtraction.
pub fn cross_entropy(logits: [f64; 2], label: u8) -> Result<CrossEntropyOutput> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("logits {logits:?}")));
    }
    if label > 1 {
        return Err(Error::Range(format!("label must be 0 or 1, got {label}")));
    }
    let mx = logits[0].max(logits[1]);
    let lse = mx + ((logits[0] - mx).exp() + (logits[1] - mx).exp()).ln();
    let value = lse - logits[label as usize];
    let probs = softmax2(logits);
    let mut grad_logits = probs;
    grad_logits[label as usize] -= 1.0;
    Ok(CrossEntropyOutput {
        value,
        probs,
        grad_logits,
    })
}

/// `metric * lambda + ce`. Metric-loss gradients are scaled by the same
/// `lambda` when the two are composed.
pub fn joint(metric_loss: f64, ce_loss: f64, lambda: f64) -> Result<f64> {
    for (name, v) in [("metric loss", metric_loss), ("cross-entropy", ce_loss), ("lambda", lambda)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is {v}")));
        }
    }
    Ok(metric_loss * lambda + ce_loss)
}
