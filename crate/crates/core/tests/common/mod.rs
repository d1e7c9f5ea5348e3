//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use cpl_core::data::{featurize, generate_synthetic, split, FeatureRecord, FeatureSource, SyntheticConfig};
use cpl_core::losses::EmbeddedSample;
use cpl_core::math::{cosine_distance, Vector};
use cpl_core::trainer::{LossKind, TrainConfig};
use cpl_core::verge::VergeRegistry;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn unit(v: &[f64]) -> Vector {
    Vector::new(v.to_vec()).unwrap().normalized().unwrap()
}

/// 2-d unit vector at normalized cosine distance `d` from `(1, 0)`.
pub fn at_distance(d: f64) -> Vector {
    let theta = (1.0 - 2.0 * d).acos();
    unit(&[theta.cos(), theta.sin()])
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    unit(&gaussian(rng, dim))
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    l2(&diff) / l2(analytic).max(l2(numeric)).max(1e-8)
}

/// Pulls a gradient w.r.t. `raw / |raw|` back to `raw`.
pub fn through_normalization(raw: &[f64], grad_unit: &[f64]) -> Vec<f64> {
    let n = l2(raw);
    let y: Vec<f64> = raw.iter().map(|x| x / n).collect();
    let along: f64 = y.iter().zip(grad_unit).map(|(a, b)| a * b).sum();
    y.iter().zip(grad_unit).map(|(yi, gi)| (gi - along * yi) / n).collect()
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut x = at.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smallest |hinge argument| of a metric loss on a batch; kinks closer than
/// the finite-difference reach make a numeric gradient meaningless.
pub fn kink_margin(kind: LossKind, zeta: f64, samples: &[EmbeddedSample], verges: &VergeRegistry) -> f64 {
    let dist = |a: &Vector, b: &Vector| cosine_distance(a.as_slice(), b.as_slice()).unwrap();
    let mut m = f64::INFINITY;
    match kind {
        LossKind::CeOnly => {}
        LossKind::CePlusCpl => {
            for s in samples {
                let st = verges.get(s.class_id).copied().unwrap_or_default();
                let d = dist(&s.origin, &s.mutant);
                let arg = if s.label == 1 {
                    st.v_minus.map(|v| d - v + zeta)
                } else {
                    st.v_plus.map(|v| v - d + zeta)
                };
                if let Some(a) = arg {
                    m = m.min(a.abs());
                }
            }
        }
        LossKind::CePlusContrastive => {
            for s in samples.iter().filter(|s| s.label == 0) {
                m = m.min((zeta - dist(&s.origin, &s.mutant)).abs());
            }
        }
        LossKind::CePlusTriplet => {
            for a in samples.iter().filter(|s| s.label == 1) {
                for n in samples.iter().filter(|s| s.label == 0 && s.class_id == a.class_id) {
                    let arg = dist(&a.origin, &a.mutant) - dist(&a.origin, &n.mutant) + zeta;
                    m = m.min(arg.abs());
                }
            }
        }
    }
    m
}

/// Geometric synthetic corpus (defaults, given seed) as features: the whole
/// corpus plus a stratified 50/50 split.
pub struct GeometricData {
    pub all: Vec<FeatureRecord>,
    pub train: Vec<FeatureRecord>,
    pub test: Vec<FeatureRecord>,
}

pub fn geometric_data(seed: u64) -> GeometricData {
    let syn = generate_synthetic(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let source = FeatureSource::Table(syn.features.unwrap());
    let (tr, te) = split(&syn.corpus, 0.5, seed).unwrap();
    GeometricData {
        all: featurize(&syn.corpus, &source).unwrap(),
        train: featurize(&tr, &source).unwrap(),
        test: featurize(&te, &source).unwrap(),
    }
}

/// Default training config for a loss kind. The contrastive baseline runs at
/// lambda 1.05, zeta 0.09; the others keep the defaults.
pub fn train_config(kind: LossKind, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        loss_kind: kind,
        seed,
        ..TrainConfig::default()
    };
    if kind == LossKind::CePlusContrastive {
        cfg.loss.lambda = 1.05;
        cfg.loss.zeta = 0.09;
    }
    cfg
}
