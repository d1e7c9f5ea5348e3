//! Feed-forward embedding encoder and pair-classifier head.
//!
//! The encoder maps a feature vector through `feature -> hidden` (tanh) and
//! `hidden -> embed` (linear) layers, then L2-normalizes. The classifier
//! head reads the pair features `[o, s, |o - s|, o * s]` of two embeddings
//! and produces two logits (index 1 = equivalent) through one tanh hidden
//! layer.
//!
//! Forward passes can return a trace that [`Encoder::backward`] and
//! [`PairClassifier::backward`] consume. Every parameter mutation bumps a
//! generation counter, and a trace recorded under an older generation is
//! rejected with [`Error::State`].

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm, Vector};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub head_hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            feature_dim: 256,
            hidden_dim: 128,
            embed_dim: 64,
            head_hidden_dim: 64,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.embed_dim < 2 || self.head_hidden_dim == 0 {
            return Err(Error::Config(format!("invalid model dims {self:?}")));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    /// Accumulates parameter gradients into `grads` and returns the
    /// gradient with respect to the input.
    fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (r, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[r] += g;
            let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
            let grow = &mut grads.weights[r * self.inputs..(r + 1) * self.inputs];
            for c in 0..self.inputs {
                grow[c] += g * x[c];
                grad_in[c] += g * row[c];
            }
        }
        grad_in
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

fn tanh_backward(activated: &[f64], grad: &[f64]) -> Vec<f64> {
    activated
        .iter()
        .zip(grad)
        .map(|(a, g)| g * (1.0 - a * a))
        .collect()
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension { expected, actual });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub hidden: Dense,
    pub output: Dense,
    #[serde(skip, default = "next_generation")]
    generation: u64,
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.hidden == other.hidden && self.output == other.output
    }
}

/// Forward state of one [`Encoder::encode_traced`] call.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    generation: u64,
    input: Vec<f64>,
    hidden: Vec<f64>,
    raw_norm: f64,
    pub output: Vector,
}

impl Encoder {
    pub fn zeros(dims: &ModelDims) -> Self {
        Encoder {
            hidden: Dense::zeros(dims.feature_dim, dims.hidden_dim),
            output: Dense::zeros(dims.hidden_dim, dims.embed_dim),
            generation: next_generation(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.inputs
    }

    pub fn embed_dim(&self) -> usize {
        self.output.outputs
    }

    pub fn encode(&self, features: &[f64]) -> Result<Vector> {
        Ok(self.encode_traced(features)?.output)
    }

    pub fn encode_traced(&self, features: &[f64]) -> Result<EncoderTrace> {
        check_dim(self.feature_dim(), features.len())?;
        let hidden: Vec<f64> = self.hidden.forward(features).into_iter().map(f64::tanh).collect();
        let raw = self.output.forward(&hidden);
        let raw_norm = norm(&raw);
        if !(raw_norm > 0.0 && raw_norm.is_finite()) {
            return Err(Error::DegenerateVector(format!("encoder pre-normalization norm {raw_norm}")));
        }
        let output = Vector::new(raw.iter().map(|v| v / raw_norm).collect())?;
        Ok(EncoderTrace {
            generation: self.generation,
            input: features.to_vec(),
            hidden,
            raw_norm,
            output,
        })
    }

    /// Backpropagates `grad_output` (gradient w.r.t. the normalized
    /// embedding) through normalization and both layers, accumulating into
    /// `grads`. Returns the gradient with respect to the input features.
    pub fn backward(&self, trace: &EncoderTrace, grad_output: &[f64], grads: &mut Encoder) -> Result<Vec<f64>> {
        if trace.generation != self.generation {
            return Err(Error::State("encoder trace predates the current parameters".into()));
        }
        check_dim(self.embed_dim(), grad_output.len())?;
        let y = trace.output.as_slice();
        // d(z/|z|)/dz = (I - y y^T) / |z|
        let along = dot(y, grad_output);
        let grad_raw: Vec<f64> = y
            .iter()
            .zip(grad_output)
            .map(|(yi, gi)| (gi - along * yi) / trace.raw_norm)
            .collect();
        let grad_hidden = self.output.backward(&trace.hidden, &grad_raw, &mut grads.output);
        let grad_pre = tanh_backward(&trace.hidden, &grad_hidden);
        Ok(self.hidden.backward(&trace.input, &grad_pre, &mut grads.hidden))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairClassifier {
    pub hidden: Dense,
    pub output: Dense,
    #[serde(skip, default = "next_generation")]
    generation: u64,
}

impl PartialEq for PairClassifier {
    fn eq(&self, other: &Self) -> bool {
        self.hidden == other.hidden && self.output == other.output
    }
}

#[derive(Clone, Debug)]
pub struct PairTrace {
    generation: u64,
    origin: Vec<f64>,
    mutant: Vec<f64>,
    pair: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: [f64; 2],
}

/// `[o, s, |o - s|, o * s]`
pub fn pair_features(o: &[f64], s: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 * o.len());
    f.extend_from_slice(o);
    f.extend_from_slice(s);
    f.extend(o.iter().zip(s).map(|(a, b)| (a - b).abs()));
    f.extend(o.iter().zip(s).map(|(a, b)| a * b));
    f
}

impl PairClassifier {
    pub fn zeros(dims: &ModelDims) -> Self {
        PairClassifier {
            hidden: Dense::zeros(4 * dims.embed_dim, dims.head_hidden_dim),
            output: Dense::zeros(dims.head_hidden_dim, 2),
            generation: next_generation(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.hidden.inputs / 4
    }

    pub fn classify_pair(&self, o: &Vector, s: &Vector) -> Result<[f64; 2]> {
        Ok(self.classify_traced(o, s)?.logits)
    }

    pub fn classify_traced(&self, o: &Vector, s: &Vector) -> Result<PairTrace> {
        check_dim(self.embed_dim(), o.dim())?;
        check_dim(self.embed_dim(), s.dim())?;
        for v in [o, s] {
            let n = v.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Normalization { norm: n });
            }
        }
        let pair = pair_features(o.as_slice(), s.as_slice());
        let hidden: Vec<f64> = self.hidden.forward(&pair).into_iter().map(f64::tanh).collect();
        let out = self.output.forward(&hidden);
        let logits = [out[0], out[1]];
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("logits {logits:?}")));
        }
        Ok(PairTrace {
            generation: self.generation,
            origin: o.as_slice().to_vec(),
            mutant: s.as_slice().to_vec(),
            pair,
            hidden,
            logits,
        })
    }

    /// Backpropagates logit gradients, accumulating into `grads`. Returns
    /// the gradients with respect to the origin and mutant embeddings.
    pub fn backward(
        &self,
        trace: &PairTrace,
        grad_logits: [f64; 2],
        grads: &mut PairClassifier,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if trace.generation != self.generation {
            return Err(Error::State("classifier trace predates the current parameters".into()));
        }
        let grad_hidden = self.output.backward(&trace.hidden, &grad_logits, &mut grads.output);
        let grad_pre = tanh_backward(&trace.hidden, &grad_hidden);
        let gp = self.hidden.backward(&trace.pair, &grad_pre, &mut grads.hidden);
        let d = self.embed_dim();
        let (g_o, rest) = gp.split_at(d);
        let (g_s, rest) = rest.split_at(d);
        let (g_abs, g_prod) = rest.split_at(d);
        let mut grad_o = g_o.to_vec();
        let mut grad_s = g_s.to_vec();
        for i in 0..d {
            let diff = trace.origin[i] - trace.mutant[i];
            // subgradient 0 at the kink
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_o[i] += sign * g_abs[i] + trace.mutant[i] * g_prod[i];
            grad_s[i] += -sign * g_abs[i] + trace.origin[i] * g_prod[i];
        }
        Ok((grad_o, grad_s))
    }
}

/// Encoder plus classifier head, with the dims and seed they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub dims: ModelDims,
    pub seed: u64,
    pub encoder: Encoder,
    pub classifier: PairClassifier,
}

/// Gradient buffers shaped like a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: Encoder,
    pub classifier: PairClassifier,
}

impl ModelGrads {
    pub fn zeros(dims: &ModelDims) -> Self {
        ModelGrads {
            encoder: Encoder::zeros(dims),
            classifier: PairClassifier::zeros(dims),
        }
    }

    /// Gradient tensors in the same order as [`Model::param_tensors_mut`].
    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.encoder.hidden.weights,
            &self.encoder.hidden.bias,
            &self.encoder.output.weights,
            &self.encoder.output.bias,
            &self.classifier.hidden.weights,
            &self.classifier.hidden.bias,
            &self.classifier.output.weights,
            &self.classifier.output.bias,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

impl Model {
    /// Reproducible Glorot initialization from `seed`.
    pub fn init(seed: u64, dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder {
            hidden: Dense::glorot(dims.feature_dim, dims.hidden_dim, &mut rng),
            output: Dense::glorot(dims.hidden_dim, dims.embed_dim, &mut rng),
            generation: next_generation(),
        };
        let classifier = PairClassifier {
            hidden: Dense::glorot(4 * dims.embed_dim, dims.head_hidden_dim, &mut rng),
            output: Dense::glorot(dims.head_hidden_dim, 2, &mut rng),
            generation: next_generation(),
        };
        Ok(Model {
            dims,
            seed,
            encoder,
            classifier,
        })
    }

    /// Mutable parameter tensors; handing them out invalidates every
    /// outstanding trace.
    pub fn param_tensors_mut(&mut self) -> [&mut [f64]; 8] {
        self.encoder.generation = next_generation();
        self.classifier.generation = next_generation();
        [
            &mut self.encoder.hidden.weights,
            &mut self.encoder.hidden.bias,
            &mut self.encoder.output.weights,
            &mut self.encoder.output.bias,
            &mut self.classifier.hidden.weights,
            &mut self.classifier.hidden.bias,
            &mut self.classifier.output.weights,
            &mut self.classifier.output.bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        [&self.encoder.hidden, &self.encoder.output, &self.classifier.hidden, &self.classifier.output]
            .iter()
            .map(|d| d.weights.len() + d.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.hidden.is_finite()
            && self.encoder.output.is_finite()
            && self.classifier.hidden.is_finite()
            && self.classifier.output.is_finite()
    }

    /// Checks that the layer shapes agree with `dims`, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let d = &self.dims;
        let layers = [
            (&self.encoder.hidden, d.feature_dim, d.hidden_dim),
            (&self.encoder.output, d.hidden_dim, d.embed_dim),
            (&self.classifier.hidden, 4 * d.embed_dim, d.head_hidden_dim),
            (&self.classifier.output, d.head_hidden_dim, 2),
        ];
        for (layer, i, o) in layers {
            if layer.inputs != i
                || layer.outputs != o
                || layer.weights.len() != i * o
                || layer.bias.len() != o
            {
                return Err(Error::Deserialize(format!(
                    "layer shape {}x{} does not match dims {d:?}",
                    layer.outputs, layer.inputs
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::softmax2;
    use crate::math::finite_difference_gradient;

    fn small_dims() -> ModelDims {
        ModelDims {
            feature_dim: 12,
            hidden_dim: 8,
            embed_dim: 5,
            head_hidden_dim: 6,
        }
    }

    fn features(seed: u64, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn encode_is_unit_norm_and_deterministic() {
        let model = Model::init(7, ModelDims::default()).unwrap();
        for s in 0..5 {
            let x = features(s, 256);
            let a = model.encoder.encode(&x).unwrap();
            let b = model.encoder.encode(&x).unwrap();
            assert!((a.norm() - 1.0).abs() < 1e-9);
            assert_eq!(a, b);
        }
        assert!(matches!(
            model.encoder.encode(&[1.0; 10]),
            Err(Error::Dimension { expected: 256, actual: 10 })
        ));
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(1, small_dims()).unwrap();
        let b = Model::init(1, small_dims()).unwrap();
        let c = Model::init(2, small_dims()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let d = ModelDims::default();
        assert_eq!((d.feature_dim, d.hidden_dim, d.embed_dim), (256, 128, 64));
    }

    #[test]
    fn pair_features_structure() {
        let o = [0.5, 0.25, 0.0];
        let f = pair_features(&o, &o);
        assert_eq!(&f[..3], &o);
        assert_eq!(&f[3..6], &o);
        assert_eq!(&f[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(&f[9..12], &[0.25, 0.0625, 0.0]);
    }

    #[test]
    fn classifier_outputs_are_finite_and_deterministic() {
        let model = Model::init(3, small_dims()).unwrap();
        let o = model.encoder.encode(&features(1, 12)).unwrap();
        let s = model.encoder.encode(&features(2, 12)).unwrap();
        let a = model.classifier.classify_pair(&o, &s).unwrap();
        let b = model.classifier.classify_pair(&o, &s).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
        let p = softmax2(a);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        let wrong = Vector::new(vec![1.0, 0.0]).unwrap();
        assert!(matches!(model.classifier.classify_pair(&wrong, &s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn stale_trace_rejected() {
        let mut model = Model::init(3, small_dims()).unwrap();
        let trace = model.encoder.encode_traced(&features(1, 12)).unwrap();
        let mut grads = ModelGrads::zeros(&small_dims());
        model.param_tensors_mut()[0][0] += 1e-3;
        let err = model.encoder.backward(&trace, &[0.0; 5], &mut grads.encoder);
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = Model::init(3, small_dims()).unwrap();
        let mut grads = ModelGrads::zeros(&small_dims());
        let t = model.encoder.encode_traced(&features(4, 12)).unwrap();
        let gi = model.encoder.backward(&t, &[0.0; 5], &mut grads.encoder).unwrap();
        let o = t.output.clone();
        let pt = model.classifier.classify_traced(&o, &o).unwrap();
        model.classifier.backward(&pt, [0.0, 0.0], &mut grads.classifier).unwrap();
        assert!(grads.is_zero());
        assert!(gi.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn normalization_jacobian_annihilates_radial_direction() {
        // upstream gradient along the output itself must vanish
        let model = Model::init(5, small_dims()).unwrap();
        let t = model.encoder.encode_traced(&features(9, 12)).unwrap();
        let mut grads = ModelGrads::zeros(&small_dims());
        let up = t.output.as_slice().to_vec();
        model.encoder.backward(&t, &up, &mut grads.encoder).unwrap();
        let total: f64 = grads.tensors().iter().flat_map(|t| t.iter()).map(|v| v.abs()).sum();
        assert!(total < 1e-12, "{total}");
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let model = Model::init(11, small_dims()).unwrap();
        let x = features(12, 12);
        let w: Vec<f64> = (0..5).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = |m: &Model, x: &[f64]| dot(m.encoder.encode(x).unwrap().as_slice(), &w);

        let t = model.encoder.encode_traced(&x).unwrap();
        let mut grads = ModelGrads::zeros(&small_dims());
        let grad_x = model.encoder.backward(&t, &w, &mut grads.encoder).unwrap();

        let num_x = finite_difference_gradient(|p| f(&model, p), &x, 1e-6).unwrap();
        for (a, n) in grad_x.iter().zip(&num_x) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
        let analytic_w = grads.encoder.hidden.weights.clone();
        let num_w = finite_difference_gradient(
            |p| {
                let mut m = model.clone();
                m.encoder.hidden.weights.copy_from_slice(p);
                f(&m, &x)
            },
            &model.encoder.hidden.weights,
            1e-6,
        )
        .unwrap();
        for (a, n) in analytic_w.iter().zip(&num_w) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }
}
